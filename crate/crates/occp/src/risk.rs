//! Occlusion risk assessment.
//!
//! Occluded lane intervals become phantom-vehicle sets (PVS). Risk is the
//! product of a longitudinal term derived from the phantom reachability count
//! g(s) and a lateral normal-density term, aggregated into a scalar that
//! modulates the planner's velocity bounds.

use serde::{Deserialize, Serialize};

use crate::geom::{distance, line_of_sight, Lane, Point, Polygon};
use crate::reach::ArcInterval;
use crate::{Error, Result};

/// Occluded interval [s_s, s_e] on a lane centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomVehicleSet {
    pub lane: u32,
    pub s_start: f64,
    pub s_end: f64,
    pub lane_width: f64,
}

impl PhantomVehicleSet {
    pub fn len(&self) -> f64 {
        self.s_end - self.s_start
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

/// Parameters governing phantom-vehicle risk and the derived velocity bounds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RiskParams {
    /// Maximum phantom-vehicle velocity (m/s).
    pub v_pv_max: f64,
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Confidence interval factor for the lateral normal model.
    pub z: f64,
    pub c_th_min: f64,
    /// Maximum risk threshold for the exploration trajectory.
    pub c_th_max_explore: f64,
    /// Maximum risk threshold for the fallback trajectory.
    pub c_th_max_fallback: f64,
    pub v_occ_min: f64,
    pub v_occ_max: f64,
    /// Longitudinal sampling step for risk aggregation (m).
    pub ds: f64,
    /// Number of lateral grid samples over d in (-1, 1].
    pub lateral_samples: usize,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            v_pv_max: 10.0,
            horizon: 4.0,
            z: 1.645,
            c_th_min: 0.0,
            c_th_max_explore: 40.0,
            c_th_max_fallback: 60.0,
            v_occ_min: 1.5,
            v_occ_max: 10.0,
            ds: 0.1,
            lateral_samples: 41,
        }
    }
}

impl RiskParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_th_max_explore <= self.c_th_min || self.c_th_max_fallback <= self.c_th_min {
            return Err(Error::Config("c_th_max must exceed c_th_min".into()));
        }
        if !(0.0 <= self.v_occ_min && self.v_occ_min < self.v_occ_max) {
            return Err(Error::Config("require 0 <= v_occ_min < v_occ_max".into()));
        }
        if self.ds <= 0.0 {
            return Err(Error::Config("risk sample step ds must be positive".into()));
        }
        if self.v_pv_max <= 0.0 || self.horizon < 0.0 || self.z <= 0.0 {
            return Err(Error::Config("invalid phantom-vehicle parameters".into()));
        }
        Ok(())
    }

    /// Lateral deviation grid over (-1, 1]; excludes the singular d = -1.
    pub fn lateral_grid(&self) -> Vec<f64> {
        let n = self.lateral_samples.max(3);
        (1..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect()
    }
}

/// Lane span scanned for occlusions.
#[derive(Debug, Clone)]
pub struct LaneSpan {
    pub lane: Lane,
    pub s_min: f64,
    pub s_max: f64,
}

const SCAN_STEP: f64 = 0.05;
const REFINE_TOL: f64 = 1e-3;

/// Extracts maximal occluded centerline intervals within sensor range.
///
/// A centerline point is occluded when the line of sight from `sensor` is
/// blocked by any occluder polygon or vehicle box. Interval boundaries are
/// refined by bisection between adjacent visible/occluded samples.
pub fn extract_pvs(sensor: Point, spans: &[LaneSpan], blockers: &[Polygon], r_l: f64) -> Vec<PhantomVehicleSet> {
    let mut out = Vec::new();
    for span in spans {
        let visible_at =
            |s: f64| -> bool { line_of_sight(sensor, span.lane.point_at(s), blockers) };
        let in_range = |s: f64| -> bool { distance(sensor, span.lane.point_at(s)) <= r_l };

        // Range boundary can clip the scan to at most two arcs; walk samples
        // and track runs of occluded in-range points.
        let n = ((span.s_max - span.s_min) / SCAN_STEP).ceil() as usize;
        let mut run_start: Option<f64> = None;
        let mut prev_s = span.s_min;
        let mut prev_state = in_range(span.s_min) && !visible_at(span.s_min);
        if prev_state {
            run_start = Some(span.s_min);
        }
        for k in 1..=n {
            let s = (span.s_min + k as f64 * SCAN_STEP).min(span.s_max);
            let state = in_range(s) && !visible_at(s);
            if state != prev_state {
                // Bisect the transition between prev_s and s.
                let (mut lo, mut hi) = (prev_s, s);
                while hi - lo > REFINE_TOL {
                    let mid = 0.5 * (lo + hi);
                    let m = in_range(mid) && !visible_at(mid);
                    if m == prev_state {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let boundary = 0.5 * (lo + hi);
                if state {
                    run_start = Some(boundary);
                } else if let Some(start) = run_start.take() {
                    push_pvs(&mut out, span, start, boundary);
                }
            }
            prev_s = s;
            prev_state = state;
        }
        if let Some(start) = run_start {
            push_pvs(&mut out, span, start, span.s_max);
        }
    }
    out
}

fn push_pvs(out: &mut Vec<PhantomVehicleSet>, span: &LaneSpan, s_start: f64, s_end: f64) {
    if s_end - s_start > REFINE_TOL {
        out.push(PhantomVehicleSet {
            lane: span.lane.id,
            s_start,
            s_end,
            lane_width: span.lane.width,
        });
    }
}

/// Number of potential phantom vehicles able to occupy arc position `s`
/// within the horizon, measured as the (initial position, velocity) area of
/// the backward reachable set.
pub fn phantom_count(s: f64, pvs: &PhantomVehicleSet, params: &RiskParams) -> f64 {
    let (ss, se) = (pvs.s_start, pvs.s_end);
    if se - ss < 1e-9 {
        return 0.0;
    }
    let v = params.v_pv_max;
    let t = params.horizon;
    if s < ss || s > se + v * t {
        return 0.0;
    }
    if t <= 0.0 {
        return 0.0;
    }
    if se < ss + v * t {
        // Published piecewise form for the short-PVS ordering.
        if s <= se {
            0.5 * (2.0 * v - (s - ss) / t) * (s - ss)
        } else if s <= ss + v * t {
            0.5 * (2.0 * v - (s - ss) / t - (s - se) / t) * (se - ss)
        } else {
            0.5 * (v - (s - se) / t) * (se - (s - v * t))
        }
    } else {
        // Long PVS: evaluate the underlying area integral directly.
        let a = ss.max(s - v * t);
        let b = se.min(s);
        if b <= a {
            0.0
        } else {
            v * (b - a) - (s * (b - a) - 0.5 * (b * b - a * a)) / t
        }
    }
}

/// r_lon(s) = (s_e - s_s) * g(s).
pub fn longitudinal_risk(s: f64, pvs: &PhantomVehicleSet, params: &RiskParams) -> f64 {
    pvs.len().max(0.0) * phantom_count(s, pvs, params)
}

/// Normal-density lateral risk at deviation fraction `d` of the half lane.
pub fn lateral_risk(d: f64, lane_width: f64, z: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("lateral deviation {d} outside [-1, 1]")));
    }
    if lane_width <= 0.0 || z <= 0.0 {
        return Err(Error::Domain("lane width and Z must be positive".into()));
    }
    let denom = 2.0 * z * (1.0 - 0.5 * (1.0 - d));
    let sigma = lane_width / denom;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("non-positive lateral sigma at d = {d}")));
    }
    let x = d * lane_width / 2.0;
    // Deviation-independent density scale: a 1/sigma(d) prefactor would put
    // the peak off the centerline, so only the exponent carries the
    // d-dependence and the scale is pinned at the centerline sigma.
    let sigma0 = lane_width / z;
    Ok((-0.5 * (x / sigma).powi(2)).exp() / (sigma0 * (2.0 * std::f64::consts::PI).sqrt()))
}

/// r(s, d) = r_lon(s) * r_lat(d).
pub fn total_risk(s: f64, d: f64, pvs: &PhantomVehicleSet, params: &RiskParams) -> Result<f64> {
    Ok(longitudinal_risk(s, pvs, params) * lateral_risk(d, pvs.lane_width, params.z)?)
}

/// Sampled risk field over the reachable footprint of one PVS.
#[derive(Debug, Clone)]
pub struct RiskField {
    pub lane: u32,
    pub s_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    /// values[i][j] = r(s_grid[i], d_grid[j]).
    pub values: Vec<Vec<f64>>,
    pub ds: f64,
}

impl RiskField {
    pub fn max_over_d(&self, i: usize) -> f64 {
        self.values[i].iter().fold(0.0f64, |a, &b| a.max(b))
    }
}

/// Samples r(s, d) over [s_s, s_e + v_max T] x lateral grid.
pub fn build_risk_field(pvs: &PhantomVehicleSet, params: &RiskParams) -> Result<RiskField> {
    let s_hi = pvs.s_end + params.v_pv_max * params.horizon;
    let n = (((s_hi - pvs.s_start) / params.ds).ceil() as usize).max(1);
    let s_grid: Vec<f64> = (0..=n).map(|i| pvs.s_start + i as f64 * params.ds).collect();
    let d_grid = params.lateral_grid();
    let mut values = Vec::with_capacity(s_grid.len());
    for &s in &s_grid {
        let r_lon = longitudinal_risk(s, pvs, params);
        let row: Result<Vec<f64>> =
            d_grid.iter().map(|&d| Ok(r_lon * lateral_risk(d, pvs.lane_width, params.z)?)).collect();
        values.push(row?);
    }
    Ok(RiskField { lane: pvs.lane, s_grid, d_grid, values, ds: params.ds })
}

/// Aggregates a risk field into a scalar over the portion of the phantom FRS
/// that intersects the EV's reachable window. Returns 0 when the sets are
/// disjoint.
pub fn aggregate_risk(field: &RiskField, ev_frs: &ArcInterval, pv_frs: &ArcInterval) -> f64 {
    let Some(overlap) = pv_frs.intersect(ev_frs) else {
        return 0.0;
    };
    let mut total = 0.0;
    for (i, &s) in field.s_grid.iter().enumerate() {
        if s >= overlap.lo && s <= overlap.hi {
            total += field.max_over_d(i) * field.ds;
        }
    }
    total
}

/// Dynamic maximum velocity bounds for the trajectory pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBounds {
    /// Exploration trajectory bound (m/s).
    pub explore: f64,
    /// Fallback trajectory bound (m/s).
    pub fallback: f64,
}

fn bound_for(r_total: f64, c_th_min: f64, c_th_max: f64, params: &RiskParams) -> f64 {
    if r_total > c_th_max {
        return params.v_occ_min;
    }
    let dv = (params.v_occ_min - params.v_occ_max) / (c_th_max - c_th_min);
    let v = dv * (r_total - c_th_min) + params.v_occ_max;
    v.clamp(params.v_occ_min, params.v_occ_max)
}

/// Maps aggregated risk to per-trajectory maximum velocity bounds.
pub fn velocity_bounds(r_total: f64, params: &RiskParams) -> Result<VelocityBounds> {
    params.validate()?;
    Ok(VelocityBounds {
        explore: bound_for(r_total, params.c_th_min, params.c_th_max_explore, params),
        fallback: bound_for(r_total, params.c_th_min, params.c_th_max_fallback, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pvs(ss: f64, se: f64) -> PhantomVehicleSet {
        PhantomVehicleSet { lane: 0, s_start: ss, s_end: se, lane_width: 3.75 }
    }

    // Brute-force oracle: area of {(s0, v) in [s_s,s_e] x [0,v_max] :
    // s0 <= s <= s0 + v T} on a dense grid.
    fn g_oracle(s: f64, p: &PhantomVehicleSet, params: &RiskParams, cells: usize) -> f64 {
        let (ss, se) = (p.s_start, p.s_end);
        let (vmax, t) = (params.v_pv_max, params.horizon);
        let ds = (se - ss) / cells as f64;
        let dv = vmax / cells as f64;
        let mut area = 0.0;
        for i in 0..cells {
            let s0 = ss + (i as f64 + 0.5) * ds;
            for j in 0..cells {
                let v = (j as f64 + 0.5) * dv;
                if s0 <= s && s <= s0 + v * t {
                    area += ds * dv;
                }
            }
        }
        area
    }

    #[test]
    fn g_vanishes_at_interval_start_and_beyond_reach() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        assert_eq!(phantom_count(0.0, &p, &params), 0.0);
        assert_eq!(phantom_count(46.0 + 1e-9, &p, &params), 0.0);
        assert_eq!(phantom_count(-1.0, &p, &params), 0.0);
    }

    // Sharper oracle: midpoint rule over s0 with the exact velocity measure
    // of each column, {v in [0, v_max] : v >= (s - s0)/T}.
    fn g_oracle_marginal(s: f64, p: &PhantomVehicleSet, params: &RiskParams, cells: usize) -> f64 {
        let (ss, se) = (p.s_start, p.s_end);
        let (vmax, t) = (params.v_pv_max, params.horizon);
        let ds = (se - ss) / cells as f64;
        let mut area = 0.0;
        for i in 0..cells {
            let s0 = ss + (i as f64 + 0.5) * ds;
            if s0 <= s {
                area += ds * (vmax - ((s - s0) / t).max(0.0)).max(0.0);
            }
        }
        area
    }

    #[test]
    fn g_matches_area_oracle_at_spec_points() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        for s in [1.0, 6.0, 20.0, 40.0] {
            let got = phantom_count(s, &p, &params);
            let want = g_oracle_marginal(s, &p, &params, 200_000);
            assert!(
                (got - want).abs() / want.abs().max(1e-9) < 1e-3,
                "g({s}) = {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn g_matches_area_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let ss = rng.gen_range(-20.0..20.0);
            let len = rng.gen_range(0.5..15.0);
            let vmax = rng.gen_range(2.0..15.0);
            let t = rng.gen_range(1.0..6.0);
            if len >= vmax * t {
                continue;
            }
            let p = pvs(ss, ss + len);
            let params = RiskParams { v_pv_max: vmax, horizon: t, ..Default::default() };
            let s = rng.gen_range(ss..(ss + len + vmax * t));
            let got = phantom_count(s, &p, &params);
            let want = g_oracle(s, &p, &params, 1500);
            let scale = want.abs().max(1e-2 * vmax * len);
            assert!((got - want).abs() / scale < 1e-2, "g({s}) = {got}, oracle {want}");
        }
    }

    #[test]
    fn g_long_pvs_falls_back_to_integral() {
        // PVS longer than v_max * T breaks the published interval ordering.
        let p = pvs(0.0, 60.0);
        let params = RiskParams::default(); // v_max * T = 40 < 60
        for s in [5.0, 30.0, 59.0, 80.0] {
            let got = phantom_count(s, &p, &params);
            let want = g_oracle(s, &p, &params, 2000);
            assert!((got - want).abs() / want.max(1.0) < 5e-3);
        }
    }

    #[test]
    fn g_continuous_at_interval_boundaries() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        let eps = 1e-7;
        for b in [6.0, 40.0, 46.0] {
            let lo = phantom_count(b - eps, &p, &params);
            let hi = phantom_count(b + eps, &p, &params);
            assert!((lo - hi).abs() < 1e-4, "discontinuity at {b}: {lo} vs {hi}");
        }
    }

    #[test]
    fn longitudinal_risk_scales_with_pvs_length() {
        let params = RiskParams::default();
        let p1 = pvs(0.0, 4.0);
        let p2 = pvs(0.0, 8.0);
        // Plateau points on I2 at matched relative position.
        let s1 = 10.0;
        let s2 = 10.0;
        let g1 = phantom_count(s1, &p1, &params);
        let g2 = phantom_count(s2, &p2, &params);
        let r1 = longitudinal_risk(s1, &p1, &params);
        let r2 = longitudinal_risk(s2, &p2, &params);
        assert_relative_eq!(r1, 4.0 * g1, epsilon = 1e-12);
        assert_relative_eq!(r2, 8.0 * g2, epsilon = 1e-12);
        let degenerate = pvs(3.0, 3.0);
        for s in [-10.0, 3.0, 15.0] {
            assert_eq!(longitudinal_risk(s, &degenerate, &params), 0.0);
        }
    }

    #[test]
    fn lateral_risk_max_at_center() {
        let grid: Vec<f64> = (0..201).map(|i| -0.99 + 1.99 * i as f64 / 200.0).collect();
        let mut best = (f64::MIN, 0.0);
        for &d in &grid {
            let r = lateral_risk(d, 3.75, 1.645).unwrap();
            if r > best.0 {
                best = (r, d);
            }
        }
        assert!(best.1.abs() < 0.01, "argmax at {}", best.1);
    }

    #[test]
    fn lateral_risk_asymmetric_and_scaling() {
        let plus = lateral_risk(0.5, 3.75, 1.645).unwrap();
        let minus = lateral_risk(-0.5, 3.75, 1.645).unwrap();
        assert!((plus - minus).abs() > 1e-6, "sigma depends on d; values must differ");
        // sigma is linear in lane width.
        let d = 0.3;
        let s1 = 3.75 / (2.0 * 1.645 * (1.0 - 0.5 * (1.0 - d)));
        let s2 = 7.5 / (2.0 * 1.645 * (1.0 - 0.5 * (1.0 - d)));
        assert_relative_eq!(s2, 2.0 * s1, epsilon = 1e-12);
    }

    #[test]
    fn lateral_risk_domain_errors() {
        assert!(lateral_risk(1.5, 3.75, 1.645).is_err());
        assert!(lateral_risk(-1.0, 3.75, 1.645).is_err());
        assert!(lateral_risk(0.0, -1.0, 1.645).is_err());
    }

    #[test]
    fn total_risk_is_componentwise_product() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = rng.gen_range(-5.0..50.0);
            let d = rng.gen_range(-0.9..1.0);
            let r = total_risk(s, d, &p, &params).unwrap();
            let want =
                longitudinal_risk(s, &p, &params) * lateral_risk(d, 3.75, params.z).unwrap();
            assert_relative_eq!(r, want, epsilon = 1e-12);
        }
        // Outside the reachable band the product vanishes.
        assert_eq!(total_risk(100.0, 0.0, &p, &params).unwrap(), 0.0);
    }

    #[test]
    fn risk_field_hot_band_on_centerline() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        let field = build_risk_field(&p, &params).unwrap();
        let mut best = (f64::MIN, 0usize, 0usize);
        for i in 0..field.s_grid.len() {
            for j in 0..field.d_grid.len() {
                if field.values[i][j] > best.0 {
                    best = (field.values[i][j], i, j);
                }
            }
        }
        assert!(field.d_grid[best.2].abs() < 0.06, "argmax off centerline: d = {}", field.d_grid[best.2]);
    }

    #[test]
    fn aggregate_risk_disjoint_is_zero() {
        let p = pvs(0.0, 6.0);
        let params = RiskParams::default();
        let field = build_risk_field(&p, &params).unwrap();
        let pv_frs = reach::pv_frs(&p, &params);
        let far = ArcInterval { lane: 0, lo: 100.0, hi: 120.0 };
        assert_eq!(aggregate_risk(&field, &far, &pv_frs), 0.0);
        let near = ArcInterval { lane: 0, lo: 5.0, hi: 15.0 };
        assert!(aggregate_risk(&field, &near, &pv_frs) > 0.0);
    }

    #[test]
    fn aggregate_risk_riemann_refinement() {
        let p = pvs(0.0, 6.0);
        let coarse = RiskParams::default();
        let fine = RiskParams { ds: 0.05, ..Default::default() };
        let window = ArcInterval { lane: 0, lo: 5.0, hi: 25.0 };
        let frs = reach::pv_frs(&p, &coarse);
        let rc = aggregate_risk(&build_risk_field(&p, &coarse).unwrap(), &window, &frs);
        let rf = aggregate_risk(&build_risk_field(&p, &fine).unwrap(), &window, &frs);
        assert!((rc - rf).abs() / rf < 0.01, "coarse {rc} vs fine {rf}");
    }

    #[test]
    fn velocity_bounds_anchor_points() {
        let params = RiskParams::default();
        // r = c_th_min -> v_occ_max.
        let b = velocity_bounds(params.c_th_min, &params).unwrap();
        assert_eq!(b.explore, params.v_occ_max);
        assert_eq!(b.fallback, params.v_occ_max);
        // r beyond c_th_max -> v_occ_min.
        let b = velocity_bounds(params.c_th_max_fallback + 1.0, &params).unwrap();
        assert_eq!(b.explore, params.v_occ_min);
        assert_eq!(b.fallback, params.v_occ_min);
        // Midpoint -> mid velocity per trajectory.
        let mid = 0.5 * (params.c_th_min + params.c_th_max_explore);
        let b = velocity_bounds(mid, &params).unwrap();
        assert_relative_eq!(
            b.explore,
            0.5 * (params.v_occ_min + params.v_occ_max),
            epsilon = 1e-12
        );
    }

    #[test]
    fn velocity_bounds_monotone_in_risk() {
        let params = RiskParams::default();
        let mut prev = VelocityBounds { explore: f64::MAX, fallback: f64::MAX };
        for i in 0..200 {
            let r = i as f64 * 0.5;
            let b = velocity_bounds(r, &params).unwrap();
            assert!(b.explore <= prev.explore + 1e-12);
            assert!(b.fallback <= prev.fallback + 1e-12);
            prev = b;
        }
    }

    #[test]
    fn velocity_bounds_config_error() {
        let params = RiskParams { c_th_max_explore: -1.0, ..Default::default() };
        assert!(velocity_bounds(0.0, &params).is_err());
    }

    #[test]
    fn extract_pvs_empty_without_occluders() {
        let span = LaneSpan {
            lane: Lane { id: 0, origin: [0.0, 0.0], dir: [1.0, 0.0], width: 3.75 },
            s_min: -20.0,
            s_max: 20.0,
        };
        let got = extract_pvs([0.0, -2.0], &[span], &[], 30.0);
        assert!(got.is_empty());
    }

    #[test]
    fn extract_pvs_single_building_matches_shadow() {
        // Occluded lane along the x axis, sensor at (0, -2); a block between
        // sensor and lane shadows an interval on the lane.
        let span = LaneSpan {
            lane: Lane { id: 0, origin: [0.0, 0.0], dir: [1.0, 0.0], width: 3.75 },
            s_min: -25.0,
            s_max: 25.0,
        };
        let building = Polygon::rect(-4.0, -1.0, -1.5, -0.5);
        let got = extract_pvs([0.0, -2.0], &[span], &[building.clone()], 30.0);
        assert_eq!(got.len(), 1);
        // Shadow endpoints from similar triangles: the grazing rays pass
        // through the corners (-4, -1) and (-1.5, -0.5) and hit y = 0 at
        // x = -8 and x = -2.
        assert!((got[0].s_start - (-8.0)).abs() < 0.01, "s_s = {}", got[0].s_start);
        assert!((got[0].s_end - (-2.0)).abs() < 0.01, "s_e = {}", got[0].s_end);
        // Dense ray-cast oracle agreement on classification.
        for k in 0..1000 {
            let s = -25.0 + 50.0 * k as f64 / 1000.0;
            let vis = line_of_sight([0.0, -2.0], [s, 0.0], std::slice::from_ref(&building));
            let inside = s > got[0].s_start + 0.01 && s < got[0].s_end - 0.01;
            if inside {
                assert!(!vis, "point {s} inside PVS but visible");
            }
            if vis {
                assert!(!inside);
            }
        }
    }

    #[test]
    fn extract_pvs_clipped_to_sensor_range() {
        let span = LaneSpan {
            lane: Lane { id: 0, origin: [0.0, 0.0], dir: [1.0, 0.0], width: 3.75 },
            s_min: -60.0,
            s_max: 60.0,
        };
        // Wall shadows everything to the right of x = 5; it extends below the
        // sensor height so no ray can pass under it.
        let wall = Polygon::rect(5.0, -3.0, 5.5, 1.0);
        let r_l = 30.0;
        let sensor = [0.0, -2.0];
        let got = extract_pvs(sensor, &[span], &[wall], r_l);
        assert!(!got.is_empty());
        let last = got.last().unwrap();
        // Range boundary on the lane: |(s, 0) - (0, -2)| = 30.
        let s_limit = (r_l * r_l - 4.0f64).sqrt();
        assert!(last.s_end <= s_limit + 0.01, "s_e = {} beyond range {s_limit}", last.s_end);
        assert!((last.s_end - s_limit).abs() < 0.1);
    }
}
