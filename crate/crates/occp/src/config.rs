//! Scenario configuration with canonical intersection defaults.

use serde::{Deserialize, Serialize};

use crate::geom::{Lane, Polygon};
use crate::risk::RiskParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    /// Planning steps per cycle.
    pub n: usize,
    /// Discrete time step (s).
    pub dt: f64,
    /// Shared consensus steps.
    pub n_s: usize,
    /// Free steps after divergence.
    pub n_d: usize,
    /// Bezier curve order.
    pub order: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { n: 40, dt: 0.1, n_s: 5, n_d: 5, order: 10 }
    }
}

impl HorizonConfig {
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub q_theta: f64,
    pub q_x: f64,
    pub q_y: f64,
    pub q1: f64,
    pub q2: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { q_theta: 150.0, q_x: 100.0, q_y: 100.0, q1: 50.0, q2: 100.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub max_iter: usize,
    pub eps_pri: f64,
    /// All l2 penalty parameters.
    pub rho: f64,
    /// Barrier coefficient at the first planning step.
    pub alpha_min: f64,
    /// Barrier coefficient at the last planning step.
    pub alpha_max: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { max_iter: 500, eps_pri: 0.1, rho: 5.0, alpha_min: 0.4, alpha_max: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvConfig {
    pub start: [f64; 2],
    pub start_speed: f64,
    /// Desired longitudinal velocity (m/s).
    pub v_x_d: f64,
    /// Desired lateral position (m).
    pub p_y_d: f64,
    pub v_max: f64,
}

impl Default for EvConfig {
    fn default() -> Self {
        Self { start: [-50.0, 0.0], start_speed: 5.0, v_x_d: 7.0, p_y_d: 0.0, v_max: 10.0 }
    }
}

/// Bound stacks for positions, accelerations and jerks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub p_x: [f64; 2],
    /// Lateral corridor half width around p_y_d (m).
    pub lateral_half_width: f64,
    pub a_x: [f64; 2],
    pub a_y: [f64; 2],
    pub j_x: [f64; 2],
    pub j_y: [f64; 2],
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            p_x: [-50.0, 50.0],
            lateral_half_width: 1.875,
            a_x: [-6.0, 4.0],
            a_y: [-3.0, 3.0],
            j_x: [-6.0, 6.0],
            j_y: [-6.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IdmConfig {
    /// Safe time headway (s).
    pub headway: f64,
    /// Minimum standstill gap (m).
    pub min_gap: f64,
    pub a_max: f64,
    /// Comfortable deceleration used in the desired-gap term.
    pub b_comfort: f64,
    /// Hard acceleration clamp (m/s^2).
    pub a_range: [f64; 2],
}

impl Default for IdmConfig {
    fn default() -> Self {
        Self { headway: 1.0, min_gap: 3.0, a_max: 4.0, b_comfort: 2.0, a_range: [-4.0, 4.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub sv_count: usize,
    pub desired_speed_range: [f64; 2],
    pub v_range: [f64; 2],
    /// Arc span of SV spawns on each crossing lane (m).
    pub spawn_span: [f64; 2],
    pub idm: IdmConfig,
    /// SV footprint half length / half width (m).
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            sv_count: 10,
            desired_speed_range: [4.0, 9.5],
            v_range: [0.0, 10.0],
            spawn_span: [-95.0, 95.0],
            idm: IdmConfig::default(),
            half_length: 2.0,
            half_width: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionWeights {
    pub goal: f64,
    pub lateral: f64,
    pub safety: f64,
    pub comfort: f64,
    pub consistency: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self { goal: 1.0, lateral: 1.0, safety: 10.0, comfort: 0.1, consistency: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: HorizonConfig,
    pub weights: WeightConfig,
    pub admm: AdmmConfig,
    pub risk: RiskParams,
    pub ev: EvConfig,
    pub limits: LimitConfig,
    pub traffic: TrafficConfig,
    pub selection: SelectionWeights,
    /// Safety ellipse axes (m).
    pub ellipse: [f64; 2],
    /// EV perception range (m).
    pub sensor_range: f64,
    /// Fixed obstacle slots in the solver.
    pub obstacle_slots: usize,
    /// Simulated time (s).
    pub sim_duration: f64,
    /// Exit line offset past the crossing center (m).
    pub exit_offset: f64,
    pub seed: u64,
    /// Crossing-lane longitudinal positions (m).
    pub crossing_lane_x: [f64; 2],
    /// Lane width (m).
    pub lane_width: f64,
    /// Corner building inset from the road edges (m).
    pub building_setback: f64,
    /// Building footprint extent (m).
    pub building_extent: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon: HorizonConfig::default(),
            weights: WeightConfig::default(),
            admm: AdmmConfig::default(),
            risk: RiskParams::default(),
            ev: EvConfig::default(),
            limits: LimitConfig::default(),
            traffic: TrafficConfig::default(),
            selection: SelectionWeights::default(),
            ellipse: [0.6, 0.6],
            sensor_range: 30.0,
            obstacle_slots: 4,
            sim_duration: 18.0,
            exit_offset: 10.0,
            seed: 0,
            crossing_lane_x: [0.0, 3.75],
            lane_width: 3.75,
            building_setback: 5.0,
            building_extent: 27.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let h = &self.horizon;
        if h.n < 2 || h.dt <= 0.0 || h.order < 3 {
            return Err(Error::Config("invalid horizon parameters".into()));
        }
        if h.n_s + h.n_d >= h.n {
            return Err(Error::Config(format!(
                "N_s + N_d = {} must be < N = {}",
                h.n_s + h.n_d,
                h.n
            )));
        }
        if h.n_s == 0 {
            return Err(Error::Config("N_s must be >= 1".into()));
        }
        self.risk.validate()?;
        if self.ellipse[0] <= 0.0 || self.ellipse[1] <= 0.0 {
            return Err(Error::Config("safety ellipse axes must be positive".into()));
        }
        if self.obstacle_slots == 0 {
            return Err(Error::Config("obstacle_slots must be >= 1".into()));
        }
        if self.ev.v_max <= 0.0 || self.ev.start_speed < 0.0 || self.ev.start_speed > self.ev.v_max {
            return Err(Error::Config("EV speed outside [0, v_max]".into()));
        }
        for (name, r) in [
            ("a_x", self.limits.a_x),
            ("a_y", self.limits.a_y),
            ("j_x", self.limits.j_x),
            ("j_y", self.limits.j_y),
            ("p_x", self.limits.p_x),
        ] {
            if r[0] >= r[1] {
                return Err(Error::Config(format!("{name} range inverted: {r:?}")));
            }
        }
        if self.traffic.desired_speed_range[0] > self.traffic.desired_speed_range[1] {
            return Err(Error::Config("desired speed range inverted".into()));
        }
        Ok(())
    }

    /// EV lane along the x axis at the desired lateral position.
    pub fn ev_lane(&self) -> Lane {
        Lane { id: 0, origin: [0.0, self.ev.p_y_d], dir: [1.0, 0.0], width: self.lane_width }
    }

    /// The two crossing lanes; ids 1 (southbound) and 2 (northbound),
    /// right-hand traffic.
    pub fn crossing_lanes(&self) -> [Lane; 2] {
        [
            Lane {
                id: 1,
                origin: [self.crossing_lane_x[0], 0.0],
                dir: [0.0, -1.0],
                width: self.lane_width,
            },
            Lane {
                id: 2,
                origin: [self.crossing_lane_x[1], 0.0],
                dir: [0.0, 1.0],
                width: self.lane_width,
            },
        ]
    }

    /// Static corner buildings around the intersection.
    pub fn occluders(&self) -> Vec<Polygon> {
        let half = self.lane_width / 2.0;
        // Road corridors: EV road |y| <= half around p_y_d; crossing road
        // x in [x0 - half, x1 + half].
        let road_y = [self.ev.p_y_d - half, self.ev.p_y_d + half];
        let road_x = [self.crossing_lane_x[0] - half, self.crossing_lane_x[1] + half];
        let sb = self.building_setback;
        let ext = self.building_extent;
        vec![
            // South-west, north-west, south-east, north-east corners.
            Polygon::rect(road_x[0] - sb - ext, road_y[0] - sb - ext, road_x[0] - sb, road_y[0] - sb),
            Polygon::rect(road_x[0] - sb - ext, road_y[1] + sb, road_x[0] - sb, road_y[1] + sb + ext),
            Polygon::rect(road_x[1] + sb, road_y[0] - sb - ext, road_x[1] + sb + ext, road_y[0] - sb),
            Polygon::rect(road_x[1] + sb, road_y[1] + sb, road_x[1] + sb + ext, road_y[1] + sb + ext),
        ]
    }

    /// Longitudinal position of the crossing center on the EV lane.
    pub fn crossing_center(&self) -> f64 {
        0.5 * (self.crossing_lane_x[0] + self.crossing_lane_x[1])
    }

    pub fn exit_line(&self) -> f64 {
        self.crossing_center() + self.exit_offset
    }
}

/// Parses a scenario file; an empty file yields full defaults.
pub fn parse_config(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let trimmed = text.trim();
    let cfg: ScenarioConfig = if trimmed.is_empty() {
        ScenarioConfig::default()
    } else {
        serde_json::from_str(trimmed)
            .map_err(|e| Error::Config(format!("{e} (line {}, column {})", e.line(), e.column())))?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.weights.q_theta, 150.0);
        assert_eq!(cfg.horizon.n, 40);
        assert_eq!(cfg.obstacle_slots, 4);
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = parse_config_str(r#"{"not_a_key": 1}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not_a_key"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn consensus_step_invariant() {
        let err =
            parse_config_str(r#"{"horizon": {"n": 40, "n_s": 25, "n_d": 20}}"#).unwrap_err();
        assert!(err.to_string().contains("N_s + N_d"));
    }

    #[test]
    fn round_trip_identity() {
        let cfg = ScenarioConfig { seed: 17, ..Default::default() };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn lane_geometry() {
        let cfg = ScenarioConfig::default();
        let [south, north] = cfg.crossing_lanes();
        let ev = cfg.ev_lane();
        let (s_ev, s_sv) = ev.crossing(&south).unwrap();
        assert_eq!(s_ev, 0.0);
        assert_eq!(s_sv, 0.0);
        let (s_ev2, _) = ev.crossing(&north).unwrap();
        assert_eq!(s_ev2, 3.75);
        assert_eq!(cfg.exit_line(), 1.875 + 10.0);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let err = parse_config_str(r#"{"limits": {"a_x": [4.0, -6.0]}}"#).unwrap_err();
        assert!(err.to_string().contains("a_x"));
    }
}
