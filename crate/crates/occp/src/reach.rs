//! Interval reachability along lane arc length.
//!
//! Phantom vehicles drive along the lane centerline, so forward and backward
//! reachable sets reduce to arc-length intervals; obstacle relevance
//! filtering intersects those intervals with lane-crossing windows.

use crate::risk::{PhantomVehicleSet, RiskParams};

/// Closed arc-length interval [lo, hi] on a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcInterval {
    pub lane: u32,
    pub lo: f64,
    pub hi: f64,
}

impl ArcInterval {
    pub fn new(lane: u32, lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] inverted");
        Self { lane, lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }

    pub fn intersect(&self, other: &ArcInterval) -> Option<ArcInterval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| ArcInterval { lane: self.lane, lo, hi })
    }

    pub fn overlaps(&self, other: &ArcInterval) -> bool {
        self.intersect(other).is_some()
    }
}

/// Forward reachable set of a phantom-vehicle set under the constant-velocity
/// model: [s_s, s_e + v_max T].
pub fn pv_frs(pvs: &PhantomVehicleSet, params: &RiskParams) -> ArcInterval {
    ArcInterval::new(pvs.lane, pvs.s_start, pvs.s_end + params.v_pv_max * params.horizon)
}

/// Backward reachable set of target position `s`: initial positions inside
/// the PVS from which a phantom can reach `s` within the horizon.
pub fn pv_brs(s: f64, pvs: &PhantomVehicleSet, params: &RiskParams) -> Option<ArcInterval> {
    let lo = pvs.s_start.max(s - params.v_pv_max * params.horizon);
    let hi = pvs.s_end.min(s);
    (lo <= hi).then(|| ArcInterval::new(pvs.lane, lo, hi))
}

/// Kinematic forward envelope of the EV along its lane from arc position `p`.
pub fn ev_frs(lane: u32, p: f64, v: f64, a_max: f64, v_cap: f64, t: f64) -> ArcInterval {
    let reach = (v * t + 0.5 * a_max * t * t).min(v_cap * t);
    ArcInterval::new(lane, p, p + reach.max(0.0))
}

/// Crossing windows of a conflicting lane pair, in each lane's own arc frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictWindow {
    pub ev_window: ArcInterval,
    pub obstacle_window: ArcInterval,
}

/// True iff both reachable sets reach their shared crossing window; obstacles
/// failing this check are dropped from the solver's constraint stacks.
pub fn relevance_filter(
    ev_frs: &ArcInterval,
    obstacle_frs: &ArcInterval,
    conflict: Option<&ConflictWindow>,
) -> bool {
    match conflict {
        None => false,
        Some(w) => ev_frs.overlaps(&w.ev_window) && obstacle_frs.overlaps(&w.obstacle_window),
    }
}
