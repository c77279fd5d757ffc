//! Deterministic occluded-intersection world: IDM traffic, line-of-sight
//! sensing, phantom-set risk, and the receding-horizon planning loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bezier::{self, BasisSet, DiscreteTrajectory};
use crate::config::{IdmConfig, ScenarioConfig};
use crate::geom::{distance, line_of_sight, Lane, Point, Polygon};
use crate::reach::{self, ArcInterval, ConflictWindow};
use crate::risk::{self, LaneSpan, PhantomVehicleSet, VelocityBounds};
use crate::solver::{self, AdmmState, InitialState, ObstaclePrediction};
use crate::{Error, Result};

/// Ego vehicle state under the kinematic unicycle model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EVState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub v: f64,
}

/// Forward-Euler step of the unicycle model; velocity clamped to [0, v_max].
pub fn step_ev(s: &EVState, u: (f64, f64), dt: f64, v_max: f64) -> Result<EVState> {
    let (u_theta, a) = u;
    if !(s.px.is_finite() && s.py.is_finite() && s.theta.is_finite() && s.v.is_finite())
        || !(u_theta.is_finite() && a.is_finite() && dt.is_finite())
    {
        return Err(Error::Domain("non-finite EV state or control".into()));
    }
    Ok(EVState {
        px: s.px + s.v * s.theta.cos() * dt,
        py: s.py + s.v * s.theta.sin() * dt,
        theta: s.theta + u_theta * dt,
        v: (s.v + a * dt).clamp(0.0, v_max),
    })
}

/// IDM car-following acceleration, clamped to the configured range.
pub fn idm_accel(gap: f64, v: f64, v_lead: f64, v_des: f64, idm: &IdmConfig) -> f64 {
    if gap <= 0.0 {
        return idm.a_range[0];
    }
    let s_star = idm.min_gap
        + v * idm.headway
        + v * (v - v_lead) / (2.0 * (idm.a_max * idm.b_comfort).sqrt());
    let free = (v / v_des.max(0.1)).powi(4);
    let a = idm.a_max * (1.0 - free - (s_star / gap).powi(2));
    a.clamp(idm.a_range[0], idm.a_range[1])
}

/// Surrounding vehicle on one of the crossing lanes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurroundingVehicle {
    /// Index into the crossing-lane array.
    pub lane: usize,
    /// Arc position along the lane (m).
    pub s: f64,
    pub v: f64,
    pub v_des: f64,
    pub visible: bool,
}

/// Planner mode for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Occlusion risk drives dynamic velocity bounds.
    Aware,
    /// Velocity bounds disabled; only visible obstacles constrain the plan.
    Ignorant,
    /// Open-loop replay: each plan is executed for the full shared segment.
    Replay,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aware" => Ok(Mode::Aware),
            "ignorant" => Ok(Mode::Ignorant),
            "replay" => Ok(Mode::Replay),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Seeded roster: a crossing stream timed around the intersection plus
/// background vehicles well before and after it.
pub fn spawn_roster(cfg: &ScenarioConfig, seed: u64) -> Vec<SurroundingVehicle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.traffic.sv_count);
    let span = cfg.traffic.spawn_span;
    let push = |lane: usize, t_arrive: f64, v: f64, out: &mut Vec<SurroundingVehicle>| {
        let s = (-v * t_arrive).clamp(span[0], span[1]);
        out.push(SurroundingVehicle { lane, s, v, v_des: v, visible: false });
    };
    // Conflict stream across both lanes, crossing while a full-speed
    // approach would put the EV inside the intersection. Alternating lanes
    // keeps the stream free of car-following interaction.
    for (lane, base) in [(0, 8.4), (1, 8.7), (1, 6.5)] {
        let t = base + rng.gen_range(-0.15..0.15);
        let v = rng.gen_range(7.5..9.0);
        push(lane, t, v, &mut out);
    }
    // Background traffic either clears the crossing early or has already
    // passed it and is receding.
    for (lane, base) in [(0, 2.6), (1, 2.0)] {
        let t = base + rng.gen_range(-0.4..0.4);
        let v = rng.gen_range(cfg.traffic.desired_speed_range[0]..cfg.traffic.desired_speed_range[1]);
        push(lane, t, v, &mut out);
    }
    for (lane, s0) in [(0, 6.0), (1, 12.0), (0, 24.0), (1, 32.0), (0, 44.0)] {
        let s = s0 + rng.gen_range(-2.0..2.0);
        let v = rng.gen_range(cfg.traffic.desired_speed_range[0]..cfg.traffic.desired_speed_range[1]);
        out.push(SurroundingVehicle { lane, s, v, v_des: v, visible: false });
    }
    out.truncate(cfg.traffic.sv_count);
    // Enforce spawn spacing per lane so IDM starts feasible.
    for lane in 0..2 {
        let mut idx: Vec<usize> =
            (0..out.len()).filter(|&i| out[i].lane == lane).collect();
        idx.sort_by(|&a, &b| out[b].s.partial_cmp(&out[a].s).unwrap());
        for w in idx.windows(2) {
            let min_s = out[w[0]].s - 2.0 * cfg.traffic.half_length - cfg.traffic.idm.min_gap - 2.0;
            if out[w[1]].s > min_s {
                out[w[1]].s = min_s;
            }
        }
    }
    out
}

/// One sensing pass: which vehicles are directly visible, and which occluded
/// lane intervals remain as phantom-vehicle sets.
#[derive(Debug, Clone)]
pub struct Perception {
    pub visible: Vec<usize>,
    pub pvs: Vec<PhantomVehicleSet>,
}

/// Per-cycle record of the planning loop.
#[derive(Debug, Clone)]
pub struct CycleTrace {
    pub t: f64,
    pub ev: EVState,
    pub sel: usize,
    pub solve_ms: f64,
    pub iterations: usize,
    pub residual: f64,
    pub max_slack_violation: f64,
    pub consensus_gap: f64,
    pub converged: bool,
    pub r_total: f64,
    pub bounds: VelocityBounds,
    pub collision: bool,
    /// Obstacles passed to the solver this cycle.
    pub n_obs: usize,
    /// Full planned pair for this cycle when a fresh solve succeeded.
    pub pair: Option<[DiscreteTrajectory; 2]>,
}

/// Run-level summary in the style of the standard benchmark table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunMetrics {
    pub task_duration: f64,
    pub completed: bool,
    pub collision: bool,
    pub v_min: f64,
    pub v_mean: f64,
    pub v_max: f64,
    pub solve_mean_ms: f64,
    pub solve_max_ms: f64,
    pub cycles: usize,
    pub flagged_cycles: usize,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub mode: Mode,
    pub basis: BasisSet,
    pub ev: EVState,
    pub svs: Vec<SurroundingVehicle>,
    pub t: f64,
    occluders: Vec<Polygon>,
    lanes: [Lane; 2],
    ev_lane: Lane,
    /// (s on EV lane, s on crossing lane) of each crossing point.
    crossings: [(f64, f64); 2],
    warm: Option<AdmmState>,
    prev_pair: Option<[DiscreteTrajectory; 2]>,
    prev_sel: usize,
    /// Steps already executed along the previous plan (reuse/replay).
    prev_step: usize,
    replay_left: usize,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, mode: Mode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let basis =
            bezier::build_basis(cfg.horizon.order, cfg.horizon.n, cfg.horizon.duration())?;
        let ev_lane = cfg.ev_lane();
        let lanes = cfg.crossing_lanes();
        let crossings = [
            ev_lane.crossing(&lanes[0]).ok_or_else(|| Error::Config("parallel lanes".into()))?,
            ev_lane.crossing(&lanes[1]).ok_or_else(|| Error::Config("parallel lanes".into()))?,
        ];
        Ok(Self {
            ev: EVState {
                px: cfg.ev.start[0],
                py: cfg.ev.start[1],
                theta: 0.0,
                v: cfg.ev.start_speed,
            },
            svs: spawn_roster(cfg, seed),
            t: 0.0,
            occluders: cfg.occluders(),
            lanes,
            ev_lane,
            crossings,
            warm: None,
            prev_pair: None,
            prev_sel: 1,
            prev_step: 0,
            replay_left: 0,
            basis,
            mode,
            cfg: cfg.clone(),
        })
    }

    fn sv_pos(&self, sv: &SurroundingVehicle) -> Point {
        self.lanes[sv.lane].point_at(sv.s)
    }

    pub fn sense(&mut self) -> Perception {
        let eye = [self.ev.px, self.ev.py];
        let mut visible = Vec::new();
        for (i, sv) in self.svs.iter().enumerate() {
            let p = self.sv_pos(sv);
            let vis = distance(eye, p) <= self.cfg.sensor_range
                && line_of_sight(eye, p, &self.occluders);
            if vis {
                visible.push(i);
            }
        }
        for (i, sv) in self.svs.iter_mut().enumerate() {
            sv.visible = visible.contains(&i);
        }
        let pvs = if self.mode == Mode::Ignorant {
            Vec::new()
        } else {
            let spans: Vec<LaneSpan> = self
                .lanes
                .iter()
                .zip(self.crossings.iter())
                .map(|(lane, &(_, s_cross))| LaneSpan {
                    lane: lane.clone(),
                    s_min: s_cross - 45.0,
                    s_max: s_cross,
                })
                .collect();
            risk::extract_pvs(eye, &spans, &self.occluders, self.cfg.sensor_range)
        };
        Perception { visible, pvs }
    }

    /// Aggregated phantom risk over all occluded sets whose forward reach
    /// conflicts with the EV's own reachable window around a crossing.
    pub fn occlusion_risk(&self, pvs_list: &[PhantomVehicleSet]) -> Result<(f64, VelocityBounds)> {
        let params = &self.cfg.risk;
        let mut r_total = 0.0;
        let p_ev = self.ev_lane.project([self.ev.px, self.ev.py]);
        for pvs in pvs_list {
            let Some(&(s_cross_ev, s_cross_pv)) = self
                .lanes
                .iter()
                .zip(self.crossings.iter())
                .find(|(l, _)| l.id == pvs.lane)
                .map(|(_, c)| c)
            else {
                continue;
            };
            let d0 = s_cross_ev - p_ev;
            if d0 < -2.0 {
                continue; // crossing already cleared
            }
            let reach = reach::ev_frs(
                self.ev_lane.id,
                p_ev,
                self.ev.v,
                self.cfg.limits.a_x[1],
                self.cfg.ev.v_max,
                params.horizon,
            )
            .length();
            if reach < d0 {
                continue; // crossing beyond the EV's reachable window
            }
            // Exposure is the conflict zone itself; the risk magnitude then
            // tracks how many phantoms can reach it, which shrinks as
            // visibility opens on approach.
            let field = risk::build_risk_field(pvs, params)?;
            let window = ArcInterval::new(pvs.lane, s_cross_pv - 2.0, s_cross_pv + 2.0);
            r_total += risk::aggregate_risk(&field, &window, &reach::pv_frs(pvs, params));
        }
        let bounds = if self.mode == Mode::Ignorant {
            VelocityBounds { explore: self.cfg.ev.v_max, fallback: self.cfg.ev.v_max }
        } else {
            risk::velocity_bounds(r_total, params)?
        };
        Ok((r_total, bounds))
    }

    /// Visible vehicles worth constraining: crossing reach overlap, or simple
    /// proximity to the EV. Capped to the solver's obstacle slots.
    fn relevant_obstacles(&self, visible: &[usize]) -> Vec<ObstaclePrediction> {
        let params = &self.cfg.risk;
        let p_ev = self.ev_lane.project([self.ev.px, self.ev.py]);
        let ev_reach = reach::ev_frs(
            self.ev_lane.id,
            p_ev,
            self.ev.v,
            self.cfg.limits.a_x[1],
            self.cfg.ev.v_max,
            params.horizon,
        );
        let margin = 4.0;
        let mut picked: Vec<(f64, ObstaclePrediction)> = Vec::new();
        for &i in visible {
            let sv = &self.svs[i];
            let (s_cross_ev, s_cross_pv) = self.crossings[sv.lane];
            let window = ConflictWindow {
                ev_window: ArcInterval::new(self.ev_lane.id, s_cross_ev - margin, s_cross_ev + margin),
                obstacle_window: ArcInterval::new(
                    self.lanes[sv.lane].id,
                    s_cross_pv - margin,
                    s_cross_pv + margin,
                ),
            };
            let sv_frs = ArcInterval::new(
                self.lanes[sv.lane].id,
                sv.s,
                sv.s + sv.v * params.horizon,
            );
            let p = self.sv_pos(sv);
            let d = distance([self.ev.px, self.ev.py], p);
            if reach::relevance_filter(&ev_reach, &sv_frs, Some(&window)) || d <= 12.0 {
                let dir = self.lanes[sv.lane].dir;
                picked.push((
                    d,
                    ObstaclePrediction { x: p[0], y: p[1], vx: sv.v * dir[0], vy: sv.v * dir[1] },
                ));
            }
        }
        picked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        picked.truncate(self.cfg.obstacle_slots);
        picked.into_iter().map(|(_, o)| o).collect()
    }

    /// Cost-based choice between the exploration (0) and fallback (1)
    /// trajectories; exact ties resolve to the fallback.
    pub fn select_trajectory(
        &self,
        pair: &[DiscreteTrajectory; 2],
        bounds: &VelocityBounds,
        obstacles: &[ObstaclePrediction],
    ) -> usize {
        let w = &self.cfg.selection;
        let dt = self.basis.dt();
        let cost = |j: usize| -> f64 {
            let tr = &pair[j];
            let n = tr.len() as f64;
            let goal: f64 =
                tr.vx.iter().map(|v| (v - self.cfg.ev.v_x_d).powi(2)).sum::<f64>() / n;
            let lateral: f64 =
                tr.y.iter().map(|y| (y - self.cfg.ev.p_y_d).powi(2)).sum::<f64>() / n;
            let comfort: f64 = tr
                .jx
                .iter()
                .zip(&tr.jy)
                .map(|(jx, jy)| jx * jx + jy * jy)
                .sum::<f64>()
                / n;
            let bound = if j == 0 { bounds.explore } else { bounds.fallback };
            let mut viol = 0.0f64;
            for v in &tr.vx {
                viol += (v - bound).max(0.0);
            }
            let mut min_margin = f64::INFINITY;
            for (k, (&x, &y)) in tr.x.iter().zip(&tr.y).enumerate() {
                for o in obstacles {
                    let t = k as f64 * dt;
                    let dx = (x - (o.x + o.vx * t)) / self.cfg.ellipse[0];
                    let dy = (y - (o.y + o.vy * t)) / self.cfg.ellipse[1];
                    min_margin = min_margin.min(dx.hypot(dy) - 1.0);
                }
            }
            let safety = 100.0 * viol
                + if min_margin.is_finite() { 1.0 / (min_margin + 0.1).max(1e-3) } else { 0.0 };
            let consistency = match &self.prev_pair {
                Some(prev) => {
                    let p = &prev[self.prev_sel];
                    let m = tr.len().min(p.len().saturating_sub(1));
                    (0..m)
                        .map(|k| {
                            let dx = tr.x[k] - p.x[(k + 1).min(p.len() - 1)];
                            let dy = tr.y[k] - p.y[(k + 1).min(p.len() - 1)];
                            dx.hypot(dy)
                        })
                        .sum::<f64>()
                        / m as f64
                }
                None => 0.0,
            };
            w.goal * goal + w.lateral * lateral + w.safety * safety + w.comfort * comfort
                + w.consistency * consistency
        };
        if cost(0) < cost(1) {
            0
        } else {
            1
        }
    }

    /// One 10 Hz planning cycle: sense, assess risk, solve, select, execute.
    pub fn plan_cycle(&mut self) -> Result<CycleTrace> {
        let perception = self.sense();
        let (r_total, bounds) = self.occlusion_risk(&perception.pvs)?;
        let obstacles = self.relevant_obstacles(&perception.visible);
        let dt = self.basis.dt();

        let replaying = self.mode == Mode::Replay && self.replay_left > 0;
        let mut solve_ms = 0.0;
        let mut iterations = 0;
        let mut residual = 0.0;
        let mut max_slack_violation = 0.0;
        let mut consensus_gap = 0.0;
        let mut converged = true;
        let mut fresh_pair = None;

        if !replaying {
            let init = InitialState {
                px: self.ev.px,
                py: self.ev.py,
                theta: self.ev.theta,
                v: self.ev.v,
            };
            let attempt = solver::assemble(&init, &bounds, &obstacles, &self.basis, &self.cfg)
                .and_then(|data| {
                    let mut res = solver::solve(&data, self.warm.take(), &init, &self.basis, None)?;
                    // A warm start from a differently-bounded cycle can be
                    // worse than none; retry cold before giving up.
                    if !res.1.converged {
                        let cold = solver::solve(&data, None, &init, &self.basis, None)?;
                        let ms = res.1.wall_ms + cold.1.wall_ms;
                        res = cold;
                        res.1.wall_ms = ms;
                    }
                    Ok(res)
                });
            match attempt {
                Ok((state, report)) => {
                    solve_ms = report.wall_ms;
                    iterations = report.iterations;
                    residual = report.residual;
                    max_slack_violation = report.max_slack_violation;
                    consensus_gap = report.consensus_gap;
                    converged = report.converged;
                    if report.converged {
                        let pair = bezier::evaluate(&state.c, &self.basis)?;
                        self.prev_sel = self.select_trajectory(&pair, &bounds, &obstacles);
                        self.prev_pair = Some(pair.clone());
                        self.prev_step = 0;
                        fresh_pair = Some(pair);
                        if self.mode == Mode::Replay {
                            self.replay_left = self.cfg.horizon.n_s;
                        }
                    }
                    // Only a converged state is a useful warm start; a stalled
                    // one carries mismatched multipliers that poison the next
                    // cycle too.
                    self.warm = converged.then_some(state);
                }
                Err(Error::Singular(_)) | Err(Error::Dimension(_)) => {
                    converged = false;
                }
                Err(e) => return Err(e),
            }
        }

        // Execute one step: either the fresh plan's first interval or the
        // previous plan shifted one more step.
        let (u_theta, a) = match &self.prev_pair {
            Some(pair) => {
                if fresh_pair.is_none() {
                    self.prev_step = (self.prev_step + 1).min(self.cfg.horizon.n - 2);
                }
                let tr = &pair[self.prev_sel];
                let k = self.prev_step + 1;
                let dtheta = wrap_angle(tr.theta[k] - self.ev.theta);
                ((dtheta / dt).clamp(-2.0, 2.0), (tr.speed(k) - self.ev.v) / dt)
            }
            // No plan ever converged: brake straight.
            None => (0.0, self.cfg.limits.a_x[0] * 0.5),
        };
        if replaying || (self.mode == Mode::Replay && fresh_pair.is_some()) {
            self.replay_left = self.replay_left.saturating_sub(1);
            if fresh_pair.is_none() {
                // prev_step already advanced above
            }
        }
        self.ev = step_ev(&self.ev, (u_theta, a), dt, self.cfg.ev.v_max)?;

        // Surrounding vehicles follow their lane leaders only.
        self.step_traffic(dt);

        let collision = self.check_collision();
        self.t += dt;
        Ok(CycleTrace {
            t: self.t,
            ev: self.ev,
            sel: self.prev_sel,
            solve_ms,
            iterations,
            residual,
            max_slack_violation,
            consensus_gap,
            converged,
            r_total,
            bounds,
            collision,
            n_obs: obstacles.len(),
            pair: fresh_pair,
        })
    }

    fn step_traffic(&mut self, dt: f64) {
        let idm = self.cfg.traffic.idm.clone();
        let hl = self.cfg.traffic.half_length;
        let snapshot = self.svs.clone();
        for sv in self.svs.iter_mut() {
            let lead = snapshot
                .iter()
                .filter(|o| o.lane == sv.lane && o.s > sv.s)
                .min_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
            let a = match lead {
                Some(l) => idm_accel(l.s - sv.s - 2.0 * hl, sv.v, l.v, sv.v_des, &idm),
                None => idm_accel(f64::INFINITY, sv.v, sv.v, sv.v_des, &idm),
            };
            sv.v = (sv.v + a * dt).clamp(self.cfg.traffic.v_range[0], self.cfg.traffic.v_range[1]);
            sv.s += sv.v * dt;
        }
    }

    fn check_collision(&self) -> bool {
        self.svs.iter().any(|sv| {
            let p = self.sv_pos(sv);
            let dx = (p[0] - self.ev.px) / self.cfg.ellipse[0];
            let dy = (p[1] - self.ev.py) / self.cfg.ellipse[1];
            dx.hypot(dy) < 1.0
        })
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Fixed-step scenario run with per-cycle tracing.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    mode: Mode,
    seed: u64,
) -> Result<(RunMetrics, Vec<CycleTrace>)> {
    let mut world = World::new(cfg, mode, seed)?;
    let steps = (cfg.sim_duration / cfg.horizon.dt).round() as usize;
    let exit = cfg.exit_line();
    let mut trace = Vec::with_capacity(steps);
    let mut task_duration = cfg.sim_duration;
    let mut completed = false;
    for _ in 0..steps {
        let cycle = world.plan_cycle()?;
        if !completed && cycle.ev.px >= exit {
            task_duration = cycle.t;
            completed = true;
        }
        trace.push(cycle);
        if completed {
            break;
        }
    }
    let collision = trace.iter().any(|c| c.collision);
    let vs: Vec<f64> = trace.iter().map(|c| c.ev.v).collect();
    let solve: Vec<f64> =
        trace.iter().filter(|c| c.solve_ms > 0.0).map(|c| c.solve_ms).collect();
    let metrics = RunMetrics {
        task_duration,
        completed,
        collision,
        v_min: vs.iter().copied().fold(f64::INFINITY, f64::min),
        v_mean: vs.iter().sum::<f64>() / vs.len().max(1) as f64,
        v_max: vs.iter().copied().fold(0.0, f64::max),
        solve_mean_ms: solve.iter().sum::<f64>() / solve.len().max(1) as f64,
        solve_max_ms: solve.iter().copied().fold(0.0, f64::max),
        cycles: trace.len(),
        flagged_cycles: trace.iter().filter(|c| !c.converged).count(),
    };
    Ok((metrics, trace))
}

/// CSV encoding of a run trace.
pub fn trace_csv(trace: &[CycleTrace]) -> String {
    let mut out =
        String::from("t,px,py,theta,v,sel,solve_ms,iters,residual,r_total,v0_occ,v1_occ,collision\n");
    for c in trace {
        out.push_str(&format!(
            "{:.2},{:.4},{:.4},{:.5},{:.4},{},{:.3},{},{:.5},{:.3},{:.3},{:.3},{}\n",
            c.t,
            c.ev.px,
            c.ev.py,
            c.ev.theta,
            c.ev.v,
            c.sel,
            c.solve_ms,
            c.iterations,
            c.residual,
            c.r_total,
            c.bounds.explore,
            c.bounds.fallback,
            c.collision as u8,
        ));
    }
    out
}
