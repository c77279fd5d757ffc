use occp::config::ScenarioConfig;
use occp::sim::{run_scenario, Mode};

fn main() {
    let mut cfg = ScenarioConfig::default();
    cfg.horizon.n_s = 10;
    let (m, tr) = run_scenario(&cfg, Mode::Aware, 0).unwrap();
    println!("dur={:.2} coll={} vmin={:.2}", m.task_duration, m.collision, m.v_min);
    for c in tr.iter().step_by(4) {
        println!("t={:.1} px={:.1} v={:.2} sel={} r={:.1} b=({:.1},{:.1}) it={} conv={} nobs={} viol={:.3} gap={:.3}",
            c.t, c.ev.px, c.ev.v, c.sel, c.r_total, c.bounds.explore, c.bounds.fallback, c.iterations, c.converged, c.n_obs, c.max_slack_violation, c.consensus_gap);
    }
}
