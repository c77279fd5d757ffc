use occp::config::ScenarioConfig;
use occp::sim::{run_scenario, Mode};

fn main() {
    let cfg = ScenarioConfig::default();
    for mode in [Mode::Aware, Mode::Ignorant] {
        for seed in 0..10u64 {
            let (m, tr) = run_scenario(&cfg, mode, seed).unwrap();
            println!(
                "{mode:?} seed={seed}: dur={:.1} done={} coll={} vmin={:.2} vmean={:.2} solve={:.1}/{:.1}ms flagged={}/{}",
                m.task_duration, m.completed, m.collision, m.v_min, m.v_mean,
                m.solve_mean_ms, m.solve_max_ms, m.flagged_cycles, m.cycles
            );
            if std::env::var("DUMP").is_ok() && seed == 3 && mode == Mode::Aware {
                for c in tr.iter().step_by(1) {
                    println!("  t={:.1} px={:.1} py={:.2} v={:.2} sel={} r={:.1} b=({:.1},{:.1}) it={} conv={} nobs={} hit={} res={:.3} viol={:.3} gap={:.3}",
                        c.t, c.ev.px, c.ev.py, c.ev.v, c.sel, c.r_total, c.bounds.explore, c.bounds.fallback, c.iterations, c.converged, c.n_obs, c.collision,
                        c.residual, c.max_slack_violation, c.consensus_gap);
                }
            }
        }
    }
}
