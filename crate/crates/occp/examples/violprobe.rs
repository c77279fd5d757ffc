use occp::bezier::build_basis;
use occp::config::ScenarioConfig;
use occp::risk::VelocityBounds;
use occp::bezier::ControlPoints;
use occp::solver::{self, AdmmState, DualInputs, InitialState, Kernels};

fn main() {
    let mut cfg = ScenarioConfig::default();
    cfg.horizon.n_s = 10;
    let basis = build_basis(cfg.horizon.order, cfg.horizon.n, cfg.horizon.duration()).unwrap();
    let init = InitialState { px: -49.5, py: 0.0, theta: 0.0, v: 5.0 };
    let bounds = VelocityBounds { explore: 10.0, fallback: 10.0 };
    let data = solver::assemble(&init, &bounds, &[], &basis, &cfg).unwrap();
    let kernels = Kernels::new(&data).unwrap();
    let mut state = solver::init_state(&init, &data, &basis);
    for it in 0..500 {
        let v = solver::speed_matrix(&data, &state.c);
        let c_theta = solver::update_theta(&state, &data, &kernels).unwrap();
        let c_x = solver::update_x(&state, &data, &kernels, &v).unwrap();
        let c_y = solver::update_y(&state, &data, &kernels, &v).unwrap();
        let c = ControlPoints { x: c_x, y: c_y, theta: c_theta };
        let (omega, xi) = solver::update_polar(&state, &data, &c.x, &c.y);
        let (z_x, z_y, z_theta) = solver::update_consensus(&data, &c);
        let (s_x, s_y) = solver::update_slack(&state, &data, &c);
        let duals = solver::update_duals(&state, &data, &DualInputs {
            c: &c, omega: &omega, xi: &xi, z_x: &z_x, z_y: &z_y, z_theta: &z_theta, s_x: &s_x, s_y: &s_y,
        });
        state = AdmmState {
            c, omega, xi, z_x, z_y, z_theta, s_x, s_y,
            l_theta: duals.l_theta, l_x: duals.l_x, l_y: duals.l_y,
            l_obs_x: duals.l_obs_x, l_obs_y: duals.l_obs_y,
            l_cx: duals.l_cx, l_cy: duals.l_cy, l_ctheta: duals.l_ctheta,
            iter: state.iter + 1,
        };
        if it % 20 == 0 || it == 499 {
            let vx = data.dw.transpose() * &state.c.x;
            println!("it={it} vx1={:.3} vx5={:.3} vx10={:.3} vx39={:.3}", vx[(1,0)], vx[(5,0)], vx[(10,0)], vx[(39,0)]);
        }
    }
}
