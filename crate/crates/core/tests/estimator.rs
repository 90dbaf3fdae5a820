use rhfe::estimator::{design_nominal, original_model_gain, StackedWindow};
use rhfe::simulator::{fault_profile_benchmark, simulate_closed_loop, vtol_model};
use rhfe::system_model::{markov_parameters, relative_degree, steady_state_predictor, FaultConfig};

fn equivalence(cfg: FaultConfig) -> f64 {
    let (model, ctrl) = vtol_model();
    let pred = steady_state_predictor(&model).unwrap();
    let (l, m) = (30, 10);
    let markov = markov_parameters(&pred, &cfg, l + m).unwrap();
    let tau = relative_degree(&markov, cfg.n_f()).unwrap();
    let alg0 = design_nominal(&markov, l, m, tau).unwrap();
    let orig = original_model_gain(&model, &cfg, l, tau).unwrap();
    let traj = simulate_closed_loop(&model, &ctrl, &fault_profile_benchmark(), &cfg, 300, 11).unwrap();
    let mut worst: f64 = 0.0;
    for k in (l..300).step_by(5).take(50) {
        let w = StackedWindow::from_trajectory(&traj, k, l).unwrap();
        let a = alg0.estimate(&w).unwrap();
        let b = orig.estimate(&w).unwrap();
        worst = worst.max((&a - &b).norm() / b.norm().max(1e-12));
    }
    worst
}

#[test]
fn predictor_form_matches_original_model_sensor() {
    let e = equivalence(FaultConfig::sensors(&[1, 2]));
    assert!(e <= 1e-6, "relative error {e}");
}

#[test]
fn predictor_form_matches_original_model_actuator() {
    let e = equivalence(FaultConfig::actuators(&[1, 2]));
    assert!(e <= 1e-6, "relative error {e}");
}
