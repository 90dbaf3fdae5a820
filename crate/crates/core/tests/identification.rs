use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rhfe::identification::{extract_markov, identify, Feedthrough, IdentificationResult};
use rhfe::linalg::Mat;
use rhfe::simulator::TrajectoryDataset;
use rhfe::system_model::FaultConfig;

/// Exact ARX(2) data `y(k) = sum_i Hy_i y(k-i) + Hu_i u(k-i) + e(k)` with the
/// innovations kept, so the identification error is known in closed form.
struct Arx {
    traj: TrajectoryDataset,
    e: Mat,
    hu: [Mat; 2],
    hy: [Mat; 2],
}

fn arx(n: usize, seed: u64) -> Arx {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let hy = [Mat::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.3]), Mat::from_row_slice(2, 2, &[-0.1, 0.0, 0.05, 0.1])];
    let hu = [Mat::from_row_slice(2, 1, &[1.0, -0.5]), Mat::from_row_slice(2, 1, &[0.3, 0.2])];
    let mut y = Mat::zeros(n, 2);
    let u = Mat::from_fn(n, 1, |_, _| g());
    let e = Mat::from_fn(n, 2, |_, _| 0.3 * g());
    for k in 0..n {
        let mut yk = e.row(k).transpose();
        for i in 1..=2 {
            if k >= i {
                yk += &hy[i - 1] * y.row(k - i).transpose() + &hu[i - 1] * u.row(k - i).transpose();
            }
        }
        y.set_row(k, &yk.transpose());
    }
    let traj = TrajectoryDataset { u, y, f_true: Mat::zeros(n, 0), reference: Mat::zeros(n, 1), seed: Some(seed) };
    Arx { traj, e, hu, hy }
}

#[test]
fn identification_error_equals_innovations_times_sensitivity() {
    let p = 2;
    let data = arx(400, 3);
    let id = identify(&data.traj, p, Feedthrough::KnownZero).unwrap();
    // E_id: innovations of the regression columns k = p..N-1
    let e_id = data.e.rows(p, 400 - p).transpose();
    for cfg in [FaultConfig::sensors(&[2]), FaultConfig::actuators(&[1]), FaultConfig { sensors: vec![1], actuators: vec![1] }] {
        let mk = extract_markov(&id, &cfg).unwrap();
        for i in 1..=p {
            let du = mk.hu(i) - &data.hu[i - 1];
            let dy = mk.hy(i) - &data.hy[i - 1];
            assert!((&du - &e_id * mk.mu(i).unwrap()).norm() < 1e-10, "H^u_{i}");
            assert!((&dy - &e_id * mk.my(i).unwrap()).norm() < 1e-10, "H^y_{i}");
            // fault columns: sensor j -> -H^y column, actuator l -> H^u column
            let mut hf_true = Mat::zeros(2, cfg.n_f());
            for (c, &j) in cfg.sensors.iter().enumerate() {
                hf_true.set_column(c, &(-data.hy[i - 1].column(j - 1)));
            }
            for (k, &l) in cfg.actuators.iter().enumerate() {
                hf_true.set_column(cfg.sensors.len() + k, &data.hu[i - 1].column(l - 1));
            }
            let df = mk.hf(i) - hf_true;
            assert!((&df - &e_id * mk.mf(i).unwrap()).norm() < 1e-10, "H^f_{i}");
        }
        // truncated beyond p
        assert_eq!(mk.hu(p + 1), Mat::zeros(2, 1));
    }
}

#[test]
fn feedthrough_estimate_adds_direct_block() {
    let data = arx(300, 5);
    let a = identify(&data.traj, 2, Feedthrough::KnownZero).unwrap();
    let b = identify(&data.traj, 2, Feedthrough::Estimate).unwrap();
    assert_eq!(a.xi_hat.ncols() + 1, b.xi_hat.ncols());
    let mk = extract_markov(&b, &FaultConfig::actuators(&[1])).unwrap();
    // true D = 0: the estimate is noise-level small
    assert!(mk.hu(0).norm() < 0.1, "{}", mk.hu(0));
}

#[test]
fn innovation_covariance_is_consistent() {
    let data = arx(20_000, 8);
    let id = identify(&data.traj, 2, Feedthrough::KnownZero).unwrap();
    let truth = Mat::identity(2, 2) * 0.09;
    assert!((&id.sigma_e_hat - truth).norm() < 0.01, "{}", id.sigma_e_hat);
}

#[test]
fn scaling_data_scales_covariance_only() {
    let data = arx(500, 9);
    let a = identify(&data.traj, 2, Feedthrough::KnownZero).unwrap();
    let mut scaled = data.traj.clone();
    scaled.u *= 3.0;
    scaled.y *= 3.0;
    let b = identify(&scaled, 2, Feedthrough::KnownZero).unwrap();
    assert!((&a.xi_hat - &b.xi_hat).norm() < 1e-10);
    assert!((&a.sigma_e_hat * 9.0 - &b.sigma_e_hat).norm() < 1e-10);
}

#[test]
fn save_load_round_trip() {
    let data = arx(200, 2);
    let id = identify(&data.traj, 2, Feedthrough::KnownZero).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.json");
    id.save(&path).unwrap();
    let back = IdentificationResult::load(&path).unwrap();
    assert_eq!(back.xi_hat, id.xi_hat);
    assert_eq!(back.sigma_e_hat, id.sigma_e_hat);
    assert_eq!(back.z_pinv, id.z_pinv);
    assert_eq!(back.feedthrough, id.feedthrough);
}

#[test]
fn truncated_sidecar_is_rejected() {
    let data = arx(200, 2);
    let id = identify(&data.traj, 2, Feedthrough::KnownZero).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.json");
    id.save(&path).unwrap();
    let side = dir.path().join("id.zpinv.bin");
    let bytes = std::fs::read(&side).unwrap();
    std::fs::write(&side, &bytes[..bytes.len() - 8]).unwrap();
    assert!(IdentificationResult::load(&path).is_err());
}
