use proptest::prelude::*;

use rhfe::estimator::{block_hankel, block_toeplitz, nominal_gain, EstimatorGain, GainKind, StackedWindow};
use rhfe::linalg::{self, Mat, Vector};
use rhfe::robust::{gram, RobustProblem};
use rhfe::sdp::{quad_constraint_to_psd, Bound};
use rhfe::system_model::FaultConfig;

fn mat(r: usize, c: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| Mat::from_row_slice(r, c, &v))
}

fn spd(n: usize) -> impl Strategy<Value = Mat> {
    mat(n, n).prop_map(move |a| &a * a.transpose() + Mat::identity(n, n) * 0.5)
}

fn blocks(count: usize, r: usize, c: usize) -> impl Strategy<Value = Vec<Mat>> {
    prop::collection::vec(mat(r, c), count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toeplitz_blocks_follow_index_difference(h in blocks(4, 2, 3), l in 1usize..5) {
        let t = block_toeplitz(&h, l);
        prop_assert_eq!(t.shape(), (2 * l, 3 * l));
        for i in 0..l {
            for j in 0..l {
                let b = t.view((2 * i, 3 * j), (2, 3)).into_owned();
                let want = if j <= i && i - j < h.len() { h[i - j].clone() } else { Mat::zeros(2, 3) };
                prop_assert_eq!(b, want);
            }
        }
    }

    #[test]
    fn hankel_blocks_follow_index_sum(h in blocks(7, 1, 2), l in 1usize..4, m in 1usize..4) {
        let t = block_hankel(&h, l, m);
        for i in 0..l {
            for j in 0..m {
                prop_assert_eq!(t.view((i, 2 * j), (1, 2)).into_owned(), h[i + j + 1].clone());
            }
        }
    }

    #[test]
    fn kronecker_mixed_product(a in mat(2, 3), b in mat(2, 2), c in mat(3, 2), d in mat(2, 1)) {
        let lhs = linalg::kron(&a, &b) * linalg::kron(&c, &d);
        let rhs = linalg::kron(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn gram_is_symmetric_psd_trace_form(rows in blocks(4, 5, 3)) {
        let p = gram(&rows);
        for i in 0..4 {
            for j in 0..4 {
                let t = (&rows[i] * rows[j].transpose()).trace();
                prop_assert!((p[(i, j)] - t).abs() < 1e-10);
            }
        }
        prop_assert!(linalg::lambda_min(&p) > -1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn lift_agrees_with_quadratic_form(w in mat(4, 4), c in mat(2, 1), g in mat(2, 3), gamma2 in 0.1f64..20.0) {
        let middle = &w * w.transpose();
        let q = quad_constraint_to_psd(&middle, &c, Bound::Fixed(gamma2)).unwrap();
        let gc = linalg::hcat(&[&g, &c]).unwrap();
        let direct = linalg::lambda_max(&(&gc * &middle * gc.transpose())) - gamma2;
        let lifted = linalg::lambda_min(&q.lifted(&g, 0.0));
        prop_assert!((q.lhs(&g) - &gc * &middle * gc.transpose()).norm() < 1e-8 * (1.0 + middle.norm()));
        if direct.abs() > 1e-6 && lifted.abs() > 1e-6 {
            prop_assert_eq!(direct < 0.0, lifted > 0.0);
        }
    }

    #[test]
    fn estimator_is_linear_in_data(
        g in mat(1, 6), ty in mat(6, 6), tu in mat(6, 3),
        y in prop::collection::vec(-5.0f64..5.0, 6), u in prop::collection::vec(-5.0f64..5.0, 3),
        a in -4.0f64..4.0,
    ) {
        let est = EstimatorGain {
            kind: GainKind::Nominal, l: 3, m: 1, tau: 0, n_f: 1, n_y: 2, n_u: 1, fault: None,
            gamma_f2: None, gamma_z2: None, solver_status: None, gmat: g, ty, tu,
        };
        let win = StackedWindow { y_win: Vector::from_vec(y), u_win: Vector::from_vec(u), k: 2, l: 3 };
        let lhs = est.estimate(&win.scaled(a)).unwrap();
        let rhs = est.estimate(&win).unwrap() * a;
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + win.z().norm()));
    }

    #[test]
    fn nominal_gain_recovers_fault_columns(ups in mat(6, 3), s in spd(2)) {
        prop_assume!(linalg::singular_values(&ups).last().copied().unwrap_or(0.0) > 1e-2);
        let g = nominal_gain(&ups, &s, 3, 1).unwrap();
        let sel = &g * &ups;
        prop_assert!((sel - Mat::from_row_slice(1, 3, &[0.0, 0.0, 1.0])).norm() < 1e-8);
    }

    #[test]
    fn fault_bias_matches_expanded_form(ups in mat(4, 3), s in spd(2), pw in mat(2, 2), g in mat(2, 4)) {
        let p = &pw * pw.transpose() + Mat::identity(2, 2) * 0.1;
        let prob = RobustProblem::new(ups.clone(), &s, p.clone(), p.clone(), 2, 2).unwrap();
        // E[(I_sel - G Upsilon)(.)^T] + G (P (x) Sigma) G^T
        let mut sel = Mat::zeros(2, 3);
        sel[(0, 1)] = 1.0;
        sel[(1, 2)] = 1.0;
        let d = &sel - &g * &ups;
        let want = &d * d.transpose() + &g * linalg::kron(&p, &s) * g.transpose();
        prop_assert!((prob.fault_bias(&g) - &want).norm() < 1e-8 * (1.0 + want.norm()));
        let var = (&g * linalg::kron(&Mat::identity(2, 2), &s) * g.transpose()).trace();
        prop_assert!((prob.variance(&g) - var).abs() < 1e-8 * (1.0 + var));
    }

    #[test]
    fn fault_spec_round_trips(js in prop::collection::vec(1usize..5, 0..3), ls in prop::collection::vec(1usize..3, 0..3)) {
        prop_assume!(!js.is_empty() || !ls.is_empty());
        let cfg = FaultConfig { sensors: js, actuators: ls };
        let back: FaultConfig = cfg.to_string().parse().unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn estimator_file_round_trips(g in mat(2, 4), ty in mat(4, 4), tu in mat(4, 2), gf in prop::option::of(1e-6f64..1e6)) {
        let est = EstimatorGain {
            kind: GainKind::OfflineRobust, l: 2, m: 3, tau: 1, n_f: 2, n_y: 2, n_u: 1, fault: Some("actuator:1,2".into()),
            gamma_f2: gf, gamma_z2: None, solver_status: Some("solved".into()), gmat: g, ty, tu,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.json");
        est.save(&path).unwrap();
        let back = EstimatorGain::load(&path).unwrap();
        prop_assert_eq!(&back.gmat, &est.gmat);
        prop_assert_eq!(&back.ty, &est.ty);
        prop_assert_eq!(&back.tu, &est.tu);
        prop_assert_eq!(back.gamma_f2, est.gamma_f2);
        prop_assert_eq!(back.kind, est.kind);
        prop_assert_eq!(back.fault, est.fault);
    }
}
