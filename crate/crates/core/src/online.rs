//! Window-adaptive robust design: when the current I/O window is large
//! enough to make identification error matter, the gain is re-optimized
//! for that window; otherwise the offline gain is reused.
//!
//! For a window `z`, `beta_i = M_bar^z_i z` (one `N_bar`-vector per row
//! block) and the identification-error term `G E_bar beta` has second
//! moment `G (B (x) Sigma_e) G^T` with `B[i][j] = beta_i^T beta_j`, so the
//! online objective is `tr(G (Sigma_e,L + B (x) Sigma_e) G^T)`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorGain, StackedWindow};
use crate::io::fmt_f64;
use crate::linalg::{self, Mat, Vector};
use crate::robust::{RobustDesigner, RobustProblem, SensitivityStack};
use crate::sdp::{ConicBackend, GainProblem, Objective, SolveStatus};
use crate::simulator::TrajectoryDataset;

#[derive(Clone, Debug)]
pub struct OnlineContext {
    pub k: usize,
    pub beta: Vec<Vector>,
    pub b_gram: Mat,
    pub cost: Mat,
}

pub fn build_context(stack: &SensitivityStack, win: &StackedWindow, sigma_e: &Mat) -> Result<OnlineContext> {
    let z = win.z();
    if win.l != stack.l || stack.z_rows.first().is_some_and(|r| r.ncols() != z.len()) {
        return Err(Error::WindowNotFull { needed: stack.l * (stack.n_y + stack.n_u), available: z.len() });
    }
    let beta: Vec<Vector> = stack.z_rows.iter().map(|r| r * &z).collect();
    let l = beta.len();
    let b_gram = Mat::from_fn(l, l, |i, j| beta[i].dot(&beta[j]));
    let cost = linalg::symmetrize(&linalg::kron(&(Mat::identity(l, l) + &b_gram), sigma_e));
    Ok(OnlineContext { k: win.k, beta, b_gram, cost })
}

/// `lambda_min(G_off Pi_z G_off^T)`, the per-design gate coefficient.
pub fn gate_coefficient(g_off: &Mat, prob: &RobustProblem) -> f64 {
    linalg::lambda_min(&prob.z_bias(g_off)).max(0.0)
}

/// True when `coef * ||z||^2 > alpha`.
pub fn gate(coef: f64, win: &StackedWindow, alpha: f64) -> bool {
    coef * win.z().norm_squared() > alpha
}

/// `min tr(G (Sigma_e,L + B (x) Sigma_e) G^T)` under the fault-bias bound.
pub fn solve_online(ctx: &OnlineContext, prob: &RobustProblem, gamma_f2: f64, backend: &dyn ConicBackend) -> Result<(Mat, SolveStatus, f64)> {
    prob.check_gamma_f(gamma_f2)?;
    let half = ctx
        .cost
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("online cost matrix is not positive definite".into()))?
        .l();
    let gp = GainProblem {
        n_f: prob.n_f,
        n: prob.n(),
        constraints: vec![prob.fault_constraint(gamma_f2)],
        objective: Objective::Trace(half),
    };
    let sol = gp.solve(backend)?;
    Ok((sol.g, sol.status, sol.solve_ms))
}

#[derive(Clone, Debug)]
pub struct Alg3Step {
    pub k: usize,
    pub estimate: Vector,
    pub gate_fired: bool,
    /// `None` when the offline gain was used without a solve.
    pub status: Option<SolveStatus>,
    pub solve_ms: f64,
    pub fell_back: bool,
}

/// Online estimator state: offline gain, its gate coefficient and the
/// design data.
pub struct OnlineEstimator<'a> {
    pub designer: &'a RobustDesigner,
    pub offline: &'a EstimatorGain,
    pub alpha: f64,
    pub gamma_f2: f64,
    pub coef: f64,
}

impl<'a> OnlineEstimator<'a> {
    pub fn new(designer: &'a RobustDesigner, offline: &'a EstimatorGain, alpha: f64, gamma_f2: f64) -> Self {
        let coef = gate_coefficient(&offline.gmat, &designer.problem);
        OnlineEstimator { designer, offline, alpha, gamma_f2, coef }
    }

    /// One window; solver failures fall back to the offline gain.
    pub fn step(&self, win: &StackedWindow, backend: &dyn ConicBackend) -> Result<Alg3Step> {
        let r = crate::estimator::residual(&self.offline.ty, &self.offline.tu, win)?;
        let fired = gate(self.coef, win, self.alpha);
        if !fired {
            return Ok(Alg3Step { k: win.k, estimate: &self.offline.gmat * r, gate_fired: false, status: None, solve_ms: 0.0, fell_back: false });
        }
        let ctx = build_context(&self.designer.stack, win, &self.designer.problem.sigma_e)?;
        match solve_online(&ctx, &self.designer.problem, self.gamma_f2, backend) {
            Ok((g, status, ms)) => Ok(Alg3Step { k: win.k, estimate: g * r, gate_fired: true, status: Some(status), solve_ms: ms, fell_back: false }),
            Err(e) => {
                log::warn!("online design failed at k = {}: {e}; using the offline gain", win.k);
                let status = match e {
                    Error::SolverFailure { status, .. } => status,
                    _ => SolveStatus::NumericalFailure,
                };
                Ok(Alg3Step { k: win.k, estimate: &self.offline.gmat * r, gate_fired: true, status: Some(status), solve_ms: 0.0, fell_back: true })
            }
        }
    }

    /// Runs over every full window of `traj` (`k >= L - 1`).
    pub fn run(&self, traj: &TrajectoryDataset, backend: &dyn ConicBackend) -> Result<Vec<Alg3Step>> {
        let l = self.offline.l;
        (l.saturating_sub(1)..traj.len())
            .map(|k| self.step(&StackedWindow::from_trajectory(traj, k, l)?, backend))
            .collect()
    }
}

pub fn write_gate_log(path: &Path, steps: &[Alg3Step], gamma_f2: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "k,gate_fired,solver_status,solve_ms,gamma_f2")?;
    for s in steps {
        let status = match (s.status, s.fell_back) {
            (None, _) => "skipped".to_string(),
            (Some(st), false) => st.to_string(),
            (Some(st), true) => format!("{st}_fallback"),
        };
        writeln!(f, "{},{},{},{},{}", s.k, s.gate_fired as u8, status, fmt_f64(s.solve_ms), fmt_f64(gamma_f2))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> SensitivityStack {
        // L = 2, N_bar = 3, n_y = 1, n_u = 1 -> z has 4 entries.
        let r0 = Mat::from_row_slice(3, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let r1 = Mat::from_row_slice(3, 4, &[0.5, 1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        SensitivityStack { l: 2, m: 1, tau: 0, n_bar: 3, n_y: 1, n_u: 1, n_f: 1, upsilon_rows: vec![], z_rows: vec![r0, r1] }
    }

    fn win(y: [f64; 2], u: [f64; 2]) -> StackedWindow {
        StackedWindow { y_win: Vector::from_row_slice(&y), u_win: Vector::from_row_slice(&u), k: 1, l: 2 }
    }

    #[test]
    fn zero_window_gives_offline_cost() {
        let s = Mat::from_element(1, 1, 0.3);
        let ctx = build_context(&stack(), &win([0.0; 2], [0.0; 2]), &s).unwrap();
        assert_eq!(ctx.b_gram, Mat::zeros(2, 2));
        assert_eq!(ctx.cost, Mat::identity(2, 2) * 0.3);
    }

    #[test]
    fn gram_scales_quadratically() {
        let s = Mat::identity(1, 1);
        let w = win([1.0, -2.0], [0.5, 3.0]);
        let a = build_context(&stack(), &w, &s).unwrap();
        let b = build_context(&stack(), &w.scaled(3.0), &s).unwrap();
        assert!((b.b_gram - a.b_gram * 9.0).norm() < 1e-12);
    }

    #[test]
    fn gate_threshold() {
        let w = win([1.0, 1.0], [1.0, 1.0]);
        assert!(gate(1.0, &w, 3.999));
        assert!(!gate(1.0, &w, 4.0));
        assert!(!gate(5.0, &win([0.0; 2], [0.0; 2]), 0.0));
    }
}
