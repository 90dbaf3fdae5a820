//! Robust gain design against identification error.
//!
//! With identified Markov parameters `H_hat_i = H_i + E_id M_i`, every
//! stacked matrix splits into a nominal part and `E_bar M_bar`, where
//! `E_bar = I_L (x) E_id` is never formed. Second moments only need the
//! `L x L` Gram matrices `P[i][j] = tr(M_bar_i M_bar_j^T)` over row blocks:
//! `E[E_bar A E_bar^T] = P (x) Sigma_e` for `A = M_bar M_bar^T`.
//!
//! The fault-bias bound is written around the ellipsoid center
//! `G0 = I_nf Upsilon_hat^T Pi_f^{-1}`:
//! `E[T_f T_f^T] = (G - G0) Pi_f (G - G0)^T + I - G0 Pi_f G0^T`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{design_nominal, structured_matrices, EstimatorGain, GainKind};
use crate::io::fmt_f64;
use crate::linalg::{self, Mat};
use crate::sdp::{psd_factor_clipped, Bound, ConicBackend, GainProblem, Objective, QuadConstraint, SolveStatus};
use crate::system_model::MarkovSet;

/// Row blocks (each `N_bar` rows) of the stacked sensitivity matrices.
#[derive(Clone, Debug)]
pub struct SensitivityStack {
    pub l: usize,
    pub m: usize,
    pub tau: usize,
    pub n_bar: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub n_f: usize,
    /// `[M_bar^o_i, M_bar^f_i]`, width `m n_u + (L - tau) n_f`.
    pub upsilon_rows: Vec<Mat>,
    /// `[M_bar^y_i, M_bar^u_i]`, width `L (n_y + n_u)`; acts on `z = [y_win; u_win]`.
    pub z_rows: Vec<Mat>,
}

pub fn build_sensitivity(markov: &MarkovSet, l: usize, m: usize, tau: usize) -> Result<SensitivityStack> {
    let s = markov
        .sensitivity
        .as_ref()
        .ok_or_else(|| Error::Config("robust design needs an identified Markov set (sensitivities missing)".into()))?;
    if tau >= l {
        return Err(Error::Config(format!("horizon L = {l} must exceed the relative degree {tau}")));
    }
    let (nb, nu, ny, nf) = (s.n_bar, markov.n_u, markov.n_y, markov.n_f);
    let ups_w = m * nu + (l - tau) * nf;
    let z_w = l * (ny + nu);
    let mut upsilon_rows = Vec::with_capacity(l);
    let mut z_rows = Vec::with_capacity(l);
    for i in 0..l {
        let mut ur = Mat::zeros(nb, ups_w);
        for j in 0..m {
            ur.view_mut((0, j * nu), (nb, nu)).copy_from(&markov.mu(i + j + 1).unwrap());
        }
        for j in 0..=i.min(l - tau - 1) {
            ur.view_mut((0, m * nu + j * nf), (nb, nf)).copy_from(&markov.mf(i - j).unwrap());
        }
        let mut zr = Mat::zeros(nb, z_w);
        for j in 0..=i {
            zr.view_mut((0, j * ny), (nb, ny)).copy_from(&markov.my(i - j).unwrap());
            zr.view_mut((0, l * ny + j * nu), (nb, nu)).copy_from(&markov.mu(i - j).unwrap());
        }
        upsilon_rows.push(ur);
        z_rows.push(zr);
    }
    Ok(SensitivityStack { l, m, tau, n_bar: nb, n_y: ny, n_u: nu, n_f: nf, upsilon_rows, z_rows })
}

impl SensitivityStack {
    /// Row blocks stacked into one `(L N_bar) x width` matrix.
    pub fn mbar_upsilon(&self) -> Mat {
        stack_rows(&self.upsilon_rows)
    }
    pub fn mbar_z(&self) -> Mat {
        stack_rows(&self.z_rows)
    }
}

fn stack_rows(rows: &[Mat]) -> Mat {
    let refs: Vec<&Mat> = rows.iter().collect();
    linalg::vcat(&refs).unwrap_or_else(|_| Mat::zeros(0, 0))
}

/// `P[i][j] = tr(A_i A_j^T)`
pub fn gram(rows: &[Mat]) -> Mat {
    let l = rows.len();
    let mut p = Mat::zeros(l, l);
    for i in 0..l {
        for j in i..l {
            let v = rows[i].dot(&rows[j]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

/// `(P_Upsilon, P_z)`
pub fn gram_blocks(stack: &SensitivityStack) -> (Mat, Mat) {
    (gram(&stack.upsilon_rows), gram(&stack.z_rows))
}

/// Data of the robust design problems for one identified model.
#[derive(Clone, Debug)]
pub struct RobustProblem {
    pub l: usize,
    pub n_f: usize,
    pub upsilon_hat: Mat,
    pub sigma_e: Mat,
    pub p_upsilon: Mat,
    pub p_z: Mat,
    pub pi_f: Mat,
    pub pi_z: Mat,
    pub g0: Mat,
    /// `G0 Pi_f G0^T`
    pub g0_pi_g0: Mat,
    pi_f_factor: Mat,
    pi_z_factor: Mat,
    sigma_l_half: Mat,
}

impl RobustProblem {
    pub fn new(upsilon_hat: Mat, sigma_e: &Mat, p_upsilon: Mat, p_z: Mat, l: usize, n_f: usize) -> Result<Self> {
        let ny = sigma_e.nrows();
        if upsilon_hat.nrows() != l * ny || p_upsilon.shape() != (l, l) || p_z.shape() != (l, l) {
            return Err(Error::ShapeMismatch("robust problem blocks have inconsistent sizes".into()));
        }
        let sigma_chol = linalg::symmetrize(sigma_e)
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("innovation covariance is not positive definite".into()))?
            .l();
        let mut pi_f = linalg::symmetrize(&(&upsilon_hat * upsilon_hat.transpose() + linalg::kron(&p_upsilon, sigma_e)));
        let eps = 1e-10 * pi_f.trace().max(f64::MIN_POSITIVE);
        if linalg::lambda_min(&pi_f) < eps {
            log::debug!("regularizing Pi_f by {eps:e}");
            pi_f += Mat::identity(l * ny, l * ny) * eps;
        }
        let pi_f_factor = pi_f
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("Pi_f is not positive definite".into()))?
            .l();
        let pi_z = linalg::symmetrize(&linalg::kron(&p_z, sigma_e));
        let pi_z_factor = linalg::kron(&psd_factor_clipped(&linalg::symmetrize(&p_z))?, &sigma_chol);
        let sigma_l_half = linalg::kron(&Mat::identity(l, l), &sigma_chol);

        // G0 = I_nf Upsilon^T Pi_f^{-1} via two triangular solves.
        let cols = upsilon_hat.ncols();
        let sel = upsilon_hat.columns(cols - n_f, n_f).transpose();
        let chol = pi_f.clone().cholesky().unwrap();
        let g0 = chol.solve(&sel.transpose()).transpose();
        let g0_pi_g0 = linalg::symmetrize(&(&g0 * &pi_f * g0.transpose()));
        Ok(RobustProblem {
            l,
            n_f,
            upsilon_hat,
            sigma_e: sigma_e.clone(),
            p_upsilon,
            p_z,
            pi_f,
            pi_z,
            g0,
            g0_pi_g0,
            pi_f_factor,
            pi_z_factor,
            sigma_l_half,
        })
    }

    pub fn n(&self) -> usize {
        self.upsilon_hat.nrows()
    }

    /// Factor `W` with `W W^T = Sigma_e,L`.
    pub fn sigma_l_half(&self) -> &Mat {
        &self.sigma_l_half
    }

    /// `E[T_f T_f^T]` at gain `g`.
    pub fn fault_bias(&self, g: &Mat) -> Mat {
        let d = g - &self.g0;
        linalg::symmetrize(&(&d * &self.pi_f * d.transpose() + Mat::identity(self.n_f, self.n_f) - &self.g0_pi_g0))
    }

    /// `E[T_z T_z^T] = G Pi_z G^T`
    pub fn z_bias(&self, g: &Mat) -> Mat {
        linalg::symmetrize(&(g * &self.pi_z * g.transpose()))
    }

    /// `tr(G Sigma_e,L G^T)`
    pub fn variance(&self, g: &Mat) -> f64 {
        (g * &self.sigma_l_half).norm_squared()
    }

    pub fn metrics(&self, g: &Mat) -> DesignMetrics {
        DesignMetrics {
            bias_f: linalg::lambda_max(&self.fault_bias(g)),
            bias_z: linalg::lambda_max(&self.z_bias(g)),
            variance: self.variance(g),
        }
    }

    /// Constraint `E[T_f T_f^T] <= gamma_f2 I`.
    pub fn fault_constraint(&self, gamma_f2: f64) -> QuadConstraint {
        let s0 = &self.g0_pi_g0 - Mat::identity(self.n_f, self.n_f);
        QuadConstraint {
            x: self.pi_f_factor.clone(),
            y: -(&self.g0 * &self.pi_f_factor),
            s0,
            bound: Bound::Fixed(gamma_f2),
        }
    }

    /// Constraint `G Pi_z G^T <= gamma_z2 I` (or with a free bound).
    pub fn z_constraint(&self, bound: Bound) -> QuadConstraint {
        QuadConstraint {
            x: self.pi_z_factor.clone(),
            y: Mat::zeros(self.n_f, self.pi_z_factor.ncols()),
            s0: Mat::zeros(self.n_f, self.n_f),
            bound,
        }
    }

    pub fn gamma_f_min(&self) -> Result<f64> {
        let lmin = linalg::lambda_min(&self.g0_pi_g0);
        if lmin <= 1e-12 {
            return Err(Error::InfeasibleFaultConstraint(lmin));
        }
        Ok((1.0 - lmin).clamp(0.0, 1.0 - f64::EPSILON))
    }

    pub fn check_gamma_f(&self, gamma_f2: f64) -> Result<()> {
        let lo = self.gamma_f_min()?;
        if !(gamma_f2 >= lo && gamma_f2 < 1.0) {
            return Err(Error::TuningOutOfRange(format!("gamma_f2 = {gamma_f2} outside [{lo}, 1)")));
        }
        Ok(())
    }

    /// `min tr(G Sigma_e,L G^T)` subject to the fault constraint only.
    pub fn solve_g1(&self, gamma_f2: f64, backend: &dyn ConicBackend) -> Result<(Mat, f64, SolveStatus)> {
        self.check_gamma_f(gamma_f2)?;
        let prob = GainProblem {
            n_f: self.n_f,
            n: self.n(),
            constraints: vec![self.fault_constraint(gamma_f2)],
            objective: Objective::Trace(self.sigma_l_half.clone()),
        };
        let sol = prob.solve(backend)?;
        let gz1 = linalg::lambda_max(&self.z_bias(&sol.g));
        Ok((sol.g, gz1, sol.status))
    }

    /// Smallest `gamma_z2` compatible with `gamma_f2`, and the touching gain.
    pub fn gamma_z_min(&self, gamma_f2: f64, backend: &dyn ConicBackend) -> Result<(f64, Mat)> {
        self.check_gamma_f(gamma_f2)?;
        let prob = GainProblem {
            n_f: self.n_f,
            n: self.n(),
            constraints: vec![self.fault_constraint(gamma_f2), self.z_constraint(Bound::Variable)],
            objective: Objective::Bound,
        };
        let sol = prob.solve(backend)?;
        Ok((sol.bound.max(0.0), sol.g))
    }

    /// Offline mixed-norm design: `min tr(G Sigma_e,L G^T)` under both bounds.
    pub fn solve_offline_gain(&self, gamma_f2: f64, gamma_z2: f64, backend: &dyn ConicBackend) -> Result<(Mat, SolveStatus)> {
        self.check_gamma_f(gamma_f2)?;
        if !(gamma_z2 >= 0.0) {
            return Err(Error::TuningOutOfRange(format!("gamma_z2 = {gamma_z2} must be nonnegative")));
        }
        let prob = GainProblem {
            n_f: self.n_f,
            n: self.n(),
            constraints: vec![self.fault_constraint(gamma_f2), self.z_constraint(Bound::Fixed(gamma_z2))],
            objective: Objective::Trace(self.sigma_l_half.clone()),
        };
        let sol = prob.solve(backend)?;
        Ok((sol.g, sol.status))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMetrics {
    pub bias_f: f64,
    pub bias_z: f64,
    pub variance: f64,
}

/// Robust design context for an identified Markov set: the problem data
/// plus the nominal (identified-model) estimator, whose residual generator
/// all robust gains share.
#[derive(Clone, Debug)]
pub struct RobustDesigner {
    pub problem: RobustProblem,
    pub stack: SensitivityStack,
    pub nominal: EstimatorGain,
}

impl RobustDesigner {
    pub fn new(markov: &MarkovSet, l: usize, m: usize, tau: usize) -> Result<Self> {
        let nominal = design_nominal(markov, l, m, tau)?;
        let stack = build_sensitivity(markov, l, m, tau)?;
        let (pu, pz) = gram_blocks(&stack);
        let s = structured_matrices(markov, l, m, tau)?;
        let problem = RobustProblem::new(s.upsilon, &markov.sigma_e, pu, pz, l, markov.n_f)?;
        Ok(RobustDesigner { problem, stack, nominal })
    }

    /// Default fault bound: the nominal gain's own fault-bias level.
    pub fn nominal_gamma_f2(&self) -> f64 {
        linalg::lambda_max(&self.problem.fault_bias(&self.nominal.gmat))
    }

    /// Default tuning: `gamma_f2` from the nominal design (kept inside
    /// `[gamma_f_min2, 1)`), `gamma_z2` halfway between its bounds.
    pub fn default_tuning(&self, backend: &dyn ConicBackend) -> Result<Tuning> {
        let lo = self.problem.gamma_f_min()?;
        let raw = self.nominal_gamma_f2();
        let gamma_f2 = raw.clamp(lo, 1.0 - 1e-6);
        if gamma_f2 != raw {
            log::warn!("nominal fault-bias level {raw} outside [{lo}, 1); using {gamma_f2}");
        }
        self.tuning_for(gamma_f2, None, backend)
    }

    /// Bounds for a given `gamma_f2`; `gamma_z2` defaults to the midpoint.
    pub fn tuning_for(&self, gamma_f2: f64, gamma_z2: Option<f64>, backend: &dyn ConicBackend) -> Result<Tuning> {
        let gamma_f_min2 = self.problem.gamma_f_min()?;
        let (_, gamma_z1_2, _) = self.problem.solve_g1(gamma_f2, backend)?;
        let (gamma_z_min2, _) = self.problem.gamma_z_min(gamma_f2, backend)?;
        let gamma_z2 = gamma_z2.unwrap_or(0.5 * (gamma_z_min2 + gamma_z1_2));
        Ok(Tuning { gamma_f2, gamma_z2, gamma_f_min2, gamma_z_min2, gamma_z1_2 })
    }

    pub fn solve_offline(&self, gamma_f2: f64, gamma_z2: f64, backend: &dyn ConicBackend) -> Result<EstimatorGain> {
        let (g, status) = self.problem.solve_offline_gain(gamma_f2, gamma_z2, backend)?;
        let mut gain = self.nominal.with_gmat(GainKind::OfflineRobust, g);
        gain.gamma_f2 = Some(gamma_f2);
        gain.gamma_z2 = Some(gamma_z2);
        gain.solver_status = Some(status.to_string());
        Ok(gain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub gamma_f2: f64,
    pub gamma_z2: f64,
    pub gamma_f_min2: f64,
    pub gamma_z_min2: f64,
    pub gamma_z1_2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub gamma_f2: f64,
    pub gamma_z2: f64,
    pub metrics: Option<DesignMetrics>,
    pub status: String,
}

/// Offline designs over every `(gamma_f2, gamma_z2)` pair, solved in parallel.
pub fn tradeoff_sweep(prob: &RobustProblem, grid_f: &[f64], grid_z: &[f64], backend: &dyn ConicBackend) -> Vec<TradeoffRow> {
    let points: Vec<(f64, f64)> = grid_f.iter().flat_map(|&f| grid_z.iter().map(move |&z| (f, z))).collect();
    points
        .par_iter()
        .map(|&(gf, gz)| match prob.solve_offline_gain(gf, gz, backend) {
            Ok((g, status)) => TradeoffRow { gamma_f2: gf, gamma_z2: gz, metrics: Some(prob.metrics(&g)), status: status.to_string() },
            Err(e) => {
                log::warn!("sweep point ({gf}, {gz}) failed: {e}");
                let status = match e {
                    Error::SolverFailure { status, .. } => status.to_string(),
                    other => format!("error: {other}"),
                };
                TradeoffRow { gamma_f2: gf, gamma_z2: gz, metrics: None, status }
            }
        })
        .collect()
}

pub fn write_tradeoff_csv(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "gamma_f2,gamma_z2,bias_f,bias_z,variance,status")?;
    for r in rows {
        let (bf, bz, v) = r.metrics.map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.bias_f, m.bias_z, m.variance));
        writeln!(f, "{},{},{},{},{},{}", fmt_f64(r.gamma_f2), fmt_f64(r.gamma_z2), fmt_f64(bf), fmt_f64(bz), fmt_f64(v), r.status)?;
    }
    Ok(())
}

/// `n` evenly spaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
