//! Least-squares identification of predictor Markov parameters from
//! fault-free closed-loop data.
//!
//! Column `t` of `Z_id` (for `t = p..T-1`) stacks
//! `[u(t-p); y(t-p); ...; u(t-1); y(t-1); u(t)]` and the matching column of
//! `Y_id` is `y(t)`. The trailing `u(t)` block (feedthrough `H_0^u`) is
//! optional: under output feedback without delay, `u(t)` is correlated with the
//! innovation `e(t)` and including it biases the estimate unless `D` must
//! really be identified. Markov parameters beyond the past window `p` are
//! taken as zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, mat_json};
use crate::linalg::{self, Mat};
use crate::simulator::TrajectoryDataset;
use crate::system_model::{FaultConfig, MarkovSet, Sensitivity};

/// `cond(Z Z^T)` above this is treated as rank deficiency.
pub const MAX_REGRESSOR_CONDITION: f64 = 1e12;

/// Whether the feedthrough `H_0^u = D` is estimated or known to be zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Feedthrough {
    Estimate,
    #[default]
    KnownZero,
}

#[derive(Clone, Debug)]
pub struct RegressionData {
    pub y_id: Mat,
    pub z_id: Mat,
    pub p: usize,
    pub n_bar: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub feedthrough: Feedthrough,
}

impl RegressionData {
    pub fn rows(&self) -> usize {
        regressor_rows(self.p, self.n_u, self.n_y, self.feedthrough)
    }
}

fn regressor_rows(p: usize, nu: usize, ny: usize, ft: Feedthrough) -> usize {
    p * (nu + ny) + if ft == Feedthrough::Estimate { nu } else { 0 }
}

/// Regression with the full layout, including the `u(t)` row block.
pub fn build_regression(traj: &TrajectoryDataset, p: usize) -> Result<RegressionData> {
    build_regression_with(traj, p, Feedthrough::Estimate)
}

pub fn build_regression_with(traj: &TrajectoryDataset, p: usize, feedthrough: Feedthrough) -> Result<RegressionData> {
    if !traj.is_fault_free() {
        return Err(Error::FaultyIdentificationData);
    }
    if p == 0 {
        return Err(Error::Config("past window p must be at least 1".into()));
    }
    let t = traj.len();
    if t < p + 1 {
        return Err(Error::Config(format!("trajectory of {t} samples is too short for p = {p}")));
    }
    let (nu, ny) = (traj.n_u(), traj.n_y());
    let n_bar = t - p;
    let rows = regressor_rows(p, nu, ny, feedthrough);
    let mut z = Mat::zeros(rows, n_bar);
    let mut y_id = Mat::zeros(ny, n_bar);
    for col in 0..n_bar {
        let tt = col + p;
        let mut r = 0;
        for lag in (1..=p).rev() {
            let s = tt - lag;
            for i in 0..nu {
                z[(r + i, col)] = traj.u[(s, i)];
            }
            r += nu;
            for i in 0..ny {
                z[(r + i, col)] = traj.y[(s, i)];
            }
            r += ny;
        }
        if feedthrough == Feedthrough::Estimate {
            for i in 0..nu {
                z[(r + i, col)] = traj.u[(tt, i)];
            }
        }
        for i in 0..ny {
            y_id[(i, col)] = traj.y[(tt, i)];
        }
    }
    Ok(RegressionData { y_id, z_id: z, p, n_bar, n_u: nu, n_y: ny, feedthrough })
}

/// LS solution with `Z_pinv = Z^T (Z Z^T)^{-1}` (`N_bar x rows`) and the fit residual.
#[derive(Clone, Debug)]
pub struct LsFit {
    pub xi_hat: Mat,
    pub z_pinv: Mat,
    pub residual: Mat,
}

/// Solves the normal equations through a QR factorization of `Z^T`.
pub fn ls_identify(reg: &RegressionData) -> Result<LsFit> {
    let rows = reg.z_id.nrows();
    if reg.n_bar < rows {
        return Err(Error::RankDeficientRegressor(f64::INFINITY));
    }
    let qr = reg.z_id.transpose().qr();
    let q = qr.q();
    let r = qr.r();
    let sv = linalg::singular_values(&r);
    let (smax, smin) = (sv[0], *sv.last().unwrap());
    let cond = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !cond.is_finite() || cond > MAX_REGRESSOR_CONDITION {
        return Err(Error::RankDeficientRegressor(cond));
    }
    // Z_pinv = Q R^{-T}: solve R X^T = Q^T
    let r_inv_qt = r
        .solve_upper_triangular(&q.transpose())
        .ok_or(Error::RankDeficientRegressor(cond))?;
    let z_pinv = r_inv_qt.transpose();
    let xi_hat = &reg.y_id * &z_pinv;
    let residual = &reg.y_id - &xi_hat * &reg.z_id;
    Ok(LsFit { xi_hat, z_pinv, residual })
}

/// Sample covariance of the residual columns, symmetrized and floored at
/// `1e-10 * trace` (or `1e-10` when the residual vanishes).
pub fn innovation_cov(residual: &Mat) -> Mat {
    let (ny, n) = residual.shape();
    let mut s = if n == 0 { Mat::zeros(ny, ny) } else { residual * residual.transpose() / n as f64 };
    s = linalg::symmetrize(&s);
    let tr = s.trace();
    let floor = if tr > 0.0 { 1e-10 * tr } else { 1e-10 };
    let (vals, vecs) = linalg::sym_eigen(&s);
    if vals.first().is_some_and(|&v| v < floor) {
        let d = nalgebra::DVector::from_iterator(ny, vals.iter().map(|v| v.max(floor)));
        s = linalg::symmetrize(&(&vecs * Mat::from_diagonal(&d) * vecs.transpose()));
    }
    s
}

/// Everything downstream designs need from an identification run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub p: usize,
    pub n_bar: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub feedthrough: Feedthrough,
    #[serde(with = "mat_json")]
    pub xi_hat: Mat,
    #[serde(with = "mat_json")]
    pub sigma_e_hat: Mat,
    /// `N_bar x rows`; stored in a binary sidecar.
    #[serde(skip)]
    pub z_pinv: Mat,
}

/// Full pipeline: regression, LS fit, innovation covariance.
pub fn identify(traj: &TrajectoryDataset, p: usize, feedthrough: Feedthrough) -> Result<IdentificationResult> {
    let reg = build_regression_with(traj, p, feedthrough)?;
    let fit = ls_identify(&reg)?;
    Ok(IdentificationResult {
        p,
        n_bar: reg.n_bar,
        n_u: reg.n_u,
        n_y: reg.n_y,
        feedthrough,
        sigma_e_hat: innovation_cov(&fit.residual),
        xi_hat: fit.xi_hat,
        z_pinv: fit.z_pinv,
    })
}

#[derive(Serialize, Deserialize)]
struct IdentificationFile {
    #[serde(flatten)]
    result: IdentificationResult,
    z_pinv_sidecar: String,
}

impl IdentificationResult {
    fn check_layout(&self) -> Result<()> {
        let rows = regressor_rows(self.p, self.n_u, self.n_y, self.feedthrough);
        if self.xi_hat.shape() != (self.n_y, rows) || self.z_pinv.shape() != (self.n_bar, rows) {
            return Err(Error::BlockMisalignment(format!(
                "Xi is {}x{}, Z_pinv is {}x{}; expected {}x{rows} and {}x{rows}",
                self.xi_hat.nrows(),
                self.xi_hat.ncols(),
                self.z_pinv.nrows(),
                self.z_pinv.ncols(),
                self.n_y,
                self.n_bar
            )));
        }
        Ok(())
    }

    /// Column offset of the `(H_i^u, H_i^y)` pair in `Xi` for `1 <= i <= p`.
    fn lag_offset(&self, i: usize) -> usize {
        (self.p - i) * (self.n_u + self.n_y)
    }

    /// Writes `path` (JSON) and the `Z_pinv` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let side = io::sidecar_path(path, "zpinv");
        io::write_sidecar(&side, &self.z_pinv)?;
        let file = IdentificationFile {
            result: self.clone(),
            z_pinv_sidecar: side.file_name().unwrap().to_string_lossy().into_owned(),
        };
        io::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: IdentificationFile = io::read_json(path)?;
        let side = path.with_file_name(&file.z_pinv_sidecar);
        let mut result = file.result;
        result.z_pinv = io::read_sidecar(&side)?;
        result.check_layout()?;
        Ok(result)
    }
}

/// Slices `H_i^u`, `H_i^y` and the sensitivities `M_i^u`, `M_i^y` out of the
/// LS solution and assembles the fault blocks for `cfg`.
pub fn extract_markov(ident: &IdentificationResult, cfg: &FaultConfig) -> Result<MarkovSet> {
    ident.check_layout()?;
    let (p, nu, ny, nb) = (ident.p, ident.n_u, ident.n_y, ident.n_bar);
    cfg.validate(ny, nu)?;
    let nf = cfg.n_f();
    let xi = &ident.xi_hat;
    let zp = &ident.z_pinv;

    let mut hu = Vec::with_capacity(p + 1);
    let mut hy = Vec::with_capacity(p + 1);
    let mut mu = Vec::with_capacity(p + 1);
    let mut my = Vec::with_capacity(p + 1);
    match ident.feedthrough {
        Feedthrough::Estimate => {
            let off = p * (nu + ny);
            hu.push(xi.columns(off, nu).into_owned());
            mu.push(zp.columns(off, nu).into_owned());
        }
        Feedthrough::KnownZero => {
            hu.push(Mat::zeros(ny, nu));
            mu.push(Mat::zeros(nb, nu));
        }
    }
    hy.push(Mat::zeros(ny, ny));
    my.push(Mat::zeros(nb, ny));
    for i in 1..=p {
        let off = ident.lag_offset(i);
        hu.push(xi.columns(off, nu).into_owned());
        hy.push(xi.columns(off + nu, ny).into_owned());
        mu.push(zp.columns(off, nu).into_owned());
        my.push(zp.columns(off + nu, ny).into_owned());
    }

    let mut hf = vec![Mat::zeros(ny, nf); p + 1];
    let mut mf = vec![Mat::zeros(nb, nf); p + 1];
    for (col, &j) in cfg.sensors.iter().enumerate() {
        hf[0][(j - 1, col)] = 1.0;
        for i in 1..=p {
            hf[i].set_column(col, &(-hy[i].column(j - 1)));
            mf[i].set_column(col, &(-my[i].column(j - 1)));
        }
    }
    for (k, &l) in cfg.actuators.iter().enumerate() {
        let col = cfg.sensors.len() + k;
        for i in 0..=p {
            hf[i].set_column(col, &hu[i].column(l - 1));
            mf[i].set_column(col, &mu[i].column(l - 1));
        }
    }

    Ok(MarkovSet {
        n_u: nu,
        n_y: ny,
        n_f: nf,
        hu,
        hy,
        hf,
        sigma_e: ident.sigma_e_hat.clone(),
        truncation: Some(p),
        sensitivity: Some(Sensitivity { n_bar: nb, mu, my, mf }),
    })
}

/// Packs exact Markov parameters into the `Xi` layout (used to measure
/// identification error).
pub fn xi_from_markov(markov: &MarkovSet, p: usize, feedthrough: Feedthrough) -> Mat {
    let (nu, ny) = (markov.n_u, markov.n_y);
    let rows = regressor_rows(p, nu, ny, feedthrough);
    let mut xi = Mat::zeros(ny, rows);
    for i in 1..=p {
        let off = (p - i) * (nu + ny);
        xi.view_mut((0, off), (ny, nu)).copy_from(&markov.hu(i));
        xi.view_mut((0, off + nu), (ny, ny)).copy_from(&markov.hy(i));
    }
    if feedthrough == Feedthrough::Estimate {
        xi.view_mut((0, p * (nu + ny)), (ny, nu)).copy_from(&markov.hu(0));
    }
    xi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_traj() -> TrajectoryDataset {
        TrajectoryDataset {
            u: Mat::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            y: Mat::from_column_slice(3, 1, &[10.0, 20.0, 30.0]),
            f_true: Mat::zeros(3, 0),
            reference: Mat::zeros(3, 1),
            seed: None,
        }
    }

    #[test]
    fn unrolled_regression_layout() {
        let reg = build_regression(&tiny_traj(), 1).unwrap();
        assert_eq!(reg.z_id, Mat::from_row_slice(3, 2, &[1.0, 2.0, 10.0, 20.0, 2.0, 3.0]));
        assert_eq!(reg.y_id, Mat::from_row_slice(1, 2, &[20.0, 30.0]));
        let reg0 = build_regression_with(&tiny_traj(), 1, Feedthrough::KnownZero).unwrap();
        assert_eq!(reg0.z_id.nrows(), 2);
    }

    #[test]
    fn faulty_data_is_rejected() {
        let mut t = tiny_traj();
        t.f_true = Mat::from_element(3, 1, 0.5);
        assert!(matches!(build_regression(&t, 1), Err(Error::FaultyIdentificationData)));
    }

    #[test]
    fn zero_residual_gives_floor() {
        let s = innovation_cov(&Mat::zeros(2, 50));
        assert_eq!(s, Mat::identity(2, 2) * 1e-10);
    }

    #[test]
    fn zero_output_gives_zero_estimate() {
        let z_id = Mat::from_fn(3, 40, |r, c| (((r + 2) * (c + 5) * 7919) % 13) as f64 - 6.0);
        let reg = RegressionData { y_id: Mat::zeros(1, 40), z_id, p: 1, n_bar: 40, n_u: 1, n_y: 1, feedthrough: Feedthrough::Estimate };
        let fit = ls_identify(&reg).unwrap();
        assert_eq!(fit.xi_hat.norm(), 0.0);
    }
}
