//! System and predictor representations, fault channels, Markov parameters
//! and the unbiasedness classification of the fault subsystem.

mod zeros;

use std::fmt;
use std::str::FromStr;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::mat_json;
use crate::linalg::{self, Mat};

pub use zeros::{
    fault_subsystem_report, invariant_zeros, observability_index, unbiasedness_check, InvariantZero,
    UnbiasednessReport, Verdict, ZeroKind,
};

/// Tolerance on `| |lambda| - 1 |` under which an eigenvalue counts as lying on the unit circle.
pub const UNIT_CIRCLE_TOL: f64 = 1e-8;

/// Discrete-time LTI plant
///
/// ```text
/// xi(k+1) = A xi(k) + B u(k) + E f(k) + F w(k)
/// y(k)    = C xi(k) + D u(k) + G f(k) + v(k)
/// ```
///
/// with `cov(w) = Q`, `cov(v) = R`. The fault channels `E`, `G` are not stored
/// here; they follow from a [`FaultConfig`] through [`fault_matrices`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct StateSpaceModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub f: Mat,
    pub q: Mat,
    pub r: Mat,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    #[serde(with = "mat_json")]
    a: Mat,
    #[serde(with = "mat_json")]
    b: Mat,
    #[serde(with = "mat_json")]
    c: Mat,
    #[serde(with = "mat_json")]
    d: Mat,
    #[serde(with = "mat_json")]
    f: Mat,
    #[serde(with = "mat_json")]
    q: Mat,
    #[serde(with = "mat_json")]
    r: Mat,
}

impl TryFrom<RawModel> for StateSpaceModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        StateSpaceModel::new(r.a, r.b, r.c, r.d, r.f, r.q, r.r)
    }
}

impl From<StateSpaceModel> for RawModel {
    fn from(m: StateSpaceModel) -> Self {
        RawModel { a: m.a, b: m.b, c: m.c, d: m.d, f: m.f, q: m.q, r: m.r }
    }
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric_psd(name: &str, m: &Mat, definite: bool) -> Result<()> {
    let scale = m.norm().max(1.0);
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    let lmin = linalg::lambda_min(m);
    if definite && lmin <= 0.0 {
        return Err(Error::InvalidModel(format!("{name} is not positive definite (lambda_min = {lmin:e})")));
    }
    if !definite && lmin < -1e-12 * scale {
        return Err(Error::InvalidModel(format!("{name} is not positive semidefinite (lambda_min = {lmin:e})")));
    }
    Ok(())
}

/// PBH rank of `[A - lambda I; C]` (or `[A - lambda I, B]`) in complex arithmetic.
fn pbh_rank(a: &Mat, other: &Mat, lambda: Complex<f64>, stack_rows: bool) -> usize {
    let n = a.nrows();
    let mut shifted = linalg::complex(a);
    for i in 0..n {
        shifted[(i, i)] -= lambda;
    }
    let other = linalg::complex(other);
    let m = if stack_rows {
        let mut m = linalg::CMat::zeros(n + other.nrows(), n);
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((n, 0), other.shape()).copy_from(&other);
        m
    } else {
        let mut m = linalg::CMat::zeros(n, n + other.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((0, n), other.shape()).copy_from(&other);
        m
    };
    let sv = linalg::complex_singular_values(&m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let tol = linalg::rank_tolerance_from(m.nrows().max(m.ncols()), smax);
    sv.iter().filter(|&&s| s > tol).count()
}

impl StateSpaceModel {
    /// Validates dimensions, covariances and the detectability / unit-circle
    /// controllability conditions required for a stabilizing Kalman predictor.
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, f: Mat, q: Mat, r: Mat) -> Result<Self> {
        let n = a.nrows();
        check_shape("A", &a, n, n)?;
        let nu = b.ncols();
        check_shape("B", &b, n, nu)?;
        let ny = c.nrows();
        check_shape("C", &c, ny, n)?;
        check_shape("D", &d, ny, nu)?;
        let nw = f.ncols();
        check_shape("F", &f, n, nw)?;
        check_shape("Q", &q, nw, nw)?;
        check_shape("R", &r, ny, ny)?;
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d), ("F", &f), ("Q", &q), ("R", &r)] {
            if !linalg::all_finite(m) {
                return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        check_symmetric_psd("Q", &q, false)?;
        check_symmetric_psd("R", &r, true)?;
        let model = StateSpaceModel { a, b, c, d, f, q, r };
        model.check_assumptions(UNIT_CIRCLE_TOL)?;
        Ok(model)
    }

    /// `(C, A)` detectable and no uncontrollable modes of `(A, F Q^{1/2})` on the unit circle.
    pub fn check_assumptions(&self, unit_circle_tol: f64) -> Result<()> {
        let n = self.n();
        let fq = &self.f * linalg::sqrt_psd(&self.q);
        for lambda in linalg::eigenvalues(&self.a) {
            let modulus = lambda.norm();
            if modulus >= 1.0 - unit_circle_tol && pbh_rank(&self.a, &self.c, lambda, true) < n {
                return Err(Error::AssumptionViolated(format!(
                    "(C, A) is not detectable: mode {:.6}{:+.6}i is unobservable",
                    lambda.re, lambda.im
                )));
            }
            if (modulus - 1.0).abs() < unit_circle_tol && pbh_rank(&self.a, &fq, lambda, false) < n {
                return Err(Error::AssumptionViolated(format!(
                    "(A, F Q^1/2) has an uncontrollable mode {:.6}{:+.6}i on the unit circle",
                    lambda.re, lambda.im
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.f.ncols()
    }
}

/// Innovation form
///
/// ```text
/// x(k+1) = Phi x(k) + Btilde u(k) + Etilde f(k) + K y(k)
/// y(k)   = C x(k) + D u(k) + G f(k) + e(k),   cov(e) = Sigma_e
/// ```
///
/// `Etilde` and `G` depend on the fault configuration and are produced by
/// [`fault_matrices`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictorModel {
    #[serde(with = "mat_json")]
    pub phi: Mat,
    #[serde(with = "mat_json")]
    pub b_tilde: Mat,
    #[serde(with = "mat_json")]
    pub k: Mat,
    #[serde(with = "mat_json")]
    pub c: Mat,
    #[serde(with = "mat_json")]
    pub d: Mat,
    #[serde(with = "mat_json")]
    pub sigma_e: Mat,
}

impl PredictorModel {
    /// Builds a predictor from its matrices directly. `Phi` must be stable
    /// and `Sigma_e` positive definite.
    pub fn new(phi: Mat, b_tilde: Mat, k: Mat, c: Mat, d: Mat, sigma_e: Mat) -> Result<Self> {
        let n = phi.nrows();
        check_shape("Phi", &phi, n, n)?;
        let nu = b_tilde.ncols();
        check_shape("Btilde", &b_tilde, n, nu)?;
        let ny = c.nrows();
        check_shape("C", &c, ny, n)?;
        check_shape("K", &k, n, ny)?;
        check_shape("D", &d, ny, nu)?;
        check_shape("Sigma_e", &sigma_e, ny, ny)?;
        check_symmetric_psd("Sigma_e", &sigma_e, true)?;
        let rho = linalg::spectral_radius(&phi);
        if rho >= 1.0 - 1e-9 {
            return Err(Error::InvalidModel(format!("predictor matrix Phi is not stable (spectral radius {rho})")));
        }
        Ok(PredictorModel { phi, b_tilde, k, c, d, sigma_e })
    }

    /// Plant input matrix `B = Btilde + K D`.
    pub fn b(&self) -> Mat {
        &self.b_tilde + &self.k * &self.d
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b_tilde.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RiccatiOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions { rel_tol: 1e-12, max_iter: 100_000 }
    }
}

/// Steady-state Kalman predictor of `model`.
pub fn steady_state_predictor(model: &StateSpaceModel) -> Result<PredictorModel> {
    steady_state_predictor_with(model, RiccatiOptions::default())
}

pub fn steady_state_predictor_with(model: &StateSpaceModel, opts: RiccatiOptions) -> Result<PredictorModel> {
    let (p, iterations) = filtering_riccati(model, opts)?;
    log::debug!("Riccati iteration converged in {iterations} steps");
    let a = &model.a;
    let c = &model.c;
    let sigma_e = linalg::symmetrize(&(c * &p * c.transpose() + &model.r));
    let k = a * &p * c.transpose() * linalg::spd_inverse(&sigma_e)?;
    let phi = a - &k * c;
    let b_tilde = &model.b - &k * &model.d;
    PredictorModel::new(phi, b_tilde, k, c.clone(), model.d.clone(), sigma_e).map_err(|e| match e {
        Error::InvalidModel(msg) => Error::AssumptionViolated(msg),
        other => other,
    })
}

/// Fixed-point iteration of the filtering DARE, started from `F Q F^T`.
/// Returns the stationary prediction covariance and the iteration count.
pub fn filtering_riccati(model: &StateSpaceModel, opts: RiccatiOptions) -> Result<(Mat, usize)> {
    let a = &model.a;
    let c = &model.c;
    let fqf = linalg::symmetrize(&(&model.f * &model.q * model.f.transpose()));
    let mut p = fqf.clone();
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let s = c * &p * c.transpose() + &model.r;
        let s_inv = linalg::spd_inverse(&s)?;
        let apc = a * &p * c.transpose();
        let next = linalg::symmetrize(&(a * &p * a.transpose() - &apc * &s_inv * apc.transpose() + &fqf));
        let diff = (&next - &p).norm();
        let scale = next.norm();
        change = if scale > 0.0 { diff / scale } else { diff };
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= opts.rel_tol {
            return Ok((p, it));
        }
    }
    Err(Error::NonConvergentRiccati { iterations: opts.max_iter, residual: change })
}

/// Additive fault configuration. Channels are ordered sensors first, then
/// actuators. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub sensors: Vec<usize>,
    pub actuators: Vec<usize>,
}

impl FaultConfig {
    pub fn sensor(j: usize) -> Self {
        FaultConfig { sensors: vec![j], actuators: vec![] }
    }
    pub fn actuator(l: usize) -> Self {
        FaultConfig { sensors: vec![], actuators: vec![l] }
    }
    pub fn simultaneous(j: usize, l: usize) -> Self {
        FaultConfig { sensors: vec![j], actuators: vec![l] }
    }
    pub fn sensors(js: &[usize]) -> Self {
        FaultConfig { sensors: js.to_vec(), actuators: vec![] }
    }
    pub fn actuators(ls: &[usize]) -> Self {
        FaultConfig { sensors: vec![], actuators: ls.to_vec() }
    }

    pub fn n_f(&self) -> usize {
        self.sensors.len() + self.actuators.len()
    }

    pub fn is_sensor_only(&self) -> bool {
        self.actuators.is_empty() && !self.sensors.is_empty()
    }

    pub fn validate(&self, n_y: usize, n_u: usize) -> Result<()> {
        if self.n_f() == 0 {
            return Err(Error::Config("fault configuration has no channels".into()));
        }
        for &j in &self.sensors {
            if j == 0 || j > n_y {
                return Err(Error::IndexOutOfRange { what: "sensor", index: j, max: n_y });
            }
        }
        for &l in &self.actuators {
            if l == 0 || l > n_u {
                return Err(Error::IndexOutOfRange { what: "actuator", index: l, max: n_u });
            }
        }
        Ok(())
    }
}

impl fmt::Display for FaultConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        match (self.sensors.is_empty(), self.actuators.is_empty()) {
            (false, true) => write!(f, "sensor:{}", join(&self.sensors)),
            (true, false) => write!(f, "actuator:{}", join(&self.actuators)),
            _ => write!(f, "both:{};{}", join(&self.sensors), join(&self.actuators)),
        }
    }
}

impl FromStr for FaultConfig {
    type Err = Error;

    /// Accepts `sensor:J[,J..]`, `actuator:L[,L..]`, `both:J,L` and `both:J..;L..`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse fault spec `{s}` (expected sensor:J, actuator:L or both:J,L)"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let parse_list = |t: &str| -> Result<Vec<usize>> {
            t.split(',')
                .filter(|x| !x.trim().is_empty())
                .map(|x| x.trim().parse::<usize>().map_err(|_| bad()))
                .collect()
        };
        let cfg = match kind.trim() {
            "sensor" | "sensors" => FaultConfig::sensors(&parse_list(rest)?),
            "actuator" | "actuators" => FaultConfig::actuators(&parse_list(rest)?),
            "both" => {
                if let Some((js, ls)) = rest.split_once(';') {
                    FaultConfig { sensors: parse_list(js)?, actuators: parse_list(ls)? }
                } else {
                    let v = parse_list(rest)?;
                    if v.len() != 2 {
                        return Err(bad());
                    }
                    FaultConfig::simultaneous(v[0], v[1])
                }
            }
            _ => return Err(bad()),
        };
        if cfg.n_f() == 0 {
            return Err(bad());
        }
        Ok(cfg)
    }
}

/// Fault input matrices of the plant (`E`, `G`) and of the predictor (`Etilde`).
#[derive(Clone, Debug)]
pub struct FaultChannels {
    pub e: Mat,
    pub g: Mat,
    pub e_tilde: Mat,
}

/// Sensor `j`: `E = 0`, `G = I^[j]`, `Etilde = -K^[j]`.
/// Actuator `l`: `E = B^[l]`, `G = D^[l]`, `Etilde = Btilde^[l]`.
pub fn fault_matrices(pred: &PredictorModel, cfg: &FaultConfig) -> Result<FaultChannels> {
    let (n, ny, nu) = (pred.n(), pred.n_y(), pred.n_u());
    cfg.validate(ny, nu)?;
    let nf = cfg.n_f();
    let b = pred.b();
    let mut e = Mat::zeros(n, nf);
    let mut g = Mat::zeros(ny, nf);
    let mut e_tilde = Mat::zeros(n, nf);
    for (col, &j) in cfg.sensors.iter().enumerate() {
        g[(j - 1, col)] = 1.0;
        e_tilde.set_column(col, &(-pred.k.column(j - 1)));
    }
    for (i, &l) in cfg.actuators.iter().enumerate() {
        let col = cfg.sensors.len() + i;
        e.set_column(col, &b.column(l - 1));
        g.set_column(col, &pred.d.column(l - 1));
        e_tilde.set_column(col, &pred.b_tilde.column(l - 1));
    }
    Ok(FaultChannels { e, g, e_tilde })
}

/// Plant-side fault matrices (`E`, `G`) for simulation of the original system.
pub fn plant_fault_matrices(model: &StateSpaceModel, cfg: &FaultConfig) -> Result<(Mat, Mat)> {
    cfg.validate(model.n_y(), model.n_u())?;
    let nf = cfg.n_f();
    let mut e = Mat::zeros(model.n(), nf);
    let mut g = Mat::zeros(model.n_y(), nf);
    for (col, &j) in cfg.sensors.iter().enumerate() {
        g[(j - 1, col)] = 1.0;
    }
    for (i, &l) in cfg.actuators.iter().enumerate() {
        let col = cfg.sensors.len() + i;
        e.set_column(col, &model.b.column(l - 1));
        g.set_column(col, &model.d.column(l - 1));
    }
    Ok((e, g))
}

/// Identification-error sensitivities: `Delta H_i = E_id M_i`, each block
/// `N_bar x n_*`.
#[derive(Clone, Debug)]
pub struct Sensitivity {
    pub n_bar: usize,
    pub mu: Vec<Mat>,
    pub my: Vec<Mat>,
    pub mf: Vec<Mat>,
}

/// Predictor Markov parameters `H_i^u`, `H_i^y`, `H_i^f` for `i = 0..=max_index`.
/// Lookups beyond `max_index` return zero blocks: identified sets are
/// truncated at the past window `p`.
#[derive(Clone, Debug)]
pub struct MarkovSet {
    pub n_u: usize,
    pub n_y: usize,
    pub n_f: usize,
    pub hu: Vec<Mat>,
    pub hy: Vec<Mat>,
    pub hf: Vec<Mat>,
    pub sigma_e: Mat,
    /// Past window `p` for identified sets, `None` for exact ones.
    pub truncation: Option<usize>,
    pub sensitivity: Option<Sensitivity>,
}

impl MarkovSet {
    pub fn max_index(&self) -> usize {
        self.hu.len().saturating_sub(1)
    }

    fn block(seq: &[Mat], i: usize, rows: usize, cols: usize) -> Mat {
        seq.get(i).cloned().unwrap_or_else(|| Mat::zeros(rows, cols))
    }

    pub fn hu(&self, i: usize) -> Mat {
        Self::block(&self.hu, i, self.n_y, self.n_u)
    }
    pub fn hy(&self, i: usize) -> Mat {
        Self::block(&self.hy, i, self.n_y, self.n_y)
    }
    pub fn hf(&self, i: usize) -> Mat {
        Self::block(&self.hf, i, self.n_y, self.n_f)
    }

    /// `N_bar x n_u` sensitivity block `M_i^u` (zero beyond truncation).
    pub fn mu(&self, i: usize) -> Option<Mat> {
        let s = self.sensitivity.as_ref()?;
        Some(Self::block(&s.mu, i, s.n_bar, self.n_u))
    }
    pub fn my(&self, i: usize) -> Option<Mat> {
        let s = self.sensitivity.as_ref()?;
        Some(Self::block(&s.my, i, s.n_bar, self.n_y))
    }
    pub fn mf(&self, i: usize) -> Option<Mat> {
        let s = self.sensitivity.as_ref()?;
        Some(Self::block(&s.mf, i, s.n_bar, self.n_f))
    }
}

/// Exact predictor Markov parameters up to index `count`:
/// `H_0^u = D`, `H_i^u = C Phi^{i-1} Btilde`; `H_0^y = 0`, `H_i^y = C Phi^{i-1} K`;
/// `H_0^f = G`, `H_i^f = C Phi^{i-1} Etilde`.
pub fn markov_parameters(pred: &PredictorModel, cfg: &FaultConfig, count: usize) -> Result<MarkovSet> {
    let ch = fault_matrices(pred, cfg)?;
    let (ny, nu, nf) = (pred.n_y(), pred.n_u(), cfg.n_f());
    let mut hu = vec![pred.d.clone()];
    let mut hy = vec![Mat::zeros(ny, ny)];
    let mut hf = vec![ch.g.clone()];
    let mut c_phi = pred.c.clone();
    for _ in 1..=count {
        hu.push(&c_phi * &pred.b_tilde);
        hy.push(&c_phi * &pred.k);
        hf.push(&c_phi * &ch.e_tilde);
        c_phi = &c_phi * &pred.phi;
    }
    Ok(MarkovSet {
        n_u: nu,
        n_y: ny,
        n_f: nf,
        hu,
        hy,
        hf,
        sigma_e: pred.sigma_e.clone(),
        truncation: None,
        sensitivity: None,
    })
}

/// Smallest `i` with `H_i^f` numerically nonzero; additionally requires
/// `rank(H_tau^f) = n_f`.
///
/// "Numerically zero" is judged against the largest fault Markov parameter of
/// the set, using the shared relative rank tolerance.
pub fn relative_degree(markov: &MarkovSet, n_f: usize) -> Result<usize> {
    relative_degree_of(&markov.hf, markov.n_y, n_f)
}

pub(crate) fn relative_degree_of(hf: &[Mat], n_y: usize, n_f: usize) -> Result<usize> {
    let norms: Vec<f64> = hf
        .iter()
        .map(|h| linalg::singular_values(h).first().copied().unwrap_or(0.0))
        .collect();
    let scale = norms.iter().fold(0.0_f64, |a, &b| a.max(b));
    let tol = linalg::rank_tolerance_from(n_y.max(n_f), scale);
    let tau = norms
        .iter()
        .position(|&s| s > tol && scale > 0.0)
        .ok_or(Error::NoNonzeroMarkov(hf.len().saturating_sub(1)))?;
    let rank = linalg::numerical_rank(&hf[tau]);
    if rank < n_f {
        return Err(Error::RankDeficientFaultChannel { rank, n_f });
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_model(a: f64, q: f64, r: f64) -> StateSpaceModel {
        let m = |v: f64| Mat::from_element(1, 1, v);
        StateSpaceModel::new(m(a), m(1.0), m(1.0), m(0.0), m(1.0), m(q), m(r)).unwrap()
    }

    #[test]
    fn scalar_riccati_matches_plain_recursion() {
        // independent oracle: scalar recursion p <- a^2 p - a^2 p^2 / (p + r) + q from p = q
        let (a, q, r): (f64, f64, f64) = (0.5, 0.04, 1.0);
        let mut p: f64 = q;
        for _ in 0..10_000 {
            let next = a * a * p - a * a * p * p / (p + r) + q;
            if (next - p).abs() < 1e-16 {
                p = next;
                break;
            }
            p = next;
        }
        let k_oracle = a * p / (p + r);
        let pred = steady_state_predictor(&scalar_model(a, q, r)).unwrap();
        assert_abs_diff_eq!(pred.k[(0, 0)], k_oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.sigma_e[(0, 0)], p + r, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.phi[(0, 0)], a - k_oracle, epsilon = 1e-12);
    }

    #[test]
    fn zero_process_noise_gives_zero_gain() {
        let pred = steady_state_predictor(&scalar_model(0.5, 0.0, 0.3)).unwrap();
        assert_eq!(pred.k[(0, 0)], 0.0);
        assert_eq!(pred.sigma_e[(0, 0)], 0.3);
    }

    #[test]
    fn undetectable_model_is_rejected() {
        let a = Mat::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let c = Mat::from_row_slice(1, 2, &[0.0, 1.0]);
        let err = StateSpaceModel::new(
            a,
            Mat::zeros(2, 1),
            c,
            Mat::zeros(1, 1),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated(_)));
    }

    #[test]
    fn riccati_iteration_cap_is_reported() {
        let m = scalar_model(0.9, 1.0, 1.0);
        let err = steady_state_predictor_with(&m, RiccatiOptions { rel_tol: 1e-12, max_iter: 3 }).unwrap_err();
        assert!(matches!(err, Error::NonConvergentRiccati { iterations: 3, .. }));
    }

    #[test]
    fn scalar_markov_parameter() {
        let m = |v: f64| Mat::from_element(1, 1, v);
        let pred = PredictorModel::new(m(0.3), m(1.0), m(0.2), m(1.0), m(0.0), m(1.0)).unwrap();
        let ms = markov_parameters(&pred, &FaultConfig::sensor(1), 3).unwrap();
        // c (a - k c)^2 k with a - kc = 0.3
        assert_abs_diff_eq!(ms.hy[3][(0, 0)], 0.3 * 0.3 * 0.2, epsilon = 1e-15);
        assert_eq!(ms.hy[0][(0, 0)], 0.0);
        assert_abs_diff_eq!(ms.hf[2][(0, 0)], -ms.hy[2][(0, 0)], epsilon = 1e-15);
    }

    #[test]
    fn fault_spec_parsing() {
        assert_eq!("sensor:2".parse::<FaultConfig>().unwrap(), FaultConfig::sensor(2));
        assert_eq!("actuator:1,2".parse::<FaultConfig>().unwrap(), FaultConfig::actuators(&[1, 2]));
        assert_eq!("both:1,2".parse::<FaultConfig>().unwrap(), FaultConfig::simultaneous(1, 2));
        assert!("wheel:1".parse::<FaultConfig>().is_err());
        let cfg = FaultConfig { sensors: vec![1, 3], actuators: vec![2] };
        assert_eq!(cfg.to_string().parse::<FaultConfig>().unwrap(), cfg);
    }

    #[test]
    fn all_zero_fault_channel_has_no_relative_degree() {
        let ms = MarkovSet {
            n_u: 1,
            n_y: 1,
            n_f: 1,
            hu: vec![Mat::zeros(1, 1); 4],
            hy: vec![Mat::zeros(1, 1); 4],
            hf: vec![Mat::zeros(1, 1); 4],
            sigma_e: Mat::identity(1, 1),
            truncation: None,
            sensitivity: None,
        };
        assert!(matches!(relative_degree(&ms, 1), Err(Error::NoNonzeroMarkov(3))));
    }
}
