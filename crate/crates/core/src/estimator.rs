//! Structured matrices, residual generation and the nominal
//! receding-horizon fault estimator.
//!
//! Windows are stacked oldest first: `y_win = [y(k-L+1); ...; y(k)]`. The
//! unknown vector is `[zeta_m; f(k-L+1); ...; f(k-tau)]` and the selector
//! picks its last `n_f` entries, so an estimate computed at time `k` refers
//! to `f(k - tau)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, mat_json};
use crate::linalg::{self, Mat, Vector};
use crate::simulator::TrajectoryDataset;
use crate::system_model::{plant_fault_matrices, FaultConfig, MarkovSet, StateSpaceModel};

/// Lower block-triangular Toeplitz matrix with block `(i, j) = h[i - j]`.
/// Blocks missing from `h` are zero. All blocks must share one shape.
pub fn block_toeplitz(h: &[Mat], l: usize) -> Mat {
    let (r, c) = h.first().map_or((0, 0), |b| b.shape());
    let mut t = Mat::zeros(r * l, c * l);
    for i in 0..l {
        for j in 0..=i {
            if let Some(b) = h.get(i - j) {
                t.view_mut((i * r, j * c), (r, c)).copy_from(b);
            }
        }
    }
    t
}

/// Block Hankel matrix with block `(i, j) = h[i + j + 1]` (0-based `i`, `j`),
/// i.e. `H_1 ... H_{L+m-1}`. Blocks missing from `h` are zero.
pub fn block_hankel(h: &[Mat], l: usize, m: usize) -> Mat {
    let (r, c) = h.first().map_or((0, 0), |b| b.shape());
    let mut out = Mat::zeros(r * l, c * m);
    for i in 0..l {
        for j in 0..m {
            if let Some(b) = h.get(i + j + 1) {
                out.view_mut((i * r, j * c), (r, c)).copy_from(b);
            }
        }
    }
    out
}

/// `[H_{L,m}^o, T_{L,tau}^f]`, keeping the first `L - tau` block columns of `T_L^f`.
pub fn build_upsilon(hankel: &Mat, tf: &Mat, l: usize, tau: usize, n_f: usize) -> Result<Mat> {
    if tau >= l {
        return Err(Error::Config(format!("horizon L = {l} must exceed the relative degree {tau}")));
    }
    if hankel.nrows() != tf.nrows() || tf.ncols() != l * n_f {
        return Err(Error::ShapeMismatch(format!(
            "Hankel has {} rows, T^f is {}x{} (expected {} columns)",
            hankel.nrows(),
            tf.nrows(),
            tf.ncols(),
            l * n_f
        )));
    }
    let keep = tf.columns(0, (l - tau) * n_f).into_owned();
    linalg::hcat(&[hankel, &keep])
}

/// Structured matrices derived from one Markov set.
#[derive(Clone, Debug)]
pub struct Structured {
    pub ty: Mat,
    pub tu: Mat,
    pub tf: Mat,
    pub hankel: Mat,
    pub upsilon: Mat,
}

pub fn structured_matrices(markov: &MarkovSet, l: usize, m: usize, tau: usize) -> Result<Structured> {
    let seq = |f: &dyn Fn(usize) -> Mat, count: usize| (0..count).map(f).collect::<Vec<_>>();
    let ty = block_toeplitz(&seq(&|i| markov.hy(i), l), l);
    let tu = block_toeplitz(&seq(&|i| markov.hu(i), l), l);
    let tf = block_toeplitz(&seq(&|i| markov.hf(i), l), l);
    let hankel = block_hankel(&seq(&|i| markov.hu(i), l + m), l, m);
    let upsilon = build_upsilon(&hankel, &tf, l, tau, markov.n_f)?;
    Ok(Structured { ty, tu, tf, hankel, upsilon })
}

/// Stacked I/O data over `[k - L + 1, k]`, oldest sample first.
#[derive(Clone, Debug)]
pub struct StackedWindow {
    pub y_win: Vector,
    pub u_win: Vector,
    pub k: usize,
    pub l: usize,
}

impl StackedWindow {
    pub fn from_trajectory(traj: &TrajectoryDataset, k: usize, l: usize) -> Result<Self> {
        if k + 1 < l || k >= traj.len() {
            return Err(Error::WindowNotFull { needed: (l - 1).max(k), available: traj.len().saturating_sub(1) });
        }
        let k0 = k + 1 - l;
        let (ny, nu) = (traj.n_y(), traj.n_u());
        let y_win = Vector::from_fn(l * ny, |i, _| traj.y[(k0 + i / ny, i % ny)]);
        let u_win = Vector::from_fn(l * nu, |i, _| traj.u[(k0 + i / nu, i % nu)]);
        Ok(StackedWindow { y_win, u_win, k, l })
    }

    /// `z = [y_win; u_win]`
    pub fn z(&self) -> Vector {
        let mut z = Vector::zeros(self.y_win.len() + self.u_win.len());
        z.rows_mut(0, self.y_win.len()).copy_from(&self.y_win);
        z.rows_mut(self.y_win.len(), self.u_win.len()).copy_from(&self.u_win);
        z
    }

    pub fn scaled(&self, a: f64) -> Self {
        StackedWindow { y_win: &self.y_win * a, u_win: &self.u_win * a, k: self.k, l: self.l }
    }
}

/// `r = (I - T^y) y_win - T^u u_win`
pub fn residual(ty: &Mat, tu: &Mat, win: &StackedWindow) -> Result<Vector> {
    if ty.nrows() != win.y_win.len() || ty.ncols() != win.y_win.len() || tu.ncols() != win.u_win.len() {
        return Err(Error::WindowNotFull { needed: ty.nrows(), available: win.y_win.len() });
    }
    Ok(&win.y_win - ty * &win.y_win - tu * &win.u_win)
}

/// `I_{n_f} (Upsilon^T Sigma_L^{-1} Upsilon)^+ Upsilon^T Sigma_L^{-1}` with
/// `Sigma_L = I_L (x) Sigma_e`, computed as `I_{n_f} (W Upsilon)^+ W` for a
/// whitening factor `W^T W = Sigma_L^{-1}` (same Moore-Penrose solution,
/// better conditioned).
pub fn nominal_gain(upsilon: &Mat, sigma_e: &Mat, l: usize, n_f: usize) -> Result<Mat> {
    let w = whitening(sigma_e, l)?;
    let sol = linalg::pinv(&(&w * upsilon)) * w;
    let rows = sol.nrows();
    if rows < n_f {
        return Err(Error::ShapeMismatch("Upsilon has fewer columns than fault channels".into()));
    }
    Ok(sol.rows(rows - n_f, n_f).into_owned())
}

/// `I_L (x) chol(Sigma_e)^{-1}`
pub fn whitening(sigma_e: &Mat, l: usize) -> Result<Mat> {
    let chol = linalg::symmetrize(sigma_e)
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("innovation covariance is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&Mat::identity(sigma_e.nrows(), sigma_e.nrows()))
        .ok_or_else(|| Error::SingularCovariance("innovation covariance is singular".into()))?;
    Ok(linalg::kron(&Mat::identity(l, l), &l_inv))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// Nominal design from exact Markov parameters.
    Alg0,
    /// Nominal design from identified Markov parameters.
    Nominal,
    OfflineRobust,
    OnlineRobust,
    /// Reference estimator built from the original state-space model.
    OriginalModel,
}

/// Fault estimator `f_hat(k - tau) = G r(k)` with its residual generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorGain {
    pub kind: GainKind,
    #[serde(rename = "L")]
    pub l: usize,
    pub m: usize,
    pub tau: usize,
    pub n_f: usize,
    pub n_y: usize,
    pub n_u: usize,
    /// Fault channels, e.g. `sensor:1,2`.
    #[serde(default)]
    pub fault: Option<String>,
    pub gamma_f2: Option<f64>,
    pub gamma_z2: Option<f64>,
    pub solver_status: Option<String>,
    #[serde(with = "mat_json")]
    pub gmat: Mat,
    #[serde(skip)]
    pub ty: Mat,
    #[serde(skip)]
    pub tu: Mat,
}

#[derive(Serialize, Deserialize)]
struct GainFile {
    #[serde(flatten)]
    gain: EstimatorGain,
    ty_shape: [usize; 2],
    tu_shape: [usize; 2],
    ty_sidecar: String,
    tu_sidecar: String,
}

impl EstimatorGain {
    pub fn with_gmat(&self, kind: GainKind, gmat: Mat) -> Self {
        EstimatorGain { kind, gmat, solver_status: None, gamma_f2: None, gamma_z2: None, ..self.clone() }
    }

    pub fn estimate(&self, win: &StackedWindow) -> Result<Vector> {
        if win.l != self.l {
            return Err(Error::ShapeMismatch(format!("window length {} but estimator horizon {}", win.l, self.l)));
        }
        Ok(&self.gmat * residual(&self.ty, &self.tu, win)?)
    }

    /// Estimates along a trajectory; `None` until the window has filled.
    pub fn estimate_trajectory(&self, traj: &TrajectoryDataset) -> Result<Vec<Option<Vector>>> {
        (0..traj.len())
            .map(|k| {
                if k + 1 < self.l {
                    Ok(None)
                } else {
                    self.estimate(&StackedWindow::from_trajectory(traj, k, self.l)?).map(Some)
                }
            })
            .collect()
    }

    /// Writes the JSON descriptor plus `T^y`, `T^u` sidecars next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ty_path = io::sidecar_path(path, "ty");
        let tu_path = io::sidecar_path(path, "tu");
        io::write_sidecar(&ty_path, &self.ty)?;
        io::write_sidecar(&tu_path, &self.tu)?;
        let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
        let file = GainFile {
            gain: self.clone(),
            ty_shape: [self.ty.nrows(), self.ty.ncols()],
            tu_shape: [self.tu.nrows(), self.tu.ncols()],
            ty_sidecar: name(&ty_path),
            tu_sidecar: name(&tu_path),
        };
        io::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: GainFile = io::read_json(path)?;
        let mut gain = file.gain;
        gain.ty = io::read_sidecar(&path.with_file_name(&file.ty_sidecar))?;
        gain.tu = io::read_sidecar(&path.with_file_name(&file.tu_sidecar))?;
        if [gain.ty.nrows(), gain.ty.ncols()] != file.ty_shape || [gain.tu.nrows(), gain.tu.ncols()] != file.tu_shape {
            return Err(Error::Format("sidecar shapes disagree with the estimator descriptor".into()));
        }
        let ly = gain.l * gain.n_y;
        if gain.gmat.shape() != (gain.n_f, ly) || gain.ty.shape() != (ly, ly) || gain.tu.shape() != (ly, gain.l * gain.n_u) {
            return Err(Error::Format("estimator matrices have inconsistent shapes".into()));
        }
        Ok(gain)
    }
}

/// `k,f_hat1..` with one row per sample of `f`: row `k` holds the estimate
/// of `f(k)`, produced at time `k + tau`; `nan` where no full window exists.
pub fn write_estimates_csv(path: &Path, per_k: &[Option<Vector>], tau: usize, n_f: usize) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let head: Vec<String> = (1..=n_f).map(|i| format!("f_hat{i}")).collect();
    writeln!(f, "k,{}", head.join(","))?;
    for k in 0..per_k.len() {
        let row: Vec<String> = match per_k.get(k + tau).and_then(|e| e.as_ref()) {
            Some(e) => e.iter().map(|&v| io::fmt_f64(v)).collect(),
            None => vec!["nan".to_string(); n_f],
        };
        writeln!(f, "{k},{}", row.join(","))?;
    }
    Ok(())
}

/// Nominal receding-horizon design from a Markov set: `Alg0` for exact
/// parameters, `Nominal` for identified ones.
pub fn design_nominal(markov: &MarkovSet, l: usize, m: usize, tau: usize) -> Result<EstimatorGain> {
    let s = structured_matrices(markov, l, m, tau)?;
    let gmat = nominal_gain(&s.upsilon, &markov.sigma_e, l, markov.n_f)?;
    let kind = if markov.truncation.is_some() { GainKind::Nominal } else { GainKind::Alg0 };
    Ok(EstimatorGain {
        kind,
        l,
        m,
        tau,
        n_f: markov.n_f,
        n_y: markov.n_y,
        n_u: markov.n_u,
        fault: None,
        gamma_f2: None,
        gamma_z2: None,
        solver_status: None,
        gmat,
        ty: s.ty,
        tu: s.tu,
    })
}

/// Receding-horizon estimator built from the original model
/// `(A, B, C, D, E, F, G, Q, R)` rather than its predictor form:
/// `f_hat = I (Psi^T S^{-1} Psi)^+ Psi^T S^{-1} (y_win - T^u u_win)` with
/// `Psi = [O_L, T^f_{L,tau}]` and `S = T^w (I (x) Q) T^w^T + I (x) R`.
pub fn original_model_gain(model: &StateSpaceModel, cfg: &FaultConfig, l: usize, tau: usize) -> Result<EstimatorGain> {
    if tau >= l {
        return Err(Error::Config(format!("horizon L = {l} must exceed the relative degree {tau}")));
    }
    let (e, g) = plant_fault_matrices(model, cfg)?;
    let (n, ny, nu, nw, nf) = (model.n(), model.n_y(), model.n_u(), model.n_w(), cfg.n_f());
    let markov = |input: &Mat, feed: &Mat| {
        let mut seq = vec![feed.clone()];
        let mut ca = model.c.clone();
        for _ in 1..l {
            seq.push(&ca * input);
            ca = &ca * &model.a;
        }
        seq
    };
    let tu = block_toeplitz(&markov(&model.b, &model.d), l);
    let tf = block_toeplitz(&markov(&e, &g), l);
    let tw = block_toeplitz(&markov(&model.f, &Mat::zeros(ny, nw)), l);
    let obs = linalg::observability(&model.c, &model.a, l);
    let psi = linalg::hcat(&[&obs, &tf.columns(0, (l - tau) * nf).into_owned()])?;
    let s = &tw * linalg::kron(&Mat::identity(l, l), &model.q) * tw.transpose()
        + linalg::kron(&Mat::identity(l, l), &model.r);
    let chol = linalg::symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("stacked noise covariance is not positive definite".into()))?;
    let w = chol
        .l()
        .solve_lower_triangular(&Mat::identity(l * ny, l * ny))
        .ok_or_else(|| Error::SingularCovariance("stacked noise covariance is singular".into()))?;
    let sol = linalg::pinv(&(&w * &psi)) * w;
    let cols = n + (l - tau) * nf;
    debug_assert_eq!(sol.nrows(), cols);
    Ok(EstimatorGain {
        kind: GainKind::OriginalModel,
        l,
        m: 0,
        tau,
        n_f: nf,
        n_y: ny,
        n_u: nu,
        fault: Some(cfg.to_string()),
        gamma_f2: None,
        gamma_z2: None,
        solver_status: None,
        gmat: sol.rows(cols - nf, nf).into_owned(),
        ty: Mat::zeros(l * ny, l * ny),
        tu,
    })
}
