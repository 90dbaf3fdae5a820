//! Closed-loop data generation under static output feedback, fault
//! profiles and the VTOL benchmark fixture.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, mat_json};
use crate::linalg::{self, Mat, Vector};
use crate::system_model::{plant_fault_matrices, FaultConfig, StateSpaceModel};

/// States whose magnitude exceeds this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

const STREAM_W: u64 = 1;
const STREAM_V: u64 = 2;
const STREAM_ETA: u64 = 3;

/// Reference signal `eta(k)` added to the feedback law.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reference {
    /// Zero-mean Gaussian white noise with the given covariance.
    White {
        #[serde(with = "mat_json")]
        cov: Mat,
    },
    /// Constant level on every input channel.
    Constant { level: Vec<f64> },
}

/// Static output feedback `u(k) = -Ky y(k) + eta(k)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControllerConfig {
    #[serde(with = "mat_json")]
    pub ky: Mat,
    pub reference: Reference,
}

impl ControllerConfig {
    pub fn with_constant_reference(&self, eta: f64) -> Self {
        ControllerConfig { ky: self.ky.clone(), reference: Reference::Constant { level: vec![eta; self.ky.nrows()] } }
    }

    pub fn with_white_reference(&self, cov: Mat) -> Self {
        ControllerConfig { ky: self.ky.clone(), reference: Reference::White { cov } }
    }

    fn validate(&self, model: &StateSpaceModel) -> Result<()> {
        if self.ky.shape() != (model.n_u(), model.n_y()) {
            return Err(Error::ShapeMismatch(format!(
                "Ky is {}x{}, expected {}x{}",
                self.ky.nrows(),
                self.ky.ncols(),
                model.n_u(),
                model.n_y()
            )));
        }
        match &self.reference {
            Reference::White { cov } if cov.shape() != (model.n_u(), model.n_u()) => {
                Err(Error::ShapeMismatch("reference covariance must be n_u x n_u".into()))
            }
            Reference::Constant { level } if level.len() != model.n_u() => {
                Err(Error::ShapeMismatch("reference level must have n_u entries".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `(I + D Ky)^{-1}`, the algebraic-loop resolvent.
fn loop_resolvent(model: &StateSpaceModel, ky: &Mat) -> Result<Mat> {
    let ny = model.n_y();
    linalg::inverse(&(Mat::identity(ny, ny) + &model.d * ky))
        .map_err(|_| Error::InvalidModel("feedback loop is ill-posed: I + D Ky is singular".into()))
}

/// Closed-loop state matrix `A - B Ky (I + D Ky)^{-1} C`.
pub fn closed_loop_matrix(model: &StateSpaceModel, ky: &Mat) -> Result<Mat> {
    let s = loop_resolvent(model, ky)?;
    Ok(&model.a - &model.b * ky * s * &model.c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Waveform {
    Zero,
    Constant { level: f64 },
    /// `amplitude * sin(omega * k)`
    Sine { omega: f64, amplitude: f64 },
}

impl Waveform {
    fn at(&self, k: usize) -> f64 {
        match *self {
            Waveform::Zero => 0.0,
            Waveform::Constant { level } => level,
            Waveform::Sine { omega, amplitude } => amplitude * (omega * k as f64).sin(),
        }
    }
}

/// Fault signal: zero for `k <= onset`, per-channel waveforms afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub onset: usize,
    pub channels: Vec<Waveform>,
}

impl FaultProfile {
    pub fn zero(n_f: usize) -> Self {
        FaultProfile { onset: 0, channels: vec![Waveform::Zero; n_f] }
    }

    pub fn n_f(&self) -> usize {
        self.channels.len()
    }

    pub fn at(&self, k: usize) -> Vector {
        if k <= self.onset {
            return Vector::zeros(self.n_f());
        }
        Vector::from_iterator(self.n_f(), self.channels.iter().map(|w| w.at(k)))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.channels.iter().all(|w| match *w {
            Waveform::Zero => true,
            Waveform::Constant { level } => level.is_finite(),
            Waveform::Sine { omega, amplitude } => omega.is_finite() && amplitude.is_finite(),
        });
        if finite {
            Ok(())
        } else {
            Err(Error::Config("fault waveform parameters must be finite".into()))
        }
    }
}

/// Benchmark fault signal: zero for `k <= 50`, then `[sin(0.1 pi k), 1]`.
pub fn fault_profile_benchmark() -> FaultProfile {
    FaultProfile {
        onset: 50,
        channels: vec![
            Waveform::Sine { omega: 0.1 * std::f64::consts::PI, amplitude: 1.0 },
            Waveform::Constant { level: 1.0 },
        ],
    }
}

/// Closed-loop record. Row `k` of every matrix is sample `k`.
#[derive(Clone, Debug)]
pub struct TrajectoryDataset {
    pub u: Mat,
    pub y: Mat,
    pub f_true: Mat,
    pub reference: Mat,
    pub seed: Option<u64>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.y.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn n_u(&self) -> usize {
        self.u.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }
    pub fn n_f(&self) -> usize {
        self.f_true.ncols()
    }

    pub fn is_fault_free(&self) -> bool {
        self.f_true.iter().all(|v| *v == 0.0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n_u()).map(|i| format!("u{i}")));
        header.extend((1..=self.n_y()).map(|i| format!("y{i}")));
        header.extend((1..=self.n_f()).map(|i| format!("f{i}")));
        header.extend((1..=self.reference.ncols()).map(|i| format!("eta{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![k.to_string()];
            for m in [&self.u, &self.y, &self.f_true, &self.reference] {
                rec.extend(m.row(k).iter().map(|v| fmt_f64(*v)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(crate::io::open(path)?);
        let header = rd.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
                .count()
        };
        let (nu, ny, nf, ne) = (count("u"), count("y"), count("f"), count("eta"));
        if header.len() != 1 + nu + ny + nf + ne || header.get(0) != Some("k") {
            return Err(Error::Format(format!("{}: unexpected trajectory header", path.display())));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        let t = rows.len();
        let block = |start: usize, width: usize| Mat::from_fn(t, width, |r, c| rows[r][start + c]);
        Ok(TrajectoryDataset {
            u: block(0, nu),
            y: block(nu, ny),
            f_true: block(nu + ny, nf),
            reference: block(nu + ny + nf, ne),
            seed: None,
        })
    }
}

struct GaussianStream {
    rng: ChaCha20Rng,
    factor: Mat,
}

impl GaussianStream {
    fn new(seed: u64, stream: u64, cov: &Mat) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianStream { rng, factor: linalg::sqrt_psd(cov) }
    }

    fn draw(&mut self) -> Vector {
        let n = self.factor.ncols();
        let z = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
        &self.factor * z
    }
}

/// Simulates `T` samples of the plant under `ctrl`, starting from `x(0) = 0`.
pub fn simulate_closed_loop(
    model: &StateSpaceModel,
    ctrl: &ControllerConfig,
    fault: &FaultProfile,
    cfg: &FaultConfig,
    t: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    simulate_closed_loop_from(model, ctrl, fault, cfg, t, seed, &Vector::zeros(model.n()))
}

/// Fault-free closed-loop run, as used for identification experiments.
pub fn simulate_fault_free(model: &StateSpaceModel, ctrl: &ControllerConfig, t: usize, seed: u64) -> Result<TrajectoryDataset> {
    run(model, ctrl, None, t, seed, &Vector::zeros(model.n()))
}

pub fn simulate_closed_loop_from(
    model: &StateSpaceModel,
    ctrl: &ControllerConfig,
    fault: &FaultProfile,
    cfg: &FaultConfig,
    t: usize,
    seed: u64,
    x0: &Vector,
) -> Result<TrajectoryDataset> {
    fault.validate()?;
    if fault.n_f() != cfg.n_f() {
        return Err(Error::ShapeMismatch(format!(
            "fault profile has {} channels but the configuration has {}",
            fault.n_f(),
            cfg.n_f()
        )));
    }
    let (e, g) = plant_fault_matrices(model, cfg)?;
    run(model, ctrl, Some((fault, &e, &g)), t, seed, x0)
}

fn run(
    model: &StateSpaceModel,
    ctrl: &ControllerConfig,
    fault: Option<(&FaultProfile, &Mat, &Mat)>,
    t: usize,
    seed: u64,
    x0: &Vector,
) -> Result<TrajectoryDataset> {
    if t == 0 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    ctrl.validate(model)?;
    if x0.len() != model.n() {
        return Err(Error::ShapeMismatch("initial state has the wrong length".into()));
    }
    let (nu, ny) = (model.n_u(), model.n_y());
    let nf = fault.map_or(0, |(p, _, _)| p.n_f());
    let resolvent = loop_resolvent(model, &ctrl.ky)?;
    let acl = closed_loop_matrix(model, &ctrl.ky)?;
    let rho = linalg::spectral_radius(&acl);
    if rho >= 1.0 {
        log::warn!("closed loop is not stable (spectral radius {rho:.4})");
    }

    let mut w_stream = GaussianStream::new(seed, STREAM_W, &model.q);
    let mut v_stream = GaussianStream::new(seed, STREAM_V, &model.r);
    let mut eta_stream = match &ctrl.reference {
        Reference::White { cov } => Some(GaussianStream::new(seed, STREAM_ETA, cov)),
        Reference::Constant { .. } => None,
    };

    let mut out = TrajectoryDataset {
        u: Mat::zeros(t, nu),
        y: Mat::zeros(t, ny),
        f_true: Mat::zeros(t, nf),
        reference: Mat::zeros(t, nu),
        seed: Some(seed),
    };
    let mut x = x0.clone();
    for k in 0..t {
        let eta = match (&ctrl.reference, eta_stream.as_mut()) {
            (_, Some(s)) => s.draw(),
            (Reference::Constant { level }, None) => Vector::from_column_slice(level),
            _ => unreachable!(),
        };
        let f = fault.map_or_else(|| Vector::zeros(0), |(p, _, _)| p.at(k));
        let v = v_stream.draw();
        let w = w_stream.draw();
        // y = C x + D u + G f + v with u = -Ky y + eta
        let mut open = &model.c * &x + &model.d * &eta + &v;
        if let Some((_, _, g)) = fault {
            open += g * &f;
        }
        let y = &resolvent * open;
        let u = -(&ctrl.ky * &y) + &eta;
        let mut next = &model.a * &x + &model.b * &u + &model.f * &w;
        if let Some((_, e, _)) = fault {
            next += e * &f;
        }
        out.u.row_mut(k).copy_from(&u.transpose());
        out.y.row_mut(k).copy_from(&y.transpose());
        out.f_true.row_mut(k).copy_from(&f.transpose());
        out.reference.row_mut(k).copy_from(&eta.transpose());
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::DivergedState(k + 1));
        }
        x = next;
    }
    Ok(out)
}

/// Continuous-time VTOL aircraft matrices `(A_c, B_c, C_c)`.
pub fn vtol_continuous() -> (Mat, Mat, Mat) {
    let ac = Mat::from_row_slice(
        4,
        4,
        &[
            -0.0366, 0.0271, 0.0188, -0.4555, //
            0.0482, -1.01, 0.0024, -4.0208, //
            0.1002, 0.3681, -0.707, 1.42, //
            0.0, 0.0, 1.0, 0.0,
        ],
    );
    let bc = Mat::from_row_slice(4, 2, &[0.4422, 0.1761, 3.5446, -7.5922, -5.52, 4.49, 0.0, 0.0]);
    let cc = Mat::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, 1.0,
        ],
    );
    (ac, bc, cc)
}

pub const VTOL_SAMPLING: f64 = 0.5;

/// Zero-order-hold discretization: `exp([[A, B], [0, 0]] h)`.
pub fn zoh(ac: &Mat, bc: &Mat, h: f64) -> (Mat, Mat) {
    let (n, m) = bc.shape();
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, m)).copy_from(bc);
    let phi = (aug * h).exp();
    (phi.view((0, 0), (n, n)).into_owned(), phi.view((0, n), (n, m)).into_owned())
}

/// Discretized VTOL plant with its stabilizing output feedback. The
/// reference defaults to the identification excitation (white, `diag(1, 1)`).
pub fn vtol_model() -> (StateSpaceModel, ControllerConfig) {
    let (ac, bc, cc) = vtol_continuous();
    let (a, b) = zoh(&ac, &bc, VTOL_SAMPLING);
    let model = StateSpaceModel::new(
        a,
        b,
        cc,
        Mat::zeros(4, 2),
        Mat::identity(4, 4),
        Mat::identity(4, 4) * 0.16,
        Mat::identity(4, 4) * 0.64,
    )
    .expect("VTOL fixture satisfies the model assumptions");
    let ky = Mat::from_row_slice(2, 4, &[0.0, 0.0, -0.5, 0.0, 0.0, 0.0, -0.1, -0.1]);
    (model, ControllerConfig { ky, reference: Reference::White { cov: Mat::identity(2, 2) } })
}
