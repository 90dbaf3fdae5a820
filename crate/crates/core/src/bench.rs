//! Experiment harness: end-to-end pipelines, Monte Carlo evaluation and
//! figure data.
//!
//! Protocol: one fault-free identification run with white reference
//! excitation; designs are built once from it; evaluation uses `M`
//! independent online runs (fresh noise seeds) with a constant reference
//! `eta` and the fault profile, sampling the error at a fixed `k_eval`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{design_nominal, EstimatorGain, StackedWindow};
use crate::identification::{extract_markov, identify, Feedthrough, IdentificationResult};
use crate::io::fmt_f64;
use crate::linalg::{Mat, Vector};
use crate::online::OnlineEstimator;
use crate::robust::{RobustDesigner, Tuning};
use crate::sdp::ConicBackend;
use crate::simulator::{
    simulate_closed_loop, simulate_fault_free, vtol_model, ControllerConfig, FaultProfile, TrajectoryDataset, Waveform,
};
use crate::system_model::{
    markov_parameters, relative_degree, steady_state_predictor, FaultConfig, StateSpaceModel,
};

/// Plant plus the feedback law used to run it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantSpec {
    pub model: StateSpaceModel,
    pub controller: ControllerConfig,
}

/// `vtol` for the built-in aircraft model, otherwise a JSON `PlantSpec` path.
pub fn load_plant(source: &str) -> Result<PlantSpec> {
    if source == "vtol" {
        let (model, controller) = vtol_model();
        return Ok(PlantSpec { model, controller });
    }
    crate::io::read_json(Path::new(source))
}

/// Fault profile used for evaluation: zero up to `onset = 50`, then a sine
/// `sin(0.1 pi k)` on the first channel and a unit step on the others.
pub fn evaluation_profile(n_f: usize) -> FaultProfile {
    let channels = (0..n_f)
        .map(|i| if i == 0 { Waveform::Sine { omega: 0.1 * std::f64::consts::PI, amplitude: 1.0 } } else { Waveform::Constant { level: 1.0 } })
        .collect();
    FaultProfile { onset: 50, channels }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Nominal design from exact Markov parameters.
    Alg0,
    /// Nominal design from identified Markov parameters.
    #[value(alias = "nominal")]
    Alg1,
    /// Offline robust design.
    #[value(alias = "robust", alias = "offline")]
    Alg2,
    /// Online robust design with gating.
    #[value(alias = "online")]
    Alg3,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algorithm::Alg0 => "alg0",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
        };
        f.write_str(s)
    }
}

/// Single JSON config; CLI flags override individual fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub fault: String,
    #[serde(rename = "N")]
    pub n_id: usize,
    pub p: usize,
    pub feedthrough: Feedthrough,
    #[serde(rename = "L")]
    pub l: usize,
    /// Defaults to `p`.
    pub m: Option<usize>,
    pub gamma_f2: Option<f64>,
    pub gamma_z2: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub mc: usize,
    /// Runs that include the online design (defaults to `min(mc, 200)`).
    pub mc_online: Option<usize>,
    pub seed: u64,
    pub k_eval: usize,
    /// Length of single-run traces.
    pub horizon: usize,
    pub fig4_points: usize,
    pub fig4_etas: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "vtol".into(),
            fault: "actuator:1,2".into(),
            n_id: 1000,
            p: 10,
            feedthrough: Feedthrough::default(),
            l: 30,
            m: None,
            gamma_f2: None,
            gamma_z2: None,
            alpha: 300.0,
            eta: 15.0,
            mc: 1000,
            mc_online: None,
            seed: 1,
            k_eval: 150,
            horizon: 200,
            fig4_points: 10,
            fig4_etas: vec![0.0, 1.0, 2.0],
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or(self.p)
    }

    pub fn fault_config(&self) -> Result<FaultConfig> {
        self.fault.parse()
    }

    pub fn mc_online(&self) -> usize {
        self.mc_online.unwrap_or(self.mc.min(200))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.l == 0 || self.p == 0 || self.m() == 0 {
            return bad("L, p and m must be positive");
        }
        if self.k_eval + 1 < self.l {
            return bad("k_eval must be at least L - 1");
        }
        if self.mc == 0 {
            return bad("mc must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be nonnegative");
        }
        if let Some(g) = self.gamma_f2 {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::TuningOutOfRange(format!("gamma_f2 = {g} outside [0, 1)")));
            }
        }
        if let Some(g) = self.gamma_z2 {
            if !(g >= 0.0) {
                return Err(Error::TuningOutOfRange(format!("gamma_z2 = {g} must be nonnegative")));
            }
        }
        self.fault_config().map(|_| ())
    }

    /// Seed of the `i`-th online evaluation run; disjoint from the
    /// identification seed.
    pub fn online_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 + i as u64)
    }
}

/// Everything built once per experiment.
pub struct Designs {
    pub plant: PlantSpec,
    pub fault: FaultConfig,
    pub tau: usize,
    pub ident: IdentificationResult,
    pub designer: RobustDesigner,
    pub tuning: Tuning,
    pub alg0: EstimatorGain,
    pub alg2: EstimatorGain,
}

impl Designs {
    pub fn alg1(&self) -> &EstimatorGain {
        &self.designer.nominal
    }

    pub fn gain(&self, alg: Algorithm) -> &EstimatorGain {
        match alg {
            Algorithm::Alg0 => &self.alg0,
            Algorithm::Alg1 => self.alg1(),
            Algorithm::Alg2 | Algorithm::Alg3 => &self.alg2,
        }
    }

    pub fn online(&self, alpha: f64) -> OnlineEstimator<'_> {
        OnlineEstimator::new(&self.designer, &self.alg2, alpha, self.tuning.gamma_f2)
    }
}

pub fn build_designs(cfg: &ExperimentConfig, backend: &dyn ConicBackend) -> Result<Designs> {
    cfg.validate()?;
    let plant = load_plant(&cfg.model)?;
    let fault = cfg.fault_config()?;
    fault.validate(plant.model.n_y(), plant.model.n_u())?;
    let id_data = simulate_fault_free(&plant.model, &plant.controller, cfg.n_id, cfg.seed)?;
    let ident = identify(&id_data, cfg.p, cfg.feedthrough)?;
    let markov = extract_markov(&ident, &fault)?;
    let (l, m) = (cfg.l, cfg.m());

    let pred = steady_state_predictor(&plant.model)?;
    let exact = markov_parameters(&pred, &fault, l + m)?;
    let tau = relative_degree(&exact, fault.n_f())?;
    let tau_hat = relative_degree(&markov, fault.n_f())?;
    if tau_hat != tau {
        log::warn!("identified relative degree {tau_hat} differs from the model's {tau}; using {tau}");
    }
    let alg0 = design_nominal(&exact, l, m, tau)?;
    let designer = RobustDesigner::new(&markov, l, m, tau)?;
    let tuning = match cfg.gamma_f2 {
        Some(gf) => designer.tuning_for(gf, cfg.gamma_z2, backend)?,
        None => {
            let mut t = designer.default_tuning(backend)?;
            if let Some(gz) = cfg.gamma_z2 {
                t.gamma_z2 = gz;
            }
            t
        }
    };
    log::info!("tuning: {tuning:?}");
    let alg2 = designer.solve_offline(tuning.gamma_f2, tuning.gamma_z2, backend)?;
    Ok(Designs { plant, fault, tau, ident, designer, tuning, alg0, alg2 })
}

/// Online evaluation run `i` of length `t` at reference level `eta`.
pub fn online_run(cfg: &ExperimentConfig, d: &Designs, eta: f64, t: usize, i: usize) -> Result<TrajectoryDataset> {
    let ctrl = d.plant.controller.with_constant_reference(eta);
    simulate_closed_loop(&d.plant.model, &ctrl, &evaluation_profile(d.fault.n_f()), &d.fault, t, cfg.online_seed(i))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Vec<f64>,
    /// Covariance of the errors; the 3-sigma contour is
    /// `(e - center)^T shape^{-1} (e - center) = 3`.
    pub shape: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgMetrics {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failures: usize,
    pub bias: Vec<f64>,
    pub bias_norm: f64,
    pub covariance: Vec<Vec<f64>>,
    /// `tr(cov)`
    pub variance: f64,
    /// `sqrt(mean ||err||^2 / n_f) = sqrt((||bias||^2 + tr(cov) (M-1)/M) / n_f)`
    pub rmse: f64,
    pub ellipse: Ellipse,
    pub runtime_s: f64,
    pub gate_fired_fraction: Option<f64>,
    #[serde(skip)]
    pub errors: Vec<Vector>,
}

impl AlgMetrics {
    pub fn from_errors(algorithm: Algorithm, errors: Vec<Vector>, failures: usize, runtime_s: f64) -> Self {
        let m = errors.len();
        let nf = errors.first().map_or(0, |e| e.len());
        let mean = if m == 0 { Vector::zeros(nf) } else { errors.iter().fold(Vector::zeros(nf), |a, e| a + e) / m as f64 };
        let mut cov = Mat::zeros(nf, nf);
        if m > 1 {
            for e in &errors {
                let d = e - &mean;
                cov += &d * d.transpose();
            }
            cov /= (m - 1) as f64;
        } else {
            log::warn!("{algorithm}: fewer than two runs, covariance reported as zero");
        }
        let msq = if m == 0 { f64::NAN } else { errors.iter().map(|e| e.norm_squared()).sum::<f64>() / m as f64 };
        let rows = |c: &Mat| (0..nf).map(|i| c.row(i).iter().copied().collect()).collect::<Vec<Vec<f64>>>();
        AlgMetrics {
            algorithm,
            runs: m,
            failures,
            bias: mean.iter().copied().collect(),
            bias_norm: mean.norm(),
            covariance: rows(&cov),
            variance: cov.trace(),
            rmse: (msq / nf.max(1) as f64).sqrt(),
            ellipse: Ellipse { center: mean.iter().copied().collect(), shape: rows(&cov) },
            runtime_s,
            gate_fired_fraction: None,
            errors,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fault: String,
    pub eta: f64,
    pub k_eval: usize,
    pub tau: usize,
    pub tuning: Tuning,
    pub algorithms: Vec<AlgMetrics>,
}

impl MetricsReport {
    pub fn get(&self, alg: Algorithm) -> Option<&AlgMetrics> {
        self.algorithms.iter().find(|a| a.algorithm == alg)
    }
}

/// Estimation error `f_hat(k - tau) - f(k - tau)` at `k_eval` for each run.
pub fn monte_carlo(
    cfg: &ExperimentConfig,
    d: &Designs,
    algorithms: &[Algorithm],
    eta: f64,
    backend: &dyn ConicBackend,
) -> Result<MetricsReport> {
    let k = cfg.k_eval;
    let runs: Vec<usize> = (0..cfg.mc).collect();
    let online = d.online(cfg.alpha);
    let mut out = Vec::new();
    for &alg in algorithms {
        let n_runs = if alg == Algorithm::Alg3 { cfg.mc_online().min(cfg.mc) } else { cfg.mc };
        let start = Instant::now();
        let results: Vec<Result<(Vector, bool)>> = runs[..n_runs]
            .par_iter()
            .map(|&i| {
                let traj = online_run(cfg, d, eta, k + 1, i)?;
                let win = StackedWindow::from_trajectory(&traj, k, cfg.l)?;
                let truth = traj.f_true.row(k - d.tau).transpose();
                let (est, fired) = match alg {
                    Algorithm::Alg3 => {
                        let s = online.step(&win, backend)?;
                        (s.estimate, s.gate_fired)
                    }
                    _ => (d.gain(alg).estimate(&win)?, false),
                };
                Ok((est - truth, fired))
            })
            .collect();
        let mut errors = Vec::with_capacity(n_runs);
        let mut failures = 0;
        let mut fired = 0;
        for r in results {
            match r {
                Ok((e, f)) => {
                    fired += f as usize;
                    errors.push(e);
                }
                Err(e) => {
                    failures += 1;
                    log::warn!("{alg}: run failed: {e}");
                }
            }
        }
        let n_ok = errors.len();
        let mut met = AlgMetrics::from_errors(alg, errors, failures, start.elapsed().as_secs_f64());
        if alg == Algorithm::Alg3 {
            met.gate_fired_fraction = Some(fired as f64 / n_ok.max(1) as f64);
        }
        out.push(met);
    }
    Ok(MetricsReport { fault: d.fault.to_string(), eta, k_eval: k, tau: d.tau, tuning: d.tuning, algorithms: out })
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Error clouds (`algorithm,run,e1..`) and ellipses
/// (`algorithm,c1..,s11,s12,..` with the shape matrix row-major).
pub fn write_error_cloud(dir: &Path, report: &MetricsReport) -> Result<()> {
    let nf = report.algorithms.first().map_or(0, |a| a.bias.len());
    let mut f = csv_writer(&dir.join("errors.csv"))?;
    let head: Vec<String> = (1..=nf).map(|i| format!("e{i}")).collect();
    writeln!(f, "algorithm,run,{}", head.join(","))?;
    for a in &report.algorithms {
        for (r, e) in a.errors.iter().enumerate() {
            let vals: Vec<String> = e.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(f, "{},{r},{}", a.algorithm, vals.join(","))?;
        }
    }
    let mut g = csv_writer(&dir.join("ellipses.csv"))?;
    let c: Vec<String> = (1..=nf).map(|i| format!("c{i}")).collect();
    let s: Vec<String> = (1..=nf).flat_map(|i| (1..=nf).map(move |j| format!("s{i}{j}"))).collect();
    writeln!(g, "algorithm,{},{}", c.join(","), s.join(","))?;
    for a in &report.algorithms {
        let cv: Vec<String> = a.ellipse.center.iter().map(|&v| fmt_f64(v)).collect();
        let sv: Vec<String> = a.ellipse.shape.iter().flatten().map(|&v| fmt_f64(v)).collect();
        writeln!(g, "{},{},{}", a.algorithm, cv.join(","), sv.join(","))?;
    }
    crate::io::write_json(&dir.join("metrics.json"), report)
}

/// Single-run traces: `k,f1..,alg0_1..,...`; row `k` holds the estimates
/// of `f(k)` (produced at time `k + tau`), `nan` where unavailable.
pub fn figure2(cfg: &ExperimentConfig, d: &Designs, algorithms: &[Algorithm], backend: &dyn ConicBackend, path: &Path) -> Result<()> {
    let t = cfg.horizon;
    let traj = online_run(cfg, d, cfg.eta, t, 0)?;
    let nf = d.fault.n_f();
    let mut cols: Vec<Vec<Option<Vector>>> = Vec::new();
    for &alg in algorithms {
        let per_k = match alg {
            Algorithm::Alg3 => {
                let steps = d.online(cfg.alpha).run(&traj, backend)?;
                let mut v = vec![None; t];
                for s in steps {
                    v[s.k] = Some(s.estimate);
                }
                v
            }
            _ => d.gain(alg).estimate_trajectory(&traj)?,
        };
        cols.push(per_k);
    }
    let mut f = csv_writer(path)?;
    let mut head: Vec<String> = (1..=nf).map(|i| format!("f{i}")).collect();
    for alg in algorithms {
        head.extend((1..=nf).map(|i| format!("{alg}_{i}")));
    }
    writeln!(f, "k,{}", head.join(","))?;
    for k in 0..t {
        let mut row: Vec<String> = traj.f_true.row(k).iter().map(|&v| fmt_f64(v)).collect();
        for c in &cols {
            match c.get(k + d.tau).and_then(|e| e.as_ref()) {
                Some(e) => row.extend(e.iter().map(|&v| fmt_f64(v))),
                None => row.extend(std::iter::repeat_n("nan".to_string(), nf)),
            }
        }
        writeln!(f, "{k},{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fig4Row {
    pub eta: f64,
    pub gamma_f2: f64,
    pub gamma_z2: f64,
    pub bias: f64,
    pub variance: f64,
    pub rmse: f64,
}

/// `gamma_f2` grid from `gamma_f_min2` towards 1, denser near the minimum.
pub fn fig4_grid(gamma_f_min2: f64, points: usize) -> Vec<f64> {
    let span = 1.0 - gamma_f_min2;
    (0..points)
        .map(|i| {
            let t = if points <= 1 { 0.0 } else { 1e-3 * (900.0f64).powf(i as f64 / (points - 1) as f64) };
            gamma_f_min2 + span * if i == 0 { 0.0 } else { t }
        })
        .collect()
}

/// Offline robust design swept over `gamma_f2` (with `gamma_z2` at its
/// midpoint), evaluated by Monte Carlo for every `eta`.
pub fn figure4(cfg: &ExperimentConfig, d: &Designs, backend: &dyn ConicBackend) -> Result<Vec<Fig4Row>> {
    let grid = fig4_grid(d.designer.problem.gamma_f_min()?, cfg.fig4_points);
    let mut rows = Vec::new();
    for &gf in &grid {
        let tuning = d.designer.tuning_for(gf, None, backend)?;
        let gain = d.designer.solve_offline(gf, tuning.gamma_z2, backend)?;
        for &eta in &cfg.fig4_etas {
            let errors: Vec<Vector> = (0..cfg.mc)
                .into_par_iter()
                .map(|i| -> Result<Vector> {
                    let traj = online_run(cfg, d, eta, cfg.k_eval + 1, i)?;
                    let win = StackedWindow::from_trajectory(&traj, cfg.k_eval, cfg.l)?;
                    Ok(gain.estimate(&win)? - traj.f_true.row(cfg.k_eval - d.tau).transpose())
                })
                .collect::<Result<_>>()?;
            let met = AlgMetrics::from_errors(Algorithm::Alg2, errors, 0, 0.0);
            rows.push(Fig4Row { eta, gamma_f2: gf, gamma_z2: tuning.gamma_z2, bias: met.bias_norm, variance: met.variance, rmse: met.rmse });
        }
    }
    Ok(rows)
}

pub fn write_fig4(path: &Path, rows: &[Fig4Row]) -> Result<()> {
    let mut f = csv_writer(path)?;
    writeln!(f, "eta,gamma_f2,gamma_z2,bias,variance,rmse")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{},{}", fmt_f64(r.eta), fmt_f64(r.gamma_f2), fmt_f64(r.gamma_z2), fmt_f64(r.bias), fmt_f64(r.variance), fmt_f64(r.rmse))?;
    }
    Ok(())
}

/// Figure ids: `2`, `3a` (actuator faults), `3b` (sensor faults), `4`.
pub fn figure_data(cfg: &ExperimentConfig, figure: &str, backend: &dyn ConicBackend) -> Result<PathBuf> {
    let all = [Algorithm::Alg0, Algorithm::Alg1, Algorithm::Alg2, Algorithm::Alg3];
    let mut cfg = cfg.clone();
    match figure {
        "3a" => cfg.fault = "actuator:1,2".into(),
        "3b" => cfg.fault = "sensor:1,2".into(),
        "2" | "4" => {}
        other => return Err(Error::UnknownFigure(other.into())),
    }
    let dir = cfg.out.join(format!("fig{figure}"));
    std::fs::create_dir_all(&dir)?;
    let d = build_designs(&cfg, backend)?;
    match figure {
        "2" => figure2(&cfg, &d, &all, backend, &dir.join("traces.csv"))?,
        "3a" | "3b" => {
            let report = monte_carlo(&cfg, &d, &all, cfg.eta, backend)?;
            write_error_cloud(&dir, &report)?;
        }
        _ => write_fig4(&dir.join("tradeoff.csv"), &figure4(&cfg, &d, backend)?)?,
    }
    crate::io::write_json(&dir.join("config.json"), &cfg)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_formula() {
        let errs = vec![Vector::from_row_slice(&[1.0, 0.0]), Vector::from_row_slice(&[3.0, 2.0])];
        let m = AlgMetrics::from_errors(Algorithm::Alg1, errs, 0, 0.0);
        assert_eq!(m.bias, vec![2.0, 1.0]);
        assert!((m.variance - 4.0).abs() < 1e-12);
        // mean ||e||^2 = (1 + 13)/2 = 7 -> rmse^2 = 3.5 = (5 + 4 * 1/2) / 2
        assert!((m.rmse.powi(2) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn single_run_has_zero_covariance() {
        let m = AlgMetrics::from_errors(Algorithm::Alg0, vec![Vector::from_row_slice(&[1.0])], 0, 0.0);
        assert_eq!(m.covariance, vec![vec![0.0]]);
    }

    #[test]
    fn config_defaults_roundtrip() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.l, 30);
        assert_eq!(back.m(), 10);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"eta": 2.0}"#).unwrap();
        assert_eq!(partial.eta, 2.0);
        assert_eq!(partial.n_id, 1000);
    }

    #[test]
    fn unknown_figure() {
        let be = crate::sdp::ClarabelBackend::default();
        assert!(matches!(figure_data(&ExperimentConfig::default(), "9", &be), Err(Error::UnknownFigure(_))));
    }

    #[test]
    fn grid_starts_at_minimum() {
        let g = fig4_grid(0.2, 5);
        assert_eq!(g[0], 0.2);
        assert!(g.windows(2).all(|w| w[1] > w[0]) && *g.last().unwrap() < 1.0);
    }

    #[test]
    fn profile_matches_benchmark_for_two_channels() {
        let p = evaluation_profile(2);
        assert_eq!(p.at(50), Vector::zeros(2));
        let v = p.at(55);
        assert!((v[0] - (0.1 * std::f64::consts::PI * 55.0).sin()).abs() < 1e-15 && v[1] == 1.0);
    }
}
