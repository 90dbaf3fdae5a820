//! `rhfe` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input (bad flags, missing or malformed
//! files, infeasible tuning), 3 conic solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rhfe::bench::{self, Algorithm, ExperimentConfig};
use rhfe::estimator::{design_nominal, write_estimates_csv, EstimatorGain, GainKind};
use rhfe::identification::{extract_markov, identify, Feedthrough, IdentificationResult};
use rhfe::online::{write_gate_log, OnlineEstimator};
use rhfe::robust::{linspace, tradeoff_sweep, write_tradeoff_csv, RobustDesigner};
use rhfe::sdp::ClarabelBackend;
use rhfe::simulator::{simulate_closed_loop, simulate_fault_free, TrajectoryDataset};
use rhfe::system_model::{markov_parameters, relative_degree, steady_state_predictor, FaultConfig};
use rhfe::{Error, Result};

#[derive(Parser)]
#[command(name = "rhfe", version, about = "Robust receding-horizon fault estimation from identified models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the closed loop and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Identify predictor Markov parameters from fault-free data.
    Identify(IdentifyArgs),
    /// Design an estimator and write its JSON descriptor.
    Design(DesignArgs),
    /// Run a stored estimator over a trajectory.
    Estimate(EstimateArgs),
    /// Trade-off sweeps over the tuning parameters.
    Sweep(SweepArgs),
    /// Reproduce an evaluation figure as data files.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// `vtol` or a JSON plant file.
    #[arg(long, default_value = "vtol")]
    model: String,
    #[arg(long, default_value = "actuator:1,2")]
    fault: String,
    /// Simulate without faults (identification data).
    #[arg(long)]
    no_fault: bool,
    #[arg(long = "N", default_value_t = 1000)]
    n: usize,
    /// Constant reference level; the plant's white reference otherwise.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Fault-free trajectory CSV; simulated from `--model` when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "vtol")]
    model: String,
    #[arg(long = "N", default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, value_enum, default_value_t = Feedthrough::KnownZero)]
    feedthrough: Feedthrough,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::Alg2)]
    mode: Algorithm,
    /// Identification result (required except for `alg0`).
    #[arg(long)]
    ident: Option<PathBuf>,
    /// Plant for `alg0`.
    #[arg(long, default_value = "vtol")]
    model: String,
    #[arg(long, default_value = "actuator:1,2")]
    fault: String,
    #[arg(long = "L", default_value_t = 30)]
    l: usize,
    /// Defaults to the identification order `p` (10 for `alg0`).
    #[arg(long)]
    m: Option<usize>,
    /// Overrides the detected relative degree.
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long = "gamma-f2")]
    gamma_f2: Option<f64>,
    #[arg(long = "gamma-z2")]
    gamma_z2: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    estimator: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `alg3` re-optimizes gated windows online; otherwise the stored gain is used.
    #[arg(long, value_enum)]
    mode: Option<Algorithm>,
    /// Identification result, needed by `alg3`.
    #[arg(long)]
    ident: Option<PathBuf>,
    #[arg(long, default_value_t = 300.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Experiment settings shared by `sweep` and `bench`. Precedence:
/// built-in defaults, then `--config`, then individual flags.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    fault: Option<String>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "gamma-f2")]
    gamma_f2: Option<f64>,
    #[arg(long = "gamma-z2")]
    gamma_z2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Monte Carlo runs.
    #[arg(long)]
    mc: Option<usize>,
    /// Monte Carlo runs that include the online design.
    #[arg(long)]
    mc_online: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = &self.$flag { c.$field = v.clone(); }
            )*};
        }
        set!(model => model, fault => fault, n => n_id, p => p, l => l, alpha => alpha, eta => eta, mc => mc, seed => seed, out => out);
        if self.m.is_some() {
            c.m = self.m;
        }
        if self.gamma_f2.is_some() {
            c.gamma_f2 = self.gamma_f2;
        }
        if self.gamma_z2.is_some() {
            c.gamma_z2 = self.gamma_z2;
        }
        if self.mc_online.is_some() {
            c.mc_online = self.mc_online;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Sweep gamma_f2 with Monte Carlo RMSE per reference level (writes `gamma_f_sweep.csv`).
    /// Without it, a design-metric grid over gamma_f2 x gamma_z2 is written to `tradeoff.csv`.
    #[arg(long = "gamma-f")]
    gamma_f: bool,
    /// Grid points per axis.
    #[arg(long, default_value_t = 6)]
    points: usize,
    /// Reference levels for `--gamma-f`, comma separated.
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<f64>>,
}

#[derive(Args)]
struct BenchArgs {
    /// Plant: `vtol` or a JSON plant file.
    #[arg(id = "plant", value_name = "MODEL")]
    plant: Option<String>,
    /// `2`, `3a`, `3b`, `4` or `all`.
    #[arg(long, default_value = "3a")]
    figure: String,
    #[command(flatten)]
    exp: ExperimentArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    let backend = ClarabelBackend::default();
    match cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Identify(a) => identify_cmd(a),
        Cmd::Design(a) => design(a, &backend),
        Cmd::Estimate(a) => estimate(a, &backend),
        Cmd::Sweep(a) => sweep(a, &backend),
        Cmd::Bench(a) => bench_cmd(a, &backend),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn report(path: &Path) {
    println!("{}", path.display());
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let plant = bench::load_plant(&a.model)?;
    let ctrl = match a.eta {
        Some(eta) => plant.controller.with_constant_reference(eta),
        None => plant.controller.clone(),
    };
    let traj = if a.no_fault {
        simulate_fault_free(&plant.model, &ctrl, a.n, a.seed)?
    } else {
        let fault: FaultConfig = a.fault.parse()?;
        fault.validate(plant.model.n_y(), plant.model.n_u())?;
        simulate_closed_loop(&plant.model, &ctrl, &bench::evaluation_profile(fault.n_f()), &fault, a.n, a.seed)?
    };
    out_dir(&a.out)?;
    let path = a.out.join("trajectory.csv");
    traj.write_csv(&path)?;
    report(&path);
    Ok(())
}

fn identify_cmd(a: IdentifyArgs) -> Result<()> {
    let traj = match &a.data {
        Some(p) => TrajectoryDataset::read_csv(p)?,
        None => {
            let plant = bench::load_plant(&a.model)?;
            simulate_fault_free(&plant.model, &plant.controller, a.n, a.seed)?
        }
    };
    if !traj.is_fault_free() {
        return Err(Error::FaultyIdentificationData);
    }
    let ident = identify(&traj, a.p, a.feedthrough)?;
    out_dir(&a.out)?;
    let path = a.out.join("identification.json");
    ident.save(&path)?;
    report(&path);
    Ok(())
}

/// Designer for an identified model; `tau` detected from the identified
/// fault Markov parameters unless given.
fn identified_designer(ident: &IdentificationResult, fault: &FaultConfig, l: usize, m: usize, tau: Option<usize>) -> Result<RobustDesigner> {
    let markov = extract_markov(ident, fault)?;
    let tau = match tau {
        Some(t) => t,
        None => relative_degree(&markov, fault.n_f())?,
    };
    RobustDesigner::new(&markov, l, m, tau)
}

fn design(a: DesignArgs, backend: &ClarabelBackend) -> Result<()> {
    let fault: FaultConfig = a.fault.parse()?;
    let mut gain = if a.mode == Algorithm::Alg0 {
        let plant = bench::load_plant(&a.model)?;
        fault.validate(plant.model.n_y(), plant.model.n_u())?;
        let m = a.m.unwrap_or(10);
        let pred = steady_state_predictor(&plant.model)?;
        let exact = markov_parameters(&pred, &fault, a.l + m)?;
        let tau = a.tau.map_or_else(|| relative_degree(&exact, fault.n_f()), Ok)?;
        design_nominal(&exact, a.l, m, tau)?
    } else {
        let path = a.ident.as_ref().ok_or_else(|| Error::Config(format!("--ident is required for --mode {}", a.mode)))?;
        let ident = IdentificationResult::load(path)?;
        let designer = identified_designer(&ident, &fault, a.l, a.m.unwrap_or(ident.p), a.tau)?;
        if a.mode == Algorithm::Alg1 {
            designer.nominal.clone()
        } else {
            let tuning = match a.gamma_f2 {
                Some(gf) => designer.tuning_for(gf, a.gamma_z2, backend)?,
                None => {
                    let mut t = designer.default_tuning(backend)?;
                    if let Some(gz) = a.gamma_z2 {
                        t.gamma_z2 = gz;
                    }
                    t
                }
            };
            out_dir(&a.out)?;
            rhfe::io::write_json(&a.out.join("tuning.json"), &tuning)?;
            designer.solve_offline(tuning.gamma_f2, tuning.gamma_z2, backend)?
        }
    };
    gain.fault = Some(fault.to_string());
    out_dir(&a.out)?;
    let path = a.out.join("estimator.json");
    gain.save(&path)?;
    report(&path);
    Ok(())
}

fn estimate(a: EstimateArgs, backend: &ClarabelBackend) -> Result<()> {
    let gain = EstimatorGain::load(&a.estimator)?;
    let traj = TrajectoryDataset::read_csv(&a.data)?;
    if traj.n_y() != gain.n_y || traj.n_u() != gain.n_u {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has n_y = {}, n_u = {}; estimator expects {}, {}",
            traj.n_y(),
            traj.n_u(),
            gain.n_y,
            gain.n_u
        )));
    }
    out_dir(&a.out)?;
    let per_k = if a.mode == Some(Algorithm::Alg3) {
        if gain.kind != GainKind::OfflineRobust {
            return Err(Error::Config("online estimation needs an offline robust estimator (design --mode alg2|alg3)".into()));
        }
        let path = a.ident.as_ref().ok_or_else(|| Error::Config("--ident is required for --mode alg3".into()))?;
        let ident = IdentificationResult::load(path)?;
        let fault: FaultConfig = gain
            .fault
            .as_deref()
            .ok_or_else(|| Error::Format("estimator file does not record its fault channels".into()))?
            .parse()?;
        let gamma_f2 = gain.gamma_f2.ok_or_else(|| Error::Format("estimator file does not record gamma_f2".into()))?;
        let designer = identified_designer(&ident, &fault, gain.l, gain.m, Some(gain.tau))?;
        let online = OnlineEstimator::new(&designer, &gain, a.alpha, gamma_f2);
        let steps = online.run(&traj, backend)?;
        write_gate_log(&a.out.join("gate_log.csv"), &steps, gamma_f2)?;
        let mut v = vec![None; traj.len()];
        for s in steps {
            v[s.k] = Some(s.estimate);
        }
        v
    } else {
        gain.estimate_trajectory(&traj)?
    };
    let path = a.out.join("estimates.csv");
    write_estimates_csv(&path, &per_k, gain.tau, gain.n_f)?;
    report(&path);
    Ok(())
}

fn sweep(a: SweepArgs, backend: &ClarabelBackend) -> Result<()> {
    let mut cfg = a.exp.resolve()?;
    if a.points == 0 {
        return Err(Error::Config("--points must be positive".into()));
    }
    let d = bench::build_designs(&cfg, backend)?;
    out_dir(&cfg.out)?;
    let path = if a.gamma_f {
        cfg.fig4_points = a.points;
        if let Some(e) = a.etas {
            cfg.fig4_etas = e;
        }
        let path = cfg.out.join("gamma_f_sweep.csv");
        bench::write_fig4(&path, &bench::figure4(&cfg, &d, backend)?)?;
        path
    } else {
        let t = &d.tuning;
        let grid_f = linspace(t.gamma_f_min2, t.gamma_f2.max(t.gamma_f_min2), a.points);
        let grid_z = linspace(t.gamma_z_min2, t.gamma_z1_2, a.points);
        let rows = tradeoff_sweep(&d.designer.problem, &grid_f, &grid_z, backend);
        let path = cfg.out.join("tradeoff.csv");
        write_tradeoff_csv(&path, &rows)?;
        path
    };
    rhfe::io::write_json(&cfg.out.join("config.json"), &cfg)?;
    report(&path);
    Ok(())
}

fn bench_cmd(a: BenchArgs, backend: &ClarabelBackend) -> Result<()> {
    let mut cfg = a.exp.resolve()?;
    if let Some(m) = a.plant {
        cfg.model = m;
    }
    let figures: Vec<&str> = if a.figure == "all" { vec!["2", "3a", "3b", "4"] } else { vec![a.figure.as_str()] };
    for fig in figures {
        let dir = bench::figure_data(&cfg, fig, backend)?;
        report(&dir);
    }
    Ok(())
}
