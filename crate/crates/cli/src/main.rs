use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ubpf_core::eval::{evaluate, run_comparison, EvalConfig, EvalMethod, Evaluation};
use ubpf_core::feeder::{synthetic_feeder, SyntheticSpec};
use ubpf_core::pf::{NonlinearConfig, NonlinearSolver};
use ubpf_core::regress::{train_lr_with_ridge, train_svr, DEFAULT_RIDGE};
use ubpf_core::scenario::{generate_scenarios, inject_bad_data, Dataset, ScenarioConfig};
use ubpf_core::{
    build_admittance, rotation_vector, ErrorModel, Exec, Feeder, FeederFile, HybridSolver, OperatingPoint, SvrParams,
    TargetKind, TaylorSolver,
};

/// Unbalanced distribution power flow: nonlinear, linearized and
/// regression-corrected solvers.
#[derive(Parser)]
#[command(name = "ubpf", version)]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    serial: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a feeder file for structural problems.
    Validate { feeder: String },

    /// Solve one operating point.
    Solve {
        feeder: String,
        /// Operating point JSON (`v0`, `s` as [re, im] pairs). Defaults to the
        /// feeder's nominal loading.
        #[arg(long)]
        op: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nonlinear")]
        method: SolveMethod,
        /// Trained model, required for `hybrid`.
        #[arg(long)]
        model: Option<PathBuf>,
    },

    /// Generate train/test datasets.
    Gen {
        feeder: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Fit a regression model on a dataset file.
    Train {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "svr")]
        kind: Kind,
        /// Learn voltages directly instead of the linearization error.
        #[arg(long)]
        direct: bool,
        #[arg(long = "C", default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Score solvers on a generated test set.
    Eval {
        feeder: String,
        /// Directory holding train.jsonl and test.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "taylor,lr-corrected,hybrid-svr,svr-direct,nonlinear-bad-input")]
        methods: Vec<String>,
        #[arg(long = "C", default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-phase voltage profile of the first test sample, one column per method.
        #[arg(long)]
        profile_csv: Option<PathBuf>,
    },

    /// Generate, contaminate, train and score in one run.
    Compare {
        feeder: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "taylor,lr-corrected,hybrid-svr,svr-direct,nonlinear-bad-input")]
        methods: Vec<String>,
        #[arg(long = "C", default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        profile_csv: Option<PathBuf>,
    },

    /// Write a random radial feeder of roughly 123-bus size.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMethod {
    Nonlinear,
    Taylor,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lr,
    Svr,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.serial { Exec::Serial } else { Exec::Parallel };
    match cli.command {
        Command::Validate { feeder } => validate(&feeder),
        Command::Solve {
            feeder,
            op,
            method,
            model,
        } => solve(&feeder, op.as_deref(), method, model.as_deref()),
        Command::Gen {
            feeder,
            config,
            out,
            seed,
        } => {
            let feeder = load_feeder(&feeder)?;
            let cfg = scenario_config(config.as_deref(), seed)?;
            let (train, test) = generate_scenarios(&feeder, &cfg, exec).context("generate")?;
            let train = inject_bad_data(&train, &feeder.network, &cfg).context("contaminate")?;
            fs::create_dir_all(&out).with_context(|| format!("write: {}", out.display()))?;
            train.write_jsonl(out.join("train.jsonl")).context("write")?;
            test.write_jsonl(out.join("test.jsonl")).context("write")?;
            println!(
                "wrote {} training and {} test samples to {}",
                train.len(),
                test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            kind,
            direct,
            c,
            eps,
            ridge,
            out,
        } => {
            let ds = Dataset::read_jsonl(&dataset).with_context(|| format!("load data: {}", dataset.display()))?;
            let (ts, target) = if direct {
                (ds.voltage_training_set(), TargetKind::Voltage)
            } else {
                (ds.error_training_set(), TargetKind::LinearizationError)
            };
            let model = match kind {
                Kind::Lr => train_lr_with_ridge(&ts, target, ridge),
                Kind::Svr => train_svr(&ts, target, &svr_params(c, eps), exec),
            }
            .context("train")?;
            model.save(&out).with_context(|| format!("write: {}", out.display()))?;
            println!("trained {} model with {} outputs on {} samples", model.kind, model.n_outputs, ts.len());
            Ok(())
        }
        Command::Eval {
            feeder,
            data,
            methods,
            c,
            eps,
            report,
            profile_csv,
        } => {
            let feeder = load_feeder(&feeder)?;
            let train = Dataset::read_jsonl(data.join("train.jsonl")).context("load data: train.jsonl")?;
            let test = Dataset::read_jsonl(data.join("test.jsonl")).context("load data: test.jsonl")?;
            let cfg = eval_config(&methods, c, eps, exec)?;
            let ev = evaluate(&feeder, &train, &test, &cfg)?;
            emit(&feeder, &ev, report.as_deref(), profile_csv.as_deref())
        }
        Command::Compare {
            feeder,
            config,
            methods,
            c,
            eps,
            seed,
            report,
            profile_csv,
        } => {
            let feeder = load_feeder(&feeder)?;
            let scenario = scenario_config(config.as_deref(), seed)?;
            let cfg = eval_config(&methods, c, eps, exec)?;
            let ev = run_comparison(&feeder, &scenario, &cfg)?;
            emit(&feeder, &ev, report.as_deref(), profile_csv.as_deref())
        }
        Command::Synth { seed, out } => {
            let file = synthetic_feeder(&SyntheticSpec::ieee123_scale(seed));
            let feeder = file.clone().into_feeder().context("synth")?;
            fs::write(&out, serde_json::to_string_pretty(&file)?).with_context(|| format!("write: {}", out.display()))?;
            println!("wrote {} buses, {} phases to {}", file.buses.len(), feeder.n_phases(), out.display());
            Ok(())
        }
    }
}

/// A path, or `builtin:four-bus` / `builtin:ieee13`.
fn load_feeder(spec: &str) -> Result<Feeder> {
    match spec {
        "builtin:four-bus" => Ok(Feeder::four_bus()),
        "builtin:ieee13" => Ok(Feeder::ieee13_like()),
        path => Feeder::load(path).with_context(|| format!("load feeder: {path}")),
    }
}

fn validate(spec: &str) -> Result<()> {
    let network = match spec {
        "builtin:four-bus" | "builtin:ieee13" => load_feeder(spec)?.network,
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("load feeder: {path}"))?;
            let file: FeederFile = serde_json::from_str(&text).with_context(|| format!("load feeder: {path}"))?;
            file.to_network().context("validate")?
        }
    };
    let report = network.validate();
    if !report.is_ok() {
        for v in &report.violations {
            eprintln!("  {v}");
        }
        bail!("validate: {} violation(s) in {spec}", report.violations.len());
    }
    // loads and DERs are checked against the phase layout here
    load_feeder(spec).context("validate")?;
    println!(
        "ok: {} buses, {} lines, {} phases, fingerprint {}",
        network.buses().len(),
        network.lines().len(),
        network.n_phases(),
        network.phase_index().fingerprint()
    );
    Ok(())
}

fn solve(spec: &str, op: Option<&Path>, method: SolveMethod, model: Option<&Path>) -> Result<()> {
    let feeder = load_feeder(spec)?;
    let op = match op {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("load op: {}", path.display()))?;
            serde_json::from_str::<OperatingPoint>(&text).with_context(|| format!("load op: {}", path.display()))?
        }
        None => feeder.base_operating_point(),
    };
    let sys = build_admittance(&feeder.network).context("build network")?;
    let t = rotation_vector(&sys.phase_index);
    let sol = match method {
        SolveMethod::Nonlinear => NonlinearSolver::new(&sys)
            .and_then(|s| s.solve(&op, &NonlinearConfig::default()))
            .context("solve nonlinear")?,
        SolveMethod::Taylor => TaylorSolver::new(&sys, t).and_then(|s| s.solve(&op)).context("solve taylor")?,
        SolveMethod::Hybrid => {
            let path = model.context("solve hybrid: --model is required")?;
            let model = ErrorModel::load(path).with_context(|| format!("load model: {}", path.display()))?;
            HybridSolver::new(&sys, t, &model)
                .and_then(|s| s.solve(&op))
                .context("solve hybrid")?
        }
    };
    println!("{}", serde_json::to_string_pretty(&sol)?);
    Ok(())
}

fn scenario_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("load config: {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("load config: {}", p.display()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().context("load config")?;
    Ok(cfg)
}

fn svr_params(c: f64, eps: f64) -> SvrParams {
    SvrParams {
        c,
        epsilon: eps,
        ..SvrParams::default()
    }
}

fn eval_config(methods: &[String], c: f64, eps: f64, exec: Exec) -> Result<EvalConfig> {
    let methods = methods
        .iter()
        .map(|m| m.trim().parse::<EvalMethod>())
        .collect::<Result<Vec<_>, _>>()
        .context("parse methods")?;
    Ok(EvalConfig {
        methods,
        svr: svr_params(c, eps),
        exec,
        ..EvalConfig::default()
    })
}

fn emit(feeder: &Feeder, ev: &Evaluation, report: Option<&Path>, profile: Option<&Path>) -> Result<()> {
    print!("{}", ev.report.render_table());
    if let Some(path) = report {
        fs::write(path, ev.report.to_json()?).with_context(|| format!("write: {}", path.display()))?;
    }
    if let Some(path) = profile {
        fs::write(path, profile_csv(feeder, ev)).with_context(|| format!("write: {}", path.display()))?;
    }
    Ok(())
}

fn profile_csv(feeder: &Feeder, ev: &Evaluation) -> String {
    let mut out = String::from("bus,phase,truth_mag,truth_ang");
    for (m, _) in &ev.predictions {
        out.push_str(&format!(",{m}_mag,{m}_ang"));
    }
    out.push('\n');
    let Some(truth) = ev.truths.first() else {
        return out;
    };
    for (k, (bus, phase)) in feeder.network.phase_index().entries().iter().enumerate() {
        out.push_str(&format!("{bus},{},{},{}", phase.letter(), truth[k].norm(), truth[k].arg()));
        for (_, preds) in &ev.predictions {
            match preds.first().and_then(|p| p.get(k)) {
                Some(v) => out.push_str(&format!(",{},{}", v.norm(), v.arg())),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
