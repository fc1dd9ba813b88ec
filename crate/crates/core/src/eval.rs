//! Accuracy and timing comparison of the solvers on a held-out test set.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admittance::build_admittance;
use crate::error::{Error, Result};
use crate::feeder::Feeder;
use crate::network::{Phase, PhaseIndex};
use crate::pf::{unstack, NonlinearConfig, NonlinearSolver};
use crate::regress::{
    train_lr_with_ridge, train_svr, ErrorModel, Exec, FeatureVector, Hyperparams, HybridSolver, Provenance, SvrParams,
    TargetKind, DEFAULT_RIDGE,
};
use crate::scenario::{
    corrupt_injections, generate_scenarios, inject_bad_data, measure, pick_bad_buses, stream, Dataset,
    ScenarioConfig, STREAM_EVAL_BAD_INPUT,
};
use crate::taylor::{rotation_vector, TaylorSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    Taylor,
    LrCorrected,
    HybridSvr,
    SvrDirect,
    NonlinearBadInput,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 5] = [
        EvalMethod::Taylor,
        EvalMethod::LrCorrected,
        EvalMethod::HybridSvr,
        EvalMethod::SvrDirect,
        EvalMethod::NonlinearBadInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMethod::Taylor => "taylor",
            EvalMethod::LrCorrected => "lr-corrected",
            EvalMethod::HybridSvr => "hybrid-svr",
            EvalMethod::SvrDirect => "svr-direct",
            EvalMethod::NonlinearBadInput => "nonlinear-bad-input",
        }
    }

    fn stage(self) -> &'static str {
        match self {
            EvalMethod::Taylor => "eval taylor",
            EvalMethod::LrCorrected => "eval lr-corrected",
            EvalMethod::HybridSvr => "eval hybrid-svr",
            EvalMethod::SvrDirect => "eval svr-direct",
            EvalMethod::NonlinearBadInput => "eval nonlinear-bad-input",
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRmse {
    pub phase: Phase,
    /// Voltage magnitude, p.u.
    pub magnitude: f64,
    /// Voltage angle, rad.
    pub angle: f64,
}

/// Angle difference wrapped to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Per-phase RMSE over all (sample, bus) pairs.
pub fn rmse_per_phase(
    predictions: &[Vec<Complex64>],
    truths: &[Vec<Complex64>],
    idx: &PhaseIndex,
) -> Result<Vec<PhaseRmse>> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            what: "prediction list",
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    let mut acc = [(0.0, 0.0, 0usize); 3];
    for (p, t) in predictions.iter().zip(truths) {
        for v in [p, t] {
            if v.len() != idx.len() {
                return Err(Error::Dimension {
                    what: "voltage vector",
                    expected: idx.len(),
                    got: v.len(),
                });
            }
        }
        for (k, (_, phase)) in idx.entries().iter().enumerate() {
            let slot = &mut acc[phase.index()];
            slot.0 += (p[k].norm() - t[k].norm()).powi(2);
            slot.1 += wrap_angle(p[k].arg() - t[k].arg()).powi(2);
            slot.2 += 1;
        }
    }
    Ok(Phase::ALL
        .into_iter()
        .filter(|p| idx.entries().iter().any(|(_, q)| q == p))
        .map(|phase| {
            let (sm, sa, n) = acc[phase.index()];
            let n = n.max(1) as f64;
            PhaseRmse {
                phase,
                magnitude: (sm / n).sqrt(),
                angle: (sa / n).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: EvalMethod,
    pub rmse: Vec<PhaseRmse>,
    /// Mean wall time of one online solve, s.
    pub mean_time_s: f64,
    pub solved: usize,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
}

impl MethodReport {
    pub fn max_magnitude_rmse(&self) -> f64 {
        self.rmse.iter().map(|r| r.magnitude).fold(0.0, f64::max)
    }

    pub fn magnitude_rmse(&self, phase: Phase) -> Option<f64> {
        self.rmse.iter().find(|r| r.phase == phase).map(|r| r.magnitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub fingerprint: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clean: usize,
    pub n_noisy: usize,
    pub n_bad: usize,
    pub redraws: usize,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feeder: String,
    pub n_phases: usize,
    pub data: DatasetSummary,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, m: EvalMethod) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_table(&self) -> String {
        let d = &self.data;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "feeder {}  M = {}  seed {}  train {} (clean {}, noisy {}, bad {})  test {}",
            self.feeder, self.n_phases, d.seed, d.n_train, d.n_clean, d.n_noisy, d.n_bad, d.n_test
        );
        let _ = writeln!(
            out,
            "{:<22} {:>5} {:>12} {:>12} {:>12} {:>8}",
            "method", "phase", "|V| rmse", "angle rmse", "time/solve", "failed"
        );
        for m in &self.methods {
            for (i, r) in m.rmse.iter().enumerate() {
                let (name, time, failed) = if i == 0 {
                    (m.method.name().to_string(), format!("{:.3e}", m.mean_time_s), m.failed.to_string())
                } else {
                    (String::new(), String::new(), String::new())
                };
                let phase = format!("{:?}", r.phase).to_lowercase();
                let _ = writeln!(
                    out,
                    "{:<22} {:>5} {:>12.3e} {:>12.3e} {:>12} {:>8}",
                    name, phase, r.magnitude, r.angle, time, failed
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<EvalMethod>,
    pub svr: SvrParams,
    pub ridge: f64,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: EvalMethod::ALL.to_vec(),
            svr: SvrParams::default(),
            ridge: DEFAULT_RIDGE,
            exec: Exec::default(),
        }
    }
}

/// Report plus the per-method voltage predictions it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub truths: Vec<Vec<Complex64>>,
    pub predictions: Vec<(EvalMethod, Vec<Vec<Complex64>>)>,
}

/// Trains whatever the requested methods need on `train` and scores them on
/// `test`. Only the online solve is timed.
pub fn evaluate(feeder: &Feeder, train: &Dataset, test: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    let sys = build_admittance(&feeder.network).map_err(Error::in_stage("build network"))?;
    let fp = sys.phase_index.fingerprint();
    for ds in [train, test] {
        if ds.header.fingerprint != fp {
            return Err(Error::in_stage("load data")(Error::FingerprintMismatch {
                model: ds.header.fingerprint.clone(),
                network: fp.clone(),
            }));
        }
    }
    let t = rotation_vector(&sys.phase_index);
    let truths: Vec<Vec<Complex64>> = test.samples.iter().map(|s| unstack(&s.x)).collect();

    let needs = |m: EvalMethod| cfg.methods.contains(&m);
    let lr = needs(EvalMethod::LrCorrected)
        .then(|| train_lr_with_ridge(&train.error_training_set(), TargetKind::LinearizationError, cfg.ridge))
        .transpose()
        .map_err(Error::in_stage("train lr"))?;
    let svr = needs(EvalMethod::HybridSvr)
        .then(|| train_svr(&train.error_training_set(), TargetKind::LinearizationError, &cfg.svr, cfg.exec))
        .transpose()
        .map_err(Error::in_stage("train svr"))?;
    let direct = needs(EvalMethod::SvrDirect)
        .then(|| train_svr(&train.voltage_training_set(), TargetKind::Voltage, &cfg.svr, cfg.exec))
        .transpose()
        .map_err(Error::in_stage("train svr-direct"))?;

    let mut methods = Vec::new();
    let mut predictions = Vec::new();
    for &method in &cfg.methods {
        let run = |model: Option<&ErrorModel>| -> Result<(Vec<Option<Vec<Complex64>>>, f64)> {
            match method {
                EvalMethod::Taylor => {
                    let solver = TaylorSolver::new(&sys, t.clone())?;
                    timed(test, |_, y| Ok(solver.solve(&y.to_op()?)?.v))
                }
                EvalMethod::NonlinearBadInput => nonlinear_bad_input(feeder, &sys, train, test),
                _ => {
                    let model = model.expect("model trained for requested method");
                    let solver = HybridSolver::new(&sys, t.clone(), model)?;
                    timed(test, |_, y| Ok(solver.solve(&y.to_op()?)?.v))
                }
            }
        };
        let model = match method {
            EvalMethod::LrCorrected => lr.as_ref(),
            EvalMethod::HybridSvr => svr.as_ref(),
            EvalMethod::SvrDirect => direct.as_ref(),
            _ => None,
        };
        let (preds, mean_time_s) = run(model).map_err(Error::in_stage(method.stage()))?;
        let failed = preds.iter().filter(|p| p.is_none()).count();
        let (p, tr): (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) = preds
            .iter()
            .zip(&truths)
            .filter_map(|(p, t)| p.clone().map(|p| (p, t.clone())))
            .unzip();
        let rmse = rmse_per_phase(&p, &tr, &sys.phase_index).map_err(Error::in_stage(method.stage()))?;
        methods.push(MethodReport {
            method,
            rmse,
            mean_time_s,
            solved: p.len(),
            failed,
            hyperparams: model.map(|m| m.hyperparams),
        });
        predictions.push((method, preds.into_iter().map(|p| p.unwrap_or_default()).collect()));
    }

    let report = EvalReport {
        feeder: feeder.name.clone(),
        n_phases: sys.n_phases(),
        data: DatasetSummary {
            seed: train.header.seed,
            fingerprint: fp,
            n_train: train.len(),
            n_test: test.len(),
            n_clean: train.count(Provenance::Clean),
            n_noisy: train.count(Provenance::Noisy),
            n_bad: train.count(Provenance::Bad),
            redraws: train.header.redraws + test.header.redraws,
            scenario: train.header.config.clone(),
        },
        methods,
    };
    Ok(Evaluation {
        report,
        truths,
        predictions,
    })
}

/// Runs `solve` on each test sample's measured features; failures are
/// recorded as `None`.
fn timed(
    test: &Dataset,
    mut solve: impl FnMut(usize, &FeatureVector) -> Result<Vec<Complex64>>,
) -> Result<(Vec<Option<Vec<Complex64>>>, f64)> {
    let mut out = Vec::with_capacity(test.len());
    let mut elapsed = 0.0;
    for s in &test.samples {
        let start = Instant::now();
        let v = solve(s.index, &s.y)?;
        elapsed += start.elapsed().as_secs_f64();
        out.push(Some(v));
    }
    Ok((out, elapsed / test.len().max(1) as f64))
}

/// The nonlinear solver given the test injections as a contaminated meter
/// would report them: measurement noise everywhere plus the systematic
/// bad-data error at `n_bad_nodes` random buses.
fn nonlinear_bad_input(
    feeder: &Feeder,
    sys: &crate::admittance::AdmittanceSystem,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Vec<Option<Vec<Complex64>>>, f64)> {
    let cfg = &train.header.config;
    let solver = NonlinearSolver::new(sys)?;
    let nl = NonlinearConfig::default();
    let mut out = Vec::with_capacity(test.len());
    let mut elapsed = 0.0;
    let mut solved = 0;
    for s in &test.samples {
        let mut rng = stream(cfg.seed, STREAM_EVAL_BAD_INPUT, s.index);
        let measured = measure(&s.op, &mut rng, cfg.noise_max);
        let mut y = FeatureVector::from_op(&measured);
        let buses = pick_bad_buses(&feeder.network, cfg.n_bad_nodes, &mut rng)?;
        corrupt_injections(&mut y, &feeder.network, &buses, cfg, &mut rng);
        let op = y.to_op()?;
        let start = Instant::now();
        let result = solver.solve(&op, &nl);
        elapsed += start.elapsed().as_secs_f64();
        match result {
            Ok(sol) => {
                solved += 1;
                out.push(Some(sol.v));
            }
            Err(_) => out.push(None),
        }
    }
    Ok((out, elapsed / solved.max(1) as f64))
}

/// Generate, optionally contaminate (when `bad_sample_fraction > 0`), train
/// and evaluate.
pub fn run_comparison(feeder: &Feeder, scenario: &ScenarioConfig, cfg: &EvalConfig) -> Result<Evaluation> {
    let (train, test) = generate_scenarios(feeder, scenario, cfg.exec).map_err(Error::in_stage("generate"))?;
    let train = inject_bad_data(&train, &feeder.network, scenario).map_err(Error::in_stage("contaminate"))?;
    evaluate(feeder, &train, &test, cfg)
}
