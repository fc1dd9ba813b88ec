//! Synthetic operating-point datasets.
//!
//! Each sample perturbs the feeder's base loads and DER output per phase,
//! solves the nonlinear power flow for the true voltages, and records noisy
//! measured injections as features together with the linearization error of
//! the true operating point. Random draws come from a counter-based stream
//! keyed by `(seed, split, sample index)`, so serial and parallel generation
//! produce identical datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admittance::build_admittance;
use crate::error::{Error, Result};
use crate::feeder::Feeder;
use crate::network::PhasedNetwork;
use crate::pf::{NonlinearConfig, NonlinearSolver, OperatingPoint};
use crate::regress::{Exec, FeatureVector, Provenance, TrainingSet};
use crate::taylor::{error_between, rotation_vector, TaylorSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Half-width of the uniform per-phase load multiplier around 1.
    pub load_variation: f64,
    /// Half-width of the uniform per-phase DER multiplier around 1.
    pub der_variation: f64,
    /// Bound of the relative measurement noise on P and Q (training only).
    /// Noise is Gaussian with σ = bound / 3, truncated at the bound.
    pub noise_max: f64,
    pub bad_sample_fraction: f64,
    pub n_bad_nodes: usize,
    pub bad_voltage_low: f64,
    pub bad_voltage_high: f64,
    /// Bad power measurements are off by this multiple of `noise_max`.
    pub bad_power_factor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            n_train: 4000,
            n_test: 1000,
            load_variation: 0.10,
            der_variation: 0.20,
            noise_max: 0.10,
            bad_sample_fraction: 0.10,
            n_bad_nodes: 3,
            bad_voltage_low: 0.0,
            bad_voltage_high: 3.0,
            bad_power_factor: 1.5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("load_variation", self.load_variation),
            ("der_variation", self.der_variation),
            ("noise_max", self.noise_max),
            ("bad_sample_fraction", self.bad_sample_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        if self.bad_sample_fraction > 0.0 && self.n_bad_nodes == 0 {
            return Err(Error::Config("n_bad_nodes must be positive".into()));
        }
        if !(self.bad_voltage_high > 1.0) || !(self.bad_voltage_low >= 0.0) {
            return Err(Error::Config("bad voltage thresholds must satisfy low >= 0 and high > 1".into()));
        }
        if !(self.bad_power_factor >= 0.0) {
            return Err(Error::Config("bad_power_factor must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub flag: Provenance,
    /// True injections.
    pub op: OperatingPoint,
    /// Measured features.
    pub y: FeatureVector,
    /// Recorded voltages `[Re V; Im V]`.
    pub x: Vec<f64>,
    /// Regression target `x − x_tay(op)`.
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub split: Split,
    pub seed: u64,
    pub fingerprint: String,
    pub n_phases: usize,
    pub redraws: usize,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Features paired with linearization errors.
    pub fn error_training_set(&self) -> TrainingSet {
        let mut ts = TrainingSet::new(self.header.fingerprint.clone());
        for s in &self.samples {
            ts.push(s.y.clone(), s.e.clone(), s.flag);
        }
        ts
    }

    /// Features paired with recorded voltages.
    pub fn voltage_training_set(&self) -> TrainingSet {
        let mut ts = TrainingSet::new(self.header.fingerprint.clone());
        for s in &self.samples {
            ts.push(s.y.clone(), s.x.clone(), s.flag);
        }
        ts
    }

    pub fn count(&self, flag: Provenance) -> usize {
        self.samples.iter().filter(|s| s.flag == flag).count()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut out,
            &HeaderLine {
                header: self.header.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("dataset file is empty".into()))??;
        let HeaderLine { header } = serde_json::from_str(&first)
            .map_err(|e| Error::Format(format!("first line must be the header: {e}")))?;
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("sample line {}: {e}", n + 2)))?;
            if s.x.len() != 2 * header.n_phases || s.e.len() != 2 * header.n_phases {
                return Err(Error::Format(format!("sample line {}: wrong target length", n + 2)));
            }
            samples.push(s);
        }
        Ok(Dataset { header, samples })
    }
}

/// Independent random stream per purpose and sample.
pub(crate) fn stream(seed: u64, purpose: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | index as u64);
    rng
}

pub(crate) const STREAM_TRAIN: u64 = 1;
pub(crate) const STREAM_TEST: u64 = 2;
pub(crate) const STREAM_BAD_SELECT: u64 = 3;
pub(crate) const STREAM_BAD_SAMPLE: u64 = 4;
pub(crate) const STREAM_EVAL_BAD_INPUT: u64 = 5;

/// Truncated zero-mean Gaussian with σ = bound / 3.
pub(crate) fn truncated_noise(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, bound / 3.0).expect("positive sigma");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= bound {
            return x;
        }
    }
}

/// Injections as a meter would report them: each P and Q scaled by an
/// independent relative error.
pub(crate) fn measure(op: &OperatingPoint, rng: &mut impl Rng, noise_max: f64) -> OperatingPoint {
    let s = op
        .s
        .iter()
        .map(|s| {
            let dp = truncated_noise(rng, noise_max);
            let dq = truncated_noise(rng, noise_max);
            Complex64::new(s.re * (1.0 + dp), s.im * (1.0 + dq))
        })
        .collect();
    OperatingPoint { v0: op.v0, s }
}

const MAX_ATTEMPTS_PER_SAMPLE: usize = 50;

struct Drawn {
    sample: Sample,
    failures: usize,
}

pub fn generate_scenarios(feeder: &Feeder, cfg: &ScenarioConfig, exec: Exec) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let sys = build_admittance(&feeder.network)?;
    let solver = NonlinearSolver::new(&sys)?;
    let taylor = TaylorSolver::new(&sys, rotation_vector(&sys.phase_index))?;
    let nl_cfg = NonlinearConfig::default();
    let m = feeder.n_phases();

    let draw = |split: Split, index: usize| -> Result<Drawn> {
        let purpose = match split {
            Split::Train => STREAM_TRAIN,
            Split::Test => STREAM_TEST,
        };
        let mut rng = stream(cfg.seed, purpose, index);
        let mut failures = 0;
        loop {
            let load_mult: Vec<f64> = (0..m)
                .map(|_| rng.random_range(-1.0..=1.0) * cfg.load_variation + 1.0)
                .collect();
            let der_mult: Vec<f64> = (0..m)
                .map(|_| rng.random_range(-1.0..=1.0) * cfg.der_variation + 1.0)
                .collect();
            let op = feeder.operating_point(|k| load_mult[k], |k| der_mult[k]);
            let solved = solver.solve(&op, &nl_cfg).and_then(|exact| Ok((taylor.solve(&op)?, exact)));
            let (approx, exact) = match solved {
                Ok(pair) => pair,
                Err(_) if failures + 1 < MAX_ATTEMPTS_PER_SAMPLE => {
                    failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let noisy = split == Split::Train && cfg.noise_max > 0.0;
            let measured = if noisy {
                measure(&op, &mut rng, cfg.noise_max)
            } else {
                op.clone()
            };
            let sample = Sample {
                index,
                flag: if noisy { Provenance::Noisy } else { Provenance::Clean },
                y: FeatureVector::from_op(&measured),
                x: exact.stacked(),
                e: error_between(&exact, &approx).0,
                op,
            };
            return Ok(Drawn { sample, failures });
        }
    };

    let run = |split: Split, n: usize| -> Result<Vec<Drawn>> {
        match exec {
            Exec::Serial => (0..n).map(|i| draw(split, i)).collect(),
            Exec::Parallel => (0..n).into_par_iter().map(|i| draw(split, i)).collect(),
        }
    };
    let train = run(Split::Train, cfg.n_train)?;
    let test = run(Split::Test, cfg.n_test)?;

    let failures: usize = train.iter().chain(&test).map(|d| d.failures).sum();
    let attempts = cfg.n_train + cfg.n_test + failures;
    if failures as f64 > 0.01 * attempts as f64 {
        return Err(Error::TooManyFailures { failures, attempts });
    }

    let header = |split: Split, drawn: &[Drawn]| DatasetHeader {
        split,
        seed: cfg.seed,
        fingerprint: sys.phase_index.fingerprint(),
        n_phases: m,
        redraws: drawn.iter().map(|d| d.failures).sum(),
        config: cfg.clone(),
    };
    let train_ds = Dataset {
        header: header(Split::Train, &train),
        samples: train.into_iter().map(|d| d.sample).collect(),
    };
    let test_ds = Dataset {
        header: header(Split::Test, &test),
        samples: test.into_iter().map(|d| d.sample).collect(),
    };
    Ok((train_ds, test_ds))
}

/// Corrupt power measurements at `buses`: each bus gets one systematic
/// relative error of `±bad_power_factor · noise_max` on both P and Q.
pub(crate) fn corrupt_injections(
    y: &mut FeatureVector,
    net: &PhasedNetwork,
    buses: &[usize],
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
) {
    let m = net.n_phases();
    let magnitude = cfg.bad_power_factor * cfg.noise_max;
    for &bus in buses {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for k in net.phase_index().bus_indices(bus) {
            y.0[6 + k] *= 1.0 + sign * magnitude;
            y.0[6 + m + k] *= 1.0 + sign * magnitude;
        }
    }
}

pub(crate) fn pick_bad_buses(net: &PhasedNetwork, n_bad: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = net.buses().iter().map(|b| b.id).filter(|&id| id != 0).collect();
    if n_bad > candidates.len() {
        return Err(Error::Config(format!(
            "n_bad_nodes = {n_bad} exceeds the {} non-slack buses",
            candidates.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(rng, candidates.len(), n_bad)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Contaminate `⌊bad_sample_fraction · M⌋` training samples: at
/// `n_bad_nodes` random buses per sample the recorded voltage magnitudes
/// are replaced by values near zero or above `bad_voltage_high` (angles
/// kept) and the measured injections get a systematic error.
pub fn inject_bad_data(ds: &Dataset, net: &PhasedNetwork, cfg: &ScenarioConfig) -> Result<Dataset> {
    let n_select = (cfg.bad_sample_fraction * ds.len() as f64).floor() as usize;
    if n_select == 0 {
        return Ok(ds.clone());
    }
    let m = net.n_phases();
    if ds.header.n_phases != m || ds.header.fingerprint != net.phase_index().fingerprint() {
        return Err(Error::FingerprintMismatch {
            model: ds.header.fingerprint.clone(),
            network: net.phase_index().fingerprint(),
        });
    }
    let n_buses = net.buses().len() - 1;
    if cfg.n_bad_nodes > n_buses {
        return Err(Error::Config(format!(
            "n_bad_nodes = {} exceeds the {n_buses} non-slack buses",
            cfg.n_bad_nodes
        )));
    }

    let mut out = ds.clone();
    let mut select_rng = stream(cfg.seed, STREAM_BAD_SELECT, 0);
    let mut chosen: Vec<usize> = index::sample(&mut select_rng, ds.len(), n_select).into_vec();
    chosen.sort_unstable();

    for pos in chosen {
        let sample = &mut out.samples[pos];
        let mut rng = stream(cfg.seed, STREAM_BAD_SAMPLE, sample.index);
        let buses = pick_bad_buses(net, cfg.n_bad_nodes, &mut rng)?;
        for &bus in &buses {
            let low = rng.random_bool(0.5);
            for k in net.phase_index().bus_indices(bus) {
                let magnitude = if low {
                    rng.random_range(cfg.bad_voltage_low..=cfg.bad_voltage_low + 0.05)
                } else {
                    rng.random_range(cfg.bad_voltage_high..=cfg.bad_voltage_high + 0.5)
                };
                let (re, im) = (sample.x[k], sample.x[m + k]);
                let angle = im.atan2(re);
                let (new_re, new_im) = (magnitude * angle.cos(), magnitude * angle.sin());
                sample.e[k] += new_re - re;
                sample.e[m + k] += new_im - im;
                sample.x[k] = new_re;
                sample.x[m + k] = new_im;
            }
        }
        corrupt_injections(&mut sample.y, net, &buses, cfg, &mut rng);
        sample.flag = Provenance::Bad;
    }
    Ok(out)
}
