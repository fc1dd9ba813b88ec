//! Regression models for the linearization error and the hybrid solve.
//!
//! Features are `y = [Re V0; Im V0; P; Q]`. Every model is affine in the
//! standardized features: `ê = W · standardize(y) + b`, one weight row per
//! output.

mod lr;
mod standardize;
pub mod svr;

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceSystem;
use crate::error::{Error, Result};
use crate::pf::{self, Method, OperatingPoint, PfSolution};
use crate::taylor::{RotationVector, TaylorSolver};

pub use lr::DEFAULT_RIDGE;
pub use standardize::{Standardizer, MIN_SCALE};
pub use svr::{SvrFit, SvrParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn from_op(op: &OperatingPoint) -> Self {
        let mut y = Vec::with_capacity(6 + 2 * op.s.len());
        y.extend(op.v0.iter().map(|v| v.re));
        y.extend(op.v0.iter().map(|v| v.im));
        y.extend(op.s.iter().map(|s| s.re));
        y.extend(op.s.iter().map(|s| s.im));
        FeatureVector(y)
    }

    /// Inverse of [`FeatureVector::from_op`].
    pub fn to_op(&self) -> Result<OperatingPoint> {
        let n = self.0.len();
        if n < 6 || !(n - 6).is_multiple_of(2) {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: 6,
                got: n,
            });
        }
        let m = (n - 6) / 2;
        let y = &self.0;
        let v0 = [0, 1, 2].map(|p| Complex64::new(y[p], y[3 + p]));
        let s = (0..m).map(|k| Complex64::new(y[6 + k], y[6 + m + k])).collect();
        Ok(OperatingPoint { v0, s })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clean,
    Noisy,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub y: FeatureVector,
    pub target: Vec<f64>,
    pub flag: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    /// Fingerprint of the network the samples were generated on.
    pub fingerprint: String,
}

impl TrainingSet {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        TrainingSet {
            samples: Vec::new(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn push(&mut self, y: FeatureVector, target: Vec<f64>, flag: Provenance) {
        self.samples.push(TrainingSample { y, target, flag });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let first = self.samples.first().ok_or(Error::EmptyTrainingSet)?;
        let (d, k) = (first.y.len(), first.target.len());
        for s in &self.samples {
            if s.y.len() != d || s.target.len() != k {
                return Err(Error::Dimension {
                    what: "training sample",
                    expected: d + k,
                    got: s.y.len() + s.target.len(),
                });
            }
        }
        Ok((d, k))
    }
}

/// Per-feature mean and population standard deviation over a training set.
pub fn standardize_fit(ts: &TrainingSet) -> Result<Standardizer> {
    let rows: Vec<&[f64]> = ts.samples.iter().map(|s| s.y.0.as_slice()).collect();
    Standardizer::fit(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lr,
    Svr,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lr => "lr",
            ModelKind::Svr => "svr",
        })
    }
}

/// What the model's outputs represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `x − x_tay`; used by the hybrid solve.
    LinearizationError,
    /// `x` itself; the purely data-driven baseline.
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub c: Option<f64>,
    pub epsilon: Option<f64>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub kind: ModelKind,
    pub target: TargetKind,
    pub hyperparams: Hyperparams,
    pub standardizer: Standardizer,
    pub n_outputs: usize,
    pub n_features: usize,
    /// Row-major `n_outputs x n_features`, acting on standardized features.
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
    pub fingerprint: String,
}

impl ErrorModel {
    pub fn zero(n_outputs: usize, n_features: usize, fingerprint: impl Into<String>) -> Self {
        ErrorModel {
            kind: ModelKind::Lr,
            target: TargetKind::LinearizationError,
            hyperparams: Hyperparams {
                c: None,
                epsilon: None,
                ridge: None,
            },
            standardizer: Standardizer::identity(n_features),
            n_outputs,
            n_features,
            weights: vec![0.0; n_outputs * n_features],
            offsets: vec![0.0; n_outputs],
            fingerprint: fingerprint.into(),
        }
    }

    pub fn weight_row(&self, output: usize) -> &[f64] {
        &self.weights[output * self.n_features..(output + 1) * self.n_features]
    }

    /// Coefficients in the original feature units: `ê = W_raw y + b_raw`.
    pub fn raw_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let mut w = Vec::with_capacity(self.weights.len());
        let mut b = Vec::with_capacity(self.n_outputs);
        for o in 0..self.n_outputs {
            let row = self.weight_row(o);
            let mut off = self.offsets[o];
            for ((wi, m), s) in row.iter().zip(&self.standardizer.mean).zip(&self.standardizer.scale) {
                w.push(wi / s);
                off -= wi * m / s;
            }
            b.push(off);
        }
        (w, b)
    }

    pub fn predict(&self, y: &FeatureVector) -> Result<Vec<f64>> {
        if y.len() != self.n_features {
            return Err(Error::Dimension {
                what: "feature vector",
                expected: self.n_features,
                got: y.len(),
            });
        }
        let z = self.standardizer.apply(&y.0);
        Ok((0..self.n_outputs)
            .map(|o| {
                self.weight_row(o).iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + self.offsets[o]
            })
            .collect())
    }

    pub fn check_network(&self, sys: &AdmittanceSystem) -> Result<()> {
        let fp = sys.phase_index.fingerprint();
        if fp != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint.clone(),
                network: fp,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: ErrorModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.weights.len() != model.n_outputs * model.n_features
            || model.offsets.len() != model.n_outputs
            || model.standardizer.dim() != model.n_features
        {
            return Err(Error::Format("model dimensions are inconsistent".into()));
        }
        Ok(model)
    }
}

pub fn predict_errors(model: &ErrorModel, y: &FeatureVector) -> Result<Vec<f64>> {
    model.predict(y)
}

fn standardized_rows(ts: &TrainingSet, st: &Standardizer) -> Vec<Vec<f64>> {
    ts.samples.iter().map(|s| st.apply(&s.y.0)).collect()
}

pub fn train_lr(ts: &TrainingSet, target: TargetKind) -> Result<ErrorModel> {
    train_lr_with_ridge(ts, target, DEFAULT_RIDGE)
}

pub fn train_lr_with_ridge(ts: &TrainingSet, target: TargetKind, ridge: f64) -> Result<ErrorModel> {
    let (d, k) = ts.dims()?;
    let st = standardize_fit(ts)?;
    let z = standardized_rows(ts, &st);
    let targets: Vec<Vec<f64>> = ts.samples.iter().map(|s| s.target.clone()).collect();
    let (weights, offsets) = lr::fit(&z, &targets, ridge)?;
    Ok(ErrorModel {
        kind: ModelKind::Lr,
        target,
        hyperparams: Hyperparams {
            c: None,
            epsilon: None,
            ridge: Some(ridge),
        },
        standardizer: st,
        n_outputs: k,
        n_features: d,
        weights,
        offsets,
        fingerprint: ts.fingerprint.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Serial,
    #[default]
    Parallel,
}

/// Per-output ε-SVR over standardized features and targets. Targets are
/// centered by their median and scaled by their MAD, so `epsilon` and `c`
/// are relative to the spread of the bulk of the data.
pub fn train_svr(ts: &TrainingSet, target: TargetKind, params: &SvrParams, exec: Exec) -> Result<ErrorModel> {
    params.validate()?;
    let (d, k) = ts.dims()?;
    let st = standardize_fit(ts)?;
    let z = standardized_rows(ts, &st);
    let target_rows: Vec<&[f64]> = ts.samples.iter().map(|s| s.target.as_slice()).collect();
    // robust so that gross outliers do not stretch the tube
    let tst = Standardizer::fit_robust(&target_rows)?;

    let fit_one = |o: usize| -> Result<SvrFit> {
        let t: Vec<f64> = ts
            .samples
            .iter()
            .map(|s| (s.target[o] - tst.mean[o]) / tst.scale[o])
            .collect();
        svr::fit_output_indexed(&z, &t, params, o)
    };
    let fits: Vec<SvrFit> = match exec {
        Exec::Serial => (0..k).map(fit_one).collect::<Result<_>>()?,
        Exec::Parallel => (0..k).into_par_iter().map(fit_one).collect::<Result<_>>()?,
    };

    let mut weights = Vec::with_capacity(k * d);
    let mut offsets = Vec::with_capacity(k);
    for (o, fit) in fits.iter().enumerate() {
        let s = tst.scale[o];
        weights.extend(fit.w.iter().map(|w| w * s));
        offsets.push(fit.b * s + tst.mean[o]);
    }
    Ok(ErrorModel {
        kind: ModelKind::Svr,
        target,
        hyperparams: Hyperparams {
            c: Some(params.c),
            epsilon: Some(params.epsilon),
            ridge: None,
        },
        standardizer: st,
        n_outputs: k,
        n_features: d,
        weights,
        offsets,
        fingerprint: ts.fingerprint.clone(),
    })
}

/// Online solver: Taylor solution plus a regression correction, or a
/// purely data-driven voltage map.
pub struct HybridSolver<'a> {
    taylor: TaylorSolver<'a>,
    model: &'a ErrorModel,
}

impl<'a> HybridSolver<'a> {
    pub fn new(sys: &'a AdmittanceSystem, t: RotationVector, model: &'a ErrorModel) -> Result<Self> {
        model.check_network(sys)?;
        let m = sys.n_phases();
        if model.n_outputs != 2 * m || model.n_features != 6 + 2 * m {
            return Err(Error::Dimension {
                what: "model outputs",
                expected: 2 * m,
                got: model.n_outputs,
            });
        }
        Ok(HybridSolver {
            taylor: TaylorSolver::new(sys, t)?,
            model,
        })
    }

    pub fn method(&self) -> Method {
        match (self.model.target, self.model.kind) {
            (TargetKind::Voltage, _) => Method::SvrDirect,
            (TargetKind::LinearizationError, ModelKind::Svr) => Method::Hybrid,
            (TargetKind::LinearizationError, ModelKind::Lr) => Method::LrCorrected,
        }
    }

    pub fn solve(&self, op: &OperatingPoint) -> Result<PfSolution> {
        let y = FeatureVector::from_op(op);
        let correction = self.model.predict(&y)?;
        let x: Vec<f64> = match self.model.target {
            TargetKind::Voltage => correction,
            TargetKind::LinearizationError => {
                let tay = self.taylor.solve(op)?;
                tay.stacked().iter().zip(&correction).map(|(x, e)| x + e).collect()
            }
        };
        let v = pf::unstack(&x);
        let residual = pf::max_norm(&pf::power_residual(self.taylor.system(), op, &v)?);
        Ok(PfSolution {
            v,
            method: self.method(),
            iterations: 0,
            residual,
        })
    }
}

/// `x̂ = x_tay + ê`.
pub fn hybrid_solve(
    sys: &AdmittanceSystem,
    op: &OperatingPoint,
    t: &RotationVector,
    model: &ErrorModel,
) -> Result<PfSolution> {
    HybridSolver::new(sys, t.clone(), model)?.solve(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    fn linear_set(n: usize, noise: f64) -> (TrainingSet, Vec<[f64; 3]>, [f64; 2]) {
        let w = vec![[1.5, -2.0, 0.5], [0.0, 3.0, -1.0]];
        let b = [0.25, -4.0];
        let mut seed = 7;
        let mut ts = TrainingSet::new("test");
        for _ in 0..n {
            let y: Vec<f64> = (0..3).map(|_| 2.0 * lcg(&mut seed)).collect();
            let t: Vec<f64> = (0..2)
                .map(|o| w[o].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() + b[o] + noise * lcg(&mut seed))
                .collect();
            ts.push(FeatureVector(y), t, Provenance::Clean);
        }
        (ts, w, b)
    }

    #[test]
    fn lr_recovers_exact_generator() {
        let (ts, w, b) = linear_set(60, 0.0);
        let model = train_lr(&ts, TargetKind::LinearizationError).unwrap();
        let (wr, br) = model.raw_coefficients();
        for o in 0..2 {
            for i in 0..3 {
                assert!((wr[o * 3 + i] - w[o][i]).abs() < 1e-6);
            }
            assert!((br[o] - b[o]).abs() < 1e-6);
        }
        for s in &ts.samples {
            let p = model.predict(&s.y).unwrap();
            for (a, b) in p.iter().zip(&s.target) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lr_residuals_are_orthogonal_to_features() {
        let (ts, _, _) = linear_set(80, 0.3);
        let model = train_lr(&ts, TargetKind::LinearizationError).unwrap();
        for o in 0..2 {
            let mut acc = [0.0; 4];
            for s in &ts.samples {
                let r = s.target[o] - model.predict(&s.y).unwrap()[o];
                for (a, y) in acc.iter_mut().zip(&s.y.0[..3]) {
                    *a += r * y;
                }
                acc[3] += r;
            }
            for a in acc {
                assert!(a.abs() < 1e-6, "{acc:?}");
            }
        }
    }

    #[test]
    fn zero_model_returns_offsets() {
        let mut m = ErrorModel::zero(2, 3, "x");
        m.offsets = vec![0.5, -1.0];
        let p = m.predict(&FeatureVector(vec![9.0, -3.0, 1.0])).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert!(m.predict(&FeatureVector(vec![1.0])).is_err());
    }

    #[test]
    fn predict_is_affine() {
        let (ts, _, _) = linear_set(50, 0.2);
        let model = train_svr(&ts, TargetKind::LinearizationError, &SvrParams::default(), Exec::Serial).unwrap();
        let y1 = FeatureVector(vec![0.3, -0.7, 1.1]);
        let y2 = FeatureVector(vec![-1.2, 0.4, 0.05]);
        let alpha = 0.3;
        let mix = FeatureVector(y1.0.iter().zip(&y2.0).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect());
        let p1 = model.predict(&y1).unwrap();
        let p2 = model.predict(&y2).unwrap();
        let pm = model.predict(&mix).unwrap();
        for o in 0..2 {
            assert!((pm[o] - (alpha * p1[o] + (1.0 - alpha) * p2[o])).abs() < 1e-12);
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let (ts, _, _) = linear_set(20, 0.1);
        let model = train_lr(&ts, TargetKind::Voltage).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(ErrorModel::load(&path).unwrap(), model);
    }
}
