//! Nonlinear AC power flow used as ground truth.
//!
//! Solves `S = V ⊙ (Y_N0 V0 + Y_NN V)*` by the implicit Z-bus fixed point
//! `V ← Y_NN⁻¹ ((S ⊘ V)* − Y_N0 V0)` from the flat-rotated start.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::PhaseIndex;

/// Balanced positive-sequence slack voltages `1∠0°, 1∠−120°, 1∠120°`.
pub fn balanced_v0(magnitude: f64) -> [Complex64; 3] {
    [
        Complex64::from_polar(magnitude, 0.0),
        Complex64::from_polar(magnitude, -2.0 * PI / 3.0),
        Complex64::from_polar(magnitude, 2.0 * PI / 3.0),
    ]
}

/// Slack voltages plus net complex injections (loads negative) per
/// non-slack phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v0: [Complex64; 3],
    pub s: Vec<Complex64>,
}

impl OperatingPoint {
    pub fn new(s: Vec<Complex64>) -> Self {
        OperatingPoint { v0: balanced_v0(1.0), s }
    }

    pub fn with_v0(mut self, v0: [Complex64; 3]) -> Self {
        self.v0 = v0;
        self
    }

    pub fn zero(n_phases: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); n_phases])
    }

    pub fn check(&self, n_phases: usize) -> Result<()> {
        if self.s.len() != n_phases {
            return Err(Error::Dimension {
                what: "injection vector",
                expected: n_phases,
                got: self.s.len(),
            });
        }
        if let Some(v) = self.v0.iter().find(|v| !(v.norm() > 0.0 && v.norm() < 2.0)) {
            return Err(Error::Config(format!("slack voltage magnitude {} outside (0, 2)", v.norm())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nonlinear,
    Taylor,
    Hybrid,
    LrCorrected,
    SvrDirect,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Nonlinear => "nonlinear",
            Method::Taylor => "taylor",
            Method::Hybrid => "hybrid",
            Method::LrCorrected => "lr-corrected",
            Method::SvrDirect => "svr-direct",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub v: Vec<Complex64>,
    pub method: Method,
    pub iterations: usize,
    /// Max-norm of the power mismatch at `v`.
    pub residual: f64,
}

impl PfSolution {
    /// `[Re v; Im v]`.
    pub fn stacked(&self) -> Vec<f64> {
        stack(&self.v)
    }
}

pub fn stack(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

pub fn unstack(x: &[f64]) -> Vec<Complex64> {
    let m = x.len() / 2;
    (0..m).map(|k| Complex64::new(x[k], x[m + k])).collect()
}

/// Per-phase copy of the slack voltages.
pub fn flat_profile(idx: &PhaseIndex, v0: &[Complex64; 3]) -> Vec<Complex64> {
    idx.entries().iter().map(|(_, p)| v0[p.index()]).collect()
}

fn check_dims(sys: &AdmittanceSystem, op: &OperatingPoint, v: Option<&[Complex64]>) -> Result<()> {
    op.check(sys.n_phases())?;
    if let Some(v) = v {
        if v.len() != sys.n_phases() {
            return Err(Error::Dimension {
                what: "voltage vector",
                expected: sys.n_phases(),
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// `S − V ⊙ (Y_N0 V0 + Y_NN V)*`.
pub fn power_residual(sys: &AdmittanceSystem, op: &OperatingPoint, v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_dims(sys, op, Some(v))?;
    Ok(residual_unchecked(sys, op, v))
}

fn residual_unchecked(sys: &AdmittanceSystem, op: &OperatingPoint, v: &[Complex64]) -> Vec<Complex64> {
    let v0 = DVector::from_column_slice(&op.v0);
    let vn = DVector::from_column_slice(v);
    let current = &sys.yn0 * v0 + &sys.ynn * vn;
    op.s
        .iter()
        .zip(v)
        .zip(current.iter())
        .map(|((s, v), i)| s - v * i.conj())
        .collect()
}

pub(crate) fn max_norm(r: &[Complex64]) -> f64 {
    r.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Abort when any iterate magnitude falls below this.
    pub collapse_threshold: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig {
            tolerance: 1e-10,
            max_iterations: 200,
            collapse_threshold: 0.05,
        }
    }
}

/// Fixed-point solver holding a factorization of `Y_NN`, reusable across
/// operating points on the same network.
pub struct NonlinearSolver<'a> {
    sys: &'a AdmittanceSystem,
    lu: LU<Complex64, Dyn, Dyn>,
}

impl<'a> NonlinearSolver<'a> {
    pub fn new(sys: &'a AdmittanceSystem) -> Result<Self> {
        let lu = sys.ynn.clone().lu();
        if !linalg::pivots_ok(lu.u().diagonal().iter().copied(), |z| z.norm()) {
            return Err(Error::InvalidNetwork("Y_NN is singular".into()));
        }
        Ok(NonlinearSolver { sys, lu })
    }

    pub fn solve(&self, op: &OperatingPoint, cfg: &NonlinearConfig) -> Result<PfSolution> {
        let sys = self.sys;
        check_dims(sys, op, None)?;
        let flat = flat_profile(&sys.phase_index, &op.v0);
        // iterate on the deviation from the flat profile, which keeps the
        // solve accurate when the injections are small
        let flat_current =
            &sys.yn0 * DVector::from_column_slice(&op.v0) + &sys.ynn * DVector::from_column_slice(&flat);
        let mut v = flat.clone();
        let mut residual = f64::INFINITY;

        for iteration in 1..=cfg.max_iterations {
            let rhs = DVector::from_iterator(
                v.len(),
                op.s.iter().zip(&v).zip(flat_current.iter()).map(|((s, v), i)| (s / v).conj() - i),
            );
            let dv = self.lu.solve(&rhs).ok_or_else(|| Error::InvalidNetwork("Y_NN is singular".into()))?;
            v = flat.iter().zip(dv.iter()).map(|(f, d)| f + d).collect();
            if let Some((index, z)) = v
                .iter()
                .enumerate()
                .find(|(_, z)| !(z.norm() >= cfg.collapse_threshold))
            {
                return Err(Error::VoltageCollapse {
                    iteration,
                    index,
                    magnitude: z.norm(),
                });
            }
            residual = max_norm(&residual_unchecked(sys, op, &v));
            if residual < cfg.tolerance {
                return Ok(PfSolution {
                    v,
                    method: Method::Nonlinear,
                    iterations: iteration,
                    residual,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: cfg.max_iterations,
            residual,
            last_iterate: v,
        })
    }
}

pub fn solve_nonlinear(sys: &AdmittanceSystem, op: &OperatingPoint, cfg: &NonlinearConfig) -> Result<PfSolution> {
    NonlinearSolver::new(sys)?.solve(op, cfg)
}

/// Complex matrix as nested `[re, im]` rows, for JSON dumps.
pub(crate) fn matrix_rows(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
