//! Rotated first-order Taylor linearization of the power balance.
//!
//! With `1 / v* ≈ t (2 − t v*)` per phase, where `t` undoes the nominal
//! phase angle of the conjugated voltage, the balance becomes
//! `A V* + B V = d` with `A = diag(S* ⊙ T²)`, `B = Y_NN` and
//! `d = 2 S* ⊙ T − Y_N0 V0`. The system is solved exactly by splitting into
//! real and imaginary parts.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Phase, PhaseIndex};
use crate::pf::{self, Method, NonlinearConfig, NonlinearSolver, OperatingPoint, PfSolution};

/// `e^{j2π/3}`.
pub fn gamma() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

pub fn phase_rotation(phase: Phase) -> Complex64 {
    match phase {
        Phase::A => Complex64::new(1.0, 0.0),
        Phase::B => gamma().conj(),
        Phase::C => gamma(),
    }
}

/// Per-phase rotation factors over the stacked non-slack vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationVector(pub Vec<Complex64>);

impl RotationVector {
    /// All ones: the plain, unrotated expansion around `1∠0°`.
    pub fn identity(n: usize) -> Self {
        RotationVector(vec![Complex64::new(1.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn rotation_vector(idx: &PhaseIndex) -> RotationVector {
    RotationVector(idx.entries().iter().map(|(_, p)| phase_rotation(*p)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// Diagonal of `A`.
    pub a: Vec<Complex64>,
    pub b: DMatrix<Complex64>,
    pub d: Vec<Complex64>,
}

#[derive(Serialize)]
struct LinearSystemDump {
    a: Vec<Complex64>,
    b: Vec<Vec<Complex64>>,
    d: Vec<Complex64>,
}

impl LinearSystem {
    pub fn to_json(&self) -> String {
        let dump = LinearSystemDump {
            a: self.a.clone(),
            b: pf::matrix_rows(&self.b),
            d: self.d.clone(),
        };
        serde_json::to_string_pretty(&dump).expect("complex values serialize")
    }

    /// `‖A V* + B V − d‖∞`.
    pub fn residual(&self, v: &[Complex64]) -> f64 {
        let bv = &self.b * DVector::from_column_slice(v);
        (0..v.len())
            .map(|i| (self.a[i] * v[i].conj() + bv[i] - self.d[i]).norm())
            .fold(0.0, f64::max)
    }
}

fn check(sys: &AdmittanceSystem, op: &OperatingPoint, t: &RotationVector) -> Result<()> {
    op.check(sys.n_phases())?;
    if t.len() != sys.n_phases() {
        return Err(Error::Dimension {
            what: "rotation vector",
            expected: sys.n_phases(),
            got: t.len(),
        });
    }
    Ok(())
}

pub fn assemble_linear(sys: &AdmittanceSystem, op: &OperatingPoint, t: &RotationVector) -> Result<LinearSystem> {
    check(sys, op, t)?;
    let i0 = &sys.yn0 * DVector::from_column_slice(&op.v0);
    let a = op.s.iter().zip(&t.0).map(|(s, t)| s.conj() * t * t).collect();
    let d = op
        .s
        .iter()
        .zip(&t.0)
        .zip(i0.iter())
        .map(|((s, t), i0)| 2.0 * s.conj() * t - i0)
        .collect();
    Ok(LinearSystem {
        a,
        b: sys.ynn.clone(),
        d,
    })
}

/// Real `2M x 2M` form of `B V` alone: `[[B_r, −B_x], [B_x, B_r]]`.
fn stacked_b(b: &DMatrix<Complex64>) -> DMatrix<f64> {
    let m = b.nrows();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for j in 0..m {
        for i in 0..m {
            let z = b[(i, j)];
            out[(i, j)] = z.re;
            out[(i, m + j)] = -z.im;
            out[(m + i, j)] = z.im;
            out[(m + i, m + j)] = z.re;
        }
    }
    out
}

fn solve_stacked(mut mat: DMatrix<f64>, a: &[Complex64], d: &[Complex64]) -> Result<Vec<Complex64>> {
    let m = a.len();
    for (i, ai) in a.iter().enumerate() {
        mat[(i, i)] += ai.re;
        mat[(i, m + i)] += ai.im;
        mat[(m + i, i)] += ai.im;
        mat[(m + i, m + i)] -= ai.re;
    }
    let lu = mat.clone().lu();
    if !linalg::pivots_ok(lu.u().diagonal().iter().copied(), f64::abs) {
        return Err(Error::SingularLinearSystem(
            "stacked rectangular matrix is singular (degenerate operating point)".into(),
        ));
    }
    let rhs = DVector::from_iterator(2 * m, d.iter().map(|z| z.re).chain(d.iter().map(|z| z.im)));
    let failed = || Error::SingularLinearSystem("LU solve failed".into());
    let mut x = lu.solve(&rhs).ok_or_else(failed)?;
    // one step of iterative refinement
    let r = &rhs - &mat * &x;
    x += lu.solve(&r).ok_or_else(failed)?;
    Ok(pf::unstack(x.as_slice()))
}

/// Solves `A V* + B V = d` in rectangular coordinates. The solution's
/// `residual` field holds the linear-system residual.
pub fn solve_taylor(lin: &LinearSystem) -> Result<PfSolution> {
    let v = solve_stacked(stacked_b(&lin.b), &lin.a, &lin.d)?;
    let residual = lin.residual(&v);
    Ok(PfSolution {
        v,
        method: Method::Taylor,
        iterations: 0,
        residual,
    })
}

/// Taylor solver with the constant `Y_NN` part of the stacked matrix
/// prepared once per network.
#[derive(Debug, Clone)]
pub struct TaylorSolver<'a> {
    sys: &'a AdmittanceSystem,
    t: RotationVector,
    base: DMatrix<f64>,
}

impl<'a> TaylorSolver<'a> {
    pub fn new(sys: &'a AdmittanceSystem, t: RotationVector) -> Result<Self> {
        if t.len() != sys.n_phases() {
            return Err(Error::Dimension {
                what: "rotation vector",
                expected: sys.n_phases(),
                got: t.len(),
            });
        }
        Ok(TaylorSolver {
            sys,
            base: stacked_b(&sys.ynn),
            t,
        })
    }

    pub fn rotation(&self) -> &RotationVector {
        &self.t
    }

    pub fn system(&self) -> &AdmittanceSystem {
        self.sys
    }

    /// Taylor solution with `residual` set to the true power mismatch.
    pub fn solve(&self, op: &OperatingPoint) -> Result<PfSolution> {
        check(self.sys, op, &self.t)?;
        let i0 = &self.sys.yn0 * DVector::from_column_slice(&op.v0);
        let mut a = Vec::with_capacity(op.s.len());
        let mut d = Vec::with_capacity(op.s.len());
        for ((s, t), i0) in op.s.iter().zip(&self.t.0).zip(i0.iter()) {
            a.push(s.conj() * t * t);
            d.push(2.0 * s.conj() * t - i0);
        }
        let v = solve_stacked(self.base.clone(), &a, &d)?;
        warn_outside_expansion(&self.t, &v);
        let residual = pf::max_norm(&pf::power_residual(self.sys, op, &v)?);
        Ok(PfSolution {
            v,
            method: Method::Taylor,
            iterations: 0,
            residual,
        })
    }
}

fn warn_outside_expansion(t: &RotationVector, v: &[Complex64]) {
    // the expansion is in the conjugate voltage, so t rotates v* to 1
    if let Some(k) = t.0.iter().zip(v).position(|(t, v)| (1.0 - t * v.conj()).norm() >= 1.0) {
        log::warn!("taylor solution leaves the expansion region at index {k} (|1 - t v*| >= 1)");
    }
}

/// Stacked real/imaginary linearization error `[ω; μ] = x − x_tay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector(pub Vec<f64>);

pub fn linearization_error(sys: &AdmittanceSystem, op: &OperatingPoint, t: &RotationVector) -> Result<ErrorVector> {
    let exact = NonlinearSolver::new(sys)?.solve(op, &NonlinearConfig::default())?;
    let approx = TaylorSolver::new(sys, t.clone())?.solve(op)?;
    Ok(error_between(&exact, &approx))
}

pub fn error_between(exact: &PfSolution, approx: &PfSolution) -> ErrorVector {
    ErrorVector(
        exact
            .stacked()
            .iter()
            .zip(approx.stacked())
            .map(|(x, xt)| x - xt)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admittance::build_admittance;
    use crate::network::{Bus, Line, PhaseSet, PhasedNetwork};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lateral(phase: Phase) -> AdmittanceSystem {
        let net = PhasedNetwork::new(
            vec![
                Bus { id: 0, phases: PhaseSet::ABC },
                Bus { id: 1, phases: PhaseSet::single(phase) },
            ],
            vec![Line::new(0, 1, PhaseSet::single(phase), DMatrix::from_element(1, 1, c(0.01, 0.02)))],
        );
        build_admittance(&net).unwrap()
    }

    #[test]
    fn rotation_entries() {
        let idx = PhasedNetwork::new(
            vec![
                Bus { id: 0, phases: PhaseSet::ABC },
                Bus { id: 1, phases: PhaseSet::ABC },
                Bus { id: 2, phases: PhaseSet::single(Phase::B) },
            ],
            vec![],
        )
        .phase_index()
        .clone();
        let t = rotation_vector(&idx);
        let g = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        let expect = [c(1.0, 0.0), Complex64::from_polar(1.0, -2.0 * PI / 3.0), g, g.conj()];
        for (a, b) in t.0.iter().zip(expect) {
            assert!((a - b).norm() < 1e-15);
        }
        for ti in &t.0 {
            assert!(((ti * ti.conj()) - c(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_injection_gives_a_zero_and_d_minus_i0() {
        let sys = lateral(Phase::A);
        let lin = assemble_linear(&sys, &OperatingPoint::zero(1), &RotationVector::identity(1)).unwrap();
        assert_eq!(lin.a, vec![c(0.0, 0.0)]);
        let i0 = sys.yn0[(0, 0)] * c(1.0, 0.0);
        assert!((lin.d[0] + i0).norm() < 1e-14);
    }

    #[test]
    fn phase_a_entries_reduce_to_conjugate_power() {
        let sys = lateral(Phase::A);
        let s = c(-0.1, -0.05);
        let op = OperatingPoint::new(vec![s]);
        let lin = assemble_linear(&sys, &op, &rotation_vector(&sys.phase_index)).unwrap();
        assert!((lin.a[0] - s.conj()).norm() < 1e-15);
        let i0 = sys.yn0[(0, 0)] * op.v0[0];
        assert!((lin.d[0] - (2.0 * s.conj() - i0)).norm() < 1e-14);
    }

    #[test]
    fn solution_satisfies_linear_system() {
        let sys = lateral(Phase::C);
        let op = OperatingPoint::new(vec![c(-0.2, -0.1)]);
        let lin = assemble_linear(&sys, &op, &rotation_vector(&sys.phase_index)).unwrap();
        let sol = solve_taylor(&lin).unwrap();
        assert!(lin.residual(&sol.v) < 1e-10);
        let json = lin.to_json();
        assert!(json.contains("\"d\""));
    }

    #[test]
    fn singular_stacked_matrix_is_an_error() {
        let lin = LinearSystem {
            a: vec![c(0.0, 0.0)],
            b: DMatrix::from_element(1, 1, c(0.0, 0.0)),
            d: vec![c(1.0, 0.0)],
        };
        assert!(matches!(solve_taylor(&lin), Err(Error::SingularLinearSystem(_))));
    }

    #[test]
    fn two_bus_error_within_second_order_envelope() {
        let sys = lateral(Phase::A);
        let op = OperatingPoint::new(vec![c(-0.1, -0.05)]);
        let truth = solve_nonlinear_v(&sys, &op);
        let tay = TaylorSolver::new(&sys, rotation_vector(&sys.phase_index)).unwrap().solve(&op).unwrap();
        let gap = (tay.v[0] - truth).norm();
        assert!(gap <= 4.0 * (c(1.0, 0.0) - truth).norm_sqr(), "gap {gap}");
    }

    fn solve_nonlinear_v(sys: &AdmittanceSystem, op: &OperatingPoint) -> Complex64 {
        pf::solve_nonlinear(sys, op, &NonlinearConfig::default()).unwrap().v[0]
    }
}
