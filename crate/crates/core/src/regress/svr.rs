//! Linear ε-insensitive support vector regression.
//!
//! Per output, solves
//!
//! ```text
//! min ½‖w‖² + C Σ_j (ξ_j + ξ*_j)
//! s.t. t_j − w·z_j − b ≤ ε + ξ_j,  w·z_j + b − t_j ≤ ε + ξ*_j,  ξ, ξ* ≥ 0
//! ```
//!
//! with an unpenalized intercept `b`, using a Mehrotra predictor-corrector
//! interior-point method. Each Newton step reduces to a dense system of
//! size `d + 1` (features plus intercept); with fewer samples than features
//! the problem is first restricted to the row space of the feature matrix.
//!
//! The dual weights are `β_j = λ_j − λ*_j ∈ [−C, C]` with `w = Σ_j β_j z_j`
//! and `Σ_j β_j = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// Relative bound on infeasibility and complementarity at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 10.0,
            epsilon: 1e-4,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite())
            || !(self.epsilon >= 0.0 && self.epsilon.is_finite())
            || !(self.tolerance > 0.0)
            || self.max_iterations == 0
        {
            return Err(Error::Config(format!(
                "svr requires C > 0, ε ≥ 0, tolerance > 0 (got C = {}, ε = {}, tol = {})",
                self.c, self.epsilon, self.tolerance
            )));
        }
        Ok(())
    }
}

/// Solution for one output.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrFit {
    pub w: Vec<f64>,
    pub b: f64,
    /// Dual weights, one per sample.
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub gap: f64,
}

/// Primal objective of the ε-SVR problem.
pub fn primal_objective(z: &[Vec<f64>], t: &[f64], w: &[f64], b: f64, c: f64, epsilon: f64) -> f64 {
    let reg = 0.5 * dot(w, w);
    let loss: f64 = z
        .iter()
        .zip(t)
        .map(|(zj, tj)| ((tj - dot(w, zj) - b).abs() - epsilon).max(0.0))
        .sum();
    reg + c * loss
}

/// Dual objective at `β` (clipped to the box). Only a lower bound on the
/// primal optimum when `Σβ = 0`.
pub fn dual_objective(z: &[Vec<f64>], t: &[f64], beta: &[f64], c: f64, epsilon: f64) -> f64 {
    let d = z.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d];
    let mut lin = 0.0;
    for ((zj, tj), bj) in z.iter().zip(t).zip(beta) {
        let bj = bj.clamp(-c, c);
        lin += bj * tj - epsilon * bj.abs();
        for (wi, zi) in w.iter_mut().zip(zj) {
            *wi += bj * zi;
        }
    }
    lin - 0.5 * dot(&w, &w)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Interior-point iterate. Constraint slacks `s1 = ε + ξ − r`,
/// `s2 = ε + ξ* + r` with residual `r = t − Zw − b`; multipliers `l1, l2`
/// for the tube constraints and `m1, m2` for `ξ, ξ* ≥ 0`.
#[derive(Clone)]
struct Iterate {
    w: DVector<f64>,
    b: f64,
    xi: DVector<f64>,
    xs: DVector<f64>,
    s1: DVector<f64>,
    s2: DVector<f64>,
    l1: DVector<f64>,
    l2: DVector<f64>,
    m1: DVector<f64>,
    m2: DVector<f64>,
}

struct Residuals {
    rw: DVector<f64>,
    rb: f64,
    rxi: DVector<f64>,
    rxs: DVector<f64>,
    rs1: DVector<f64>,
    rs2: DVector<f64>,
}

/// Complementarity right-hand sides.
struct Comp {
    c1: DVector<f64>,
    c2: DVector<f64>,
    c3: DVector<f64>,
    c4: DVector<f64>,
}

type Step = Iterate;

struct Newton<'a> {
    z: &'a DMatrix<f64>,
    it: &'a Iterate,
    res: &'a Residuals,
    a1: DVector<f64>,
    b1: DVector<f64>,
    a2: DVector<f64>,
    b2: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn chol(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let mut m = m;
    for i in 0..n {
        m[(i, i)] += 1e-13 * scale;
    }
    m.cholesky()
        .ok_or_else(|| Error::SingularLinearSystem("svr newton system is not positive definite".into()))
}

impl<'a> Newton<'a> {
    fn new(z: &'a DMatrix<f64>, it: &'a Iterate, res: &'a Residuals) -> Result<Self> {
        let a1 = it.s1.component_div(&it.l1);
        let b1 = it.xi.component_div(&it.m1);
        let a2 = it.s2.component_div(&it.l2);
        let b2 = it.xs.component_div(&it.m2);
        let weight = DVector::from_fn(a1.len(), |j, _| 1.0 / (a1[j] + b1[j]) + 1.0 / (a2[j] + b2[j]));
        let d = z.ncols();
        let mut zs = z.clone();
        for (j, mut row) in zs.row_iter_mut().enumerate() {
            row *= weight[j].sqrt();
        }
        let h = zs.tr_mul(&zs);
        let hb = z.tr_mul(&weight);
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&h);
        for i in 0..d {
            m[(i, i)] += 1.0;
            m[(i, d)] = hb[i];
            m[(d, i)] = hb[i];
        }
        m[(d, d)] = weight.sum();
        let chol = chol(m)?;
        Ok(Newton {
            z,
            it,
            res,
            a1,
            b1,
            a2,
            b2,
            chol,
        })
    }

    fn solve(&self, comp: &Comp) -> Step {
        let (it, res) = (self.it, self.res);
        let n = it.xi.len();
        let mut rho1 = DVector::zeros(n);
        let mut rho2 = DVector::zeros(n);
        let mut kappa = DVector::zeros(n);
        for j in 0..n {
            rho1[j] = res.rs1[j] - comp.c1[j] / it.l1[j] - self.a1[j] * (res.rxi[j] + comp.c3[j] / it.xi[j]);
            rho2[j] = res.rs2[j] - comp.c2[j] / it.l2[j] - self.a2[j] * (res.rxs[j] + comp.c4[j] / it.xs[j]);
            let k1 = res.rxi[j] + comp.c3[j] / it.xi[j] + rho1[j] / (self.a1[j] + self.b1[j]);
            let k2 = res.rxs[j] + comp.c4[j] / it.xs[j] + rho2[j] / (self.a2[j] + self.b2[j]);
            kappa[j] = k1 - k2;
        }

        let d = self.z.ncols();
        let top = self.z.tr_mul(&kappa) - &res.rw;
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&top);
        rhs[d] = kappa.sum() - res.rb;
        let sol = self.chol.solve(&rhs);
        let (dw, db) = (sol.rows(0, d).into_owned(), sol[d]);

        let q = self.z * &dw + DVector::from_element(n, db);
        let mut st = Step {
            w: dw,
            b: db,
            xi: DVector::zeros(n),
            xs: DVector::zeros(n),
            s1: DVector::zeros(n),
            s2: DVector::zeros(n),
            l1: DVector::zeros(n),
            l2: DVector::zeros(n),
            m1: DVector::zeros(n),
            m2: DVector::zeros(n),
        };
        for j in 0..n {
            let h1 = self.a1[j] + self.b1[j];
            let h2 = self.a2[j] + self.b2[j];
            st.xi[j] = self.b1[j] * (rho1[j] - q[j]) / h1;
            st.xs[j] = self.b2[j] * (rho2[j] + q[j]) / h2;
            st.l1[j] = res.rxi[j] + comp.c3[j] / it.xi[j] + (rho1[j] - q[j]) / h1;
            st.l2[j] = res.rxs[j] + comp.c4[j] / it.xs[j] + (rho2[j] + q[j]) / h2;
            // from the linear rows, which keeps feasibility exact
            st.m1[j] = res.rxi[j] - st.l1[j];
            st.m2[j] = res.rxs[j] - st.l2[j];
            st.s1[j] = st.xi[j] + q[j] - res.rs1[j];
            st.s2[j] = st.xs[j] - q[j] - res.rs2[j];
        }
        st
    }
}

impl Iterate {
    fn positive(&self) -> [(&DVector<f64>, usize); 8] {
        [
            (&self.xi, 0),
            (&self.xs, 1),
            (&self.s1, 2),
            (&self.s2, 3),
            (&self.l1, 4),
            (&self.l2, 5),
            (&self.m1, 6),
            (&self.m2, 7),
        ]
    }

    fn max_step(&self, st: &Step) -> f64 {
        let steps = st.positive();
        let mut alpha = 1.0_f64;
        for ((x, _), (dx, _)) in self.positive().iter().zip(steps.iter()) {
            for (xv, dv) in x.iter().zip(dx.iter()) {
                if *dv < 0.0 {
                    alpha = alpha.min(-xv / dv);
                }
            }
        }
        alpha
    }

    fn advance(&mut self, st: &Step, alpha: f64) {
        self.w.axpy(alpha, &st.w, 1.0);
        self.b += alpha * st.b;
        self.xi.axpy(alpha, &st.xi, 1.0);
        self.xs.axpy(alpha, &st.xs, 1.0);
        self.s1.axpy(alpha, &st.s1, 1.0);
        self.s2.axpy(alpha, &st.s2, 1.0);
        self.l1.axpy(alpha, &st.l1, 1.0);
        self.l2.axpy(alpha, &st.l2, 1.0);
        self.m1.axpy(alpha, &st.m1, 1.0);
        self.m2.axpy(alpha, &st.m2, 1.0);
    }

    fn complementarity(&self) -> f64 {
        self.s1.dot(&self.l1) + self.s2.dot(&self.l2) + self.xi.dot(&self.m1) + self.xs.dot(&self.m2)
    }

    fn residuals(&self, z: &DMatrix<f64>, t: &DVector<f64>, c: f64, eps: f64) -> Residuals {
        let n = t.len();
        let beta = &self.l1 - &self.l2;
        let r = t - z * &self.w - DVector::from_element(n, self.b);
        Residuals {
            rw: &self.w - z.tr_mul(&beta),
            rb: -beta.sum(),
            rxi: DVector::from_fn(n, |j, _| c - self.l1[j] - self.m1[j]),
            rxs: DVector::from_fn(n, |j, _| c - self.l2[j] - self.m2[j]),
            rs1: DVector::from_fn(n, |j, _| self.s1[j] - eps - self.xi[j] + r[j]),
            rs2: DVector::from_fn(n, |j, _| self.s2[j] - eps - self.xs[j] - r[j]),
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fit one output. `z` rows share a common length; `t` has one target per row.
pub fn fit_output(z: &[Vec<f64>], t: &[f64], params: &SvrParams) -> Result<SvrFit> {
    fit_output_indexed(z, t, params, 0)
}

pub(crate) fn fit_output_indexed(z: &[Vec<f64>], t: &[f64], params: &SvrParams, output: usize) -> Result<SvrFit> {
    params.validate()?;
    if z.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if z.len() != t.len() {
        return Err(Error::Dimension {
            what: "svr targets",
            expected: z.len(),
            got: t.len(),
        });
    }
    let d = z[0].len();
    let n = z.len();
    if let Some(row) = z.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            what: "svr feature row",
            expected: d,
            got: row.len(),
        });
    }
    let (c, eps) = (params.c, params.epsilon);

    let (t_min, t_max) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if t_max - t_min <= 2.0 * eps {
        // Everything fits in the tube with w = 0; among the optimal
        // intercepts take the one closest to the median.
        let b = median(t).clamp(t_max - eps, t_min + eps);
        return Ok(SvrFit {
            w: vec![0.0; d],
            b,
            beta: vec![0.0; n],
            iterations: 0,
            objective: 0.0,
            gap: 0.0,
        });
    }

    let zfull = DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let tv = DVector::from_column_slice(t);
    // With fewer samples than features the optimal w lies in the row space
    // of Z; solve in coordinates of an orthonormal basis for it.
    let basis = (n < d).then(|| zfull.transpose().qr().q());
    let zm = match &basis {
        Some(q) => &zfull * q,
        None => zfull,
    };
    let dr = zm.ncols();

    let b0 = median(t);
    let spread = t.iter().map(|x| (x - b0).abs()).sum::<f64>() / n as f64;
    let delta = spread.max(eps).max(1e-8);
    let xi = DVector::from_fn(n, |j, _| ((t[j] - b0).abs() - eps).max(0.0) + delta);
    let mut it = Iterate {
        w: DVector::zeros(dr),
        b: b0,
        s1: DVector::from_fn(n, |j, _| eps + xi[j] - (t[j] - b0)),
        s2: DVector::from_fn(n, |j, _| eps + xi[j] + (t[j] - b0)),
        xs: xi.clone(),
        xi,
        l1: DVector::from_element(n, 0.5 * c),
        l2: DVector::from_element(n, 0.5 * c),
        m1: DVector::from_element(n, 0.5 * c),
        m2: DVector::from_element(n, 0.5 * c),
    };

    let tol = params.tolerance;
    let dual_scale = 1.0 + c;
    let beta_of = |it: &Iterate| -> Vec<f64> { (&it.l1 - &it.l2).iter().copied().collect() };
    let full_w = |it: &Iterate| -> Vec<f64> {
        match &basis {
            Some(q) => (q * &it.w).iter().copied().collect(),
            None => it.w.iter().copied().collect(),
        }
    };
    let report = |it: &Iterate| -> (f64, f64) {
        let w = full_w(it);
        let p = primal_objective(z, t, &w, it.b, c, eps);
        (p, p - dual_objective(z, t, &beta_of(it), c, eps))
    };

    for iteration in 0..params.max_iterations {
        let res = it.residuals(&zm, &tv, c, eps);
        let comp = it.complementarity();
        let (objective, _) = report(&it);
        let primal_inf = (0..n)
            .map(|j| res.rs1[j].abs().max(res.rs2[j].abs()) / (1.0 + t[j].abs()))
            .fold(0.0, f64::max);
        let dual_inf = inf_norm(&res.rw)
            .max(res.rb.abs() / n as f64)
            .max(inf_norm(&res.rxi))
            .max(inf_norm(&res.rxs));
        if primal_inf <= tol && dual_inf <= tol * dual_scale && comp <= tol * objective.abs().max(1.0) {
            let (objective, gap) = report(&it);
            return Ok(SvrFit {
                w: full_w(&it),
                b: it.b,
                beta: beta_of(&it),
                iterations: iteration,
                objective,
                gap,
            });
        }

        let newton = Newton::new(&zm, &it, &res)?;
        let affine = newton.solve(&Comp {
            c1: it.s1.component_mul(&it.l1),
            c2: it.s2.component_mul(&it.l2),
            c3: it.xi.component_mul(&it.m1),
            c4: it.xs.component_mul(&it.m2),
        });
        let alpha_aff = it.max_step(&affine);
        let mut probe = it.clone();
        probe.advance(&affine, alpha_aff);
        let mu = comp / (4 * n) as f64;
        let sigma = (probe.complementarity() / comp).powi(3);
        let target = sigma * mu;
        let corr = |x: &DVector<f64>, y: &DVector<f64>, dx: &DVector<f64>, dy: &DVector<f64>| {
            DVector::from_fn(n, |j, _| x[j] * y[j] + dx[j] * dy[j] - target)
        };
        let step = newton.solve(&Comp {
            c1: corr(&it.s1, &it.l1, &affine.s1, &affine.l1),
            c2: corr(&it.s2, &it.l2, &affine.s2, &affine.l2),
            c3: corr(&it.xi, &it.m1, &affine.xi, &affine.m1),
            c4: corr(&it.xs, &it.m2, &affine.xs, &affine.m2),
        });
        let alpha = (0.99 * it.max_step(&step)).min(1.0);
        drop(newton);
        it.advance(&step, alpha);
    }

    let (_, gap) = report(&it);
    Err(Error::SvrNonConvergence {
        output,
        iterations: params.max_iterations,
        gap,
        weights: full_w(&it),
        bias: it.b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_inside_tube() {
        let z: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 - 4.5, (i * i) as f64 * 0.1 - 3.0]).collect();
        let t: Vec<f64> = (0..10).map(|i| 2.0 + 0.5e-4 * ((i % 3) as f64 - 1.0)).collect();
        let fit = fit_output(&z, &t, &SvrParams::default()).unwrap();
        assert!(fit.w.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-8);
        for tj in &t {
            assert!((tj - fit.b).abs() <= 1e-4 + 1e-15);
        }
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SvrParams {
            c: 0.0,
            ..Default::default()
        };
        assert!(fit_output(&[vec![1.0]], &[1.0], &p).is_err());
        assert!(fit_output(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0], &SvrParams::default()).is_err());
    }

    #[test]
    fn budget_exhaustion_reports_best_iterate() {
        let z: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let t: Vec<f64> = z.iter().map(|r| 3.0 * r[0] - r[1] + 0.01 * r[0] * r[1]).collect();
        let p = SvrParams {
            max_iterations: 1,
            ..Default::default()
        };
        match fit_output(&z, &t, &p) {
            Err(Error::SvrNonConvergence { weights, gap, .. }) => {
                assert_eq!(weights.len(), 2);
                assert!(gap.is_finite());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exact_linear_data_is_recovered() {
        let z: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()]).collect();
        let t: Vec<f64> = z.iter().map(|r| 0.8 * r[0] - 0.4 * r[1] + 0.25).collect();
        let fit = fit_output(&z, &t, &SvrParams { epsilon: 0.0, ..Default::default() }).unwrap();
        assert!((fit.w[0] - 0.8).abs() < 1e-6, "{:?}", fit.w);
        assert!((fit.w[1] + 0.4).abs() < 1e-6);
        assert!((fit.b - 0.25).abs() < 1e-6);
        assert!(fit.gap.abs() < 1e-6 * fit.objective.max(1.0));
    }

    #[test]
    fn fewer_samples_than_features() {
        let z: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..10).map(|k| ((i * 10 + k) as f64 * 0.77).sin()).collect())
            .collect();
        let t: Vec<f64> = (0..6).map(|i| (i as f64 * 1.3).cos()).collect();
        let fit = fit_output(&z, &t, &SvrParams::default()).unwrap();
        assert!(fit.gap.abs() < 1e-6 * fit.objective.max(1.0), "{fit:?}");
        assert!(fit.beta.iter().sum::<f64>().abs() < 1e-6);
    }
}
