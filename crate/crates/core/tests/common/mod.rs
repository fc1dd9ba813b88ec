#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use ubpf_core::{Bus, Line, Phase, PhaseSet, PhasedNetwork};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn slack() -> Bus {
    Bus {
        id: 0,
        phases: PhaseSet::ABC,
    }
}

pub fn bus(id: usize, phases: &str) -> Bus {
    Bus {
        id,
        phases: phases.parse().unwrap(),
    }
}

/// Copy of `net` with every shunt admittance removed.
pub fn without_shunts(net: &PhasedNetwork) -> PhasedNetwork {
    let lines = net
        .lines()
        .iter()
        .map(|l| Line::new(l.from, l.to, l.phases, l.z_series.clone()))
        .collect();
    PhasedNetwork::new(net.buses().to_vec(), lines)
}

/// Two buses joined by a single phase line.
pub fn two_bus(phase: &str, z: Complex64) -> PhasedNetwork {
    PhasedNetwork::new(
        vec![slack(), bus(1, phase)],
        vec![Line::new(0, 1, phase.parse().unwrap(), DMatrix::from_element(1, 1, z))],
    )
}

/// Larger root `|v|²` of the two-bus biquadratic for a load `p + jq` drawn
/// through `r + jx` from a source of magnitude `v0`.
pub fn two_bus_magnitude(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = 2.0 * (p * r + q * x) - v0 * v0;
    let c = (p * p + q * q) * (r * r + x * x);
    let disc = b * b - 4.0 * c;
    assert!(disc >= 0.0, "two-bus case has no solution");
    ((-b + disc.sqrt()) / 2.0).sqrt()
}

/// Position of `(bus, phase)` in the unpartitioned matrix, counted directly
/// from the bus list.
pub fn position(net: &PhasedNetwork, bus: usize, phase: Phase) -> usize {
    if bus == 0 {
        return phase.index();
    }
    let mut pos = 3;
    for b in net.buses().iter().filter(|b| b.id != 0 && b.id < bus) {
        pos += b.phases.len();
    }
    let own = net.bus(bus).unwrap().phases;
    pos + own.iter().take_while(|p| *p != phase).count()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let n = m.len();
    let mut a: Vec<Vec<Complex64>> = m.to_vec();
    let mut inv: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                for j in 0..n {
                    let (acj, icj) = (a[col][j], inv[col][j]);
                    a[i][j] -= f * acj;
                    inv[i][j] -= f * icj;
                }
            }
        }
    }
    inv
}

/// Full nodal admittance stamped one element at a time.
pub fn brute_force_y(net: &PhasedNetwork) -> Vec<Vec<Complex64>> {
    let size = 3 + net.n_phases();
    let mut y = vec![vec![c(0.0, 0.0); size]; size];
    for line in net.lines() {
        let phases: Vec<Phase> = line.phases.iter().collect();
        let n = phases.len();
        let z: Vec<Vec<Complex64>> = (0..n).map(|i| (0..n).map(|j| line.z_series[(i, j)]).collect()).collect();
        let ys = invert(&z);
        for (i, &pi) in phases.iter().enumerate() {
            for (j, &pj) in phases.iter().enumerate() {
                let half = line.y_shunt[(i, j)] * 0.5;
                let (fi, fj) = (position(net, line.from, pi), position(net, line.from, pj));
                let (ti, tj) = (position(net, line.to, pi), position(net, line.to, pj));
                y[fi][fj] += ys[i][j] + half;
                y[ti][tj] += ys[i][j] + half;
                y[fi][tj] -= ys[i][j];
                y[ti][fj] -= ys[i][j];
            }
        }
    }
    y
}

/// `S_calc = V ⊙ conj(Y V)` over the full vector `[v0; v]`, minus slack rows.
pub fn injected_power(y: &[Vec<Complex64>], v0: &[Complex64; 3], v: &[Complex64]) -> Vec<Complex64> {
    let full: Vec<Complex64> = v0.iter().chain(v).copied().collect();
    (3..full.len())
        .map(|i| {
            let current: Complex64 = y[i].iter().zip(&full).map(|(a, b)| a * b).sum();
            full[i] * current.conj()
        })
        .collect()
}

/// Damped Newton-Raphson on `S − V ⊙ conj(I) = 0` in rectangular variables.
pub fn newton_reference(net: &PhasedNetwork, v0: &[Complex64; 3], s: &[Complex64]) -> Vec<Complex64> {
    let y = brute_force_y(net);
    let m = s.len();
    let ynn: Vec<Vec<Complex64>> = (0..m).map(|i| (0..m).map(|j| y[3 + i][3 + j]).collect()).collect();
    let mut v: Vec<Complex64> = net
        .phase_index()
        .entries()
        .iter()
        .map(|&(_, p)| v0[p.index()])
        .collect();
    let mismatch = |v: &[Complex64]| -> Vec<Complex64> {
        injected_power(&y, v0, v).iter().zip(s).map(|(calc, s)| s - calc).collect()
    };
    let norm = |r: &[Complex64]| r.iter().map(|z| z.norm()).fold(0.0, f64::max);

    for _ in 0..50 {
        let r = mismatch(&v);
        if norm(&r) < 1e-14 {
            break;
        }
        let full: Vec<Complex64> = v0.iter().chain(&v).copied().collect();
        let current: Vec<Complex64> = (0..m)
            .map(|i| y[3 + i].iter().zip(&full).map(|(a, b)| a * b).sum())
            .collect();
        // dS = (diag(I*) + diag(V) Y*) dVr + j (diag(I*) − diag(V) Y*) dVi
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for i in 0..m {
            for k in 0..m {
                let vy = v[i] * ynn[i][k].conj();
                let diag = if i == k { current[i].conj() } else { c(0.0, 0.0) };
                let d_re = diag + vy;
                let d_im = (diag - vy) * c(0.0, 1.0);
                jac[(i, k)] = d_re.re;
                jac[(m + i, k)] = d_re.im;
                jac[(i, m + k)] = d_im.re;
                jac[(m + i, m + k)] = d_im.im;
            }
        }
        let rhs = DVector::from_iterator(2 * m, r.iter().map(|z| z.re).chain(r.iter().map(|z| z.im)));
        let step = jac.lu().solve(&rhs).expect("nonsingular Jacobian");
        let base = norm(&r);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<Complex64> = (0..m).map(|i| v[i] + c(step[i], step[m + i]) * alpha).collect();
            if norm(&mismatch(&trial)) < base || alpha < 1e-4 {
                v = trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    v
}

/// Random connected radial network: each new bus hangs off an earlier one
/// with a subset of its parent's phases and a mutually coupled impedance
/// whose real part is diagonally dominant.
pub fn radial_network() -> impl Strategy<Value = PhasedNetwork> {
    let branch = (any::<prop::sample::Index>(), 1u8..8, 0.005..0.05f64, 0.01..0.1f64, 0.0..0.4f64, any::<bool>());
    prop::collection::vec(branch, 1..9).prop_map(|branches| {
        let mut buses = vec![slack()];
        let mut lines = Vec::new();
        for (k, (parent, mask, r, x, mutual, shunt)) in branches.into_iter().enumerate() {
            let id = k + 1;
            let parent = parent.index(id);
            let parent_phases = buses[parent].phases;
            let wanted: Vec<Phase> = Phase::ALL
                .into_iter()
                .filter(|p| mask & (1 << p.index()) != 0 && parent_phases.contains(*p))
                .collect();
            let phases = PhaseSet::from_phases(&wanted).unwrap_or_else(|| PhaseSet::single(parent_phases.iter().next().unwrap()));
            let n = phases.len();
            let z = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    c(r, x)
                } else {
                    c(r, x) * (mutual / 2.0)
                }
            });
            let mut line = Line::new(parent, id, phases, z);
            if shunt {
                line = line.with_shunt(DMatrix::from_fn(n, n, |i, j| if i == j { c(0.0, 2e-3) } else { c(0.0, -4e-4) }));
            }
            buses.push(Bus { id, phases });
            lines.push(line);
        }
        PhasedNetwork::new(buses, lines)
    })
}

/// Loads of modest size on every non-slack phase.
pub fn loads(m: usize, scale: f64, seed: u64) -> Vec<Complex64> {
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..m).map(|_| -c(scale * (0.5 + next()), scale * (0.2 + 0.3 * next()))).collect()
}

/// Reference ε-SVR solution: pairwise exact ascent on the dual
/// `max −½ βᵀKβ + tᵀβ − ε‖β‖₁, Σβ = 0, |β| ≤ C`, then the best `b` for the
/// resulting `w` by scanning every hinge breakpoint.
pub struct ReferenceSvr {
    pub w: Vec<f64>,
    pub b: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
}

pub fn svr_primal(z: &[Vec<f64>], t: &[f64], w: &[f64], b: f64, c: f64, eps: f64) -> f64 {
    let reg: f64 = w.iter().map(|x| x * x).sum::<f64>() / 2.0;
    let loss: f64 = z
        .iter()
        .zip(t)
        .map(|(zj, tj)| {
            let f: f64 = zj.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            ((tj - f).abs() - eps).max(0.0)
        })
        .sum();
    reg + c * loss
}

pub fn reference_svr(z: &[Vec<f64>], t: &[f64], c: f64, eps: f64) -> ReferenceSvr {
    let n = z.len();
    let k: Vec<Vec<f64>> = z
        .iter()
        .map(|a| z.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let mut beta = vec![0.0; n];
    // gradient of the smooth part: t − Kβ
    let mut g: Vec<f64> = t.to_vec();
    let dual = |beta: &[f64], g: &[f64]| -> f64 {
        (0..n).map(|i| 0.5 * beta[i] * (t[i] + g[i]) - eps * beta[i].abs()).sum()
    };
    let mut last = f64::NEG_INFINITY;
    for _ in 0..20_000 {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // β_i += δ, β_j −= δ
                let curv = k[i][i] + k[j][j] - 2.0 * k[i][j];
                let slope = g[i] - g[j];
                let lo = (-c - beta[i]).max(beta[j] - c);
                let hi = (c - beta[i]).min(beta[j] + c);
                let value = |d: f64| slope * d - 0.5 * curv * d * d - eps * ((beta[i] + d).abs() + (beta[j] - d).abs());
                let mut knots = vec![lo, hi, -beta[i], beta[j]];
                knots.retain(|d| *d >= lo && *d <= hi);
                knots.sort_by(f64::total_cmp);
                let mut best = (0.0, value(0.0));
                for w in knots.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let si = (beta[i] + mid).signum();
                    let sj = (beta[j] - mid).signum();
                    let lin = slope - eps * (si - sj);
                    let d = if curv > 1e-15 { (lin / curv).clamp(w[0], w[1]) } else if lin > 0.0 { w[1] } else { w[0] };
                    for cand in [d, w[0], w[1]] {
                        let val = value(cand);
                        if val > best.1 {
                            best = (cand, val);
                        }
                    }
                }
                let d = best.0;
                if d != 0.0 {
                    beta[i] += d;
                    beta[j] -= d;
                    for (l, gl) in g.iter_mut().enumerate() {
                        *gl -= d * (k[l][i] - k[l][j]);
                    }
                }
            }
        }
        let now = dual(&beta, &g);
        if now - last <= 1e-15 * now.abs().max(1.0) {
            break;
        }
        last = now;
    }
    let dim = z[0].len();
    let w: Vec<f64> = (0..dim).map(|f| (0..n).map(|j| beta[j] * z[j][f]).sum()).collect();
    let r: Vec<f64> = z
        .iter()
        .zip(t)
        .map(|(zj, tj)| tj - zj.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut b = 0.0;
    let mut objective = f64::INFINITY;
    for cand in r.iter().flat_map(|ri| [ri - eps, ri + eps]) {
        let obj = svr_primal(z, t, &w, cand, c, eps);
        if obj < objective {
            objective = obj;
            b = cand;
        }
    }
    ReferenceSvr { w, b, beta, objective }
}
