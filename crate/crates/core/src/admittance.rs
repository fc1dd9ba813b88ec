//! Partitioned nodal admittance assembly.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Line, PhaseIndex, PhasedNetwork};

/// Nodal admittance split into slack (`0`) and non-slack (`N`) blocks.
///
/// The slack block always has three rows/columns in `a, b, c` order; the
/// non-slack blocks follow the network's [`PhaseIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceSystem {
    pub y00: DMatrix<Complex64>,
    pub y0n: DMatrix<Complex64>,
    pub yn0: DMatrix<Complex64>,
    pub ynn: DMatrix<Complex64>,
    pub phase_index: PhaseIndex,
}

impl AdmittanceSystem {
    pub fn n_phases(&self) -> usize {
        self.ynn.nrows()
    }

    /// Reassemble the unpartitioned `(3 + M) x (3 + M)` matrix.
    pub fn full(&self) -> DMatrix<Complex64> {
        let m = self.n_phases();
        let mut y = DMatrix::zeros(3 + m, 3 + m);
        y.view_mut((0, 0), (3, 3)).copy_from(&self.y00);
        y.view_mut((0, 3), (3, m)).copy_from(&self.y0n);
        y.view_mut((3, 0), (m, 3)).copy_from(&self.yn0);
        y.view_mut((3, 3), (m, m)).copy_from(&self.ynn);
        y
    }
}

/// Column of `(bus, phase)` in the unpartitioned matrix.
fn full_index(idx: &PhaseIndex, bus: usize, phase: crate::network::Phase) -> usize {
    if bus == 0 {
        phase.index()
    } else {
        3 + idx.get(bus, phase).expect("validated network has every line phase at its buses")
    }
}

pub fn build_admittance(net: &PhasedNetwork) -> Result<AdmittanceSystem> {
    net.validate().into_result()?;
    let idx = net.phase_index();
    let m = idx.len();
    let mut y = DMatrix::<Complex64>::zeros(3 + m, 3 + m);

    // Stamp in a canonical order so the result does not depend on how the
    // line list happens to be ordered.
    let mut order: Vec<(usize, &Line)> = net.lines().iter().enumerate().collect();
    order.sort_by_key(|(_, l)| (l.from.min(l.to), l.from.max(l.to)));

    for (k, line) in order {
        let y_series = linalg::invert(&line.z_series).ok_or(Error::SingularImpedance {
            line: k,
            from: line.from,
            to: line.to,
        })?;
        let half_shunt = line.y_shunt.map(|v| v * 0.5);
        let from: Vec<usize> = line.phases.iter().map(|p| full_index(idx, line.from, p)).collect();
        let to: Vec<usize> = line.phases.iter().map(|p| full_index(idx, line.to, p)).collect();
        for i in 0..from.len() {
            for j in 0..from.len() {
                let ys = y_series[(i, j)];
                let sh = half_shunt[(i, j)];
                y[(from[i], from[j])] += ys + sh;
                y[(to[i], to[j])] += ys + sh;
                y[(from[i], to[j])] -= ys;
                y[(to[i], from[j])] -= ys;
            }
        }
    }

    Ok(AdmittanceSystem {
        y00: y.view((0, 0), (3, 3)).into_owned(),
        y0n: y.view((0, 3), (3, m)).into_owned(),
        yn0: y.view((3, 0), (m, 3)).into_owned(),
        ynn: y.view((3, 3), (m, m)).into_owned(),
        phase_index: idx.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Bus, Phase, PhaseSet};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus(shunt: Option<Complex64>) -> PhasedNetwork {
        let mut line = Line::new(0, 1, PhaseSet::single(Phase::A), DMatrix::from_element(1, 1, c(0.0, 0.1)));
        if let Some(s) = shunt {
            line = line.with_shunt(DMatrix::from_element(1, 1, s));
        }
        PhasedNetwork::new(
            vec![
                Bus { id: 0, phases: PhaseSet::ABC },
                Bus { id: 1, phases: PhaseSet::single(Phase::A) },
            ],
            vec![line],
        )
    }

    #[test]
    fn two_node_stamp() {
        let sys = build_admittance(&two_bus(None)).unwrap();
        let y = c(0.0, -10.0);
        assert!((sys.ynn[(0, 0)] - y).norm() < 1e-12);
        assert!((sys.yn0[(0, 0)] + y).norm() < 1e-12);
        assert!((sys.y0n[(0, 0)] + y).norm() < 1e-12);
        assert!((sys.y00[(0, 0)] - y).norm() < 1e-12);
        // phases b, c of the slack are untouched
        assert_eq!(sys.yn0[(0, 1)], c(0.0, 0.0));
        assert_eq!(sys.y00[(1, 1)], c(0.0, 0.0));
    }

    #[test]
    fn shunt_splits_to_both_ends() {
        // a total line shunt of j0.02 puts j0.01 on each end
        let sys = build_admittance(&two_bus(Some(c(0.0, 0.02)))).unwrap();
        let y = c(0.0, -10.0);
        assert!((sys.ynn[(0, 0)] - (y + c(0.0, 0.01))).norm() < 1e-12);
        assert!((sys.yn0[(0, 0)] + y).norm() < 1e-12);
        let full = sys.full();
        for r in [0, 3] {
            let sum: Complex64 = full.row(r).iter().sum();
            assert!((sum - c(0.0, 0.01)).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_network() {
        let mut net = two_bus(None);
        net = PhasedNetwork::new(net.buses().to_vec(), vec![]);
        assert!(matches!(build_admittance(&net), Err(Error::InvalidNetwork(_))));
    }
}
