//! Ridge-stabilized least squares with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Fit `target ≈ W z + b` for every output column at once, minimizing
/// `Σ_j ‖t_j − W z_j − b‖² + λ ‖W‖²`.
///
/// Returns `(W` row-major `k x d, b)`.
pub(crate) fn fit(z: &[Vec<f64>], targets: &[Vec<f64>], ridge: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = z.len();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let d = z[0].len();
    let k = targets[0].len();

    // normal equations over [z, 1]
    let mut gram = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut rhs = DMatrix::<f64>::zeros(d + 1, k);
    let mut row = vec![0.0; d + 1];
    for (zj, tj) in z.iter().zip(targets) {
        row[..d].copy_from_slice(zj);
        row[d] = 1.0;
        for a in 0..=d {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..=d {
                gram[(a, b)] += ra * row[b];
            }
            for (o, t) in tj.iter().enumerate() {
                rhs[(a, o)] += ra * t;
            }
        }
    }
    for a in 0..=d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    for a in 0..d {
        gram[(a, a)] += ridge;
    }

    let sol = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Config("least-squares normal equations are singular".into()))?,
    };

    let mut weights = Vec::with_capacity(k * d);
    let mut offsets = Vec::with_capacity(k);
    for o in 0..k {
        let col: DVector<f64> = sol.column(o).into_owned();
        weights.extend_from_slice(&col.as_slice()[..d]);
        offsets.push(col[d]);
    }
    Ok((weights, offsets))
}
