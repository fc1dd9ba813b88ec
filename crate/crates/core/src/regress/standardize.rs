use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns with a population standard deviation below this get scale 1.
pub const MIN_SCALE: f64 = 1e-12;

/// Per-column affine normalization `(x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of each column of `rows`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyTrainingSet)?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Dimension {
                    what: "row length",
                    expected: dim,
                    got: r.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd < MIN_SCALE {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    /// Median and normal-consistent median absolute deviation of each
    /// column. Columns whose MAD vanishes fall back to [`Standardizer::fit`].
    pub fn fit_robust<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let plain = Self::fit(rows)?;
        let dim = plain.dim();
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        let mut col = Vec::with_capacity(rows.len());
        for k in 0..dim {
            col.clear();
            col.extend(rows.iter().map(|r| r.as_ref()[k]));
            let med = median(&mut col);
            col.iter_mut().for_each(|x| *x = (*x - med).abs());
            let mad = 1.4826 * median(&mut col);
            if mad < MIN_SCALE {
                mean.push(plain.mean[k]);
                scale.push(plain.scale[k]);
            } else {
                mean.push(med);
                scale.push(mad);
            }
        }
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, x), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.scale) {
            *o = (x - m) / s;
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_fit_ignores_an_outlier() {
        let mut rows: Vec<[f64; 1]> = (0..21).map(|i| [i as f64 * 0.1]).collect();
        rows[20] = [1e6];
        let st = Standardizer::fit_robust(&rows).unwrap();
        assert!((st.mean[0] - 1.0).abs() < 1e-12);
        assert!(st.scale[0] < 1.0);
        let constant = vec![[2.0]; 5];
        assert_eq!(Standardizer::fit_robust(&constant).unwrap().scale, vec![1.0]);
    }

    #[test]
    fn constant_column_gets_unit_scale() {
        let s = Standardizer::fit(&[vec![4.0, 0.0], vec![4.0, 2.0]]).unwrap();
        assert_eq!(s.mean, vec![4.0, 1.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
    }

    #[test]
    fn refit_on_standardized_is_identity() {
        let rows: Vec<Vec<f64>> = (0..17)
            .map(|i| {
                let x = i as f64;
                vec![x * 0.3 - 2.0, (x * 1.7).sin() * 5.0, 1e-3 * x * x]
            })
            .collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        let s2 = Standardizer::fit(&z).unwrap();
        for (m, sc) in s2.mean.iter().zip(&s2.scale) {
            assert!(m.abs() < 1e-12);
            assert!((sc - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_ragged_inputs_fail() {
        assert!(matches!(Standardizer::fit::<Vec<f64>>(&[]), Err(Error::EmptyTrainingSet)));
        assert!(Standardizer::fit(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
