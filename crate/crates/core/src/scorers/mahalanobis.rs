use ndarray::{Array1, Array2, ArrayView1};

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse};
use crate::scalar::Scalar;

/// Relative size of the diagonal ridge, in units of `trace(Σ) / C`.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Class-conditional Gaussian with a shared (pooled, population-normalised)
/// covariance. Scores are `-min_c (f - μ_c)ᵀ Σ⁻¹ (f - μ_c)`.
#[derive(Debug, Clone)]
pub struct Mahalanobis<T> {
    pub class_means: Vec<Array1<T>>,
    pub precision: Array2<T>,
    /// Ridge added to the covariance diagonal (zero when none was needed).
    pub ridge: T,
}

impl<T: Scalar> Mahalanobis<T> {
    pub fn fit(train: &FeatureSet<T>) -> Result<Self> {
        let labels = train.class_labels().ok_or(Error::MissingLabels)?;
        let c = train.dim();
        let n_classes = train.num_classes().max(1);
        let x = train.matrix();

        let mut sums = vec![Array1::<T>::zeros(c); n_classes];
        let mut counts = vec![0usize; n_classes];
        for (row, &label) in x.rows().into_iter().zip(labels) {
            sums[label] += &row;
            counts[label] += 1;
        }
        let means: Vec<Option<Array1<T>>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| (n > 0).then(|| s / T::from_usize(n).expect("count fits")))
            .collect();

        let mut cov = Array2::<T>::zeros((c, c));
        for (row, &label) in x.rows().into_iter().zip(labels) {
            let d = &row - means[label].as_ref().expect("class has samples");
            for i in 0..c {
                let di = d[i];
                for j in i..c {
                    cov[[i, j]] += di * d[j];
                }
            }
        }
        let n = T::from_usize(train.n_samples()).expect("count fits");
        for i in 0..c {
            for j in i..c {
                let v = cov[[i, j]] / n;
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }

        let (l, ridge) = regularised_cholesky(&cov)?;
        Ok(Self {
            class_means: means.into_iter().flatten().collect(),
            precision: cholesky_inverse(l.view()),
            ridge,
        })
    }

    pub fn squared_distance(&self, f: ArrayView1<'_, T>, class: usize) -> T {
        let d = &f - &self.class_means[class];
        d.dot(&self.precision.dot(&d))
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        let best = (0..self.class_means.len())
            .map(|c| self.squared_distance(f, c))
            .fold(T::infinity(), T::min);
        -best
    }
}

/// Cholesky factor of the covariance, adding `RIDGE_SCALE * trace / C` to the
/// diagonal when the plain factorisation fails or has a pivot below
/// `sqrt(eps) * trace / C`.
fn regularised_cholesky<T: Scalar>(cov: &Array2<T>) -> Result<(Array2<T>, T)> {
    let c = cov.nrows();
    let mean_var = cov.diag().sum() / T::from_usize(c).expect("dim fits");
    let floor = T::epsilon().sqrt() * mean_var;
    if let Ok(l) = cholesky(cov.view()) {
        if l.diag().iter().all(|&p| p * p >= floor) {
            return Ok((l, T::zero()));
        }
    }
    let ridge = T::lit(RIDGE_SCALE) * mean_var;
    if !(ridge > T::zero()) {
        return Err(Error::SingularCovariance);
    }
    let mut reg = cov.clone();
    for i in 0..c {
        reg[[i, i]] += ridge;
    }
    let l = cholesky(reg.view())?;
    Ok((l, ridge))
}
