use ndarray::{Array2, ArrayView1};

use crate::data::{FeatureSet, HeadWeights};
use crate::linalg::{logsumexp, norm, right_svd};
use crate::scalar::Scalar;

/// Maximum softmax probability of temperature-scaled logits.
///
/// With `temperature = 1` this is MCP; otherwise it is ODIN without the
/// input-perturbation step.
#[derive(Debug, Clone)]
pub struct HeadScorer<T> {
    pub head: HeadWeights<T>,
    pub temperature: T,
}

impl<T: Scalar> HeadScorer<T> {
    pub fn new(head: &HeadWeights<T>, temperature: T) -> Self {
        Self {
            head: head.clone(),
            temperature,
        }
    }

    pub fn max_softmax(&self, f: ArrayView1<'_, T>) -> T {
        let logits = self.head.logits(f) / self.temperature;
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let denom = logits
            .iter()
            .fold(T::zero(), |acc, &l| acc + (l - max).exp());
        T::one() / denom
    }
}

/// Energy of the head applied to activations clipped at a training percentile.
#[derive(Debug, Clone)]
pub struct ReAct<T> {
    pub head: HeadWeights<T>,
    pub threshold: T,
}

impl<T: Scalar> ReAct<T> {
    /// `percentile` is a fraction in `[0, 1]`; the threshold is linearly
    /// interpolated over all training activations.
    pub fn fit(train: &FeatureSet<T>, head: &HeadWeights<T>, percentile: f64) -> Self {
        let mut values: Vec<T> = train.matrix().iter().copied().collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
        Self {
            head: head.clone(),
            threshold: interpolated_percentile(&values, percentile),
        }
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        let clipped = f.mapv(|v| v.min(self.threshold));
        logsumexp(self.head.logits(clipped.view()).view())
    }
}

fn interpolated_percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fraction of the feature norm that lies in the row space of the head.
#[derive(Debug, Clone)]
pub struct NuSA<T> {
    /// Orthonormal basis of the row space of `W`, as columns.
    pub row_space: Array2<T>,
}

impl<T: Scalar> NuSA<T> {
    pub fn fit(head: &HeadWeights<T>) -> Self {
        let w = head.weight();
        let svd = right_svd(w.view());
        let smax = svd.singular_values.iter().copied().fold(T::zero(), T::max);
        let tol = smax * T::epsilon() * T::from_usize(w.nrows().max(w.ncols())).expect("dim fits");
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        Self {
            row_space: svd.v.slice(ndarray::s![.., ..rank]).to_owned(),
        }
    }

    /// `None` for a zero feature vector.
    pub fn score(&self, f: ArrayView1<'_, T>) -> Option<T> {
        let total = norm(f);
        if total == T::zero() {
            return None;
        }
        let inside = norm(self.row_space.t().dot(&f).view());
        Some((inside / total).min(T::one()))
    }
}
