use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};

use crate::data::FeatureSet;
use crate::linalg::column_mean;
use crate::scalar::Scalar;

/// Added to mean reachability distances so duplicated points keep a finite density.
const LRD_EPS: f64 = 1e-10;

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Orders by distance, breaking ties by training index.
fn by_dist_then_index<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .expect("finite distances")
        .then(a.1.cmp(&b.1))
}

/// The `k` nearest training rows of `f` as `(distance, index)`, closest first.
/// `skip` excludes one training index (the query itself during fitting).
fn nearest<T: Scalar>(
    train: &Array2<T>,
    f: ArrayView1<'_, T>,
    k: usize,
    skip: Option<usize>,
) -> Vec<(T, usize)> {
    let mut all: Vec<(T, usize)> = train
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, row)| (sq_dist(row, f), i))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_dist_then_index);
        all.truncate(k);
    }
    all.sort_by(by_dist_then_index);
    all.into_iter().map(|(d, i)| (d.sqrt(), i)).collect()
}

/// Deep-KNN: negative Euclidean distance to the k-th nearest training sample.
#[derive(Debug, Clone)]
pub struct Knn<T> {
    pub reference: Array2<T>,
    pub k: usize,
}

impl<T: Scalar> Knn<T> {
    pub fn fit(train: &FeatureSet<T>, k: usize) -> Self {
        Self {
            reference: train.matrix().clone(),
            k,
        }
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        let nn = nearest(&self.reference, f, self.k, None);
        -nn[self.k - 1].0
    }
}

/// Local outlier factor with k-reachability distances. Scores are `-LOF`.
#[derive(Debug, Clone)]
pub struct Lof<T> {
    pub reference: Array2<T>,
    pub k: usize,
    /// k-distance of every training point (excluding itself).
    pub k_distance: Vec<T>,
    /// Local reachability density of every training point.
    pub lrd: Vec<T>,
}

impl<T: Scalar> Lof<T> {
    pub fn fit(train: &FeatureSet<T>, k: usize) -> Self {
        let x = train.matrix();
        let neighbours: Vec<Vec<(T, usize)>> = (0..x.nrows())
            .map(|i| nearest(x, x.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<T> = neighbours.iter().map(|nn| nn[k - 1].0).collect();
        let lrd = neighbours
            .iter()
            .map(|nn| Self::density(nn, &k_distance))
            .collect();
        Self {
            reference: x.clone(),
            k,
            k_distance,
            lrd,
        }
    }

    fn density(nn: &[(T, usize)], k_distance: &[T]) -> T {
        let total = nn
            .iter()
            .fold(T::zero(), |acc, &(d, o)| acc + d.max(k_distance[o]));
        let mean = total / T::from_usize(nn.len()).expect("k fits");
        T::one() / (mean + T::lit(LRD_EPS))
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        let nn = nearest(&self.reference, f, self.k, None);
        let lrd_f = Self::density(&nn, &self.k_distance);
        let mean_lrd = nn.iter().fold(T::zero(), |acc, &(_, o)| acc + self.lrd[o])
            / T::from_usize(nn.len()).expect("k fits");
        -(mean_lrd / lrd_f)
    }
}

/// Gaussian kernel density estimate, scored as the log-density.
///
/// The bandwidth follows Scott's rule on an isotropic scale:
/// `h = s * N^(-1/(C+4))` with `s² = trace(Σ) / C`. A single global scale
/// keeps the estimate invariant under rotations of feature space.
#[derive(Debug, Clone)]
pub struct Kde<T> {
    pub reference: Array2<T>,
    pub bandwidth: T,
}

impl<T: Scalar> Kde<T> {
    pub fn fit(train: &FeatureSet<T>) -> Self {
        let x = train.matrix();
        let n = x.nrows();
        let c = x.ncols();
        let mean = column_mean(x.view());
        let total_var = x
            .rows()
            .into_iter()
            .fold(T::zero(), |acc, row| acc + sq_dist(row, mean.view()))
            / T::from_usize(n).expect("count fits");
        let mut scale = (total_var / T::from_usize(c.max(1)).expect("dim fits")).sqrt();
        if !(scale > T::zero()) {
            scale = T::one();
        }
        let exponent = -T::one() / T::from_usize(c + 4).expect("dim fits");
        let bandwidth = scale * T::from_usize(n).expect("count fits").powf(exponent);
        Self {
            reference: x.clone(),
            bandwidth,
        }
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        let two_h2 = T::lit(2.0) * self.bandwidth * self.bandwidth;
        let exps: Vec<T> = self
            .reference
            .rows()
            .into_iter()
            .map(|row| -sq_dist(row, f) / two_h2)
            .collect();
        let max = exps.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = exps.iter().fold(T::zero(), |acc, &e| acc + (e - max).exp());
        let n = T::from_usize(exps.len()).expect("count fits");
        let c = T::from_usize(self.reference.ncols()).expect("dim fits");
        let log_norm = c * (self.bandwidth * T::lit((2.0 * std::f64::consts::PI).sqrt())).ln();
        max + (sum / n).ln() - log_norm
    }
}
