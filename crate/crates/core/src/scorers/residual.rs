use ndarray::{s, Array1, Array2, ArrayView1};

use crate::data::{FeatureSet, HeadWeights};
use crate::error::Result;
use crate::linalg::{logsumexp, norm};
use crate::scalar::Scalar;
use crate::subspace::pca_fit;

/// Negative norm of the part of `f - mean` outside the top-`D` principal
/// directions of the training features.
#[derive(Debug, Clone)]
pub struct Residual<T> {
    pub mean: Array1<T>,
    /// Principal directions `D+1..C`, as columns.
    pub complement: Array2<T>,
}

impl<T: Scalar> Residual<T> {
    pub fn fit(train: &FeatureSet<T>, retained: usize) -> Result<Self> {
        let pca = pca_fit(train)?;
        Ok(Self {
            mean: pca.mean().clone(),
            complement: pca.basis().slice(s![.., retained..]).to_owned(),
        })
    }

    pub fn residual_norm(&self, f: ArrayView1<'_, T>) -> T {
        if self.complement.ncols() == 0 {
            return T::zero();
        }
        let centred = &f - &self.mean;
        norm(self.complement.t().dot(&centred).view())
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        -self.residual_norm(f)
    }
}

/// Virtual-logit matching, scored as `-alpha * residual + logsumexp(logits)`.
#[derive(Debug, Clone)]
pub struct ViM<T> {
    pub residual: Residual<T>,
    pub head: HeadWeights<T>,
    pub alpha: T,
}

impl<T: Scalar> ViM<T> {
    pub fn fit(
        train: &FeatureSet<T>,
        head: &HeadWeights<T>,
        retained: usize,
        alpha: T,
    ) -> Result<Self> {
        Ok(Self {
            residual: Residual::fit(train, retained)?,
            head: head.clone(),
            alpha,
        })
    }

    pub fn score(&self, f: ArrayView1<'_, T>) -> T {
        -self.alpha * self.residual.residual_norm(f) + logsumexp(self.head.logits(f).view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn residual_of_off_plane_point() {
        // Training data spans the x-y plane; z is pure residual.
        let train = FeatureSet::from_matrix(
            array![
                [1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [0.0, -2.0, 0.0]
            ],
            "l",
        )
        .unwrap();
        let r = Residual::fit(&train, 2).unwrap();
        assert_abs_diff_eq!(
            r.score(array![0.3, -0.7, 4.0].view()),
            -4.0,
            epsilon = 1e-12
        );
        let full = Residual::fit(&train, 3).unwrap();
        assert_eq!(full.score(array![5.0, 5.0, 5.0].view()), 0.0);
    }
}
