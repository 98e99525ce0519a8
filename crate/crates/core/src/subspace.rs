//! PCA of ID features, per-component artefact discriminability, and removal
//! of the nuisance subspace by orthogonal projection.
//!
//! Typical flow:
//!
//! ```
//! use ndarray::array;
//! use oodg_core::subspace::{pca_fit, component_discriminability, select_nuisance, project_about_mean};
//! use oodg_core::FeatureSet64;
//!
//! let id = FeatureSet64::from_matrix(array![[0.0, 0.0], [2.0, 0.1], [4.0, -0.1], [6.0, 0.0]], "l").unwrap();
//! let sim = FeatureSet64::from_matrix(array![[1.0, 0.0], [2.0, 0.0]], "l").unwrap();
//! let diss = FeatureSet64::from_matrix(array![[9.0, 0.0], [8.0, 0.0]], "l").unwrap();
//!
//! let model = pca_fit(&id).unwrap();
//! let scores = component_discriminability(&model, &sim, &diss).unwrap();
//! let model = select_nuisance(&model.with_discriminability(scores).unwrap(), 1).unwrap();
//! let projected = project_about_mean(&diss, &model).unwrap();
//! // Both shifted points collapse onto the ID mean along the removed axis.
//! let gap = &projected.row(0) - &projected.row(1);
//! assert!(gap.iter().all(|v| v.abs() < 0.1));
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, HEADER_LEN, MAGIC};
use crate::error::{Error, Result};
use crate::linalg::{column_mean, right_svd};
use crate::metrics::{auroc, spearman_rho};
use crate::scalar::Scalar;

pub const SUBSPACE_DUMP_VERSION: u32 = 2;

const FLAG_DISCRIMINABILITY: u8 = 0b0100;
const FLAG_NUISANCE: u8 = 0b1000;

/// Principal directions of ID features plus the optional nuisance selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel<T> {
    layer_name: String,
    mean: Array1<T>,
    basis: Array2<T>,
    eigenvalues: Array1<T>,
    discriminability: Option<Vec<f64>>,
    nuisance: Option<Vec<usize>>,
}

impl<T: Scalar> SubspaceModel<T> {
    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    /// `C x C` matrix whose columns are the principal directions.
    pub fn basis(&self) -> &Array2<T> {
        &self.basis
    }

    /// Variances along each direction, descending.
    pub fn eigenvalues(&self) -> &Array1<T> {
        &self.eigenvalues
    }

    pub fn discriminability(&self) -> Option<&[f64]> {
        self.discriminability.as_deref()
    }

    /// Indices (into the principal directions) of the selected nuisance columns.
    pub fn nuisance_indices(&self) -> Option<&[usize]> {
        self.nuisance.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The `C x k` nuisance basis `U`, built from columns of the principal basis.
    pub fn nuisance_basis(&self) -> Option<Array2<T>> {
        let idx = self.nuisance.as_ref()?;
        let mut u = Array2::zeros((self.dim(), idx.len()));
        for (dst, &src) in idx.iter().enumerate() {
            u.column_mut(dst).assign(&self.basis.column(src));
        }
        Some(u)
    }

    pub fn with_discriminability(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} discriminability scores for C={}",
                scores.len(),
                self.dim()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.5..=1.0).contains(*s)) {
            return Err(Error::InvalidParameter(format!(
                "discriminability {bad} is outside [0.5, 1]"
            )));
        }
        self.discriminability = Some(scores);
        // A previous selection no longer matches the new scores.
        self.nuisance = None;
        Ok(self)
    }

    /// PCA coefficients `Z = (F - mean) V`.
    pub fn coefficients(&self, fs: &FeatureSet<T>) -> Result<Array2<T>> {
        self.check_dim(fs)?;
        Ok(self.centered(fs.matrix().view()).dot(&self.basis))
    }

    fn centered(&self, m: ArrayView2<'_, T>) -> Array2<T> {
        &m - &self.mean
    }

    fn check_dim(&self, fs: &FeatureSet<T>) -> Result<()> {
        if fs.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have C={} but the subspace model has C={}",
                fs.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn warn_on_layer_mismatch(&self, fs: &FeatureSet<T>) {
        if !self.layer_name.is_empty()
            && !fs.layer_name().is_empty()
            && self.layer_name != fs.layer_name()
        {
            log::warn!(
                "subspace fitted on layer '{}' applied to features from layer '{}'",
                self.layer_name,
                fs.layer_name()
            );
        }
    }
}

/// PCA of ID features via the SVD of the centred data matrix.
///
/// Eigenvalues use the unbiased `N - 1` normalisation.
pub fn pca_fit<T: Scalar>(id_features: &FeatureSet<T>) -> Result<SubspaceModel<T>> {
    let n = id_features.n_samples();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let x = id_features.matrix();
    let mean = column_mean(x.view());
    let centered = x - &mean;
    let svd = right_svd(centered.view());
    let denom = T::from_usize(n - 1).expect("sample count fits the scalar type");
    let eigenvalues = svd.singular_values.mapv(|s| s * s / denom);
    Ok(SubspaceModel {
        layer_name: id_features.layer_name().to_string(),
        mean,
        basis: svd.v,
        eigenvalues,
        discriminability: None,
        nuisance: None,
    })
}

/// Folded AUROC `max(AUC, 1 - AUC)` of dissimilar vs similar projections on
/// each principal direction.
pub fn component_discriminability<T: Scalar>(
    model: &SubspaceModel<T>,
    f_sim: &FeatureSet<T>,
    f_diss: &FeatureSet<T>,
) -> Result<Vec<f64>> {
    if f_sim.is_empty() || f_diss.is_empty() {
        return Err(Error::EmptyInput);
    }
    let z_sim = model.coefficients(f_sim)?;
    let z_diss = model.coefficients(f_diss)?;
    (0..model.dim())
        .map(|k| {
            let diss = z_diss.column(k).to_vec();
            let sim = z_sim.column(k).to_vec();
            let auc = auroc(&diss, &sim)?;
            Ok(auc.max(1.0 - auc))
        })
        .collect()
}

/// Per-component entry of the variance/discriminability alignment table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentAlignment {
    pub component: usize,
    pub log_eigenvalue: f64,
    pub discriminability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceAlignment {
    pub rho: f64,
    pub components: Vec<ComponentAlignment>,
}

/// Spearman correlation between `log λ_k` and `I_k`.
///
/// Directions with numerically zero variance are left out.
pub fn variance_alignment<T: Scalar>(model: &SubspaceModel<T>) -> Result<VarianceAlignment> {
    let scores = model
        .discriminability()
        .ok_or(Error::MissingDiscriminability)?;
    let lam_max = model
        .eigenvalues
        .iter()
        .copied()
        .fold(T::zero(), T::max)
        .as_f64();
    let floor = lam_max * T::epsilon().as_f64() * model.dim() as f64;
    let components: Vec<ComponentAlignment> = model
        .eigenvalues
        .iter()
        .zip(scores)
        .enumerate()
        .filter(|(_, (l, _))| l.as_f64() > floor)
        .map(|(k, (l, &i))| ComponentAlignment {
            component: k,
            log_eigenvalue: l.as_f64().ln(),
            discriminability: i,
        })
        .collect();
    let x: Vec<f64> = components.iter().map(|c| c.log_eigenvalue).collect();
    let y: Vec<f64> = components.iter().map(|c| c.discriminability).collect();
    let rho = spearman_rho(&x, &y)?;
    Ok(VarianceAlignment { rho, components })
}

/// Picks the `k` directions with the highest discriminability (ties: larger
/// eigenvalue first, then lower index).
pub fn select_nuisance<T: Scalar>(model: &SubspaceModel<T>, k: usize) -> Result<SubspaceModel<T>> {
    let scores = model
        .discriminability()
        .ok_or(Error::MissingDiscriminability)?;
    if k > model.dim() {
        return Err(Error::KOutOfRange {
            k,
            dim: model.dim(),
        });
    }
    let mut order: Vec<usize> = (0..model.dim()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(
                model.eigenvalues[b]
                    .partial_cmp(&model.eigenvalues[a])
                    .expect("finite eigenvalues"),
            )
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let mut out = model.clone();
    out.nuisance = Some(order);
    Ok(out)
}

/// `F (I - U Uᵀ)` for row-sample matrices.
pub fn project_out<T: Scalar>(features: ArrayView2<'_, T>, u: ArrayView2<'_, T>) -> Array2<T> {
    if u.ncols() == 0 {
        return features.to_owned();
    }
    let coeffs = features.dot(&u);
    &features - &coeffs.dot(&u.t())
}

/// Projects every row onto the orthogonal complement of the nuisance basis.
///
/// This is the plain linear map; see [`project_about_mean`] for the variant
/// anchored at the ID mean.
pub fn project_orthogonal<T: Scalar>(
    features: &FeatureSet<T>,
    model: &SubspaceModel<T>,
) -> Result<FeatureSet<T>> {
    model.check_dim(features)?;
    model.warn_on_layer_mismatch(features);
    let u = model.nuisance_basis().ok_or(Error::MissingNuisance)?;
    features.with_matrix(project_out(features.matrix().view(), u.view()))
}

/// Subtracts the model's ID mean from every row.
pub fn center<T: Scalar>(
    features: &FeatureSet<T>,
    model: &SubspaceModel<T>,
) -> Result<FeatureSet<T>> {
    model.check_dim(features)?;
    features.with_matrix(model.centered(features.matrix().view()))
}

/// Removes the nuisance component of each row's deviation from the ID mean:
/// `f - U Uᵀ (f - μ)`. The ID mean is kept, so `k = 0` is the identity and
/// scorers that are not translation invariant see features on their
/// original scale.
pub fn project_about_mean<T: Scalar>(
    features: &FeatureSet<T>,
    model: &SubspaceModel<T>,
) -> Result<FeatureSet<T>> {
    model.check_dim(features)?;
    model.warn_on_layer_mismatch(features);
    let u = model.nuisance_basis().ok_or(Error::MissingNuisance)?;
    let m = features.matrix();
    if u.ncols() == 0 {
        return Ok(features.clone());
    }
    let coeffs = model.centered(m.view()).dot(&u);
    features.with_matrix(m - &coeffs.dot(&u.t()))
}

/// Serialises a model as a version-2 `OODG` file with f64 sections:
/// name, mean, eigenvalues, basis (row-major), optional scores, optional
/// nuisance indices.
pub fn encode_subspace<T: Scalar>(model: &SubspaceModel<T>) -> Result<Vec<u8>> {
    let c =
        u32::try_from(model.dim()).map_err(|_| Error::DimensionMismatch("C exceeds u32".into()))?;
    let mut flags = 0u8;
    if model.discriminability.is_some() {
        flags |= FLAG_DISCRIMINABILITY;
    }
    if model.nuisance.is_some() {
        flags |= FLAG_NUISANCE;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&SUBSPACE_DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    buf.push(flags);
    buf.resize(HEADER_LEN, 0);

    let name = model.layer_name.as_bytes();
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    let push = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
    model.mean.iter().for_each(|v| push(&mut buf, v.as_f64()));
    model
        .eigenvalues
        .iter()
        .for_each(|v| push(&mut buf, v.as_f64()));
    model.basis.iter().for_each(|v| push(&mut buf, v.as_f64()));
    if let Some(scores) = &model.discriminability {
        scores.iter().for_each(|&v| push(&mut buf, v));
    }
    if let Some(idx) = &model.nuisance {
        buf.extend_from_slice(&(idx.len() as u32).to_le_bytes());
        for &i in idx {
            buf.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::DimensionMismatch(format!(
                "truncated subspace file while reading {what}"
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        let out: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(what.to_string()));
        }
        Ok(out)
    }
}

pub fn decode_subspace<T: Scalar>(bytes: &[u8]) -> Result<SubspaceModel<T>> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader("not an OODG file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SUBSPACE_DUMP_VERSION {
        return Err(Error::MalformedHeader(format!(
            "subspace files are version {SUBSPACE_DUMP_VERSION}, found {version}"
        )));
    }
    let c = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let c2 = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if c != c2 {
        return Err(Error::MalformedHeader(
            "subspace basis must be square".into(),
        ));
    }
    let flags = bytes[16];
    if flags & !(FLAG_DISCRIMINABILITY | FLAG_NUISANCE) != 0 {
        return Err(Error::MalformedHeader(format!(
            "unknown flag bits {flags:#04x}"
        )));
    }
    let mut cur = Cursor {
        bytes,
        at: HEADER_LEN,
    };
    let name_len = cur.u32("name length")? as usize;
    let layer_name = String::from_utf8(cur.take(name_len, "layer name")?.to_vec())
        .map_err(|_| Error::MalformedHeader("layer name is not UTF-8".into()))?;
    let conv = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    let mean = Array1::from(conv(cur.f64s(c, "mean")?));
    let eigenvalues = Array1::from(conv(cur.f64s(c, "eigenvalues")?));
    let basis =
        Array2::from_shape_vec((c, c), conv(cur.f64s(c * c, "basis")?)).expect("length checked");
    let discriminability = if flags & FLAG_DISCRIMINABILITY != 0 {
        Some(cur.f64s(c, "discriminability")?)
    } else {
        None
    };
    let nuisance = if flags & FLAG_NUISANCE != 0 {
        let k = cur.u32("nuisance count")? as usize;
        let idx = (0..k)
            .map(|_| cur.u32("nuisance index").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if k > c || idx.iter().any(|&i| i >= c) {
            return Err(Error::KOutOfRange { k, dim: c });
        }
        Some(idx)
    } else {
        None
    };
    if cur.at != bytes.len() {
        return Err(Error::DimensionMismatch(
            "trailing bytes in subspace file".into(),
        ));
    }
    Ok(SubspaceModel {
        layer_name,
        mean,
        basis,
        eigenvalues,
        discriminability,
        nuisance,
    })
}

pub fn save_subspace<T: Scalar>(model: &SubspaceModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_subspace(model)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_subspace<T: Scalar>(path: impl AsRef<Path>) -> Result<SubspaceModel<T>> {
    decode_subspace(&fs::read(path)?)
}
