//! Feature matrices, classifier heads, manifests and the `OODG` binary dump.
//!
//! Dump layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "OODG"
//! 4..8    u32 version (1)
//! 8..12   u32 N
//! 12..16  u32 C
//! 16      u8 flags: bit 0 = head weights follow, bit 1 = spatial (N,C,H,W) payload
//! 17..20  zero
//! 20..24  u32 H (spatial dumps only, otherwise zero)
//! 24..28  u32 W (spatial dumps only, otherwise zero)
//! 28..32  zero
//! payload N*C (or N*C*H*W) f32, row-major
//! [u32 K, K*C f32 weights, K f32 biases]   when bit 0 is set
//! ```
//!
//! Sample identities are not stored in the dump. Row `i` of a dump belongs
//! to the `i`-th id of the corresponding manifest split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"OODG";
pub const FEATURE_DUMP_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

const FLAG_HEAD: u8 = 0b01;
const FLAG_SPATIAL: u8 = 0b10;

/// Pooled activations of one layer: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    sample_ids: Vec<String>,
    matrix: Array2<T>,
    layer_name: String,
    class_labels: Option<Vec<usize>>,
    num_classes: usize,
    group_tags: Option<BTreeMap<String, String>>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(
        sample_ids: Vec<String>,
        matrix: Array2<T>,
        layer_name: impl Into<String>,
    ) -> Result<Self> {
        if sample_ids.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                matrix.nrows()
            )));
        }
        check_finite(&matrix)?;
        Ok(Self {
            sample_ids,
            matrix,
            layer_name: layer_name.into(),
            class_labels: None,
            num_classes: 0,
            group_tags: None,
        })
    }

    /// Builds a set whose ids are the row indices `"0"`, `"1"`, ...
    pub fn from_matrix(matrix: Array2<T>, layer_name: impl Into<String>) -> Result<Self> {
        let ids = (0..matrix.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, matrix, layer_name)
    }

    pub fn with_class_labels(mut self, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != self.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                self.n_samples()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        self.class_labels = Some(labels);
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn with_group_tags(mut self, tags: BTreeMap<String, String>) -> Self {
        self.group_tags = Some(tags);
        self
    }

    pub fn with_layer_name(mut self, name: impl Into<String>) -> Self {
        self.layer_name = name.into();
        self
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.matrix
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        self.class_labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn group_tags(&self) -> Option<&BTreeMap<String, String>> {
        self.group_tags.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.nrows()
    }

    /// Feature dimension C.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.matrix.row(i)
    }

    pub fn tag_of(&self, i: usize) -> Option<&str> {
        self.group_tags
            .as_ref()
            .and_then(|t| t.get(&self.sample_ids[i]))
            .map(String::as_str)
    }

    /// Row indices whose group tag equals `tag`.
    pub fn rows_with_tag(&self, tag: &str) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.tag_of(i) == Some(tag))
            .collect()
    }

    /// Subset of rows, keeping labels and tags.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut matrix = Array2::zeros((rows.len(), self.dim()));
        for (dst, &src) in rows.iter().enumerate() {
            matrix.row_mut(dst).assign(&self.matrix.row(src));
        }
        Self {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            matrix,
            layer_name: self.layer_name.clone(),
            class_labels: self
                .class_labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            group_tags: self.group_tags.clone(),
        }
    }

    /// Same samples and metadata with a replacement matrix (any column count).
    pub fn with_matrix(&self, matrix: Array2<T>) -> Result<Self> {
        if matrix.nrows() != self.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "replacement matrix has {} rows, expected {}",
                matrix.nrows(),
                self.n_samples()
            )));
        }
        check_finite(&matrix)?;
        Ok(Self {
            matrix,
            ..self.clone()
        })
    }

    /// Concatenates rows of two sets with the same dimension and layer.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate C={} with C={}",
                self.dim(),
                other.dim()
            )));
        }
        let matrix =
            ndarray::concatenate(ndarray::Axis(0), &[self.matrix.view(), other.matrix.view()])
                .expect("column counts checked");
        let mut ids = self.sample_ids.clone();
        ids.extend(other.sample_ids.iter().cloned());
        let labels = match (&self.class_labels, &other.class_labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            _ => None,
        };
        let tags = match (&self.group_tags, &other.group_tags) {
            (None, None) => None,
            (a, b) => {
                let mut t = a.clone().unwrap_or_default();
                t.extend(b.clone().unwrap_or_default());
                Some(t)
            }
        };
        Ok(Self {
            sample_ids: ids,
            matrix,
            layer_name: self.layer_name.clone(),
            num_classes: if labels.is_some() {
                self.num_classes.max(other.num_classes)
            } else {
                0
            },
            class_labels: labels,
            group_tags: tags,
        })
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSet<U> {
        FeatureSet {
            sample_ids: self.sample_ids.clone(),
            matrix: self.matrix.mapv(|v| U::lit(v.as_f64())),
            layer_name: self.layer_name.clone(),
            class_labels: self.class_labels.clone(),
            num_classes: self.num_classes,
            group_tags: self.group_tags.clone(),
        }
    }
}

/// Final linear layer `logits = W f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    weight: Array2<T>,
    bias: Array1<T>,
}

impl<T: Scalar> HeadWeights<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "head has {} weight rows but {} biases",
                weight.nrows(),
                bias.len()
            )));
        }
        check_finite(&weight)?;
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("head bias".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Array2<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn logits(&self, f: ArrayView1<'_, T>) -> Array1<T> {
        self.weight.dot(&f) + &self.bias
    }

    pub fn cast<U: Scalar>(&self) -> HeadWeights<U> {
        HeadWeights {
            weight: self.weight.mapv(|v| U::lit(v.as_f64())),
            bias: self.bias.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// Unpooled `(N, C, H, W)` activations in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawActivationTensor<T> {
    layer_name: String,
    dims: [usize; 4],
    values: Vec<T>,
}

impl<T: Scalar> RawActivationTensor<T> {
    pub fn new(layer_name: impl Into<String>, dims: [usize; 4], values: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("activation index {i}")));
        }
        Ok(Self {
            layer_name: layer_name.into(),
            dims,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }
}

/// Averages each channel over its `H x W` spatial positions.
pub fn global_average_pool<T: Scalar>(t: &RawActivationTensor<T>) -> Result<FeatureSet<T>> {
    let [n, c, h, w] = t.dims;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::EmptySpatialExtent);
    }
    let denom = T::from_usize(hw).expect("spatial extent fits the scalar type");
    let mut out = Array2::<T>::zeros((n, c));
    for (idx, chunk) in t.values.chunks_exact(hw).enumerate() {
        let sum = chunk.iter().fold(T::zero(), |acc, &v| acc + v);
        out[[idx / c, idx % c]] = sum / denom;
    }
    FeatureSet::from_matrix(out, t.layer_name.clone())
}

fn check_finite<T: Scalar>(m: &Array2<T>) -> Result<()> {
    for ((i, j), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!("row {i}, column {j}")));
        }
    }
    Ok(())
}

/// Layer name encoded in a dump path: `<split>.<layer>.oodg` gives `<layer>`,
/// a stem without a dot is used whole.
pub fn layer_from_path(path: impl AsRef<Path>) -> String {
    let stem = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.split_once('.') {
        Some((_, layer)) if !layer.is_empty() => layer.to_string(),
        _ => stem,
    }
}

struct Header {
    n: usize,
    c: usize,
    flags: u8,
    h: usize,
    w: usize,
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn parse_header(bytes: &[u8], version: u32) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let found = read_u32(bytes, 4);
    if found != version {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {found} (expected {version})"
        )));
    }
    let flags = bytes[16];
    if flags & !(FLAG_HEAD | FLAG_SPATIAL) != 0 {
        return Err(Error::MalformedHeader(format!(
            "unknown flag bits {flags:#04x}"
        )));
    }
    let spatial = flags & FLAG_SPATIAL != 0;
    let padding_ok = bytes[17..20].iter().all(|&b| b == 0)
        && bytes[28..32].iter().all(|&b| b == 0)
        && (spatial || bytes[20..28].iter().all(|&b| b == 0));
    if !padding_ok {
        return Err(Error::MalformedHeader("non-zero padding".into()));
    }
    Ok(Header {
        n: read_u32(bytes, 8) as usize,
        c: read_u32(bytes, 12) as usize,
        flags,
        h: read_u32(bytes, 20) as usize,
        w: read_u32(bytes, 24) as usize,
    })
}

fn write_header(
    buf: &mut Vec<u8>,
    n: usize,
    c: usize,
    flags: u8,
    hw: Option<(usize, usize)>,
) -> Result<()> {
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} = {v} exceeds u32")))
    };
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FEATURE_DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&as_u32(n, "N")?.to_le_bytes());
    buf.extend_from_slice(&as_u32(c, "C")?.to_le_bytes());
    buf.push(flags);
    buf.extend_from_slice(&[0; 3]);
    let (h, w) = hw.unwrap_or((0, 0));
    buf.extend_from_slice(&as_u32(h, "H")?.to_le_bytes());
    buf.extend_from_slice(&as_u32(w, "W")?.to_le_bytes());
    buf.extend_from_slice(&[0; 4]);
    debug_assert_eq!(buf.len(), HEADER_LEN);
    Ok(())
}

/// Reads `count` f32 values starting at `*at`, advancing the cursor.
fn read_f32s<T: Scalar>(bytes: &[u8], at: &mut usize, count: usize, what: &str) -> Result<Vec<T>> {
    let need = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(*at))
        .ok_or_else(|| Error::DimensionMismatch(format!("{what} size overflows")))?;
    if need > bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: need {} bytes, file has {}",
            need - *at,
            bytes.len().saturating_sub(*at)
        )));
    }
    let mut out = Vec::with_capacity(count);
    for (i, chunk) in bytes[*at..need].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!("{what} element {i}")));
        }
        out.push(T::lit(v as f64));
    }
    *at = need;
    Ok(out)
}

fn push_f32s<T: Scalar>(
    buf: &mut Vec<u8>,
    values: impl IntoIterator<Item = T>,
    what: &str,
) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        let f = v.as_f32();
        if !f.is_finite() {
            return Err(Error::NonFiniteValue(format!("{what} element {i}")));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

fn read_head<T: Scalar>(bytes: &[u8], at: &mut usize, c: usize) -> Result<HeadWeights<T>> {
    if *at + 4 > bytes.len() {
        return Err(Error::DimensionMismatch("missing head class count".into()));
    }
    let k = read_u32(bytes, *at) as usize;
    *at += 4;
    let w = read_f32s::<T>(bytes, at, k * c, "head weights")?;
    let b = read_f32s::<T>(bytes, at, k, "head bias")?;
    HeadWeights::new(
        Array2::from_shape_vec((k, c), w).expect("length checked"),
        Array1::from(b),
    )
}

fn push_head<T: Scalar>(buf: &mut Vec<u8>, head: &HeadWeights<T>) -> Result<()> {
    let k = u32::try_from(head.num_classes())
        .map_err(|_| Error::DimensionMismatch("K exceeds u32".into()))?;
    buf.extend_from_slice(&k.to_le_bytes());
    push_f32s(buf, head.weight.iter().copied(), "head weights")?;
    push_f32s(buf, head.bias.iter().copied(), "head bias")
}

/// Parses a pooled feature dump from memory.
pub fn decode_feature_dump<T: Scalar>(
    bytes: &[u8],
    layer_name: &str,
) -> Result<(FeatureSet<T>, Option<HeadWeights<T>>)> {
    let hdr = parse_header(bytes, FEATURE_DUMP_VERSION)?;
    if hdr.flags & FLAG_SPATIAL != 0 {
        return Err(Error::MalformedHeader(
            "spatial activation dump; decode it with decode_activation_dump".into(),
        ));
    }
    let mut at = HEADER_LEN;
    let values = read_f32s::<T>(bytes, &mut at, hdr.n * hdr.c, "feature payload")?;
    let matrix = Array2::from_shape_vec((hdr.n, hdr.c), values).expect("length checked");
    let head = if hdr.flags & FLAG_HEAD != 0 {
        Some(read_head(bytes, &mut at, hdr.c)?)
    } else {
        None
    };
    if at != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - at
        )));
    }
    Ok((FeatureSet::from_matrix(matrix, layer_name)?, head))
}

pub fn encode_feature_dump<T: Scalar>(
    fs: &FeatureSet<T>,
    head: Option<&HeadWeights<T>>,
) -> Result<Vec<u8>> {
    if let Some(h) = head {
        if h.dim() != fs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "head expects C={} but features have C={}",
                h.dim(),
                fs.dim()
            )));
        }
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * fs.n_samples() * fs.dim());
    let flags = if head.is_some() { FLAG_HEAD } else { 0 };
    write_header(&mut buf, fs.n_samples(), fs.dim(), flags, None)?;
    push_f32s(&mut buf, fs.matrix.iter().copied(), "feature payload")?;
    if let Some(h) = head {
        push_head(&mut buf, h)?;
    }
    Ok(buf)
}

/// Loads a pooled feature dump. The layer name is taken from the file name,
/// see [`layer_from_path`].
pub fn load_feature_dump<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(FeatureSet<T>, Option<HeadWeights<T>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_feature_dump(&bytes, &layer_from_path(path))
}

/// Writes a pooled feature dump. Values are validated and encoded before the
/// file is touched.
pub fn save_feature_dump<T: Scalar>(
    fs: &FeatureSet<T>,
    head: Option<&HeadWeights<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_feature_dump(fs, head)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn decode_activation_dump<T: Scalar>(
    bytes: &[u8],
    layer_name: &str,
) -> Result<(RawActivationTensor<T>, Option<HeadWeights<T>>)> {
    let hdr = parse_header(bytes, FEATURE_DUMP_VERSION)?;
    if hdr.flags & FLAG_SPATIAL == 0 {
        return Err(Error::MalformedHeader(
            "not a spatial activation dump".into(),
        ));
    }
    let mut at = HEADER_LEN;
    let count = hdr.n * hdr.c * hdr.h * hdr.w;
    let values = read_f32s::<T>(bytes, &mut at, count, "activation payload")?;
    let head = if hdr.flags & FLAG_HEAD != 0 {
        Some(read_head(bytes, &mut at, hdr.c)?)
    } else {
        None
    };
    if at != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - at
        )));
    }
    Ok((
        RawActivationTensor::new(layer_name, [hdr.n, hdr.c, hdr.h, hdr.w], values)?,
        head,
    ))
}

pub fn encode_activation_dump<T: Scalar>(
    t: &RawActivationTensor<T>,
    head: Option<&HeadWeights<T>>,
) -> Result<Vec<u8>> {
    let [n, c, h, w] = t.dims;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * t.values.len());
    let flags = FLAG_SPATIAL | if head.is_some() { FLAG_HEAD } else { 0 };
    write_header(&mut buf, n, c, flags, Some((h, w)))?;
    push_f32s(&mut buf, t.values.iter().copied(), "activation payload")?;
    if let Some(hw) = head {
        push_head(&mut buf, hw)?;
    }
    Ok(buf)
}

pub fn save_activation_dump<T: Scalar>(
    t: &RawActivationTensor<T>,
    head: Option<&HeadWeights<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_activation_dump(t, head)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads either dump flavour, pooling spatial activations on the way.
pub fn load_any_dump<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(FeatureSet<T>, Option<HeadWeights<T>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let layer = layer_from_path(path);
    if bytes.len() > 16 && bytes[16] & FLAG_SPATIAL != 0 {
        let (t, head) = decode_activation_dump(&bytes, &layer)?;
        Ok((global_average_pool(&t)?, head))
    } else {
        decode_feature_dump(&bytes, &layer)
    }
}

/// Dataset description shared by every dump of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    pub splits: BTreeMap<String, Vec<String>>,
    pub labels: BTreeMap<String, usize>,
    pub ood_flag: BTreeMap<String, bool>,
    pub colour_tag: BTreeMap<String, String>,
    pub seed: u64,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        for (split, ids) in &self.splits {
            for id in ids {
                if !self.labels.contains_key(id) && !self.ood_flag.contains_key(id) {
                    return Err(Error::InvalidManifest(format!(
                        "split '{split}' references '{id}' which has neither a label nor an ood flag"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidManifest(format!("no split named '{name}'")))
    }

    pub fn is_ood(&self, id: &str) -> bool {
        self.ood_flag.get(id).copied().unwrap_or(false)
    }

    /// One past the largest class label anywhere in the manifest.
    pub fn num_classes(&self) -> usize {
        self.labels.values().map(|&l| l + 1).max().unwrap_or(0)
    }

    /// Attaches ids, labels and colour tags of `split` to a dump read in that
    /// split's order. Labels are attached only if every sample has one.
    pub fn attach<T: Scalar>(&self, split: &str, fs: FeatureSet<T>) -> Result<FeatureSet<T>> {
        let ids = self.split(split)?;
        if ids.len() != fs.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "split '{split}' lists {} ids but the dump has {} rows",
                ids.len(),
                fs.n_samples()
            )));
        }
        let layer = fs.layer_name().to_string();
        let mut out = FeatureSet::new(ids.to_vec(), fs.matrix, layer)?;
        let labels: Option<Vec<usize>> =
            ids.iter().map(|id| self.labels.get(id).copied()).collect();
        if let Some(labels) = labels {
            out = out.with_class_labels(labels, self.num_classes())?;
        }
        let tags: BTreeMap<String, String> = ids
            .iter()
            .filter_map(|id| self.colour_tag.get(id).map(|t| (id.clone(), t.clone())))
            .collect();
        if !tags.is_empty() {
            out = out.with_group_tags(tags);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_names_from_paths() {
        assert_eq!(layer_from_path("run/train.layer4.oodg"), "layer4");
        assert_eq!(layer_from_path("run/test.oodg"), "test");
        assert_eq!(layer_from_path("a.b.c.oodg"), "b.c");
    }

    #[test]
    fn empty_dump_is_header_only() {
        let fs = FeatureSet::<f64>::from_matrix(Array2::zeros((0, 8)), "l").unwrap();
        let bytes = encode_feature_dump(&fs, None).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let (back, head) = decode_feature_dump::<f64>(&bytes, "l").unwrap();
        assert_eq!(back.n_samples(), 0);
        assert_eq!(back.dim(), 8);
        assert!(head.is_none());
    }

    #[test]
    fn payload_is_row_major() {
        let mut bytes = Vec::new();
        write_header(&mut bytes, 2, 3, 0, None).unwrap();
        for v in 1..=6 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let (fs, _) = decode_feature_dump::<f64>(&bytes, "l").unwrap();
        assert_eq!(fs.matrix(), &array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let fs = FeatureSet::<f32>::from_matrix(array![[1.0f32]], "l").unwrap();
        let mut bytes = encode_feature_dump(&fs, None).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_feature_dump::<f32>(&bytes, "l"),
            Err(Error::MalformedHeader(_))
        ));
        bytes[0] = b'O';
        bytes[4] = 9;
        assert!(matches!(
            decode_feature_dump::<f32>(&bytes, "l"),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn short_payload_is_dimension_mismatch() {
        let fs = FeatureSet::<f32>::from_matrix(array![[1.0f32, 2.0]], "l").unwrap();
        let bytes = encode_feature_dump(&fs, None).unwrap();
        let err = decode_feature_dump::<f32>(&bytes[..bytes.len() - 2], "l").unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_feature_dump::<f32>(&long, "l"),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn nan_payload_rejected_on_load() {
        let mut bytes = Vec::new();
        write_header(&mut bytes, 1, 1, 0, None).unwrap();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_feature_dump::<f64>(&bytes, "l"),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn nan_in_matrix_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.oodg");
        let fs = FeatureSet::<f64>::from_matrix(array![[1.0]], "l").unwrap();
        // Construct an invalid set by bypassing the constructor check.
        let bad = FeatureSet {
            matrix: array![[f64::NAN]],
            ..fs
        };
        assert!(matches!(
            save_feature_dump(&bad, None, &path),
            Err(Error::NonFiniteValue(_))
        ));
        assert!(!path.exists());
        assert!(matches!(
            FeatureSet::<f64>::from_matrix(array![[f64::INFINITY]], "l"),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn f64_values_beyond_f32_range_are_non_finite() {
        let fs = FeatureSet::<f64>::from_matrix(array![[1e300]], "l").unwrap();
        assert!(matches!(
            encode_feature_dump(&fs, None),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn head_weights_round_trip() {
        let fs =
            FeatureSet::<f32>::from_matrix(array![[1.0f32, 2.0], [3.0, 4.0]], "penult").unwrap();
        let head = HeadWeights::new(
            array![[0.5f32, -1.0], [2.0, 0.25], [0.0, 1.0]],
            array![0.1f32, 0.2, 0.3],
        )
        .unwrap();
        let bytes = encode_feature_dump(&fs, Some(&head)).unwrap();
        let (back, back_head) = decode_feature_dump::<f32>(&bytes, "penult").unwrap();
        assert_eq!(back, fs);
        assert_eq!(back_head.unwrap(), head);
    }

    #[test]
    fn head_with_wrong_dim_rejected() {
        let fs = FeatureSet::<f32>::from_matrix(array![[1.0f32, 2.0]], "l").unwrap();
        let head = HeadWeights::new(array![[1.0f32]], array![0.0f32]).unwrap();
        assert!(matches!(
            encode_feature_dump(&fs, Some(&head)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pool_constant_and_hand_computed() {
        let t = RawActivationTensor::new("l", [2, 3, 2, 2], vec![7.5f64; 24]).unwrap();
        let fs = global_average_pool(&t).unwrap();
        assert!(fs.matrix().iter().all(|&v| v == 7.5));

        let t = RawActivationTensor::new(
            "l",
            [1, 2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0],
        )
        .unwrap();
        let fs = global_average_pool(&t).unwrap();
        assert_eq!(fs.matrix()[[0, 0]], 2.5);
        assert_eq!(fs.matrix()[[0, 1]], 2.0);
    }

    #[test]
    fn pool_unit_spatial_is_squeeze() {
        let vals: Vec<f64> = (0..6).map(|v| v as f64 * 1.5).collect();
        let t = RawActivationTensor::new("l", [2, 3, 1, 1], vals.clone()).unwrap();
        let fs = global_average_pool(&t).unwrap();
        assert_eq!(fs.matrix().iter().copied().collect::<Vec<_>>(), vals);
    }

    #[test]
    fn pool_empty_spatial_extent() {
        let t = RawActivationTensor::<f64>::new("l", [2, 3, 0, 4], vec![]).unwrap();
        assert!(matches!(
            global_average_pool(&t),
            Err(Error::EmptySpatialExtent)
        ));
    }

    #[test]
    fn activation_dump_pools_through_load_any() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.layer1.1.oodg");
        let t = RawActivationTensor::new("layer1.1", [1, 2, 1, 2], vec![1.0f32, 3.0, 5.0, 7.0])
            .unwrap();
        save_activation_dump(&t, None, &path).unwrap();
        assert!(matches!(
            load_feature_dump::<f32>(&path),
            Err(Error::MalformedHeader(_))
        ));
        let (fs, _) = load_any_dump::<f64>(&path).unwrap();
        assert_eq!(fs.layer_name(), "layer1.1");
        assert_eq!(fs.matrix(), &array![[2.0, 6.0]]);
    }

    #[test]
    fn manifest_attach_and_validate() {
        let json = r#"{
            "dataset_name": "toy",
            "splits": {"train": ["a", "b"], "test": ["c", "d"]},
            "labels": {"a": 0, "b": 1, "c": 1},
            "ood_flag": {"c": false, "d": true},
            "colour_tag": {"c": "id", "d": "red"},
            "seed": 3
        }"#;
        let m = Manifest::from_json(json).unwrap();
        assert_eq!(m.num_classes(), 2);
        let train = m
            .attach(
                "train",
                FeatureSet::<f64>::from_matrix(array![[0.0], [1.0]], "l").unwrap(),
            )
            .unwrap();
        assert_eq!(train.class_labels(), Some(&[0, 1][..]));
        let test = m
            .attach(
                "test",
                FeatureSet::<f64>::from_matrix(array![[0.0], [1.0]], "l").unwrap(),
            )
            .unwrap();
        assert!(test.class_labels().is_none());
        assert_eq!(test.rows_with_tag("red"), vec![1]);
        assert!(m.is_ood("d"));

        let short = FeatureSet::<f64>::from_matrix(array![[0.0]], "l").unwrap();
        assert!(matches!(
            m.attach("train", short),
            Err(Error::DimensionMismatch(_))
        ));

        let bad = json.replace(
            r#""labels": {"a": 0, "b": 1, "c": 1}"#,
            r#""labels": {"b": 1, "c": 1}"#,
        );
        assert!(matches!(
            Manifest::from_json(&bad),
            Err(Error::InvalidManifest(_))
        ));
        let negative = json.replace("\"seed\": 3", "\"seed\": -1");
        assert!(Manifest::from_json(&negative).is_err());
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let fs = FeatureSet::<f64>::from_matrix(array![[0.0], [1.0]], "l").unwrap();
        assert!(matches!(
            fs.with_class_labels(vec![0, 2], 2),
            Err(Error::InvalidLabel {
                label: 2,
                num_classes: 2
            })
        ));
    }
}
