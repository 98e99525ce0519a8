//! Post-hoc OOD scoring functions.
//!
//! Every scorer is fitted once on ID training features ([`fit_scorer`]) and
//! then maps test features to a [`ScoreVector`] whose orientation is fixed:
//! higher means more in-distribution.
//!
//! Feature-based methods: Mahalanobis, KNN, LOF, KDE, FeatureNorm, Residual.
//! Head/confidence-based methods: NuSA, MCP, ODIN (temperature only), ReAct, ViM.

mod logit;
mod mahalanobis;
mod neighbours;
mod residual;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, HeadWeights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use logit::{HeadScorer, NuSA, ReAct};
pub use mahalanobis::Mahalanobis;
pub use neighbours::{Kde, Knn, Lof};
pub use residual::{Residual, ViM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mahalanobis,
    Knn,
    Lof,
    Kde,
    FeatureNorm,
    Residual,
    NuSA,
    Mcp,
    OdinT,
    ReAct,
    ViM,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Mahalanobis,
        Method::Knn,
        Method::Lof,
        Method::Kde,
        Method::FeatureNorm,
        Method::Residual,
        Method::NuSA,
        Method::Mcp,
        Method::OdinT,
        Method::ReAct,
        Method::ViM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mahalanobis => "mahalanobis",
            Method::Knn => "knn",
            Method::Lof => "lof",
            Method::Kde => "kde",
            Method::FeatureNorm => "featurenorm",
            Method::Residual => "residual",
            Method::NuSA => "nusa",
            Method::Mcp => "mcp",
            Method::OdinT => "odint",
            Method::ReAct => "react",
            Method::ViM => "vim",
        }
    }

    /// Whether the method scores hidden-layer features directly (and is
    /// therefore affected by nuisance projection).
    pub fn is_feature_based(self) -> bool {
        matches!(
            self,
            Method::Mahalanobis
                | Method::Knn
                | Method::Lof
                | Method::Kde
                | Method::FeatureNorm
                | Method::Residual
        )
    }

    pub fn needs_head(self) -> bool {
        matches!(
            self,
            Method::NuSA | Method::Mcp | Method::OdinT | Method::ReAct | Method::ViM
        )
    }

    /// Parameter names and their allowed closed ranges.
    fn param_bounds(self) -> &'static [(&'static str, f64, f64, bool)] {
        // (name, min, max, integer)
        match self {
            Method::Knn | Method::Lof => &[("k", 1.0, 20.0, true)],
            Method::Residual => &[("D", 2.0, 20.0, true)],
            Method::OdinT => &[("T", 1.0, 100.0, false)],
            Method::ReAct => &[("p", 0.6, 0.9, false)],
            Method::ViM => &[("alpha", 0.25, 0.75, false), ("D", 2.0, 20.0, true)],
            _ => &[],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key || (key == "odin" && *m == Method::OdinT))
            .ok_or_else(|| Error::UnsupportedMethod(s.to_string()))
    }
}

/// A method plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub method: Method,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ScorerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// A reasonable single configuration per method, inside the grid bounds.
    pub fn default_for(method: Method) -> Self {
        let c = Self::new(method);
        match method {
            Method::Knn => c.with("k", 5.0),
            Method::Lof => c.with("k", 10.0),
            Method::Residual => c.with("D", 10.0),
            Method::OdinT => c.with("T", 10.0),
            Method::ReAct => c.with("p", 0.9),
            Method::ViM => c.with("alpha", 0.5).with("D", 10.0),
            _ => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = self.method.param_bounds();
        for key in self.params.keys() {
            if !bounds.iter().any(|(name, ..)| name == key) {
                return Err(Error::InvalidParameter(format!(
                    "{} does not take parameter '{key}'",
                    self.method
                )));
            }
        }
        for &(name, lo, hi, integer) in bounds {
            let v = *self.params.get(name).ok_or_else(|| {
                Error::InvalidParameter(format!("{} requires '{name}'", self.method))
            })?;
            if !(lo..=hi).contains(&v) || (integer && v.fract() != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{}: {name} = {v} is outside the grid bounds [{lo}, {hi}]",
                    self.method
                )));
            }
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("{} requires '{name}'", self.method)))
    }

    fn usize_param(&self, name: &str) -> Result<usize> {
        Ok(self.param(name)? as usize)
    }

    /// Compact `name=value` list, e.g. `alpha=0.5,D=10`, or `-` without params.
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return "-".to_string();
        }
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the output of [`ScorerConfig::label`].
    pub fn from_label(method: Method, label: &str) -> Result<Self> {
        let mut cfg = Self::new(method);
        if label != "-" && !label.is_empty() {
            for pair in label.split(',') {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidParameter(format!("bad parameter '{pair}'")))?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad value in '{pair}'")))?;
                cfg.params.insert(k.to_string(), v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ScorerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.method, self.label())
    }
}

/// Hyperparameter configurations evaluated per method.
pub fn hyperparameter_grid(method: Method) -> Vec<ScorerConfig> {
    const K: [f64; 5] = [1.0, 3.0, 5.0, 10.0, 20.0];
    let base = ScorerConfig::new(method);
    match method {
        Method::Knn | Method::Lof => K.iter().map(|&k| base.clone().with("k", k)).collect(),
        Method::OdinT => [1.0, 10.0, 100.0]
            .iter()
            .map(|&t| base.clone().with("T", t))
            .collect(),
        Method::ReAct => [0.6, 0.7, 0.8, 0.9]
            .iter()
            .map(|&p| base.clone().with("p", p))
            .collect(),
        Method::Residual => [2.0, 10.0, 20.0]
            .iter()
            .map(|&d| base.clone().with("D", d))
            .collect(),
        Method::ViM => {
            let mut out = Vec::new();
            for &alpha in &[0.25, 0.5, 0.75] {
                for &d in &[2.0, 5.0, 10.0, 20.0] {
                    out.push(base.clone().with("alpha", alpha).with("D", d));
                }
            }
            out
        }
        _ => vec![base],
    }
}

/// Grid lookup by method name.
pub fn hyperparameter_grid_by_name(name: &str) -> Result<Vec<ScorerConfig>> {
    Ok(hyperparameter_grid(name.parse()?))
}

/// Per-sample scores, higher = more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    pub sample_ids: Vec<String>,
    pub scores: Array1<T>,
}

impl<T: Scalar> ScoreVector<T> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Vec<T> {
        rows.iter().map(|&i| self.scores[i]).collect()
    }
}

/// Method-specific fitted state.
#[derive(Debug, Clone)]
pub enum ScorerState<T> {
    Mahalanobis(Mahalanobis<T>),
    Knn(Knn<T>),
    Lof(Lof<T>),
    Kde(Kde<T>),
    FeatureNorm,
    Residual(Residual<T>),
    NuSA(NuSA<T>),
    /// MCP and temperature-scaled ODIN share this state; MCP uses `T = 1`.
    Softmax(HeadScorer<T>),
    ReAct(ReAct<T>),
    ViM(ViM<T>),
}

#[derive(Debug, Clone)]
pub struct FittedScorer<T> {
    config: ScorerConfig,
    dim: usize,
    state: ScorerState<T>,
}

impl<T: Scalar> FittedScorer<T> {
    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self) -> &ScorerState<T> {
        &self.state
    }

    /// Scores a single feature vector.
    pub fn score_one(&self, f: ArrayView1<'_, T>) -> Result<T> {
        if f.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature has C={} but the scorer was fitted with C={}",
                f.len(),
                self.dim
            )));
        }
        Ok(match &self.state {
            ScorerState::Mahalanobis(m) => m.score(f),
            ScorerState::Knn(m) => m.score(f),
            ScorerState::Lof(m) => m.score(f),
            ScorerState::Kde(m) => m.score(f),
            ScorerState::FeatureNorm => crate::linalg::norm(f),
            ScorerState::Residual(m) => m.score(f),
            ScorerState::NuSA(m) => m.score(f).ok_or(Error::ZeroNormInput(0))?,
            ScorerState::Softmax(m) => m.max_softmax(f),
            ScorerState::ReAct(m) => m.score(f),
            ScorerState::ViM(m) => m.score(f),
        })
    }
}

fn require_head<'a, T: Scalar>(
    head: Option<&'a HeadWeights<T>>,
    train: &FeatureSet<T>,
) -> Result<&'a HeadWeights<T>> {
    let head = head.ok_or(Error::MissingHeadWeights)?;
    if head.dim() != train.dim() {
        return Err(Error::DimensionMismatch(format!(
            "head expects C={} but features have C={}",
            head.dim(),
            train.dim()
        )));
    }
    Ok(head)
}

fn require_neighbours(train: &FeatureSet<impl Scalar>, k: usize) -> Result<()> {
    if train.n_samples() < k + 1 {
        return Err(Error::InsufficientSamples {
            needed: k + 1,
            got: train.n_samples(),
        });
    }
    Ok(())
}

fn require_dimension(cfg: &ScorerConfig, train: &FeatureSet<impl Scalar>) -> Result<usize> {
    let d = cfg.usize_param("D")?;
    if d > train.dim() {
        return Err(Error::InvalidParameter(format!(
            "{}: D = {d} exceeds the feature dimension {}",
            cfg.method,
            train.dim()
        )));
    }
    Ok(d)
}

/// Fits a scorer on ID training features.
pub fn fit_scorer<T: Scalar>(
    cfg: &ScorerConfig,
    train: &FeatureSet<T>,
    head: Option<&HeadWeights<T>>,
) -> Result<FittedScorer<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let state = match cfg.method {
        Method::Mahalanobis => ScorerState::Mahalanobis(Mahalanobis::fit(train)?),
        Method::Knn => {
            let k = cfg.usize_param("k")?;
            require_neighbours(train, k)?;
            ScorerState::Knn(Knn::fit(train, k))
        }
        Method::Lof => {
            let k = cfg.usize_param("k")?;
            require_neighbours(train, k)?;
            ScorerState::Lof(Lof::fit(train, k))
        }
        Method::Kde => ScorerState::Kde(Kde::fit(train)),
        Method::FeatureNorm => ScorerState::FeatureNorm,
        Method::Residual => {
            ScorerState::Residual(Residual::fit(train, require_dimension(cfg, train)?)?)
        }
        Method::NuSA => ScorerState::NuSA(NuSA::fit(require_head(head, train)?)),
        Method::Mcp => ScorerState::Softmax(HeadScorer::new(require_head(head, train)?, T::one())),
        Method::OdinT => ScorerState::Softmax(HeadScorer::new(
            require_head(head, train)?,
            T::lit(cfg.param("T")?),
        )),
        Method::ReAct => ScorerState::ReAct(ReAct::fit(
            train,
            require_head(head, train)?,
            cfg.param("p")?,
        )),
        Method::ViM => ScorerState::ViM(ViM::fit(
            train,
            require_head(head, train)?,
            require_dimension(cfg, train)?,
            T::lit(cfg.param("alpha")?),
        )?),
    };
    Ok(FittedScorer {
        config: cfg.clone(),
        dim: train.dim(),
        state,
    })
}

/// Scores every row of `test`.
pub fn score_samples<T: Scalar>(
    model: &FittedScorer<T>,
    test: &FeatureSet<T>,
) -> Result<ScoreVector<T>> {
    if test.dim() != model.dim {
        return Err(Error::DimensionMismatch(format!(
            "test features have C={} but the scorer was fitted with C={}",
            test.dim(),
            model.dim
        )));
    }
    let mut scores = Array1::zeros(test.n_samples());
    for (i, row) in test.matrix().rows().into_iter().enumerate() {
        let s = model.score_one(row).map_err(|e| match e {
            Error::ZeroNormInput(_) => Error::ZeroNormInput(i),
            other => other,
        })?;
        if !s.is_finite() {
            return Err(Error::NonFiniteValue(format!("score of row {i}")));
        }
        scores[i] = s;
    }
    Ok(ScoreVector {
        sample_ids: test.sample_ids().to_vec(),
        scores,
    })
}
