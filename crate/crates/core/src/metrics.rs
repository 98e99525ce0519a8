//! Detection metrics and seed-level statistics.
//!
//! Scores follow the crate-wide orientation: higher means more
//! in-distribution, and the ID set is the positive class. All metrics are
//! reported as `f64` whatever the score scalar type.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorers::ScorerConfig;

/// Largest sample size for which the Wilcoxon null distribution is enumerated.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

const Z_95: f64 = 1.96;

fn check_scores<T: Scalar>(v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteValue(format!("score {i}")));
    }
    Ok(())
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("finite scores")
}

/// Area under the ROC curve, `P(s_id > s_ood) + P(s_id = s_ood) / 2`.
pub fn auroc<T: Scalar>(id_scores: &[T], ood_scores: &[T]) -> Result<f64> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    let mut pooled: Vec<(T, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| cmp(&a.0, &b.0));

    // Twice the number of (id, ood) wins, counting ties as one.
    let mut doubled: u128 = 0;
    let mut ood_below: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        let (mut id_g, mut ood_g) = (0u128, 0u128);
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                id_g += 1;
            } else {
                ood_g += 1;
            }
            j += 1;
        }
        doubled += 2 * id_g * ood_below + id_g * ood_g;
        ood_below += ood_g;
        i = j;
    }
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(complementary_fraction(doubled, pairs))
}

/// `num / den` for `num <= den`, computed so that swapping `num` for
/// `den - num` gives exactly `1 - result`. The smaller side is snapped to
/// multiples of 2^-53, for which `1 - x` is exact in binary64.
fn complementary_fraction(num: u128, den: u128) -> f64 {
    const GRID: f64 = 9_007_199_254_740_992.0; // 2^53
    let rest = den - num;
    let small = num.min(rest) as f64 / den as f64;
    let snapped = (small * GRID).round() / GRID;
    if num <= rest {
        snapped
    } else {
        1.0 - snapped
    }
}

/// False-positive rate at the threshold that admits at least a fraction `t`
/// of ID samples (`score >= threshold` counts as accepted).
pub fn fpr_at_tpr<T: Scalar>(id_scores: &[T], ood_scores: &[T], t: f64) -> Result<f64> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidTarget(t));
    }
    let n = id_scores.len();
    let mut id_desc = id_scores.to_vec();
    id_desc.sort_by(|a, b| cmp(b, a));

    // Smallest m with m / n >= t.
    let reaches = |m: usize| m as f64 / n as f64 >= t;
    let mut m = ((t * n as f64).ceil() as usize).clamp(1, n);
    while m > 1 && reaches(m - 1) {
        m -= 1;
    }
    while !reaches(m) {
        m += 1;
    }
    let threshold = id_desc[m - 1];

    let accepted = ood_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(accepted as f64 / ood_scores.len() as f64)
}

/// Area under the risk-coverage curve.
///
/// Samples are retained from the highest score down; at coverage `i / n` the
/// risk is the OOD fraction among the `i` retained samples. Tied scores are
/// retained as a block, with OOD counts interpolated linearly inside it. The
/// curve is integrated with the trapezoid rule and extended flat to coverage
/// zero, so an all-OOD pool scores 1 and an all-ID pool scores 0.
pub fn aurc<T: Scalar>(id_scores: &[T], ood_scores: &[T]) -> Result<f64> {
    let risks = risk_curve(id_scores, ood_scores)?;
    let n = risks.len() as f64;
    let mut area = risks[0];
    for w in risks.windows(2) {
        area += (w[0] + w[1]) / 2.0;
    }
    Ok(area / n)
}

/// Risk at each coverage step `1/n, 2/n, ..., 1`.
pub fn risk_curve<T: Scalar>(id_scores: &[T], ood_scores: &[T]) -> Result<Vec<f64>> {
    // An all-ID or all-OOD pool is a valid input here.
    if id_scores.is_empty() && ood_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    for v in [id_scores, ood_scores] {
        if !v.is_empty() {
            check_scores(v)?;
        }
    }
    let mut pooled: Vec<(T, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| cmp(&b.0, &a.0));

    let mut risks = Vec::with_capacity(pooled.len());
    let mut ood_before = 0usize;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let g = j - i;
        let ood_g = pooled[i..j].iter().filter(|p| p.1).count();
        for step in 1..=g {
            let retained = i + step;
            let ood = ood_before as f64 + ood_g as f64 * step as f64 / g as f64;
            risks.push(ood / retained as f64);
        }
        ood_before += ood_g;
        i = j;
    }
    Ok(risks)
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("spearman input".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("first argument is constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateInput("second argument is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Outcome of a two-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonTest {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    /// Number of non-zero differences that were ranked.
    pub n: usize,
    pub p_value: f64,
    /// Whether the p-value came from full enumeration of the null distribution.
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test of `a - b`.
///
/// Zero differences are dropped before ranking. For `n <= 25` the null
/// distribution of the positive rank sum is enumerated exactly (ties are
/// handled by working in half-ranks); above that a normal approximation with
/// tie-corrected variance is used.
pub fn wilcoxon_signed_rank<T: Scalar>(a: &[T], b: &[T]) -> Result<WilcoxonTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x.as_f64() - y.as_f64())
        .filter(|&d| d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteValue("paired difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    if n <= WILCOXON_EXACT_MAX_N {
        // Average ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0u64; max_sum + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = (w_plus * 2.0).round() as usize;
        let total = (1u64 << n) as f64;
        let le: u64 = counts[..=observed].iter().sum();
        let ge: u64 = counts[observed..].iter().sum();
        let p = (2.0 * (le.min(ge) as f64) / total).min(1.0);
        return Ok(WilcoxonTest {
            statistic: w_plus,
            n,
            p_value: p,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (w_plus - mean) / var.sqrt();
        statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(WilcoxonTest {
        statistic: w_plus,
        n,
        p_value: p,
        exact: false,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Normal-approximation 95% interval `mean ± 1.96 s / sqrt(n)`.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let m = mean(values);
    let half = Z_95 * sample_std(values) / (values.len() as f64).sqrt();
    Ok((m - half, m + half))
}

/// Detection metrics of one scorer on one OOD group for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub auroc: f64,
    pub aurc: f64,
    pub fpr_at_tpr: f64,
}

impl SeedMetrics {
    pub fn compute<T: Scalar>(id_scores: &[T], ood_scores: &[T], tpr: f64) -> Result<Self> {
        Ok(Self {
            auroc: auroc(id_scores, ood_scores)?,
            aurc: aurc(id_scores, ood_scores)?,
            fpr_at_tpr: fpr_at_tpr(id_scores, ood_scores, tpr)?,
        })
    }
}

/// Seed-aggregated metrics of one (method, configuration, group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub config: ScorerConfig,
    pub group: String,
    pub auroc: f64,
    pub aurc: f64,
    pub fpr_at_tpr: f64,
    /// Per-seed AUROC values, in seed order.
    pub per_seed_values: Vec<f64>,
    /// 95% interval on the mean AUROC. Collapses to the mean for one seed.
    pub ci95: (f64, f64),
}

impl EvalResult {
    pub fn aggregate(config: &ScorerConfig, group: &str, per_seed: &[SeedMetrics]) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyInput);
        }
        let aurocs: Vec<f64> = per_seed.iter().map(|m| m.auroc).collect();
        let aurcs: Vec<f64> = per_seed.iter().map(|m| m.aurc).collect();
        let fprs: Vec<f64> = per_seed.iter().map(|m| m.fpr_at_tpr).collect();
        let m = mean(&aurocs);
        let ci = if aurocs.len() >= 2 {
            ci95(&aurocs)?
        } else {
            (m, m)
        };
        Ok(Self {
            method: config.method.name().to_string(),
            config: config.clone(),
            group: group.to_string(),
            auroc: m,
            aurc: mean(&aurcs),
            fpr_at_tpr: mean(&fprs),
            per_seed_values: aurocs,
            ci95: ci,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), 0.5);
        assert!(matches!(auroc::<f64>(&[], &[1.0]), Err(Error::EmptyInput)));
        assert!(matches!(
            auroc(&[f64::NAN], &[1.0]),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&[5.0, 6.0], &[1.0, 2.0], 0.95).unwrap(), 0.0);
        assert_eq!(
            fpr_at_tpr(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.5], 0.8).unwrap(),
            1.0
        );
        assert_eq!(fpr_at_tpr(&[1.0; 4], &[1.0; 3], 0.8).unwrap(), 1.0);
        assert!(matches!(
            fpr_at_tpr(&[1.0], &[1.0], 0.0),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            fpr_at_tpr(&[1.0], &[1.0], 1.5),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn aurc_extremes() {
        assert_eq!(aurc::<f64>(&[], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(aurc::<f64>(&[1.0, 2.0, 3.0], &[]).unwrap(), 0.0);
        assert!(matches!(aurc::<f64>(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn aurc_perfect_separation_hand_curve() {
        // Retained order: id, id, ood, ood -> risks 0, 0, 1/3, 1/2.
        let risks = [0.0, 0.0, 1.0 / 3.0, 0.5];
        let expected =
            (risks[0] + (0.0 + 0.0) / 2.0 + (0.0 + 1.0 / 3.0) / 2.0 + (1.0 / 3.0 + 0.5) / 2.0)
                / 4.0;
        assert_abs_diff_eq!(
            aurc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn aurc_ties_are_order_free() {
        // A single tie block: risk ramps linearly at the block's OOD rate.
        let r = risk_curve(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        for v in r {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(spearman_rho(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(spearman_rho(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            spearman_rho(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert!(matches!(
            spearman_rho(&x, &[1.0; 4]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            spearman_rho(&x, &[1.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            spearman_rho(&[1.0], &[1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
    }

    #[test]
    fn wilcoxon_all_positive_n6() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(t.exact);
        assert_eq!(t.statistic, 21.0);
        assert_abs_diff_eq!(t.p_value, 0.03125, epsilon = 1e-15);
    }

    #[test]
    fn wilcoxon_guards() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::AllZeroDifferences)
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn wilcoxon_normal_branch_symmetric_is_one() {
        // 30 differences of alternating sign with equal magnitudes ranks.
        let a: Vec<f64> = (1..=30)
            .map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) })
            .collect();
        let b = vec![0.0; 30];
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!t.exact);
        // W+ = sum of even ranks = 240, mean = 232.5
        assert_eq!(t.statistic, 240.0);
        let var: f64 = 30.0 * 31.0 * 61.0 / 24.0;
        let z: f64 = 7.5 / var.sqrt();
        let p = statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
        assert_abs_diff_eq!(t.p_value, p, epsilon = 1e-15);
        assert!(t.p_value > 0.8);
    }

    #[test]
    fn ci95_examples() {
        assert_eq!(ci95(&[0.3, 0.3, 0.3]).unwrap(), (0.3, 0.3));
        let (lo, hi) = ci95(&[0.0, 1.0]).unwrap();
        let half = 1.96 * (0.5f64).sqrt() / 2f64.sqrt();
        assert_abs_diff_eq!(lo, 0.5 - half, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.5 + half, epsilon = 1e-15);
        assert_abs_diff_eq!(half, 0.98, epsilon = 1e-12);
        let (lo, hi) = ci95(&[-2.0, -1.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(lo, -hi, epsilon = 1e-15);
        assert!(matches!(
            ci95(&[1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
