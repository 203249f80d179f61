//! Inter-rater agreement and the Wilcoxon signed-rank test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{LpapError, RaterScore};

/// Largest effective sample size tested by exact enumeration.
pub const EXACT_WILCOXON_MAX_N: usize = 20;

/// Both raters' scores in item order, if they cover the same items.
fn paired(a: &RaterScore, b: &RaterScore) -> Result<(Vec<u32>, Vec<u32>), LpapError> {
    if a.scores.len() != b.scores.len() || a.scores.keys().ne(b.scores.keys()) {
        return Err(LpapError::Coverage(format!(
            "raters {} and {} scored different items",
            a.rater_id, b.rater_id
        )));
    }
    if a.scores.is_empty() {
        return Err(LpapError::Coverage("no items scored".into()));
    }
    Ok((
        a.scores.values().copied().collect(),
        b.scores.values().copied().collect(),
    ))
}

pub fn percent_agreement(a: &RaterScore, b: &RaterScore) -> Result<f64, LpapError> {
    let (x, y) = paired(a, b)?;
    let same = x.iter().zip(&y).filter(|(p, q)| p == q).count();
    Ok(100.0 * same as f64 / x.len() as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_correlation(a: &RaterScore, b: &RaterScore) -> Result<f64, LpapError> {
    let (x, y) = paired(a, b)?;
    if x.len() < 3 {
        return Err(LpapError::UndefinedCorrelation(format!(
            "{} items, need at least 3",
            x.len()
        )));
    }
    let rx = average_ranks(&x.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let ry = average_ranks(&y.iter().map(|&v| v as f64).collect::<Vec<_>>());
    pearson(&rx, &ry).ok_or_else(|| {
        LpapError::UndefinedCorrelation("a rater gave the same score to every item".into())
    })
}

/// Cohen's kappa with chance agreement from each rater's marginals.
pub fn cohen_kappa(a: &RaterScore, b: &RaterScore) -> Result<f64, LpapError> {
    let (x, y) = paired(a, b)?;
    let n = x.len() as u64;
    let mut marg_a: BTreeMap<u32, u64> = BTreeMap::new();
    let mut marg_b: BTreeMap<u32, u64> = BTreeMap::new();
    for (&p, &q) in x.iter().zip(&y) {
        *marg_a.entry(p).or_default() += 1;
        *marg_b.entry(q).or_default() += 1;
    }
    let agree = x.iter().zip(&y).filter(|(p, q)| p == q).count() as u64;
    let chance: u64 = marg_a
        .iter()
        .map(|(c, &na)| na * marg_b.get(c).copied().unwrap_or(0))
        .sum();
    if chance == n * n {
        return Err(LpapError::DegenerateKappa);
    }
    let p_o = agree as f64 / n as f64;
    let p_e = chance as f64 / (n * n) as f64;
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Smaller of the positive and negative signed-rank sums.
    pub w: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Two-sided paired signed-rank test. Zero differences are dropped; tied
/// absolute differences share average ranks. Exact for up to
/// [`EXACT_WILCOXON_MAX_N`] pairs, normal approximation with tie correction
/// beyond.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<Wilcoxon, LpapError> {
    if x.len() != y.len() {
        return Err(LpapError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(Wilcoxon {
            w: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    if n <= EXACT_WILCOXON_MAX_N {
        return Ok(Wilcoxon {
            w,
            p_value: exact_p(&ranks, w),
            n_effective: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (w - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.cdf(z)).min(1.0)
    };
    Ok(Wilcoxon {
        w,
        p_value,
        n_effective: n,
        exact: false,
    })
}

/// P(min(W+, W-) <= w) over all 2^n sign assignments, counted with a
/// subset-sum table over doubled ranks (average ranks are half-integers).
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (w * 2.0).round() as usize;
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| s.min(total - s) <= w2)
        .map(|(_, &c)| c)
        .sum();
    hits as f64 / (1u64 << ranks.len()) as f64
}
