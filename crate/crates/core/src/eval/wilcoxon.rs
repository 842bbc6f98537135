//! Wilcoxon signed-rank test on paired samples.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::average_ranks;
use crate::error::{Error, Result};

/// Largest effective sample size tested by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`; `None` when every difference is zero.
    pub w: Option<f64>,
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_effective: usize,
    pub p_two_sided: f64,
    pub alternative: Alternative,
    /// p-value under `alternative`.
    pub p_value: f64,
    pub exact: bool,
}

pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(pairs, Alternative::TwoSided)
}

/// Differences `a - b`; zeros are dropped and tied magnitudes share their
/// average rank. Exact enumeration up to [`EXACT_MAX_N`] nonzero
/// differences, otherwise the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank_with(pairs: &[(f64, f64)], alternative: Alternative) -> Result<WilcoxonResult> {
    if pairs.is_empty() {
        return Err(Error::Empty("Wilcoxon test needs at least one pair".into()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| d.is_nan()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    let nz: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w: None,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            p_two_sided: 1.0,
            alternative,
            p_value: 1.0,
            exact: true,
        });
    }
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let s_plus: usize = doubled.iter().zip(&nz).filter(|(_, &d)| d > 0.0).map(|(&r, _)| r).sum();
    let total: usize = doubled.iter().sum();
    let s_minus = total - s_plus;
    let (w_plus, w_minus) = (s_plus as f64 / 2.0, s_minus as f64 / 2.0);

    let (p_two, p_greater, p_less, exact) = if n <= EXACT_MAX_N {
        let dist = doubled_rank_sum_counts(&doubled);
        let all = libm::pow(2.0, n as f64);
        let cdf = |s: usize| dist[..=s.min(total)].iter().sum::<f64>() / all;
        let p_less = cdf(s_plus);
        let p_greater = 1.0 - if s_plus == 0 { 0.0 } else { cdf(s_plus - 1) };
        (2.0 * cdf(s_plus.min(s_minus)), p_greater, p_less, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let ties = tie_correction(&ranks);
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let sd = libm::sqrt(var);
        let upper = |z: f64| 0.5 * libm::erfc(z / core::f64::consts::SQRT_2);
        let z_two = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
        let z_greater = (w_plus - mean - 0.5) / sd;
        let z_less = (w_plus - mean + 0.5) / sd;
        (2.0 * upper(z_two), upper(z_greater), 1.0 - upper(z_less), false)
    };
    let p_two_sided = p_two.min(1.0);
    let p_value = match alternative {
        Alternative::TwoSided => p_two_sided,
        Alternative::Greater => p_greater.clamp(0.0, 1.0),
        Alternative::Less => p_less.clamp(0.0, 1.0),
    };
    Ok(WilcoxonResult {
        w: Some(w_plus.min(w_minus)),
        w_plus,
        w_minus,
        n_effective: n,
        p_two_sided,
        alternative,
        p_value,
        exact,
    })
}

/// `counts[s]` = number of sign assignments whose positive doubled ranks sum
/// to `s`.
fn doubled_rank_sum_counts(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

/// `sum (t^3 - t)` over groups of tied ranks.
fn tie_correction(ranks: &[f64]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}
