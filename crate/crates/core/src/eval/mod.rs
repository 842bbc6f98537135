//! Evaluation: tie-aware AUC, truth-table oracles over the 16 causal
//! profiles, the Wilcoxon signed-rank test, and sweep reports.

mod oracle;
mod wilcoxon;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use oracle::{
    classify_outcomes, expected_auc, idealized_scorer, Outcome, OutcomeCounts, OutcomeTable, ProfileOutcome,
};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, Alternative, WilcoxonResult, EXACT_MAX_N};

/// Scores paired with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(alloc::format!("{} scores, {} labels", scores.len(), labels.len())));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::DegenerateLabels);
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Twice the Mann-Whitney count `#(s+ > s-) + #(s+ = s-)/2`, and the
    /// number of (positive, negative) pairs.
    pub fn doubled_wins(&self) -> (u128, u128) {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let (mut wins, mut neg_below, mut pos_total) = (0u128, 0u128, 0u128);
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j < order.len() && self.scores[order[j]] == self.scores[order[i]] {
                j += 1;
            }
            let p = order[i..j].iter().filter(|&&k| self.labels[k] == 1).count() as u128;
            let q = (j - i) as u128 - p;
            wins += p * (2 * neg_below + q);
            neg_below += q;
            pos_total += p;
            i = j;
        }
        (wins, pos_total * neg_below)
    }

    /// `P(f(X+) > f(X-)) + P(f(X+) = f(X-)) / 2`.
    pub fn auc(&self) -> f64 {
        let (w, pairs) = self.doubled_wins();
        w as f64 / (2 * pairs) as f64
    }
}

/// Tie-aware AUC of `scores` against 0/1 `labels`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(ScoredSet::new(scores.to_vec(), labels.to_vec())?.auc())
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

/// One evaluation of a trained strategy in the layout of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub strategy: String,
    pub auc_s_test: Option<f64>,
    pub auc_t: f64,
}

/// AUCs of two strategies trained with the same seed at the same size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedPoint {
    pub f_size: usize,
    pub seed: u64,
    pub auc_a: f64,
    pub auc_b: f64,
}

/// Per-size median over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub f_size: usize,
    pub median_a: f64,
    pub median_b: f64,
}

/// Paired sweep of two strategies over finetune sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy_a: String,
    pub strategy_b: String,
    pub f_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Sorted by `(f_size, seed)`.
    pub points: Vec<PairedPoint>,
    pub curve: Vec<CurvePoint>,
    pub wilcoxon: WilcoxonResult,
    /// Spearman correlation of AUC with f_size over all points.
    pub spearman_a: Option<f64>,
    pub spearman_b: Option<f64>,
}

impl EvalReport {
    /// Aggregates points in any order into a report with one row per
    /// `(f_size, seed)`.
    pub fn from_points(
        strategy_a: &str,
        strategy_b: &str,
        f_sizes: &[usize],
        seeds: &[u64],
        mut points: Vec<PairedPoint>,
        alternative: Alternative,
    ) -> Result<Self> {
        points.sort_by_key(|p| (p.f_size, p.seed));
        let expected = f_sizes.len() * seeds.len();
        let complete = points.len() == expected
            && f_sizes.iter().all(|&f| seeds.iter().all(|&s| points.iter().any(|p| p.f_size == f && p.seed == s)));
        if !complete {
            return Err(Error::Contract(alloc::format!("{} points for {expected} (f_size, seed) pairs", points.len())));
        }
        let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.auc_a, p.auc_b)).collect();
        let wilcoxon = wilcoxon_signed_rank_with(&pairs, alternative)?;
        let sizes: Vec<f64> = points.iter().map(|p| p.f_size as f64).collect();
        let a: Vec<f64> = points.iter().map(|p| p.auc_a).collect();
        let b: Vec<f64> = points.iter().map(|p| p.auc_b).collect();
        let mut fs = f_sizes.to_vec();
        fs.sort_unstable();
        let curve = fs
            .iter()
            .map(|&f| {
                let sel: Vec<&PairedPoint> = points.iter().filter(|p| p.f_size == f).collect();
                CurvePoint {
                    f_size: f,
                    median_a: median(sel.iter().map(|p| p.auc_a).collect()),
                    median_b: median(sel.iter().map(|p| p.auc_b).collect()),
                }
            })
            .collect();
        Ok(Self {
            strategy_a: strategy_a.into(),
            strategy_b: strategy_b.into(),
            f_sizes: fs,
            seeds: seeds.to_vec(),
            points,
            curve,
            wilcoxon,
            spearman_a: spearman(&sizes, &a),
            spearman_b: spearman(&sizes, &b),
        })
    }
}

/// Median; the mean of the two central values for even lengths.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `train_eval(strategy, f_size, seed)` for both strategies at every
/// size and seed, in key order, and aggregates the paired AUCs.
pub fn sweep_compare<K: Copy>(
    a: (K, &str),
    b: (K, &str),
    f_sizes: &[usize],
    seeds: &[u64],
    mut train_eval: impl FnMut(K, usize, u64) -> Result<f64>,
) -> Result<EvalReport> {
    if f_sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sweep needs at least one f_size and one seed".into()));
    }
    let mut points = Vec::with_capacity(f_sizes.len() * seeds.len());
    for &f in f_sizes {
        for &s in seeds {
            let auc_a = train_eval(a.0, f, s)?;
            let auc_b = train_eval(b.0, f, s)?;
            points.push(PairedPoint { f_size: f, seed: s, auc_a, auc_b });
        }
    }
    EvalReport::from_points(a.1, b.1, f_sizes, seeds, points, Alternative::TwoSided)
}
