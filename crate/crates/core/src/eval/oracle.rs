//! Exact analysis of scorers defined on the 16 equiprobable causal profiles.

use alloc::vec::Vec;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthcohort::CausalProfile;

/// Scores 1 exactly when `G1 = 1` and `D1 = 1`: the best a scorer can do
/// when only those two variables are observable.
pub fn idealized_scorer(p: &CausalProfile) -> f64 {
    (p.g1 == 1 && p.d1 == 1) as u8 as f64
}

/// Tie-aware AUC of `score` over the uniform distribution on all profiles,
/// as an exact fraction.
pub fn expected_auc(score: impl Fn(&CausalProfile) -> f64, label: impl Fn(&CausalProfile) -> u8) -> Result<Ratio<u64>> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in CausalProfile::all() {
        let s = score(&p);
        if s.is_nan() {
            return Err(Error::NonFinite("profile score".into()));
        }
        if label(&p) == 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let mut doubled = 0u64;
    for &a in &pos {
        for &b in &neg {
            doubled += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    Ok(Ratio::new(doubled, 2 * (pos.len() * neg.len()) as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

impl Outcome {
    pub fn of(predicted: bool, label: u8) -> Self {
        match (predicted, label == 1) {
            (true, true) => Outcome::TruePositive,
            (true, false) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
            (false, true) => Outcome::FalseNegative,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::TrueNegative => self.tn += 1,
            Outcome::FalseNegative => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileOutcome {
    pub profile: CausalProfile,
    pub counts: OutcomeCounts,
}

/// Per-profile outcome counts, one row for each of the 16 profiles in bit
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub rows: Vec<ProfileOutcome>,
}

impl OutcomeTable {
    pub fn totals(&self) -> OutcomeCounts {
        let mut t = OutcomeCounts::default();
        for r in &self.rows {
            t.tp += r.counts.tp;
            t.fp += r.counts.fp;
            t.tn += r.counts.tn;
            t.fn_ += r.counts.fn_;
        }
        t
    }

    /// Outcome of each profile that was seen, when all its subjects agree.
    pub fn profile_outcome(&self, p: &CausalProfile) -> Option<Outcome> {
        let c = self.rows.iter().find(|r| r.profile == *p)?.counts;
        match (c.tp, c.fp, c.tn, c.fn_) {
            (n, 0, 0, 0) if n > 0 => Some(Outcome::TruePositive),
            (0, n, 0, 0) if n > 0 => Some(Outcome::FalsePositive),
            (0, 0, n, 0) if n > 0 => Some(Outcome::TrueNegative),
            (0, 0, 0, n) if n > 0 => Some(Outcome::FalseNegative),
            _ => None,
        }
    }

    /// How many profiles fall entirely into each outcome.
    pub fn profiles_per_outcome(&self) -> OutcomeCounts {
        let mut c = OutcomeCounts::default();
        for r in &self.rows {
            if let Some(o) = self.profile_outcome(&r.profile) {
                c.add(o);
            }
        }
        c
    }
}

/// Classifies each profile's prediction `score(p) >= threshold` against
/// `label(p)`.
pub fn classify_outcomes<'a>(
    profiles: impl IntoIterator<Item = &'a CausalProfile>,
    score: impl Fn(&CausalProfile) -> f64,
    label: impl Fn(&CausalProfile) -> u8,
    threshold: f64,
) -> OutcomeTable {
    let mut rows: Vec<ProfileOutcome> =
        CausalProfile::all().map(|profile| ProfileOutcome { profile, counts: OutcomeCounts::default() }).collect();
    for p in profiles {
        let o = Outcome::of(score(p) >= threshold, label(p));
        rows[p.bits() as usize].counts.add(o);
    }
    OutcomeTable { rows }
}
