use num_rational::Ratio;
use proptest::prelude::*;
use synthjepa_core::eval::{auc, expected_auc, idealized_scorer, wilcoxon_signed_rank_with, Alternative, ScoredSet};
use synthjepa_core::synthcohort::{label, CausalProfile};

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut doubled, mut pairs) = (0u128, 0u128);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                doubled += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

/// Scores on a coarse grid so ties are common, with both labels present.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (prop::collection::vec(-20i32..20, n), prop::collection::vec(0u8..=1, n)).prop_map(|(s, mut l)| {
            l[0] = 0;
            l[1] = 1;
            (s.into_iter().map(|v| v as f64 / 4.0).collect(), l)
        })
    })
}

/// Brute-force exact Wilcoxon: average ranks by counting, then all 2^n signs.
fn brute_wilcoxon(diffs: &[f64]) -> (f64, f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    let rank = |x: f64| {
        let less = nz.iter().filter(|d| d.abs() < x).count() as f64;
        let eq = nz.iter().filter(|d| d.abs() == x).count() as f64;
        less + (eq + 1.0) / 2.0
    };
    let ranks: Vec<f64> = nz.iter().map(|d| rank(d.abs())).collect();
    let w_plus: f64 = ranks.iter().zip(&nz).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let (mut le_w, mut ge_wp, mut le_wp) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let t: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le_w += (t <= w) as u64;
        ge_wp += (t >= w_plus) as u64;
        le_wp += (t <= w_plus) as u64;
    }
    let all = (1u64 << n) as f64;
    ((2.0 * le_w as f64 / all).min(1.0), ge_wp as f64 / all, le_wp as f64 / all)
}

#[test]
fn expected_auc_matches_profile_expansion() {
    let bound = expected_auc(idealized_scorer, label).unwrap();
    assert_eq!(bound, Ratio::new(9, 14));
    let profiles: Vec<CausalProfile> = CausalProfile::all().collect();
    let scores: Vec<f64> = profiles.iter().map(idealized_scorer).collect();
    let labels: Vec<u8> = profiles.iter().map(label).collect();
    assert_eq!(auc(&scores, &labels).unwrap(), 9.0 / 14.0);
}

#[test]
fn perfect_scorer_reaches_one() {
    assert_eq!(expected_auc(|p| label(p) as f64, label).unwrap(), Ratio::new(1, 1));
    assert_eq!(expected_auc(|_| 0.0, label).unwrap(), Ratio::new(1, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_equals_pairwise_definition((s, l) in scored()) {
        prop_assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
    }

    #[test]
    fn auc_invariant_under_increasing_maps((s, l) in scored(), a in 0.01f64..10.0, b in -5.0f64..5.0) {
        let base = auc(&s, &l).unwrap();
        let affine: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let exp: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        prop_assert_eq!(auc(&affine, &l).unwrap(), base);
        prop_assert_eq!(auc(&exp, &l).unwrap(), base);
    }

    #[test]
    fn negated_scores_complement((s, l) in scored()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let set = ScoredSet::new(s.clone(), l.clone()).unwrap();
        let (w, pairs) = set.doubled_wins();
        let (wn, _) = ScoredSet::new(neg, l).unwrap().doubled_wins();
        prop_assert_eq!(w + wn, 2 * pairs);
    }

    #[test]
    fn expected_auc_matches_any_profile_scorer(table in prop::collection::vec(-3i32..3, 16)) {
        let f = |p: &CausalProfile| table[p.bits() as usize] as f64;
        let exact = expected_auc(f, label).unwrap();
        let profiles: Vec<CausalProfile> = CausalProfile::all().collect();
        let s: Vec<f64> = profiles.iter().map(f).collect();
        let l: Vec<u8> = profiles.iter().map(label).collect();
        let (w, pairs) = ScoredSet::new(s, l).unwrap().doubled_wins();
        prop_assert_eq!(exact, Ratio::new(w as u64, 2 * pairs as u64));
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration(d in prop::collection::vec(-6i32..=6, 1..=12)) {
        let pairs: Vec<(f64, f64)> = d.iter().map(|&v| (v as f64 / 2.0, 0.0)).collect();
        let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
        let (two, greater, less) = brute_wilcoxon(&diffs);
        let r = wilcoxon_signed_rank_with(&pairs, Alternative::TwoSided).unwrap();
        prop_assert!(r.exact);
        prop_assert!((r.p_two_sided - two).abs() <= 1e-12, "{} vs {}", r.p_two_sided, two);
        let g = wilcoxon_signed_rank_with(&pairs, Alternative::Greater).unwrap();
        let l = wilcoxon_signed_rank_with(&pairs, Alternative::Less).unwrap();
        prop_assert!((g.p_value - greater).abs() <= 1e-12);
        prop_assert!((l.p_value - less).abs() <= 1e-12);
    }

    #[test]
    fn wilcoxon_is_antisymmetric(d in prop::collection::vec(-50i32..50, 1..40)) {
        let ab: Vec<(f64, f64)> = d.iter().map(|&v| (v as f64, 0.0)).collect();
        let ba: Vec<(f64, f64)> = d.iter().map(|&v| (0.0, v as f64)).collect();
        let x = wilcoxon_signed_rank_with(&ab, Alternative::TwoSided).unwrap();
        let y = wilcoxon_signed_rank_with(&ba, Alternative::TwoSided).unwrap();
        prop_assert_eq!(x.p_two_sided, y.p_two_sided);
        prop_assert_eq!((x.w_plus, x.w_minus), (y.w_minus, y.w_plus));
        prop_assert!((0.0..=1.0).contains(&x.p_two_sided));
    }
}
