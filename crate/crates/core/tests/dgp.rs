use nalgebra::DMatrix;
use synthjepa_core::rng;
use synthjepa_core::synthcohort::{
    gen_expression, generate_dataset, label, make_subject, sample_nodule_params, sample_profile, CausalProfile,
    CohortParams, Dataset, DatasetKind, DatasetSpec, MixingMatrix, ProceduralBackground, SIZE_SD,
};

const N: usize = 10_000;

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn within_3se(v: &[f64], target: f64, what: &str) {
    let (mean, se) = mean_se(v);
    assert!((mean - target).abs() <= 3.0 * se, "{what}: mean {mean} target {target} se {se}");
}

fn dataset(kind: DatasetKind, n: usize, seed: u64, params: CohortParams) -> Dataset {
    let spec = DatasetSpec::new("d", kind, n, seed, params);
    generate_dataset(&spec, &MixingMatrix::sample(128, 77), &ProceduralBackground::default()).unwrap()
}

#[test]
fn size_and_growth_means() {
    let mut r = rng::seeded(2024);
    let (mut s1, mut s0, mut g1, mut g0) = (vec![], vec![], vec![], vec![]);
    for _ in 0..N {
        let p = sample_profile(&mut r, true);
        let np = sample_nodule_params(&p, &mut r);
        assert!(np.s > 0.0 && np.g > 0.0);
        if p.g1 == 1 { &mut s1 } else { &mut s0 }.push(np.s);
        if p.g2 == 1 { &mut g1 } else { &mut g0 }.push(np.g);
    }
    within_3se(&s1, 3.0, "s | G1=1");
    within_3se(&s0, 1.0, "s | G1=0");
    within_3se(&g1, 1.5, "g | G2=1");
    within_3se(&g0, 0.5, "g | G2=0");
    let sd = mean_se(&s1).1 * (s1.len() as f64).sqrt();
    assert!((sd - SIZE_SD).abs() < 0.1 * SIZE_SD, "sd {sd}");
}

#[test]
fn label_prevalence() {
    let params = CohortParams { image_size: 16, ..CohortParams::default() };
    for (kind, target) in [(DatasetKind::T, 0.125), (DatasetKind::S, 0.25)] {
        let ds = dataset(kind, N, 31, params.clone());
        let labels: Vec<f64> = ds.labels().iter().map(|&l| l as f64).collect();
        let se = (target * (1.0 - target) / N as f64).sqrt();
        let p = ds.prevalence();
        assert!((p - target).abs() <= 3.0 * se, "{kind:?}: {p} vs {target}");
        assert_eq!(mean_se(&labels).0, p);
        assert!(ds.subjects.iter().all(|s| s.label == label(&s.profile)));
    }
}

#[test]
fn profiles_are_uniform() {
    let mut r = rng::seeded(8);
    let n = 16 * 1000;
    let mut counts = [0usize; 16];
    for _ in 0..n {
        counts[sample_profile(&mut r, true).bits() as usize] += 1;
    }
    let (p, se) = (1.0 / 16.0, (1.0 / 16.0 * 15.0 / 16.0 / n as f64).sqrt());
    for (b, &c) in counts.iter().enumerate() {
        let f = c as f64 / n as f64;
        assert!((f - p).abs() <= 3.0 * se, "profile {:?}: {f}", CausalProfile::from_bits(b as u8));
    }
}

fn rank(rows: &[Vec<f32>]) -> usize {
    let m = DMatrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flatten().map(|&v| v as f64));
    let sv = m.singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * max).count()
}

#[test]
fn noise_free_expression_rank() {
    let params = CohortParams { noise_sd: 0.0, image_size: 16, ..CohortParams::default() };
    let expr = |ds: &Dataset| ds.subjects.iter().map(|s| s.expression.clone().unwrap()).collect::<Vec<_>>();
    let complete = dataset(DatasetKind::T, 400, 5, params.clone());
    let incomplete = dataset(DatasetKind::S, 400, 6, params.clone());
    assert_eq!(rank(&expr(&complete)), 2);
    assert_eq!(rank(&expr(&incomplete)), 1);

    let mixing = MixingMatrix::sample(128, 3);
    let mut r = rng::seeded(0);
    let rows: Vec<Vec<f32>> =
        CausalProfile::all().map(|p| gen_expression(&p, true, &mixing, &params, &mut r)).collect();
    assert_eq!(rank(&rows), 2);
    let noisy = CohortParams { noise_sd: 0.5, ..params };
    let rows: Vec<Vec<f32>> =
        (0..20).map(|i| gen_expression(&CausalProfile::from_bits(i % 16), false, &mixing, &noisy, &mut r)).collect();
    assert!(rank(&rows) > 2);
}

#[test]
fn mixing_sparsity() {
    let (mut ones, mut total) = (0usize, 0usize);
    for seed in 0..200 {
        let a = MixingMatrix::sample_with(128, seed, 0.01, false);
        ones += a.entries().iter().filter(|&&v| v == 1).count();
        total += a.entries().len();
        assert!(a.entries().iter().all(|&v| v <= 1));
        let b = MixingMatrix::sample(128, seed);
        for col in 0..2 {
            assert!((0..128).any(|row| b.get(row, col) == 1), "seed {seed} col {col}");
        }
    }
    let p = ones as f64 / total as f64;
    let se = (0.01 * 0.99 / total as f64).sqrt();
    assert!((p - 0.01).abs() <= 3.0 * se, "density {p}");
}

#[test]
fn subjects_are_order_independent() {
    let params = CohortParams { image_size: 16, ..CohortParams::default() };
    let spec = DatasetSpec::new("t", DatasetKind::T, 30, 12, params);
    let mixing = MixingMatrix::sample(128, 1);
    let bg = ProceduralBackground::default();
    let ds = generate_dataset(&spec, &mixing, &bg).unwrap();
    for i in (0..30).rev() {
        assert_eq!(make_subject(&spec, &mixing, &bg, i).unwrap(), ds.subjects[i as usize]);
    }
}
