//! Finite-difference checks for every differentiable primitive of the tape.
//! Each primitive is probed on 100 seeded random instances at f64.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use synthjepa_core::numerics::{grad_check, GradCheckConfig, Graph, ParamStore, Segment, Stencil, Tensor, Var};
use synthjepa_core::rng;
use synthjepa_core::Result;

const TRIALS: u64 = 100;
const TOL: f64 = 1e-6;

fn randn(r: &mut rng::Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(r)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Reduces an output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y)?.to_vec();
    let mut r = rng::stream(seed, 99);
    let w = g.constant(randn(&mut r, &shape));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

/// Runs `build` on a store holding the given random inputs and checks every
/// coordinate against five-point central differences.
fn check<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    check_with(
        name,
        shapes,
        GradCheckConfig { h: 1e-3, stencil: Stencil::FivePoint, coords_per_param: 64, seed: 0 },
        build,
    )
}

/// Piecewise-linear primitives: a small three-point step keeps probes from
/// straddling a kink.
fn check_kinked<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    check_with(
        name,
        shapes,
        GradCheckConfig { h: 1e-6, stencil: Stencil::ThreePoint, coords_per_param: 64, seed: 0 },
        build,
    )
}

fn check_with<F>(name: &str, shapes: &[&[usize]], cfg: GradCheckConfig, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut r = rng::stream(trial, 1);
        let mut store = ParamStore::<f64>::new();
        let ids: Vec<_> =
            shapes.iter().enumerate().map(|(i, s)| store.add(&format!("p{i}"), randn(&mut r, s))).collect();
        let err = grad_check(
            &mut store,
            |st| {
                let mut g = Graph::new();
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(st, id)).collect();
                let y = build(&mut g, &vars, trial)?;
                let loss = if g.shape(y)?.iter().product::<usize>() == 1 { y } else { project(&mut g, y, trial)? };
                let l = g.value(loss)?.item()?;
                Ok((l, g.backward(loss)?))
            },
            GradCheckConfig { seed: trial, ..cfg },
        )
        .unwrap();
        worst = worst.max(err);
    }
    println!("{name}: worst relative error {worst:.3e}");
    assert!(worst <= TOL, "{name}: {worst:e} > {TOL:e}");
}

#[test]
fn matmul() {
    check("matmul", &[&[3, 4], &[4, 5]], |g, v, _| g.matmul(v[0], v[1]));
}

#[test]
fn add_sub_mul_scale() {
    check("add", &[&[3, 4], &[3, 4]], |g, v, _| g.add(v[0], v[1]));
    check("sub", &[&[3, 4], &[3, 4]], |g, v, _| g.sub(v[0], v[1]));
    check("mul", &[&[3, 4], &[3, 4]], |g, v, _| g.mul(v[0], v[1]));
    check("scale", &[&[2, 3]], |g, v, _| g.scale(v[0], -1.7));
}

#[test]
fn add_row_and_linear() {
    check("linear", &[&[5, 3], &[3, 4], &[4]], |g, v, _| g.linear(v[0], v[1], v[2]));
}

#[test]
fn transpose_reshape() {
    check("transpose", &[&[3, 4]], |g, v, _| g.transpose(v[0]));
    check("reshape", &[&[3, 4]], |g, v, _| g.reshape(v[0], &[2, 6]));
}

#[test]
fn activations() {
    check_kinked("relu", &[&[4, 5]], |g, v, _| g.relu(v[0]));
    check("gelu", &[&[4, 5]], |g, v, _| g.gelu(v[0]));
    check("sigmoid", &[&[4, 5]], |g, v, _| g.sigmoid(v[0]));
    check("tanh", &[&[4, 5]], |g, v, _| g.tanh(v[0]));
}

#[test]
fn softmax() {
    check("softmax_rows", &[&[3, 6]], |g, v, _| g.softmax_rows(v[0]));
}

#[test]
fn layer_norm() {
    check("layer_norm", &[&[4, 8], &[8], &[8]], |g, v, _| g.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn conv2d() {
    check("conv2d s2", &[&[2, 3, 7, 7], &[4, 3, 3, 3], &[4]], |g, v, _| g.conv2d(v[0], v[1], v[2], 2, 1));
    check("conv2d s1", &[&[1, 2, 5, 5], &[3, 2, 3, 3], &[3]], |g, v, _| g.conv2d(v[0], v[1], v[2], 1, 0));
}

#[test]
fn pooling_and_reductions() {
    check("global_avg_pool", &[&[2, 3, 4, 4]], |g, v, _| g.global_avg_pool(v[0]));
    check("mean_all", &[&[3, 4]], |g, v, _| g.mean_all(v[0]));
    check("sum_all", &[&[3, 4]], |g, v, _| g.sum_all(v[0]));
    let segs = [Segment::new(0, 2), Segment::new(2, 3), Segment::new(5, 1)];
    check("segment_mean", &[&[6, 4]], move |g, v, _| g.segment_mean(v[0], &segs));
}

#[test]
fn losses() {
    check("mse", &[&[3, 4], &[3, 4]], |g, v, _| g.mse(v[0], v[1]));
    check("weighted_sq_err", &[&[3, 4], &[3, 4]], |g, v, _| g.weighted_sq_err(v[0], v[1], vec![0.5, 0.25, 1.0]));
    check("bce_with_logits", &[&[6]], |g, v, seed| {
        let mut r = rng::stream(seed, 7);
        let targets: Vec<f64> = (0..6).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let scaled = g.scale(v[0], 3.0)?;
        g.bce_with_logits(scaled, &targets)
    });
    check("weighted_bce_with_logits", &[&[5]], |g, v, seed| {
        let mut r = rng::stream(seed, 8);
        let targets: Vec<f64> = (0..5).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        g.weighted_bce_with_logits(v[0], &targets, &[1.0, 3.0, 0.5, 1.0, 2.0])
    });
}

#[test]
fn attention() {
    let segs = [Segment::new(0, 3), Segment::new(3, 1), Segment::new(4, 4)];
    check("attention", &[&[8, 8], &[8, 8], &[8, 8]], move |g, v, _| g.attention(v[0], v[1], v[2], &segs, 2));
}

#[test]
fn gather_and_concat() {
    check("gather_rows", &[&[4, 3]], |g, v, _| g.gather_rows(v[0], &[3, 0, 3, 1]));
    check("concat_rows", &[&[2, 3], &[4, 3]], |g, v, _| g.concat_rows(v[0], v[1]));
}

#[test]
fn constant_closure_reports_zero() {
    let mut store = ParamStore::<f64>::new();
    store.add("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let err = grad_check(
        &mut store,
        |st| {
            let mut g = Graph::new();
            let _ = g.param(st, st.find("w").unwrap());
            let c = g.constant(Tensor::scalar(1.5));
            let l = g.scale(c, 2.0)?;
            Ok((3.0, g.backward(l)?))
        },
        GradCheckConfig::default(),
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn two_layer_perceptron_mse() {
    // Three-point differences at h=1e-5 lose ~5e-10 absolute to round-off,
    // which exceeds 1e-6 relative on the smallest coordinates.
    let cfg = GradCheckConfig { h: 1e-4, stencil: Stencil::FivePoint, coords_per_param: 64, seed: 0 };
    check_with("mlp+mse", &[&[6, 4], &[4, 8], &[8], &[8, 2], &[2], &[6, 2]], cfg, |g, v, _| {
        let h = g.linear(v[0], v[1], v[2])?;
        let h = g.relu(h)?;
        let y = g.linear(h, v[3], v[4])?;
        g.mse(y, v[5])
    });
}
