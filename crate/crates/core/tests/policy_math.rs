mod common;

use common::oracles::{dense_forward, features, gradient_error, random_tree};
use l2t::policy::{aggregate, Activation, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_dense_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = rng.random_range(1..12);
        let d = rng.random_range(1..9);
        let pol = Policy::init(d, 16, 5, trial);
        let x = features(&mut rng, n, d);
        let edges = random_tree(&mut rng, n);
        let got = pol.gcn_forward(&x, &edges).unwrap();
        let want = dense_forward(&pol.params, &x, &edges);
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() <= 1e-9, "trial {trial}: {a} vs {b}");
            }
        }
        // the shared aggregation agrees too
        let agg = aggregate(&x, &edges).unwrap();
        assert_eq!(agg.len(), n);
    }
}

fn check_gradient(activation: Activation, seed: u64) {
    let (rel, worst) = gradient_error(activation, seed, 1e-5);
    assert!(rel <= 1e-4, "seed {seed}: relative gradient error {rel}");
    assert!(worst <= 1e-4, "seed {seed}: worst entry mismatch {worst}");
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..5 {
        check_gradient(Activation::Relu, seed);
        check_gradient(Activation::Linear, 100 + seed);
    }
}

fn sample_dist() -> l2t::policy::ActionDistribution {
    l2t::policy::ActionDistribution {
        branch_logits: vec![0.3, -1.0, 1.2, 0.0, -0.4],
        temp_mean: 0.4,
        temp_scale: 0.8,
        topp_mean: -0.7,
        topp_scale: 0.3,
        dep_logit: 0.9,
    }
}

#[test]
fn branch_frequencies_match_softmax() {
    let dist = sample_dist();
    let z: f64 = dist.branch_logits.iter().map(|l| l.exp()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40_000;
    let mut counts = [0usize; 5];
    let mut deps = 0usize;
    for _ in 0..n {
        let (a, _) = dist.sample(&mut rng);
        counts[a.mode.branch_count - 1] += 1;
        deps += usize::from(a.mode.use_dependency);
    }
    for (k, c) in counts.iter().enumerate() {
        let p = dist.branch_logits[k].exp() / z;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let f = *c as f64 / n as f64;
        assert!((f - p).abs() <= 4.0 * sd, "branch {}: {f} vs {p}", k + 1);
    }
    let q = 1.0 / (1.0 + (-0.9f64).exp());
    assert!((deps as f64 / n as f64 - q).abs() <= 4.0 * (q * (1.0 - q) / n as f64).sqrt());
}

#[test]
fn log_density_is_the_sum_of_components() {
    let dist = sample_dist();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z: f64 = dist.branch_logits.iter().map(|l| l.exp()).sum();
    let normal = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let squash = |u: f64, lo: f64, hi: f64| lo + (hi - lo) / (1.0 + (-u).exp());
    // numeric derivative of the squash, as an independent Jacobian
    let jac = |u: f64, lo: f64, hi: f64| (squash(u + 1e-6, lo, hi) - squash(u - 1e-6, lo, hi)) / 2e-6;
    for _ in 0..200 {
        let (a, lp) = dist.sample(&mut rng);
        let pb = dist.branch_logits[a.mode.branch_count - 1].exp() / z;
        let q = 1.0 / (1.0 + (-dist.dep_logit).exp());
        let pd = if a.mode.use_dependency { q } else { 1.0 - q };
        let dt = normal(a.temp_latent, dist.temp_mean, dist.temp_scale) / jac(a.temp_latent, 0.1, 1.5);
        let dp = normal(a.top_p_latent, dist.topp_mean, dist.topp_scale) / jac(a.top_p_latent, 0.1, 1.0);
        let want = (pb * pd * dt * dp).ln();
        assert!((lp - want).abs() <= 1e-6, "{lp} vs {want}");
        assert!((0.1..=1.5).contains(&a.mode.temperature));
        assert!((0.1..=1.0).contains(&a.mode.top_p));
        assert!((squash(a.temp_latent, 0.1, 1.5) - a.mode.temperature).abs() <= 1e-12);
    }
}
