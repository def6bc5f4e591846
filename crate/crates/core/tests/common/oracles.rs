//! Independent reference implementations used to cross-check the library.

use l2t::policy::{Activation, LossSample, LossSpec, Policy, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|c| (rng.random_range(0..c), c)).collect()
}

pub fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn matmul(a: &[Vec<f64>], w: &[f64], cols: usize) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().enumerate().map(|(i, x)| x * w[i * cols + j]).sum())
                .collect()
        })
        .collect()
}

/// Dense `D^-1/2 (A + I) D^-1/2`.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(u, v) in edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

/// Whole-graph forward pass with explicit matrices.
pub fn dense_forward(p: &PolicyParams, x: &[Vec<f64>], edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let n = x.len();
    let ahat = dense_adjacency(n, edges);
    let ax: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..x[0].len()).map(|k| (0..n).map(|j| ahat[i][j] * x[j][k]).sum()).collect())
        .collect();
    let relu = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> { m.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect() };
    let add_bias = |m: Vec<Vec<f64>>, b: &[f64]| -> Vec<Vec<f64>> {
        m.into_iter()
            .map(|r| r.into_iter().zip(b).map(|(v, bb)| v + bb).collect())
            .collect()
    };
    let h0 = relu(matmul(&ax, &p.gcn_weight, p.h));
    let h1 = relu(add_bias(matmul(&h0, &p.mlp1_w, p.h), &p.mlp1_b));
    relu(add_bias(matmul(&h1, &p.mlp2_w, p.h), &p.mlp2_b))
}

/// Largest entrywise gap between the library forward pass and the dense one.
pub fn forward_gap(pol: &Policy, x: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    let got = pol.gcn_forward(x, edges).unwrap();
    let want = dense_forward(&pol.params, x, edges);
    got.iter()
        .flatten()
        .zip(want.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn spec() -> LossSpec {
    LossSpec {
        clip: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, pol: &Policy, size: usize) -> Vec<LossSample> {
    let d = pol.params.d;
    (0..size)
        .map(|_| {
            let agg: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dist = pol.actor_dist(&pol.represent(&agg).unwrap()).unwrap();
            // actions come from the policy itself, as they do during rollouts
            let (action, _) = dist.sample(rng);
            // some samples sit inside the clip band, some far outside
            let shift = if rng.random::<f64>() < 0.5 { rng.random_range(-0.1..0.1) } else { rng.random_range(-3.0..3.0) };
            LossSample {
                log_prob_old: dist.log_prob(&action) + shift,
                agg,
                action,
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-1.0..10.0),
            }
        })
        .collect()
}

/// Relative L2 error between the analytic gradient and central differences
/// for one random instance, plus the worst per-entry mismatch.
pub fn gradient_error(activation: Activation, seed: u64, eps: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pol = Policy::init(6, 8, 5, seed);
    pol.activation = activation;
    // Fresh biases are exactly zero, so a layer whose inputs are all
    // switched off would put the next ReLU exactly on its kink, where no
    // derivative exists. Jitter every parameter to stay off those points.
    for (_, t) in pol.params.tensors_mut() {
        t.iter_mut().for_each(|x| *x += rng.random_range(-0.1..0.1));
    }
    let batch = random_batch(&mut rng, &pol, 6);
    let spec = spec();
    let (_, grad) = pol.loss_and_grad(&batch, &spec).unwrap();
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    let mut worst: f64 = 0.0;
    for t in 0..pol.params.tensors().len() {
        let len = pol.params.tensors()[t].1.len();
        for i in 0..len {
            let mut plus = pol.clone();
            plus.params.tensors_mut()[t].1[i] += eps;
            let mut minus = pol.clone();
            minus.params.tensors_mut()[t].1[i] -= eps;
            let fd = (plus.loss(&batch, &spec).unwrap().loss - minus.loss(&batch, &spec).unwrap().loss) / (2.0 * eps);
            let an = grad.tensors()[t].1[i];
            diff2 += (fd - an) * (fd - an);
            norm2 += an * an;
            worst = worst.max((fd - an).abs() / an.abs().max(1e-2));
        }
    }
    (diff2.sqrt() / norm2.sqrt().max(1e-12), worst)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The clipped PPO objective written out from the raw parameters, one
/// sample at a time, without any library helper.
pub fn straight_line_loss(p: &PolicyParams, batch: &[LossSample], spec: &LossSpec, sigma_min: f64) -> f64 {
    let lin = |x: &[f64], w: &[f64], b: &[f64], c: usize| -> Vec<f64> {
        (0..c)
            .map(|j| b.get(j).copied().unwrap_or(0.0) + x.iter().enumerate().map(|(i, xi)| xi * w[i * c + j]).sum::<f64>())
            .collect()
    };
    let relu = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.max(0.0)).collect() };
    let pi = std::f64::consts::PI;
    let mut total = 0.0;
    for s in batch {
        let h0 = relu(lin(&s.agg, &p.gcn_weight, &[], p.h));
        let h1 = relu(lin(&h0, &p.mlp1_w, &p.mlp1_b, p.h));
        let rep = relu(lin(&h1, &p.mlp2_w, &p.mlp2_b, p.h));
        let logits = lin(&rep, &p.branch_w, &p.branch_b, p.b_max);
        let cont = lin(&rep, &p.cont_w, &p.cont_b, 4);
        let dep = lin(&rep, &p.dep_w, &p.dep_b, 1)[0];
        let value = lin(&rep, &p.critic_w, &p.critic_b, 1)[0];

        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let sd_t = (1.0 + cont[1].exp()).ln() + sigma_min;
        let sd_p = (1.0 + cont[3].exp()).ln() + sigma_min;
        let q = sig(dep);
        let a = &s.action;
        let log_normal = |x: f64, m: f64, sd: f64| -(x - m).powi(2) / (2.0 * sd * sd) - (sd * (2.0 * pi).sqrt()).ln();
        let log_jac = |u: f64, lo: f64, hi: f64| ((hi - lo) * sig(u) * (1.0 - sig(u))).ln();
        let logp = probs[a.mode.branch_count - 1].ln()
            + log_normal(a.temp_latent, cont[0], sd_t)
            - log_jac(a.temp_latent, 0.1, 1.5)
            + log_normal(a.top_p_latent, cont[2], sd_p)
            - log_jac(a.top_p_latent, 0.1, 1.0)
            + if a.mode.use_dependency { q.ln() } else { (1.0 - q).ln() };
        let entropy = -probs.iter().map(|p| p * p.ln()).sum::<f64>() - (q * q.ln() + (1.0 - q) * (1.0 - q).ln())
            + 0.5 * (2.0 * pi * std::f64::consts::E * sd_t * sd_t).ln()
            + 0.5 * (2.0 * pi * std::f64::consts::E * sd_p * sd_p).ln();
        let ratio = (logp - s.log_prob_old).exp();
        let surr = (ratio * s.advantage).min(ratio.clamp(1.0 - spec.clip, 1.0 + spec.clip) * s.advantage);
        total += -surr + spec.value_coef * (value - s.ret).powi(2) - spec.entropy_coef * entropy;
    }
    total / batch.len() as f64
}

/// `A_t = sum_l (γλ)^l δ_{t+l}`, summed explicitly and cut at episode ends.
pub fn explicit_gae(deltas: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = deltas.len();
    (0..t_len)
        .map(|t| {
            let mut acc = 0.0;
            for l in 0..t_len - t {
                acc += (gamma * lambda).powi(l as i32) * deltas[t + l];
                if dones[t + l] {
                    break;
                }
            }
            acc
        })
        .collect()
}

