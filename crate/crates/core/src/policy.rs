//! Mode selector: one GCN layer, a two-layer MLP trunk, and linear heads for
//! the actor (branch count, temperature, top-p, dependency flag) and the
//! critic. Forward and backward passes are written out by hand.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_B_MAX: usize = 5;
pub const TEMP_RANGE: (f64, f64) = (0.1, 1.5);
pub const TOP_P_RANGE: (f64, f64) = (0.1, 1.0);
pub const SIGMA_MIN: f64 = 1e-3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// Identity everywhere; used for closed-form checks.
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(pre > 0.0)),
            Activation::Linear => 1.0,
        }
    }
}

/// All weights, row-major. The same shape doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub d: usize,
    pub h: usize,
    pub b_max: usize,
    /// d×h
    pub gcn_weight: Vec<f64>,
    /// h×h and h
    pub mlp1_w: Vec<f64>,
    pub mlp1_b: Vec<f64>,
    pub mlp2_w: Vec<f64>,
    pub mlp2_b: Vec<f64>,
    /// h×b_max and b_max
    pub branch_w: Vec<f64>,
    pub branch_b: Vec<f64>,
    /// h×4 and 4: temperature mean, temperature scale, top-p mean, top-p scale
    pub cont_w: Vec<f64>,
    pub cont_b: Vec<f64>,
    /// h and 1
    pub dep_w: Vec<f64>,
    pub dep_b: Vec<f64>,
    /// h and 1
    pub critic_w: Vec<f64>,
    pub critic_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "gcn_weight", "mlp1_w", "mlp1_b", "mlp2_w", "mlp2_b", "branch_w", "branch_b", "cont_w", "cont_b",
    "dep_w", "dep_b", "critic_w", "critic_b",
];

impl PolicyParams {
    pub fn zeros(d: usize, h: usize, b_max: usize) -> Self {
        Self {
            d,
            h,
            b_max,
            gcn_weight: vec![0.0; d * h],
            mlp1_w: vec![0.0; h * h],
            mlp1_b: vec![0.0; h],
            mlp2_w: vec![0.0; h * h],
            mlp2_b: vec![0.0; h],
            branch_w: vec![0.0; h * b_max],
            branch_b: vec![0.0; b_max],
            cont_w: vec![0.0; h * 4],
            cont_b: vec![0.0; 4],
            dep_w: vec![0.0; h],
            dep_b: vec![0.0; 1],
            critic_w: vec![0.0; h],
            critic_b: vec![0.0; 1],
        }
    }

    /// Uniform fan-in scaled weights (He-uniform bound for the trunk, a
    /// tighter bound for the heads), zero biases.
    pub fn init(d: usize, h: usize, b_max: usize, seed: u64) -> Self {
        let mut p = Self::zeros(d, h, b_max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |v: &mut Vec<f64>, bound: f64| {
            for x in v.iter_mut() {
                *x = rng.random_range(-bound..=bound);
            }
        };
        fill(&mut p.gcn_weight, (6.0 / d as f64).sqrt());
        fill(&mut p.mlp1_w, (6.0 / h as f64).sqrt());
        fill(&mut p.mlp2_w, (6.0 / h as f64).sqrt());
        let head = 1.0 / (h as f64).sqrt();
        fill(&mut p.branch_w, head);
        fill(&mut p.cont_w, head);
        fill(&mut p.dep_w, head);
        fill(&mut p.critic_w, head);
        p
    }

    pub fn shape_of(&self, name: &str) -> Option<(usize, usize)> {
        let (d, h, b) = (self.d, self.h, self.b_max);
        Some(match name {
            "gcn_weight" => (d, h),
            "mlp1_w" | "mlp2_w" => (h, h),
            "mlp1_b" | "mlp2_b" => (1, h),
            "branch_w" => (h, b),
            "branch_b" => (1, b),
            "cont_w" => (h, 4),
            "cont_b" => (1, 4),
            "dep_w" | "critic_w" => (h, 1),
            "dep_b" | "critic_b" => (1, 1),
            _ => return None,
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Vec<f64>); 13] {
        [
            ("gcn_weight", &self.gcn_weight),
            ("mlp1_w", &self.mlp1_w),
            ("mlp1_b", &self.mlp1_b),
            ("mlp2_w", &self.mlp2_w),
            ("mlp2_b", &self.mlp2_b),
            ("branch_w", &self.branch_w),
            ("branch_b", &self.branch_b),
            ("cont_w", &self.cont_w),
            ("cont_b", &self.cont_b),
            ("dep_w", &self.dep_w),
            ("dep_b", &self.dep_b),
            ("critic_w", &self.critic_w),
            ("critic_b", &self.critic_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 13] {
        [
            ("gcn_weight", &mut self.gcn_weight),
            ("mlp1_w", &mut self.mlp1_w),
            ("mlp1_b", &mut self.mlp1_b),
            ("mlp2_w", &mut self.mlp2_w),
            ("mlp2_b", &mut self.mlp2_b),
            ("branch_w", &mut self.branch_w),
            ("branch_b", &mut self.branch_b),
            ("cont_w", &mut self.cont_w),
            ("cont_b", &mut self.cont_b),
            ("dep_w", &mut self.dep_w),
            ("dep_b", &mut self.dep_b),
            ("critic_w", &mut self.critic_w),
            ("critic_b", &mut self.critic_b),
        ]
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, t) in self.tensors() {
            let (r, c) = self.shape_of(name).expect("known tensor");
            if t.len() != r * c {
                return Err(PolicyError::Shape(format!("{name} has {} entries, expected {r}x{c}", t.len())));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::Numerical(format!("{name} holds a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, k: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    pub fn max_abs_diff(&self, other: &PolicyParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

// --- graph aggregation ---

/// Rows of `D^-1/2 (A + I) D^-1/2` with edges treated as undirected, as
/// sparse `(column, weight)` lists sorted by column.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<(usize, f64)>>, PolicyError> {
    let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(u, w) in edges {
        if u >= n || w >= n {
            return Err(PolicyError::Shape(format!("edge ({u},{w}) outside {n} nodes")));
        }
        if u != w {
            nbrs[u].push(w);
            nbrs[w].push(u);
        }
    }
    for l in &mut nbrs {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<f64> = nbrs.iter().map(|l| l.len() as f64).collect();
    Ok(nbrs
        .iter()
        .enumerate()
        .map(|(v, l)| l.iter().map(|&u| (u, 1.0 / (deg[v] * deg[u]).sqrt())).collect())
        .collect())
}

/// One row of `Â X`, summed in column order.
pub fn aggregate_row(features: &[Vec<f64>], row: &[(usize, f64)]) -> Vec<f64> {
    let d = features.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for &(u, w) in row {
        for (o, x) in out.iter_mut().zip(&features[u]) {
            *o += w * x;
        }
    }
    out
}

pub fn check_features(features: &[Vec<f64>], d: usize) -> Result<(), PolicyError> {
    for (i, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(PolicyError::Shape(format!("node {i} has {} features, expected {d}", f.len())));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::Numerical(format!("node {i} has a non-finite feature")));
        }
    }
    Ok(())
}

/// `Â X` for every node.
pub fn aggregate(features: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<Vec<Vec<f64>>, PolicyError> {
    let adj = normalized_adjacency(features.len(), edges)?;
    Ok(adj.iter().map(|row| aggregate_row(features, row)).collect())
}

// --- actions ---

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeVector {
    pub branch_count: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub use_dependency: bool,
}

/// A sampled mode plus the pre-squash Gaussian draws, kept so the
/// log-density can be re-evaluated exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub mode: ModeVector,
    pub temp_latent: f64,
    pub top_p_latent: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// `lo + (hi - lo) * sigmoid(u)`.
pub fn squash(u: f64, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * sigmoid(u)
}

/// `log |d squash / du|`, stable for any finite `u`.
pub fn log_squash_jacobian(u: f64, range: (f64, f64)) -> f64 {
    (range.1 - range.0).ln() - softplus(-u) - softplus(u)
}

pub fn gaussian_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub branch_logits: Vec<f64>,
    pub temp_mean: f64,
    pub temp_scale: f64,
    pub topp_mean: f64,
    pub topp_scale: f64,
    pub dep_logit: f64,
}

impl ActionDistribution {
    pub fn branch_log_probs(&self) -> Vec<f64> {
        let m = self.branch_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.branch_logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        self.branch_logits.iter().map(|l| l - lse).collect()
    }

    pub fn branch_probs(&self) -> Vec<f64> {
        self.branch_log_probs().into_iter().map(f64::exp).collect()
    }

    pub fn dep_prob(&self) -> f64 {
        sigmoid(self.dep_logit)
    }

    fn dep_log_prob(&self, flag: bool) -> f64 {
        // log sigmoid(t) = -softplus(-t)
        if flag {
            -softplus(-self.dep_logit)
        } else {
            -softplus(self.dep_logit)
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Action, f64) {
        let probs = self.branch_probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let temp_latent = self.temp_mean + self.temp_scale * z1;
        let top_p_latent = self.topp_mean + self.topp_scale * z2;
        let use_dependency = rng.random::<f64>() < self.dep_prob();
        let action = Action {
            mode: ModeVector {
                branch_count: idx + 1,
                temperature: squash(temp_latent, TEMP_RANGE),
                top_p: squash(top_p_latent, TOP_P_RANGE),
                use_dependency,
            },
            temp_latent,
            top_p_latent,
        };
        let lp = self.log_prob(&action);
        (action, lp)
    }

    /// Sum of the four component log-densities, Jacobians included.
    pub fn log_prob(&self, a: &Action) -> f64 {
        let lb = self.branch_log_probs()[a.mode.branch_count - 1];
        let lt = gaussian_log_density(a.temp_latent, self.temp_mean, self.temp_scale)
            - log_squash_jacobian(a.temp_latent, TEMP_RANGE);
        let lp = gaussian_log_density(a.top_p_latent, self.topp_mean, self.topp_scale)
            - log_squash_jacobian(a.top_p_latent, TOP_P_RANGE);
        lb + lt + lp + self.dep_log_prob(a.mode.use_dependency)
    }

    /// Categorical + Bernoulli + pre-squash Gaussian entropies.
    pub fn entropy(&self) -> f64 {
        let lps = self.branch_log_probs();
        let h_cat: f64 = -lps.iter().map(|l| l.exp() * l).sum::<f64>();
        let q = self.dep_prob();
        let h_bern = -(q * self.dep_log_prob(true) + (1.0 - q) * self.dep_log_prob(false));
        let h_gauss = |s: f64| 0.5 * (LN_2PI + 1.0) + s.ln();
        h_cat + h_bern + h_gauss(self.temp_scale) + h_gauss(self.topp_scale)
    }

    /// The most likely branch count with the squashed means; used for greedy evaluation.
    pub fn mode(&self) -> Action {
        let probs = self.branch_probs();
        let idx = (0..probs.len()).fold(0, |best, i| if probs[i] > probs[best] { i } else { best });
        Action {
            mode: ModeVector {
                branch_count: idx + 1,
                temperature: squash(self.temp_mean, TEMP_RANGE),
                top_p: squash(self.topp_mean, TOP_P_RANGE),
                use_dependency: self.dep_logit >= 0.0,
            },
            temp_latent: self.temp_mean,
            top_p_latent: self.topp_mean,
        }
    }
}

// --- network ---

#[derive(Debug, Clone)]
struct TrunkCache {
    agg: Vec<f64>,
    z0: Vec<f64>,
    a0: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    rep: Vec<f64>,
}

/// `x (len r) · W (r×c) + b`.
fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, c: usize) -> Vec<f64> {
    let mut out = b.map_or_else(|| vec![0.0; c], <[f64]>::to_vec);
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let row = &w[i * c..(i + 1) * c];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub params: PolicyParams,
    pub activation: Activation,
    pub sigma_min: f64,
}

/// Per-sample inputs to the PPO loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSample {
    /// The focus node's aggregated row of `Â X`.
    pub agg: Vec<f64>,
    pub action: Action,
    pub log_prob_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub loss: f64,
    /// Mean clipped surrogate (the quantity being maximised).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

impl Policy {
    pub fn new(params: PolicyParams) -> Self {
        Self {
            params,
            activation: Activation::Relu,
            sigma_min: SIGMA_MIN,
        }
    }

    pub fn init(d: usize, h: usize, b_max: usize, seed: u64) -> Self {
        Self::new(PolicyParams::init(d, h, b_max, seed))
    }

    fn trunk(&self, agg: &[f64]) -> TrunkCache {
        let p = &self.params;
        let act = |z: &[f64]| z.iter().map(|&x| self.activation.apply(x)).collect::<Vec<f64>>();
        let z0 = affine(agg, &p.gcn_weight, None, p.h);
        let a0 = act(&z0);
        let z1 = affine(&a0, &p.mlp1_w, Some(&p.mlp1_b), p.h);
        let a1 = act(&z1);
        let z2 = affine(&a1, &p.mlp2_w, Some(&p.mlp2_b), p.h);
        let rep = act(&z2);
        TrunkCache {
            agg: agg.to_vec(),
            z0,
            a0,
            z1,
            a1,
            z2,
            rep,
        }
    }

    /// `g_[v]` from the node's aggregated feature row.
    pub fn represent(&self, agg: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if agg.len() != self.params.d {
            return Err(PolicyError::Shape(format!("row has {} entries, expected {}", agg.len(), self.params.d)));
        }
        Ok(self.trunk(agg).rep)
    }

    /// Node representations for a whole graph (`n×h`).
    pub fn gcn_forward(&self, features: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<Vec<Vec<f64>>, PolicyError> {
        check_features(features, self.params.d)?;
        aggregate(features, edges)?
            .iter()
            .map(|row| self.represent(row))
            .collect()
    }

    pub fn actor_dist(&self, rep: &[f64]) -> Result<ActionDistribution, PolicyError> {
        if rep.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::Numerical("non-finite representation".into()));
        }
        let p = &self.params;
        let logits = affine(rep, &p.branch_w, Some(&p.branch_b), p.b_max);
        let cont = affine(rep, &p.cont_w, Some(&p.cont_b), 4);
        let dep = affine(rep, &p.dep_w, Some(&p.dep_b), 1)[0];
        Ok(ActionDistribution {
            branch_logits: logits,
            temp_mean: cont[0],
            temp_scale: softplus(cont[1]) + self.sigma_min,
            topp_mean: cont[2],
            topp_scale: softplus(cont[3]) + self.sigma_min,
            dep_logit: dep,
        })
    }

    pub fn critic_value(&self, rep: &[f64]) -> f64 {
        affine(rep, &self.params.critic_w, Some(&self.params.critic_b), 1)[0]
    }

    /// Loss value only; shares every formula with [`Policy::loss_and_grad`].
    pub fn loss(&self, batch: &[LossSample], spec: &LossSpec) -> Result<LossComponents, PolicyError> {
        self.loss_impl(batch, spec, None)
    }

    /// PPO loss `-L_clip + c_v (V - R)^2 - c_e H`, averaged over the batch,
    /// and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[LossSample], spec: &LossSpec) -> Result<(LossComponents, PolicyParams), PolicyError> {
        let p = &self.params;
        let mut g = PolicyParams::zeros(p.d, p.h, p.b_max);
        let c = self.loss_impl(batch, spec, Some(&mut g))?;
        Ok((c, g))
    }

    fn loss_impl(&self, batch: &[LossSample], spec: &LossSpec, mut grad: Option<&mut PolicyParams>) -> Result<LossComponents, PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::Shape("empty batch".into()));
        }
        let n = batch.len() as f64;
        let p = &self.params;
        let mut out = LossComponents::default();
        for s in batch {
            if s.agg.len() != p.d {
                return Err(PolicyError::Shape(format!("row has {} entries, expected {}", s.agg.len(), p.d)));
            }
            let cache = self.trunk(&s.agg);
            let dist = self.actor_dist(&cache.rep)?;
            let logp = dist.log_prob(&s.action);
            let ratio = (logp - s.log_prob_old).exp();
            let clipped = ratio.clamp(1.0 - spec.clip, 1.0 + spec.clip);
            let unclipped_obj = ratio * s.advantage;
            let clipped_obj = clipped * s.advantage;
            let surrogate = unclipped_obj.min(clipped_obj);
            let value = self.critic_value(&cache.rep);
            let verr = value - s.ret;
            let entropy = dist.entropy();
            let loss = -surrogate + spec.value_coef * verr * verr - spec.entropy_coef * entropy;
            if !loss.is_finite() {
                return Err(PolicyError::Numerical(format!(
                    "loss {loss} (log_prob {logp}, old {}, value {value})",
                    s.log_prob_old
                )));
            }
            out.loss += loss / n;
            out.surrogate += surrogate / n;
            out.value_loss += verr * verr / n;
            out.entropy += entropy / n;
            out.mean_ratio += ratio / n;
            if (ratio - clipped).abs() > 0.0 {
                out.clip_fraction += 1.0 / n;
            }
            let Some(g) = grad.as_deref_mut() else { continue };

            // d loss / d log_prob: the unclipped branch carries r·A, the
            // clipped branch is flat unless the clamp is inactive.
            let surrogate_grad = if unclipped_obj <= clipped_obj || ratio == clipped {
                ratio * s.advantage
            } else {
                0.0
            };
            let dl_dlogp = -surrogate_grad / n;
            let dl_dh = -spec.entropy_coef / n;
            let dl_dv = 2.0 * spec.value_coef * verr / n;

            // branch logits
            let lps = dist.branch_log_probs();
            let h_cat: f64 = -lps.iter().map(|l| l.exp() * l).sum::<f64>();
            let b = s.action.mode.branch_count - 1;
            let g_logits: Vec<f64> = lps
                .iter()
                .enumerate()
                .map(|(k, &lk)| {
                    let pk = lk.exp();
                    let dlogp = f64::from(u8::from(k == b)) - pk;
                    let dh = -pk * (lk + h_cat);
                    dl_dlogp * dlogp + dl_dh * dh
                })
                .collect();

            // continuous heads: pre-activations are (mean, scale) pairs
            let cont_pre = affine(&cache.rep, &p.cont_w, Some(&p.cont_b), 4);
            let mut g_cont = [0.0; 4];
            for (k, (u, mean, sd)) in [
                (s.action.temp_latent, dist.temp_mean, dist.temp_scale),
                (s.action.top_p_latent, dist.topp_mean, dist.topp_scale),
            ]
            .into_iter()
            .enumerate()
            {
                let dlogp_dmean = (u - mean) / (sd * sd);
                let dlogp_dsd = (u - mean) * (u - mean) / (sd * sd * sd) - 1.0 / sd;
                let dsd_drho = sigmoid(cont_pre[2 * k + 1]);
                let dh_dsd = 1.0 / sd;
                g_cont[2 * k] = dl_dlogp * dlogp_dmean;
                g_cont[2 * k + 1] = (dl_dlogp * dlogp_dsd + dl_dh * dh_dsd) * dsd_drho;
            }

            // dependency flag
            let q = dist.dep_prob();
            let flag = f64::from(u8::from(s.action.mode.use_dependency));
            let g_dep = dl_dlogp * (flag - q) + dl_dh * (-dist.dep_logit * q * (1.0 - q));

            // heads -> representation
            let mut g_rep = vec![0.0; p.h];
            for (i, rep_i) in cache.rep.iter().enumerate() {
                for k in 0..p.b_max {
                    g.branch_w[i * p.b_max + k] += rep_i * g_logits[k];
                    g_rep[i] += p.branch_w[i * p.b_max + k] * g_logits[k];
                }
                for k in 0..4 {
                    g.cont_w[i * 4 + k] += rep_i * g_cont[k];
                    g_rep[i] += p.cont_w[i * 4 + k] * g_cont[k];
                }
                g.dep_w[i] += rep_i * g_dep;
                g_rep[i] += p.dep_w[i] * g_dep;
                g.critic_w[i] += rep_i * dl_dv;
                g_rep[i] += p.critic_w[i] * dl_dv;
            }
            for k in 0..p.b_max {
                g.branch_b[k] += g_logits[k];
            }
            for k in 0..4 {
                g.cont_b[k] += g_cont[k];
            }
            g.dep_b[0] += g_dep;
            g.critic_b[0] += dl_dv;

            self.backprop_trunk(&cache, g_rep, g);
        }
        Ok(out)
    }

    fn backprop_trunk(&self, c: &TrunkCache, g_rep: Vec<f64>, g: &mut PolicyParams) {
        let p = &self.params;
        let h = p.h;
        let g_z2: Vec<f64> = g_rep
            .iter()
            .zip(&c.z2)
            .map(|(gr, z)| gr * self.activation.grad(*z))
            .collect();
        let mut g_a1 = vec![0.0; h];
        for i in 0..h {
            for j in 0..h {
                g.mlp2_w[i * h + j] += c.a1[i] * g_z2[j];
                g_a1[i] += p.mlp2_w[i * h + j] * g_z2[j];
            }
        }
        for j in 0..h {
            g.mlp2_b[j] += g_z2[j];
        }
        let g_z1: Vec<f64> = g_a1
            .iter()
            .zip(&c.z1)
            .map(|(ga, z)| ga * self.activation.grad(*z))
            .collect();
        let mut g_a0 = vec![0.0; h];
        for i in 0..h {
            for j in 0..h {
                g.mlp1_w[i * h + j] += c.a0[i] * g_z1[j];
                g_a0[i] += p.mlp1_w[i * h + j] * g_z1[j];
            }
        }
        for j in 0..h {
            g.mlp1_b[j] += g_z1[j];
        }
        for j in 0..h {
            let g_z0 = g_a0[j] * self.activation.grad(c.z0[j]);
            if g_z0 == 0.0 {
                continue;
            }
            for (i, x) in c.agg.iter().enumerate() {
                g.gcn_weight[i * h + j] += x * g_z0;
            }
        }
    }
}

// --- checkpoints ---

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a policy: shapes, provenance and named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub h: usize,
    pub b_max: usize,
    pub seed: u64,
    /// Last completed training round; 0 for a fresh initialisation.
    pub round: u64,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, seed: u64, round: u64) -> Self {
        let p = &policy.params;
        Self {
            version: CHECKPOINT_VERSION,
            d: p.d,
            h: p.h,
            b_max: p.b_max,
            seed,
            round,
            tensors: p.tensors().iter().map(|(n, t)| (n.to_string(), t.to_vec())).collect(),
        }
    }

    pub fn into_policy(self) -> Result<Policy, PolicyError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Shape(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut params = PolicyParams::zeros(self.d, self.h, self.b_max);
        for (name, t) in params.tensors_mut() {
            *t = self
                .tensors
                .get(name)
                .cloned()
                .ok_or_else(|| PolicyError::Shape(format!("checkpoint lacks {name}")))?;
        }
        if let Some(extra) = self.tensors.keys().find(|k| !TENSOR_NAMES.contains(&k.as_str())) {
            return Err(PolicyError::Shape(format!("unknown tensor {extra}")));
        }
        params.validate()?;
        Ok(Policy::new(params))
    }
}
