//! PPO with generalized advantage estimation over per-node decisions.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod bandit;

use crate::policy::{aggregate_row, check_features, normalized_adjacency, Action, LossComponents, LossSample, LossSpec, Policy, PolicyError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the trajectory buffer is empty")]
    EmptyBuffer,
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cannot write training log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub clip: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// 0 means the whole buffer.
    pub minibatch: usize,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            epochs: 20,
            clip: 0.2,
            max_grad_norm: 0.5,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            minibatch: 0,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Shape(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if self.lr <= 0.0 || self.max_grad_norm <= 0.0 {
            return bad("lr and max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// What the policy saw when it acted: node features, tree edges (as
/// indices) and the focus node. Enough to recompute the forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    pub node: usize,
}

impl StateSnapshot {
    /// The focus node's row of `Â X`, computed exactly as in the forward pass.
    pub fn aggregated_row(&self) -> Result<Vec<f64>, TrainError> {
        if self.node >= self.features.len() {
            return Err(TrainError::InvalidTransition(format!("focus {} outside snapshot", self.node)));
        }
        let adj = normalized_adjacency(self.features.len(), &self.edges)?;
        Ok(aggregate_row(&self.features, &adj[self.node]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub snapshot: StateSnapshot,
    pub action: Action,
    pub log_prob_old: f64,
    pub reward: f64,
    pub value_old: f64,
    pub done: bool,
}

/// Transitions in decision order; each episode is contiguous and ends done.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBuffer {
    pub transitions: Vec<Transition>,
}

impl TrajectoryBuffer {
    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<(), TrainError> {
        if let Some(last) = episode.last() {
            if !last.done {
                return Err(TrainError::InvalidTransition("episode does not end done".into()));
            }
        }
        if let Some(t) = episode.iter().find(|t| !t.log_prob_old.is_finite()) {
            return Err(TrainError::InvalidTransition(format!("non-finite log_prob_old {}", t.log_prob_old)));
        }
        self.transitions.extend(episode);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.len() as f64
    }
}

/// `δ_t = r_t + γ V(s_{t+1}) - V(s_t)`, with `V(s_{t+1}) = 0` after a done
/// step and `bootstrap` after the last one.
pub fn td_errors(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, bootstrap: f64) -> Result<Vec<f64>, TrainError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(TrainError::Shape(format!(
            "rewards {}, values {}, dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let t_max = rewards.len();
    Ok((0..t_max)
        .map(|t| {
            let next = if dones[t] {
                0.0
            } else if t + 1 < t_max {
                values[t + 1]
            } else {
                bootstrap
            };
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// `Â_t = δ_t + γλ Â_{t+1}`, restarting after each done step.
pub fn gae(deltas: &[f64], gamma: f64, lambda: f64, dones: &[bool]) -> Vec<f64> {
    let mut adv = vec![0.0; deltas.len()];
    let mut running = 0.0;
    for t in (0..deltas.len()).rev() {
        if dones[t] {
            running = 0.0;
        }
        running = deltas[t] + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Zero mean and unit variance; a single advantage is only rescaled to ±1.
pub fn normalize(adv: &mut [f64]) {
    if adv.len() == 1 {
        if adv[0] != 0.0 {
            adv[0] = adv[0].signum();
        }
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub update_idx: u64,
    pub mean_reward: f64,
    /// Average over every gradient step.
    pub clip_fraction: f64,
    /// From the last gradient step.
    pub value_loss: f64,
    pub entropy: f64,
    /// Largest post-clipping gradient norm applied.
    pub grad_norm: f64,
    /// Largest gradient norm before clipping.
    pub grad_norm_raw: f64,
    /// Average probability ratio over every gradient step.
    pub mean_ratio: f64,
    /// Ratio on the very first pass, where the policy still equals the old one.
    pub first_pass_ratio: f64,
}

/// Per-sample loss inputs for the whole buffer.
pub fn prepare(buffer: &TrajectoryBuffer, cfg: &TrainConfig) -> Result<Vec<LossSample>, TrainError> {
    let tr = &buffer.transitions;
    let rewards: Vec<f64> = tr.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = tr.iter().map(|t| t.value_old).collect();
    let dones: Vec<bool> = tr.iter().map(|t| t.done).collect();
    let deltas = td_errors(&rewards, &values, &dones, cfg.gamma, 0.0)?;
    let adv = gae(&deltas, cfg.gamma, cfg.lambda, &dones);
    let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
    let mut norm_adv = adv;
    if cfg.normalize_advantages {
        normalize(&mut norm_adv);
    }
    tr.iter()
        .zip(norm_adv.iter().zip(&returns))
        .map(|(t, (&a, &r))| {
            check_features(&t.snapshot.features, t.snapshot.features.first().map_or(0, Vec::len))?;
            Ok(LossSample {
                agg: t.snapshot.aggregated_row()?,
                action: t.action,
                log_prob_old: t.log_prob_old,
                advantage: a,
                ret: r,
            })
        })
        .collect()
}

pub fn ppo_loss(policy: &Policy, batch: &[LossSample], cfg: &TrainConfig) -> Result<LossComponents, TrainError> {
    Ok(policy.loss(batch, &cfg.loss_spec())?)
}

/// `cfg.epochs` passes of clipped-gradient descent over the buffer.
pub fn update(policy: &Policy, buffer: &TrajectoryBuffer, cfg: &TrainConfig, update_idx: u64) -> Result<(Policy, TrainStats), TrainError> {
    if buffer.is_empty() {
        return Err(TrainError::EmptyBuffer);
    }
    cfg.validate()?;
    let samples = prepare(buffer, cfg)?;
    let spec = cfg.loss_spec();
    let mut pol = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ update_idx.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mb = if cfg.minibatch == 0 { samples.len() } else { cfg.minibatch.min(samples.len()) };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = TrainStats {
        update_idx,
        mean_reward: buffer.mean_reward(),
        ..TrainStats::default()
    };
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        if mb < samples.len() {
            order.shuffle(&mut rng);
        }
        for (k, chunk) in order.chunks(mb).enumerate() {
            let batch: Vec<LossSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (comp, mut grad) = pol.loss_and_grad(&batch, &spec)?;
            let raw = grad.norm();
            if !raw.is_finite() {
                return Err(TrainError::Policy(PolicyError::Numerical(format!("gradient norm {raw}"))));
            }
            if raw > cfg.max_grad_norm {
                grad.scale(cfg.max_grad_norm / raw);
            }
            pol.params.add_scaled(&grad, -cfg.lr);
            if epoch == 0 && k == 0 {
                stats.first_pass_ratio = comp.mean_ratio;
            }
            steps += 1;
            stats.clip_fraction += comp.clip_fraction;
            stats.mean_ratio += comp.mean_ratio;
            stats.value_loss = comp.value_loss;
            stats.entropy = comp.entropy;
            stats.grad_norm = stats.grad_norm.max(grad.norm());
            stats.grad_norm_raw = stats.grad_norm_raw.max(raw);
        }
    }
    if steps > 0 {
        stats.clip_fraction /= steps as f64;
        stats.mean_ratio /= steps as f64;
    }
    Ok((pol, stats))
}

pub fn append_log(path: &Path, stats: &TrainStats) -> Result<(), TrainError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(stats).expect("stats serialize");
    writeln!(f, "{line}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn td_examples() {
        assert_eq!(td_errors(&[1.0], &[0.5], &[true], 0.9, 0.0).unwrap(), vec![0.5]);
        let d = td_errors(&[0.0; 5], &[2.0; 5], &[false; 5], 1.0, 2.0).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
        assert!(td_errors(&[1.0], &[0.5, 0.1], &[true], 0.9, 0.0).is_err());
    }

    #[test]
    fn gae_special_cases() {
        let deltas = [0.5, -1.0, 2.0, 0.25];
        assert_eq!(gae(&deltas, 0.9, 0.0, &[false; 4]), deltas.to_vec());
        let suffix: Vec<f64> = (0..4).map(|t| deltas[t..].iter().sum()).collect();
        assert_eq!(gae(&deltas, 1.0, 1.0, &[false; 4]), suffix);
        // a done at index 1 cuts the sum
        let cut = gae(&deltas, 1.0, 1.0, &[false, true, false, false]);
        assert_eq!(cut[0], 0.5 - 1.0);
        assert_eq!(cut[2], 2.25);
    }

    #[test]
    fn random_td_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..10.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut dones = vec![false; 10];
        dones[4] = true;
        dones[9] = true;
        let d = td_errors(&r, &v, &dones, 0.97, 0.0).unwrap();
        for t in 0..10 {
            let next = if dones[t] { 0.0 } else { v[t + 1] };
            assert!((d[t] - (r[t] + 0.97 * next - v[t])).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalization() {
        let mut a = [1.0, 2.0, 3.0];
        normalize(&mut a);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        let mut one = [-7.5];
        normalize(&mut one);
        assert_eq!(one, [-1.0]);
    }

    #[test]
    fn empty_buffer_rejected() {
        let pol = Policy::init(2, 4, 5, 0);
        assert!(matches!(
            update(&pol, &TrajectoryBuffer::default(), &TrainConfig::default(), 0),
            Err(TrainError::EmptyBuffer)
        ));
    }

    #[test]
    fn episode_must_end_done() {
        let mut buf = TrajectoryBuffer::default();
        let t = Transition {
            snapshot: StateSnapshot {
                features: vec![vec![0.0]],
                edges: vec![],
                node: 0,
            },
            action: crate::policy::Policy::init(1, 2, 5, 0)
                .actor_dist(&[0.0, 0.0])
                .unwrap()
                .mode(),
            log_prob_old: -1.0,
            reward: 0.0,
            value_old: 0.0,
            done: false,
        };
        assert!(buf.push_episode(vec![t]).is_err());
    }
}
