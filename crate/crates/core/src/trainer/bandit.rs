//! One-step contextual bandit: each context hides a best branch count.
//! Useful as a learning-signal check that needs no LLM at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{update, StateSnapshot, TrainConfig, TrainError, TrainStats, TrajectoryBuffer, Transition};
use crate::policy::Policy;

pub const MATCH_REWARD: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct ContextualBandit {
    pub contexts: Vec<Vec<f64>>,
    /// Best branch count per context, in `1..=b_max`.
    pub optimal: Vec<usize>,
}

impl ContextualBandit {
    pub fn new(seed: u64, n_contexts: usize, d: usize, b_max: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contexts = (0..n_contexts)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let optimal = (0..n_contexts).map(|_| rng.random_range(1..=b_max)).collect();
        Self { contexts, optimal }
    }

    /// A single-node graph, so the aggregated row is the context itself.
    pub fn snapshot(&self, ctx: usize) -> StateSnapshot {
        StateSnapshot {
            features: vec![self.contexts[ctx].clone()],
            edges: Vec::new(),
            node: 0,
        }
    }

    /// Exact expected reward of `policy`, averaged over contexts.
    pub fn expected_reward(&self, policy: &Policy) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for (ctx, best) in self.contexts.iter().zip(&self.optimal) {
            let dist = policy.actor_dist(&policy.represent(ctx)?)?;
            total += MATCH_REWARD * dist.branch_probs()[best - 1];
        }
        Ok(total / self.contexts.len() as f64)
    }

    pub fn rollout(&self, policy: &Policy, episodes: usize, rng: &mut ChaCha8Rng) -> Result<TrajectoryBuffer, TrainError> {
        let mut buf = TrajectoryBuffer::default();
        for _ in 0..episodes {
            let ctx = rng.random_range(0..self.contexts.len());
            let rep = policy.represent(&self.contexts[ctx])?;
            let dist = policy.actor_dist(&rep)?;
            let (action, log_prob_old) = dist.sample(rng);
            let reward = if action.mode.branch_count == self.optimal[ctx] { MATCH_REWARD } else { 0.0 };
            buf.push_episode(vec![Transition {
                snapshot: self.snapshot(ctx),
                action,
                log_prob_old,
                reward,
                value_old: policy.critic_value(&rep),
                done: true,
            }])?;
        }
        Ok(buf)
    }

    /// Alternates rollouts and PPO updates; returns the trained policy and per-round stats.
    pub fn train(&self, policy: &Policy, rounds: usize, episodes: usize, cfg: &TrainConfig) -> Result<(Policy, Vec<TrainStats>), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut pol = policy.clone();
        let mut stats = Vec::with_capacity(rounds);
        for round in 0..rounds {
            let buf = self.rollout(&pol, episodes, &mut rng)?;
            let (next, s) = update(&pol, &buf, cfg, round as u64)?;
            pol = next;
            stats.push(s);
        }
        Ok((pol, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_policy_scores_a_fifth() {
        let env = ContextualBandit::new(1, 4, 8, 5);
        let pol = Policy::new(crate::policy::PolicyParams::zeros(8, 16, 5));
        assert!((env.expected_reward(&pol).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn training_improves_on_one_seed() {
        let env = ContextualBandit::new(7, 4, 16, 5);
        let pol = Policy::init(16, 64, 5, 7);
        let cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        let before = env.expected_reward(&pol).unwrap();
        let (trained, stats) = env.train(&pol, 20, 64, &cfg).unwrap();
        let after = env.expected_reward(&trained).unwrap();
        eprintln!("bandit {before:.3} -> {after:.3}");
        assert!(after > before);
        assert!(stats.iter().all(|s| s.grad_norm <= cfg.max_grad_norm + 1e-9));
        assert!(stats.iter().all(|s| (s.first_pass_ratio - 1.0).abs() <= 1e-6));
    }
}
