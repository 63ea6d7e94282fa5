//! Rewards, advantage estimation, PPO with an adaptive KL penalty, and the
//! curriculum queue.

pub mod curriculum;
pub mod ppo;

use serde::{Deserialize, Serialize};

pub use curriculum::{curriculum_step, CurriculumQueue, StepAction};
pub use ppo::{adapt_kl_coef, ppo_objective, ppo_update, PpoConfig, PpoStats};

use crate::corpus::{Instance, TypeId};
use crate::embeddings::KgEmbeddings;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            gamma: 1.0,
            gae_lambda: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!(
                "gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub f1_local: f64,
    pub g_score: f64,
    pub reward: f64,
}

impl RewardComponents {
    /// `α·F1 − g`
    pub fn new(alpha: f64, f1_local: f64, g_score: f64) -> Self {
        Self {
            f1_local,
            g_score,
            reward: alpha * f1_local - g_score,
        }
    }
}

/// Rewards of one instance: the entity view reads F1 of the entity task,
/// the relation view F1 of the relation task; `g` is shared.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRewards {
    pub entity: RewardComponents,
    pub relation: RewardComponents,
}

/// TransE score of the instance's current triple, 0 when the relation is None.
pub fn g_score<T: Real>(instance: &Instance, kg: &KgEmbeddings<T>, none_relation: TypeId) -> Result<f64> {
    if instance.current_relation == none_relation {
        return Ok(0.0);
    }
    Ok(kg
        .score(
            instance.head.current_type,
            instance.current_relation,
            instance.tail.current_type,
        )?
        .to_f64_lossy())
}

pub fn compute_rewards<T: Real>(
    batch: &[Instance],
    f1_entity: f64,
    f1_relation: f64,
    kg: &KgEmbeddings<T>,
    cfg: &RewardConfig,
    none_relation: TypeId,
) -> Result<Vec<InstanceRewards>> {
    batch
        .iter()
        .map(|i| {
            let g = g_score(i, kg, none_relation)?;
            Ok(InstanceRewards {
                entity: RewardComponents::new(cfg.alpha, f1_entity, g),
                relation: RewardComponents::new(cfg.alpha, f1_relation, g),
            })
        })
        .collect()
}

/// Generalized advantage estimation over one episode. `values` may carry one
/// extra bootstrap entry for the state after the last reward; otherwise the
/// episode is terminal. Returns `(advantages, return targets)`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n && values.len() != n + 1 {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: n,
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = values.get(t + 1).copied().unwrap_or(0.0);
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// One single-step episode of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub state: Vec<T>,
    pub action: f64,
    pub log_prob_old: f64,
    pub alpha_old: f64,
    pub beta_old: f64,
    pub value_estimate: f64,
    pub reward: f64,
    pub advantage: f64,
    pub return_target: f64,
}

impl<T> TrajectoryRecord<T> {
    /// Fills advantage and return for a single-step episode.
    pub fn finish(&mut self, reward: f64) {
        self.reward = reward;
        self.advantage = reward - self.value_estimate;
        self.return_target = reward;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_arithmetic() {
        let r = RewardComponents::new(2.0, 0.5, 0.3);
        assert!((r.reward - 0.7).abs() < 1e-15);
        assert_eq!(RewardComponents::new(2.0, 0.0, 0.0).reward, 0.0);
        assert_eq!(RewardConfig::default().alpha, 2.0);
    }

    #[test]
    fn single_step_gae() {
        let (a, r) = gae(&[1.0], &[0.4], 1.0, 0.95).unwrap();
        assert!((a[0] - 0.6).abs() < 1e-15);
        assert_eq!(r[0], 1.0);
        let (a, _) = gae(&[0.0, 0.0], &[0.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert!(gae(&[1.0], &[0.0, 0.0, 0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn monte_carlo_oracle_at_lambda_one() {
        let rewards = [0.3, -1.2, 2.5, 0.7, 0.05];
        let values = [0.1, 0.9, -0.4, 1.3, 0.2];
        let (a, _) = gae(&rewards, &values, 1.0, 1.0).unwrap();
        for t in 0..rewards.len() {
            let mc: f64 = rewards[t..].iter().sum::<f64>() - values[t];
            assert!((a[t] - mc).abs() < 1e-12);
        }
    }
}
