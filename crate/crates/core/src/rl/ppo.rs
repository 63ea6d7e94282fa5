//! PPO with an adaptive KL penalty (no clipping) under the Beta policy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrajectoryRecord;
use crate::agents::{Beta, PolicyParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub kl_init_coef: f64,
    pub kl_target: f64,
    pub coef_adapt_factor: f64,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    /// Agent learning rate range, cosine-annealed over a training run. The
    /// default peak sits a decade below the extractors': at 1e-2 the Beta
    /// means saturate within an epoch or two on some seeds, the gradient
    /// vanishes with them and the agents freeze voting None.
    pub lr_min: f64,
    pub lr_max: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            kl_init_coef: 0.2,
            kl_target: 0.01,
            coef_adapt_factor: 2.0,
            ppo_epochs: 4,
            minibatch: 64,
            lr_min: 1e-4,
            lr_max: 1e-3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_init_coef > 0.0 && self.kl_target > 0.0) {
            return Err(Error::Config("kl_init_coef and kl_target must be positive".into()));
        }
        if !(self.coef_adapt_factor >= 1.0) {
            return Err(Error::Config("coef_adapt_factor must be >= 1".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be positive".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config("need 0 <= lr_min <= lr_max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub objective: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub kl_coef: f64,
}

/// Double above `1.5·target`, halve below `target/1.5`.
pub fn adapt_kl_coef(coef: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    if kl > 1.5 * cfg.kl_target {
        coef * cfg.coef_adapt_factor
    } else if kl < cfg.kl_target / 1.5 {
        coef / cfg.coef_adapt_factor
    } else {
        coef
    }
}

fn old_dist<T>(r: &TrajectoryRecord<T>) -> Beta {
    Beta {
        alpha: r.alpha_old,
        beta: r.beta_old,
    }
}

/// `mean[ratio·Â − β·KL(old‖new)]` over `records` and its gradient w.r.t.
/// the policy parameters (the value head gets zero).
pub fn ppo_objective<T: Real>(
    policy: &PolicyParams<T>,
    records: &[&TrajectoryRecord<T>],
    kl_coef: f64,
) -> Result<(f64, Vec<T>)> {
    let mut grad = vec![T::zero(); policy.params().len()];
    if records.is_empty() {
        return Ok((0.0, grad));
    }
    let n = records.len() as f64;
    let kappa = policy.kappa();
    let mut total = 0.0;
    for r in records {
        let f = policy.forward(&r.state)?;
        let m = f.mean.to_f64_lossy();
        let new = policy.dist(f.mean);
        let old = old_dist(r);
        let ratio = (new.log_prob(r.action) - r.log_prob_old).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!(
                "PPO ratio (logp_old {}, action {}, mean {m})",
                r.log_prob_old, r.action
            )));
        }
        total += ratio * r.advantage - kl_coef * old.kl(&new);
        let (la, lb) = new.log_prob_grad(r.action);
        let (ka, kb) = old.kl_grad_other(&new);
        let da = ratio * r.advantage * la - kl_coef * ka;
        let db = ratio * r.advantage * lb - kl_coef * kb;
        let d_logit = kappa * (da - db) * m * (1.0 - m) / n;
        policy.backward(&f, T::of(d_logit), T::zero(), &mut grad);
    }
    Ok((total / n, grad))
}

/// Mean squared error of the value head against the return targets.
pub fn value_loss<T: Real>(policy: &PolicyParams<T>, records: &[&TrajectoryRecord<T>]) -> Result<(f64, Vec<T>)> {
    let mut grad = vec![T::zero(); policy.params().len()];
    if records.is_empty() {
        return Ok((0.0, grad));
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for r in records {
        let f = policy.forward(&r.state)?;
        let e = f.value.to_f64_lossy() - r.return_target;
        total += e * e;
        policy.backward(&f, T::zero(), T::of(2.0 * e / n), &mut grad);
    }
    Ok((total / n, grad))
}

/// `ppo_epochs` shuffled minibatch passes of gradient ascent on the objective
/// and descent on the value loss, then the KL-coefficient update.
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    policy: &mut PolicyParams<T>,
    records: &[TrajectoryRecord<T>],
    cfg: &PpoConfig,
    kl_coef: f64,
    lr: f64,
    rng: &mut R,
) -> Result<PpoStats> {
    if records.is_empty() {
        return Err(Error::Empty("PPO update needs at least one record".into()));
    }
    let lr_t = T::of(lr);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut objective = 0.0;
    let mut vloss = 0.0;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mb: Vec<&TrajectoryRecord<T>> = chunk.iter().map(|&i| &records[i]).collect();
            let (obj, g_obj) = ppo_objective(policy, &mb, kl_coef)?;
            let (vl, g_v) = value_loss(policy, &mb)?;
            objective = obj;
            vloss = vl;
            for ((p, a), b) in policy.params_mut().iter_mut().zip(&g_obj).zip(&g_v) {
                *p += lr_t * (*a - *b);
            }
            if !policy.is_finite() {
                let max_abs = |g: &[T]| g.iter().map(|x| x.to_f64_lossy().abs()).fold(0.0, f64::max);
                return Err(Error::NonFinite(format!(
                    "PPO parameter update (kl_coef {kl_coef}, lr {lr}, objective {obj}, value loss {vl}, |grad| {} / {})",
                    max_abs(&g_obj),
                    max_abs(&g_v)
                )));
            }
        }
    }
    let mut kl = 0.0;
    for r in records {
        let (m, _) = policy.policy_confidence(&r.state)?;
        kl += old_dist(r).kl(&policy.dist(m));
    }
    kl /= records.len() as f64;
    Ok(PpoStats {
        objective,
        value_loss: vloss,
        kl,
        kl_coef: adapt_kl_coef(kl_coef, kl, cfg),
    })
}
