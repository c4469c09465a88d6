//! Actor-critic PPO on the gridworld observation, the episodic count bonus,
//! and the parameter transforms used by the single-model baselines.

mod baselines;
mod intrinsic;
mod ppo;

use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use baselines::{l2init_grad, l2init_penalty, shrink_and_perturb};
pub use intrinsic::{intrinsic_bonus, EpisodicCounter};
pub use ppo::{
    compute_gae, ppo_update, train_task, Checkpoint, RolloutBatch, TrainContext, TrainOutput, TrainTrace,
    UpdateStats,
};

use crate::gridworld::{Policy, N_ACTIONS, OBS_DIM};
use crate::neural::{
    log_softmax, softmax, Activation, Adam, AdamConfig, Mlp, ParamLayout,
};
use crate::rng::Rng;
use crate::{Error, Result};

pub const HIDDEN: usize = 64;

/// Fixed network shapes shared by every policy in a run.
#[derive(Debug, Clone)]
pub struct PolicyArch {
    pub layout: ParamLayout,
    pub actor: Mlp,
    pub critic: Mlp,
    /// Parameters `[0, actor_len)` belong to the actor.
    pub actor_len: usize,
}

pub fn arch() -> &'static PolicyArch {
    static ARCH: OnceLock<PolicyArch> = OnceLock::new();
    ARCH.get_or_init(|| {
        let mut layout = ParamLayout::new();
        let dims = |o| [OBS_DIM, HIDDEN, HIDDEN, o];
        let actor = Mlp::register(&mut layout, "actor", &dims(N_ACTIONS), Activation::Tanh, Activation::Identity);
        let actor_len = layout.len;
        let critic = Mlp::register(&mut layout, "critic", &dims(1), Activation::Tanh, Activation::Identity);
        PolicyArch {
            layout,
            actor,
            critic,
            actor_len,
        }
    })
}

/// Separate actor (7 logits) and critic (1 value) MLPs in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn init(rng: &mut Rng) -> PolicyParams {
        let a = arch();
        let mut data = vec![0.0; a.layout.len];
        // uniform bound sqrt(3)/sqrt(in) gives unit-variance fan-in scaling
        a.actor.init(&mut data, 3f64.sqrt(), 0.01 * 3f64.sqrt(), rng);
        a.critic.init(&mut data, 3f64.sqrt(), 3f64.sqrt(), rng);
        PolicyParams { data }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<PolicyParams> {
        arch().layout.check(&data)?;
        Ok(PolicyParams { data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn actor(&self) -> &[f64] {
        &self.data[..arch().actor_len]
    }

    pub fn critic(&self) -> &[f64] {
        &self.data[arch().actor_len..]
    }

    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        arch().actor.eval(&self.data, obs)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        arch().critic.eval(&self.data, obs)[0]
    }

    pub fn optimizer(&self, lr: f64) -> Adam {
        Adam::new(self.len(), AdamConfig::with_lr(lr))
    }

    pub fn is_finite(&self) -> bool {
        crate::neural::all_finite(&self.data)
    }
}

/// Sample an action index from logits; returns `(action, log-prob)`.
pub fn sample_action(logits: &[f64], rng: &mut Rng) -> (usize, f64) {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut a = p.len() - 1;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            a = i;
            break;
        }
    }
    (a, log_softmax(logits)[a])
}

impl Policy for PolicyParams {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> usize {
        sample_action(&self.logits(obs), rng).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PPOConfig {
    /// Training environment steps for one task.
    pub budget: usize,
    pub horizon: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub beta_int: f64,
    pub intrinsic: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// L2Init strength; only used when the caller supplies an anchor.
    pub l2_lambda: f64,
    /// Stop once a checkpoint reaches this SR (smoke tests only).
    pub stop_at_sr: Option<f64>,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            budget: 300_000,
            horizon: 2048,
            minibatch: 256,
            epochs: 4,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr: 3e-4,
            max_grad_norm: 0.5,
            beta_int: 0.005,
            intrinsic: false,
            eval_every: 10_000,
            eval_episodes: 20,
            l2_lambda: 0.1,
            stop_at_sr: None,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon == 0 || self.minibatch == 0 || self.epochs == 0 {
            return bad("horizon, minibatch and epochs must be positive");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("GAE lambda must lie in [0, 1]");
        }
        if self.beta_int < 0.0 || self.l2_lambda < 0.0 {
            return bad("beta_int and l2_lambda must be non-negative");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("evaluation cadence and episode count must be positive");
        }
        Ok(())
    }

    /// Per-step intrinsic scale actually applied during rollouts.
    pub fn effective_beta(&self) -> f64 {
        if self.intrinsic {
            self.beta_int
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn heads_have_expected_width() {
        let p = PolicyParams::init(&mut rng_from(0));
        let obs = vec![0.0; OBS_DIM];
        assert_eq!(p.logits(&obs).len(), N_ACTIONS);
        assert!(p.value(&obs).is_finite());
        assert_eq!(p.actor().len() + p.critic().len(), p.len());
    }

    #[test]
    fn default_config_valid() {
        PPOConfig::default().validate().unwrap();
        let bad = PPOConfig {
            clip: 1.0,
            ..PPOConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = rng_from(1);
        let logits = [0.0, (3f64).ln(), f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0];
        let mut counts = [0usize; 7];
        for _ in 0..80_000 {
            counts[sample_action(&logits, &mut rng).0] += 1;
        }
        assert_eq!(counts[2], 0);
        let ratio = counts[1] as f64 / counts[0] as f64;
        assert!((ratio - 3.0).abs() < 0.15, "{ratio}");
    }
}
