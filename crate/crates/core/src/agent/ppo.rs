use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{arch, intrinsic_bonus, l2init_grad, sample_action, EpisodicCounter, PPOConfig, PolicyParams};
use crate::gridworld::{evaluate_policy, EpisodeSet, GridEnv, TaskSpec, N_ACTIONS, OBS_DIM};
use crate::neural::{all_finite, clip_grad_norm, log_softmax, softmax, Adam};
use crate::rng::{derive, derive_idx, mix, stream, Rng};
use crate::{Error, Result};

/// Flattened on-policy samples ready for an update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Row-major `n × OBS_DIM`.
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * OBS_DIM..(i + 1) * OBS_DIM]
    }
}

/// Generalised advantage estimation; a `done` at step `t` cuts the bootstrap
/// from `t + 1`. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate PPO: `epochs` passes of shuffled minibatch Adam steps on
/// `−L_clip + c_v·L_V − c_e·H` (plus the L2Init term when `anchor` is set).
pub fn ppo_update(
    params: &mut PolicyParams,
    batch: &RolloutBatch,
    cfg: &PPOConfig,
    opt: &mut Adam,
    anchor: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("PPO batch".into()));
    }
    let a = arch();
    let mut adv = batch.advantages.clone();
    if n > 1 {
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt() + 1e-8;
        adv.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; params.len()];
    let mut stats = UpdateStats::default();
    let mut dlogits = vec![0.0; N_ACTIONS];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let obs = batch.obs_row(i);
                let ac = a.actor.forward(&params.data, obs);
                let logits = ac.output();
                let logp = log_softmax(logits);
                let p = softmax(logits);
                let act = batch.actions[i];
                let ratio = (logp[act] - batch.old_logp[i]).exp();
                let ai = adv[i];
                let unclipped = ratio * ai;
                let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * ai;
                let entropy: f64 = -p.iter().zip(&logp).map(|(pi, lp)| if *pi > 0.0 { pi * lp } else { 0.0 }).sum::<f64>();
                let is_clipped = clipped < unclipped;
                stats.policy_loss -= unclipped.min(clipped) * scale;
                stats.entropy += entropy * scale;
                stats.approx_kl += (batch.old_logp[i] - logp[act]) * scale;
                if (ratio - 1.0).abs() > cfg.clip {
                    stats.clip_fraction += scale;
                }
                // d(loss)/d(log π(a)) from the surrogate; zero on the clipped branch
                let d_logpa = if is_clipped { 0.0 } else { -ratio * ai };
                for j in 0..N_ACTIONS {
                    let onehot = if j == act { 1.0 } else { 0.0 };
                    let lp = if p[j] > 0.0 { logp[j] } else { 0.0 };
                    dlogits[j] = scale * (d_logpa * (onehot - p[j]) + cfg.entropy_coef * p[j] * (lp + entropy));
                }
                a.actor.backward(&params.data, &ac, &dlogits, &mut grad, None);

                let cc = a.critic.forward(&params.data, obs);
                let v = cc.output()[0];
                let err = v - batch.returns[i];
                stats.value_loss += err * err * scale;
                let dv = [scale * cfg.value_coef * 2.0 * err];
                a.critic.backward(&params.data, &cc, &dv, &mut grad, None);
            }
            if let Some(init) = anchor {
                l2init_grad(&params.data, init, cfg.l2_lambda, &mut grad);
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            opt.step(&mut params.data, &grad)?;
            if !all_finite(&params.data) {
                return Err(Error::Config("non-finite parameters after PPO step".into()));
            }
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub env_steps: usize,
    pub sr: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub checkpoints: Vec<Checkpoint>,
    /// Length of every collected rollout, in order.
    pub rollouts: Vec<usize>,
    /// Training environment steps (excludes evaluation).
    pub env_steps: usize,
    /// Environment steps spent in checkpoint evaluations.
    pub eval_steps: usize,
    pub updates: Vec<UpdateStats>,
}

impl TrainTrace {
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.checkpoints.iter().map(|c| (c.env_steps, c.sr)).collect()
    }

    pub fn zero_shot_sr(&self) -> f64 {
        self.checkpoints.first().map_or(0.0, |c| c.sr)
    }

    pub fn final_sr(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.sr)
    }
}

/// Caller-owned context for one task's training.
pub struct TrainContext<'a> {
    pub seed: u64,
    pub tag: &'a str,
    /// L2Init reference parameters.
    pub anchor: Option<&'a [f64]>,
    /// Receives every checkpoint's evaluation episodes.
    pub hook: Option<&'a mut dyn FnMut(&EpisodeSet)>,
}

impl<'a> TrainContext<'a> {
    pub fn new(seed: u64, tag: &'a str) -> Self {
        TrainContext {
            seed,
            tag,
            anchor: None,
            hook: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub trace: TrainTrace,
    pub sets: Vec<EpisodeSet>,
}

/// Train on one task for `cfg.budget` environment steps. The final rollout
/// is shortened so that the budget is consumed exactly. The optimiser is
/// used as given; callers decide whether to reset it.
pub fn train_task(
    spec: &TaskSpec,
    init: &PolicyParams,
    opt: &mut Adam,
    cfg: &PPOConfig,
    mut ctx: TrainContext<'_>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    init.is_finite()
        .then_some(())
        .ok_or_else(|| Error::Config("initial parameters are not finite".into()))?;
    opt.cfg.lr = cfg.lr;
    let mut params = init.clone();
    let mut trace = TrainTrace::default();
    let mut sets = Vec::new();
    let mut n_ckpt = 0u64;

    let mut checkpoint = |params: &PolicyParams, steps: usize, trace: &mut TrainTrace, sets: &mut Vec<EpisodeSet>| -> Result<f64> {
        let ev = evaluate_policy(params, spec, cfg.eval_episodes, derive_idx(ctx.seed, "checkpoint", n_ckpt), ctx.tag)?;
        n_ckpt += 1;
        trace.eval_steps += ev.env_steps();
        trace.checkpoints.push(Checkpoint {
            env_steps: steps,
            sr: ev.sr,
            mean_reward: ev.mean_reward,
        });
        if let Some(h) = ctx.hook.as_mut() {
            h(&ev.set);
        }
        sets.push(ev.set);
        Ok(ev.sr)
    };

    let sr0 = checkpoint(&params, 0, &mut trace, &mut sets)?;
    if cfg.stop_at_sr.is_some_and(|t| sr0 >= t) || cfg.budget == 0 {
        return Ok(TrainOutput { params, trace, sets });
    }

    let mut rng = stream(ctx.seed, "ppo");
    let layout_seed = derive(ctx.seed, "train-layout");
    let mut n_episodes = 0u64;
    let mut env = GridEnv::new(*spec)?;
    env.reset(mix(spec.seed ^ derive_idx(layout_seed, "episode", n_episodes)));
    let mut counter = EpisodicCounter::new();
    let beta = cfg.effective_beta();

    let a = arch();
    let mut obs = vec![0.0; OBS_DIM];
    let mut next_eval = cfg.eval_every;
    let cap = cfg.horizon.min(cfg.budget);
    let mut buf = RolloutBatch {
        obs: Vec::with_capacity(cap * OBS_DIM),
        ..RolloutBatch::default()
    };
    let mut values = Vec::with_capacity(cap);
    let mut rewards = Vec::with_capacity(cap);
    let mut dones = Vec::with_capacity(cap);

    while trace.env_steps < cfg.budget {
        let len = cfg.horizon.min(cfg.budget - trace.env_steps);
        buf.obs.clear();
        buf.actions.clear();
        buf.old_logp.clear();
        values.clear();
        rewards.clear();
        dones.clear();
        for _ in 0..len {
            env.observe(&mut obs);
            let logits = a.actor.eval(&params.data, &obs);
            let (act, logp) = sample_action(&logits, &mut rng);
            let v = a.critic.eval(&params.data, &obs)[0];
            let out = env.step(act)?;
            let mut r = out.reward;
            if beta > 0.0 {
                r += intrinsic_bonus(&mut counter, env.state().count_key(), beta);
            }
            buf.obs.extend_from_slice(&obs);
            buf.actions.push(act);
            buf.old_logp.push(logp);
            values.push(v);
            rewards.push(r);
            dones.push(out.done);
            if out.done {
                n_episodes += 1;
                env.reset(mix(spec.seed ^ derive_idx(layout_seed, "episode", n_episodes)));
                counter.clear();
            }
        }
        let last_value = if dones.last().copied().unwrap_or(true) {
            0.0
        } else {
            env.observe(&mut obs);
            a.critic.eval(&params.data, &obs)[0]
        };
        let (adv, ret) = compute_gae(&rewards, &values, &dones, last_value, cfg.gamma, cfg.gae_lambda);
        buf.advantages = adv;
        buf.returns = ret;
        let stats = ppo_update(&mut params, &buf, cfg, opt, ctx.anchor, &mut rng)?;
        trace.updates.push(stats);
        trace.rollouts.push(len);
        trace.env_steps += len;

        let at_end = trace.env_steps >= cfg.budget;
        if trace.env_steps >= next_eval || at_end {
            let sr = checkpoint(&params, trace.env_steps, &mut trace, &mut sets)?;
            next_eval = (trace.env_steps / cfg.eval_every + 1) * cfg.eval_every;
            if cfg.stop_at_sr.is_some_and(|t| sr >= t) {
                break;
            }
        }
    }
    Ok(TrainOutput { params, trace, sets })
}
