use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{features, GridEnv, TaskSpec, N_ACTIONS, OBS_DIM};
use crate::rng::{derive_idx, mix, stream, Rng};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 11;
pub type StepFeature = [f64; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub features: Vec<StepFeature>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Episodes collected from one policy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
    pub tag: String,
    pub mean_sr: f64,
}

impl EpisodeSet {
    pub fn new(tag: impl Into<String>, episodes: Vec<Episode>) -> EpisodeSet {
        let n = episodes.len().max(1) as f64;
        let mean_sr = episodes.iter().filter(|e| e.success).count() as f64 / n;
        EpisodeSet {
            episodes,
            tag: tag.into(),
            mean_sr,
        }
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.ret).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Anything that maps an observation to a discrete action.
pub trait Policy {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> usize;
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _obs: &[f64], rng: &mut Rng) -> usize {
        use rand::Rng as _;
        rng.random_range(0..N_ACTIONS)
    }
}

/// Adapter for closures, mostly useful in tests.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64], &mut Rng) -> usize> Policy for FnPolicy<F> {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> usize {
        (self.0)(obs, rng)
    }
}

/// Run one episode to termination from the current reset state.
pub fn rollout_episode<P: Policy + ?Sized>(
    policy: &P,
    env: &mut GridEnv,
    rng: &mut Rng,
) -> Result<Episode> {
    let spec = *env.spec();
    let mut obs = vec![0.0; OBS_DIM];
    let mut feats = Vec::new();
    loop {
        env.observe(&mut obs);
        let a = policy.act(&obs, rng);
        let out = env.step(a)?;
        feats.push(features(env.state(), a, &spec));
        if out.done {
            return Ok(Episode {
                features: feats,
                ret: out.reward,
                success: out.success,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub set: EpisodeSet,
    pub mean_reward: f64,
    pub sr: f64,
}

impl Evaluation {
    pub fn env_steps(&self) -> usize {
        self.set.total_steps()
    }
}

/// Evaluate `policy` for `m` episodes on fresh layouts derived from the
/// task seed and `seed`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    spec: &TaskSpec,
    m: usize,
    seed: u64,
    tag: &str,
) -> Result<Evaluation> {
    if m == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut env = GridEnv::new(*spec)?;
    let mut rng = stream(seed, "eval-actions");
    let mut episodes = Vec::with_capacity(m);
    for i in 0..m {
        env.reset(mix(spec.seed ^ derive_idx(seed, "eval-layout", i as u64)));
        episodes.push(rollout_episode(policy, &mut env, &mut rng)?);
    }
    let set = EpisodeSet::new(tag, episodes);
    Ok(Evaluation {
        mean_reward: set.mean_return(),
        sr: set.mean_sr,
        set,
    })
}

/// One JSON-lines row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_tag: String,
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    /// Row-major `T x 11`.
    pub features: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn from_episode(task_tag: &str, seed: u64, e: &Episode) -> EpisodeRecord {
        EpisodeRecord {
            task_tag: task_tag.to_string(),
            seed,
            t: e.len(),
            features: e.features.iter().flatten().copied().collect(),
            ret: e.ret,
            success: e.success,
        }
    }

    pub fn to_episode(&self) -> Result<Episode> {
        if self.features.len() != self.t * FEATURE_DIM {
            return Err(Error::Format(format!(
                "episode record claims T={} but carries {} values",
                self.t,
                self.features.len()
            )));
        }
        let features = self
            .features
            .chunks_exact(FEATURE_DIM)
            .map(|c| {
                let mut f = [0.0; FEATURE_DIM];
                f.copy_from_slice(c);
                f
            })
            .collect();
        Ok(Episode {
            features,
            ret: self.ret,
            success: self.success,
        })
    }
}

pub fn write_episodes_jsonl<W: Write>(
    mut w: W,
    task_tag: &str,
    seed: u64,
    episodes: &[Episode],
) -> std::io::Result<()> {
    for e in episodes {
        let rec = EpisodeRecord::from_episode(task_tag, seed, e);
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes_jsonl<R: BufRead>(r: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Family;

    #[test]
    fn success_rate_counts_positive_returns() {
        let mk = |ret: f64| Episode {
            features: vec![[0.0; FEATURE_DIM]],
            ret,
            success: ret > 0.0,
        };
        let set = EpisodeSet::new("A", vec![mk(0.91), mk(0.0), mk(0.5)]);
        assert!((set.mean_sr - 2.0 / 3.0).abs() < 1e-15);
        let none = EpisodeSet::new("A", vec![mk(0.0), mk(0.0)]);
        assert_eq!(none.mean_sr, 0.0);
        assert_eq!(none.mean_return(), 0.0);
        assert_eq!(EpisodeSet::new("A", vec![mk(0.3)]).mean_sr, 1.0);
    }

    #[test]
    fn evaluation_is_seed_deterministic() {
        let spec = TaskSpec::small(Family::B, 11);
        let a = evaluate_policy(&RandomPolicy, &spec, 5, 3, "B").unwrap();
        let b = evaluate_policy(&RandomPolicy, &spec, 5, 3, "B").unwrap();
        assert_eq!(a.set, b.set);
        for e in &a.set.episodes {
            assert!(e.len() <= spec.max_steps);
            assert_eq!(e.success, e.ret > 0.0);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = TaskSpec::small(Family::A, 2);
        let ev = evaluate_policy(&RandomPolicy, &spec, 3, 9, "A").unwrap();
        let mut buf = Vec::new();
        write_episodes_jsonl(&mut buf, "A", 9, &ev.set.episodes).unwrap();
        let recs = read_episodes_jsonl(&buf[..]).unwrap();
        assert_eq!(recs.len(), 3);
        let first: serde_json::Value =
            serde_json::from_str(std::str::from_utf8(&buf).unwrap().lines().next().unwrap()).unwrap();
        for key in ["task_tag", "seed", "T", "features", "return", "success"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let back: Vec<Episode> = recs.iter().map(|r| r.to_episode().unwrap()).collect();
        assert_eq!(back, ev.set.episodes);
    }
}
