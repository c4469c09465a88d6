use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gridworld::{Episode, FEATURE_DIM};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Minimum crop fraction `ρ ∈ (0, 1]`.
    pub min_crop: f64,
    pub channel_dropout: f64,
    pub noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_crop: 0.6,
            channel_dropout: 0.1,
            noise: 0.01,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            min_crop: 1.0,
            channel_dropout: 0.0,
            noise: 0.0,
        }
    }

    /// Crop lengths a view can take for an episode of length `t`.
    pub fn crop_range(&self, t: usize) -> (usize, usize) {
        let lo = ((self.min_crop * t as f64).floor() as usize).clamp(1, t);
        (lo, t)
    }
}

/// One stochastic view: contiguous crop, a per-view channel mask shared by
/// every timestep, then i.i.d. Gaussian noise.
pub fn augment(e: &Episode, cfg: &AugmentConfig, rng: &mut Rng) -> Episode {
    let t = e.len();
    if t == 0 {
        return e.clone();
    }
    let (lo, hi) = cfg.crop_range(t);
    let len = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=t - len);
    let mask: [bool; FEATURE_DIM] = std::array::from_fn(|_| rng.random::<f64>() >= cfg.channel_dropout);
    let noise = (cfg.noise > 0.0).then(|| Normal::new(0.0, cfg.noise).expect("positive scale"));
    let features = e.features[start..start + len]
        .iter()
        .map(|f| {
            std::array::from_fn(|k| {
                let v = if mask[k] { f[k] } else { 0.0 };
                match &noise {
                    Some(n) => v + n.sample(rng),
                    None => v,
                }
            })
        })
        .collect();
    Episode {
        features,
        ret: e.ret,
        success: e.success,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::tests::random_episode;
    use crate::rng::rng_from;

    #[test]
    fn identity_view() {
        let mut rng = rng_from(0);
        let e = random_episode(12, &mut rng);
        assert_eq!(augment(&e, &AugmentConfig::identity(), &mut rng), e);
    }

    #[test]
    fn full_dropout_zeroes_features() {
        let mut rng = rng_from(1);
        let e = random_episode(12, &mut rng);
        let cfg = AugmentConfig {
            channel_dropout: 1.0,
            noise: 0.0,
            ..AugmentConfig::default()
        };
        let v = augment(&e, &cfg, &mut rng);
        assert!(v.features.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn crop_is_contiguous_window() {
        let mut rng = rng_from(2);
        let e = random_episode(20, &mut rng);
        let cfg = AugmentConfig {
            channel_dropout: 0.0,
            noise: 0.0,
            ..AugmentConfig::default()
        };
        for _ in 0..50 {
            let v = augment(&e, &cfg, &mut rng);
            assert!(v.len() >= 12 && v.len() <= 20);
            let found = (0..=20 - v.len()).any(|s| e.features[s..s + v.len()] == v.features[..]);
            assert!(found);
        }
    }

    #[test]
    fn single_step_episode_keeps_one_step() {
        let mut rng = rng_from(3);
        let e = random_episode(1, &mut rng);
        assert_eq!(augment(&e, &AugmentConfig::default(), &mut rng).len(), 1);
    }
}
