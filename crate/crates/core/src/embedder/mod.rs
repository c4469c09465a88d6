//! Shared latent behaviour space. An episode's 11-feature sequence runs
//! through a per-step MLP, a GRU and a projection head to an 8-d latent;
//! policies are summarised by statistics over episode latents, and a robust
//! per-dimension normaliser maps raw means to descriptors.

mod augment;
mod losses;
mod normalizer;
mod train;

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig};
pub use losses::{contrastive_loss, contrastive_loss_grad, distill_loss, distill_loss_grad};
pub use normalizer::{fit_normalizer, fit_normalizer_from, normalize, quantile, Normalizer, SIGMA_MIN};
pub use train::{boundary_train, BoundaryConfig, BoundaryOutcome};

use crate::gridworld::{Episode, EpisodeSet, FEATURE_DIM};
use crate::neural::{read_params, write_params, Activation, Gru, GruCache, Mlp, MlpCache, ParamLayout};
use crate::rng::Rng;
use crate::{Error, Result};

pub const LATENT_DIM: usize = 8;
pub const T_MAX: usize = 256;
const STEP_HIDDEN: usize = 32;
const GRU_HIDDEN: usize = 32;
const PROJ_HIDDEN: usize = 16;

pub type Latent = [f64; LATENT_DIM];

#[derive(Debug, Clone)]
pub struct EncoderArch {
    pub layout: ParamLayout,
    pub step: Mlp,
    pub gru: Gru,
    pub proj: Mlp,
}

pub fn arch() -> &'static EncoderArch {
    static ARCH: OnceLock<EncoderArch> = OnceLock::new();
    ARCH.get_or_init(|| {
        let mut layout = ParamLayout::new();
        let step = Mlp::register(
            &mut layout,
            "step",
            &[FEATURE_DIM, STEP_HIDDEN, STEP_HIDDEN],
            Activation::Relu,
            Activation::Relu,
        );
        let gru = Gru::register(&mut layout, "gru", STEP_HIDDEN, GRU_HIDDEN);
        let proj = Mlp::register(
            &mut layout,
            "proj",
            &[GRU_HIDDEN, PROJ_HIDDEN, LATENT_DIM],
            Activation::Relu,
            Activation::Identity,
        );
        EncoderArch {
            layout,
            step,
            gru,
            proj,
        }
    })
}

/// Flat encoder parameters (step MLP, GRU, projection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub data: Vec<f64>,
}

/// Activations of one encoded episode, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub steps: Vec<MlpCache>,
    pub step_out: Vec<f64>,
    pub gru: GruCache,
    pub proj: MlpCache,
}

impl EncodeCache {
    pub fn latent(&self) -> Latent {
        to_latent(self.proj.output())
    }
}

fn to_latent(v: &[f64]) -> Latent {
    let mut z = [0.0; LATENT_DIM];
    z.copy_from_slice(&v[..LATENT_DIM]);
    z
}

impl EncoderParams {
    pub fn init(rng: &mut Rng) -> EncoderParams {
        let a = arch();
        let mut data = vec![0.0; a.layout.len];
        let he = 6f64.sqrt();
        a.step.init(&mut data, he, he, rng);
        a.gru.init(&mut data, rng);
        a.proj.init(&mut data, he, 3f64.sqrt(), rng);
        EncoderParams { data }
    }

    pub fn zeros() -> EncoderParams {
        EncoderParams {
            data: vec![0.0; arch().layout.len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Full forward pass over the first `min(T, 256)` steps.
    pub fn forward(&self, e: &Episode) -> Result<EncodeCache> {
        if e.is_empty() {
            return Err(Error::Empty("cannot encode an episode with T = 0".into()));
        }
        let a = arch();
        let t = e.len().min(T_MAX);
        let mut steps = Vec::with_capacity(t);
        let mut step_out = Vec::with_capacity(t * STEP_HIDDEN);
        for f in &e.features[..t] {
            let c = a.step.forward(&self.data, f);
            step_out.extend_from_slice(c.output());
            steps.push(c);
        }
        let gru = a.gru.forward(&self.data, &step_out, t);
        let proj = a.proj.forward(&self.data, gru.last());
        Ok(EncodeCache {
            steps,
            step_out,
            gru,
            proj,
        })
    }

    /// Accumulate `∂L/∂θ` for `∂L/∂z = dz` into `g`.
    pub fn backward(&self, cache: &EncodeCache, dz: &[f64], g: &mut [f64]) {
        let a = arch();
        let mut dh = vec![0.0; GRU_HIDDEN];
        a.proj.backward(&self.data, &cache.proj, dz, g, Some(&mut dh));
        let mut dx = vec![0.0; cache.step_out.len()];
        a.gru.backward(&self.data, &cache.step_out, &cache.gru, &dh, None, g, Some(&mut dx));
        for (t, c) in cache.steps.iter().enumerate() {
            a.step.backward(&self.data, c, &dx[t * STEP_HIDDEN..(t + 1) * STEP_HIDDEN], g, None);
        }
    }

    /// Projection applied to every GRU hidden state `h_1 … h_ℓ`.
    pub fn per_step_latents(&self, cache: &EncodeCache) -> Vec<Latent> {
        let a = arch();
        cache.gru.hidden[1..]
            .iter()
            .map(|h| to_latent(&a.proj.eval(&self.data, h)))
            .collect()
    }
}

pub fn encode_episode(enc: &EncoderParams, e: &Episode) -> Result<Latent> {
    let a = arch();
    if e.is_empty() {
        return Err(Error::Empty("cannot encode an episode with T = 0".into()));
    }
    let t = e.len().min(T_MAX);
    let mut step_out = Vec::with_capacity(t * STEP_HIDDEN);
    for f in &e.features[..t] {
        step_out.extend(a.step.eval(&enc.data, f));
    }
    let gru = a.gru.forward(&enc.data, &step_out, t);
    Ok(to_latent(&a.proj.eval(&enc.data, gru.last())))
}

/// Policy-level statistics over an episode set (raw, not normalised).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub z_mean: Latent,
    pub z_std_ep: Latent,
    pub z_std_time: Latent,
    pub episodes: usize,
}

pub fn summarize_policy(enc: &EncoderParams, set: &EpisodeSet) -> Result<LatentSummary> {
    let m = set.episodes.len();
    if m == 0 {
        return Err(Error::Empty(format!("episode set `{}` is empty", set.tag)));
    }
    let mut zs = Vec::with_capacity(m);
    let mut std_time = [0.0; LATENT_DIM];
    for e in &set.episodes {
        let cache = enc.forward(e)?;
        zs.push(cache.latent());
        let per = enc.per_step_latents(&cache);
        let (_, sd) = mean_std(&per);
        for k in 0..LATENT_DIM {
            std_time[k] += sd[k] / m as f64;
        }
    }
    let (z_mean, z_std_ep) = mean_std(&zs);
    Ok(LatentSummary {
        z_mean,
        z_std_ep,
        z_std_time: std_time,
        episodes: m,
    })
}

/// Mean latent over a set's episodes.
pub fn mean_latent(enc: &EncoderParams, set: &EpisodeSet) -> Result<Latent> {
    if set.episodes.is_empty() {
        return Err(Error::Empty(format!("episode set `{}` is empty", set.tag)));
    }
    let mut acc = [0.0; LATENT_DIM];
    for e in &set.episodes {
        let z = encode_episode(enc, e)?;
        for k in 0..LATENT_DIM {
            acc[k] += z[k];
        }
    }
    let m = set.episodes.len() as f64;
    acc.iter_mut().for_each(|v| *v /= m);
    Ok(acc)
}

/// Component-wise mean and population standard deviation.
pub fn mean_std(zs: &[Latent]) -> (Latent, Latent) {
    let n = zs.len().max(1) as f64;
    let mut mu = [0.0; LATENT_DIM];
    for z in zs {
        for k in 0..LATENT_DIM {
            mu[k] += z[k] / n;
        }
    }
    let mut var = [0.0; LATENT_DIM];
    for z in zs {
        for k in 0..LATENT_DIM {
            var[k] += (z[k] - mu[k]).powi(2) / n;
        }
    }
    (mu, var.map(f64::sqrt))
}

/// Encoder, optional fitted normaliser and the maintenance version counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingState {
    pub encoder: EncoderParams,
    pub normalizer: Option<Normalizer>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    version: u64,
    normalizer: Option<Normalizer>,
    fit_bank_size: Option<usize>,
}

impl EmbeddingState {
    pub fn new(encoder: EncoderParams) -> EmbeddingState {
        EmbeddingState {
            encoder,
            normalizer: None,
            version: 0,
        }
    }

    /// Normalised policy descriptor for an episode set.
    pub fn descriptor(&self, set: &EpisodeSet) -> Result<Latent> {
        let n = self
            .normalizer
            .as_ref()
            .ok_or_else(|| Error::Config("embedding state has no fitted normaliser".into()))?;
        let z = mean_latent(&self.encoder, set)?;
        let out = normalize(&z, n);
        Ok(to_latent(&out))
    }

    /// `<dir>/<stem>.bin` (+ `.bin.json` manifest) and `<dir>/<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_params(&dir.join(format!("{stem}.bin")), &arch().layout, &self.encoder.data)?;
        let side = Sidecar {
            version: self.version,
            fit_bank_size: self.normalizer.as_ref().map(|n| n.fit_bank_size),
            normalizer: self.normalizer.clone(),
        };
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<EmbeddingState> {
        let (layout, data) = read_params(&dir.join(format!("{stem}.bin")))?;
        if layout != arch().layout {
            return Err(Error::Format("encoder blob does not match the encoder layout".into()));
        }
        let p = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        Ok(EmbeddingState {
            encoder: EncoderParams { data },
            normalizer: side.normalizer,
            version: side.version,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::neural::{numeric_gradient, relative_error};
    use crate::rng::rng_from;
    use rand::Rng as _;

    pub(crate) fn random_episode(t: usize, rng: &mut Rng) -> Episode {
        Episode {
            features: (0..t)
                .map(|_| {
                    let mut f = [0.0; FEATURE_DIM];
                    for (k, v) in f.iter_mut().enumerate() {
                        *v = if k < 5 {
                            rng.random()
                        } else {
                            f64::from(rng.random_bool(0.3) as u8)
                        };
                    }
                    f
                })
                .collect(),
            ret: 0.0,
            success: false,
        }
    }

    #[test]
    fn zero_encoder_outputs_projection_bias() {
        let mut enc = EncoderParams::zeros();
        let b = arch().proj.layers[1].b;
        for k in 0..LATENT_DIM {
            enc.data[b + k] = k as f64 * 0.5 - 1.0;
        }
        let e = random_episode(7, &mut rng_from(0));
        let z = encode_episode(&enc, &e).unwrap();
        for (k, v) in z.iter().enumerate() {
            assert_eq!(*v, k as f64 * 0.5 - 1.0);
        }
    }

    #[test]
    fn truncates_at_t_max() {
        let mut rng = rng_from(1);
        let enc = EncoderParams::init(&mut rng);
        let long = random_episode(300, &mut rng);
        let mut short = long.clone();
        short.features.truncate(T_MAX);
        assert_eq!(encode_episode(&enc, &long).unwrap(), encode_episode(&enc, &short).unwrap());
        assert_eq!(encode_episode(&enc, &long).unwrap(), enc.forward(&long).unwrap().latent());
    }

    #[test]
    fn empty_episode_rejected() {
        let enc = EncoderParams::zeros();
        let e = Episode {
            features: vec![],
            ret: 0.0,
            success: false,
        };
        assert!(matches!(encode_episode(&enc, &e), Err(Error::Empty(_))));
    }

    #[test]
    fn summary_of_single_and_identical_sets() {
        let mut rng = rng_from(2);
        let enc = EncoderParams::init(&mut rng);
        let e = random_episode(9, &mut rng);
        let one = summarize_policy(&enc, &EpisodeSet::new("A", vec![e.clone()])).unwrap();
        assert_eq!(one.z_std_ep, [0.0; LATENT_DIM]);
        let three = summarize_policy(&enc, &EpisodeSet::new("A", vec![e.clone(), e.clone(), e])).unwrap();
        assert!(three.z_std_ep.iter().all(|v| v.abs() < 1e-12));
        assert!(three.z_std_time.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn two_point_population_std() {
        let z = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -0.25, 0.75];
        let (mu, sd) = mean_std(&[z, z.map(|v| -v)]);
        for k in 0..LATENT_DIM {
            assert!(mu[k].abs() < 1e-15);
            assert!((sd[k] - z[k].abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let mut rng = rng_from(3);
        let mut enc = EncoderParams::init(&mut rng);
        for v in enc.data.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let e = random_episode(6, &mut rng);
        let w: Vec<f64> = (0..LATENT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = enc.forward(&e).unwrap();
        let mut g = vec![0.0; enc.len()];
        enc.backward(&cache, &w, &mut g);
        let num = numeric_gradient(&enc.data, 1e-5, |d| {
            let z = encode_episode(&EncoderParams { data: d.to_vec() }, &e).unwrap();
            z.iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        assert!(relative_error(&g, &num) < 1e-5);
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = EmbeddingState::new(EncoderParams::init(&mut rng_from(4)));
        s.version = 3;
        s.normalizer = Some(Normalizer {
            mu: vec![0.5; LATENT_DIM],
            sigma: vec![1.25; LATENT_DIM],
            version: 2,
            fit_bank_size: 40,
        });
        s.save(dir.path(), "embedding-v3").unwrap();
        assert_eq!(EmbeddingState::load(dir.path(), "embedding-v3").unwrap(), s);
    }
}
