//! The per-task loop for every method.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::log::{Budget, Event, LogWriter};
use super::{base_tag, Method, RunConfig};
use crate::agent::{shrink_and_perturb, train_task, PolicyParams, TrainContext};
use crate::archive::{illuminate, save_snapshot, InjectionPool, UnstructuredArchive};
use crate::embedder::{fit_normalizer, EmbeddingState, EncoderParams};
use crate::gridworld::{evaluate_policy, EpisodeSet};
use crate::maintenance::{boundary_maintenance, store_episode_set, Banks};
use crate::neural::Adam;
use crate::rng::{derive, derive_idx, rng_from, stream};
use crate::transfer::{few_shot_select, pool_candidates, LineageRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub log: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
    pub archives: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    method: String,
    seed: u64,
    config_hash: String,
    code_version: String,
    budget: Budget,
    total_env_steps: usize,
    files: Vec<String>,
    /// Wall-clock data lives only here, never in the log.
    finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fit an initial normaliser from the first task's episode sets, without a
/// version bump. Falls back to one set per episode when few sets exist.
fn bootstrap_normalizer(state: &mut EmbeddingState, sets: &[EpisodeSet]) -> Result<()> {
    let bank: Vec<EpisodeSet> = if sets.len() >= 2 {
        sets.to_vec()
    } else {
        sets.iter()
            .flat_map(|s| s.episodes.iter().map(|e| EpisodeSet::new(s.tag.clone(), vec![e.clone()])))
            .collect()
    };
    state.normalizer = Some(fit_normalizer(&state.encoder, &bank, None)?);
    Ok(())
}

struct Chosen {
    params: PolicyParams,
    lineage: LineageRecord,
    init: &'static str,
}

/// Run one curriculum with one method. Artifacts go to `cfg.out_dir`.
pub fn run_sequence(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_bytes = serde_json::to_vec_pretty(cfg)?;
    let config_path = dir.join("config.json");
    write(&config_path, &config_bytes)?;
    // The output directory is excluded so that identical runs in different
    // places share a hash.
    let config_hash = {
        let mut c = cfg.clone();
        c.out_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec_pretty(&c)?)
    };
    let log_path = dir.join("log.jsonl");
    let mut log = LogWriter::create(&log_path)?;
    log.write(&Event::RunStart {
        method: cfg.method.name().to_string(),
        seed: cfg.seed,
        curriculum: cfg.curriculum.visits.clone(),
        config_hash: config_hash.clone(),
    })?;

    let method = cfg.method;
    let seed = cfg.seed;
    let archives_dir = dir.join("archives");
    let embed_dir = dir.join("embedding");
    let mut budget = Budget::default();
    let first_init = PolicyParams::init(&mut stream(seed, "policy-init"));
    let mut current: Option<PolicyParams> = None;
    let mut carried_opt: Option<Adam> = None;
    let mut stored: BTreeMap<String, PolicyParams> = BTreeMap::new();
    let mut archives: Vec<UnstructuredArchive> = Vec::new();
    let mut state = EmbeddingState::new(EncoderParams::init(&mut stream(seed, "encoder-init")));
    let mut banks = Banks::new(derive(seed, "banks"));
    if method.uses_archives() {
        state.save(&embed_dir, "state-v0")?;
    }

    for (k, tag) in cfg.curriculum.visits.iter().enumerate() {
        let base = base_tag(tag)?;
        let spec = cfg.task_spec(&base)?;
        let visit_seed = derive_idx(seed, "visit", k as u64);
        let fresh = || {
            if k == 0 {
                first_init.clone()
            } else {
                PolicyParams::init(&mut rng_from(derive_idx(seed, "policy-init", k as u64)))
            }
        };

        // (1) initialisation
        let chosen = match method {
            Method::Scratch => Chosen {
                params: fresh(),
                lineage: LineageRecord::new(),
                init: "scratch",
            },
            Method::ScratchReuse => match stored.get(&base) {
                Some(p) => Chosen {
                    params: p.clone(),
                    lineage: LineageRecord::new(),
                    init: "reuse",
                },
                None => Chosen {
                    params: fresh(),
                    lineage: LineageRecord::new(),
                    init: "scratch",
                },
            },
            Method::Finetune | Method::FinetuneReset | Method::L2init => Chosen {
                params: current.clone().unwrap_or_else(fresh),
                lineage: LineageRecord::new(),
                init: if current.is_some() { "previous" } else { "scratch" },
            },
            Method::ShrinkPerturb => match &current {
                Some(p) => Chosen {
                    params: PolicyParams {
                        data: shrink_and_perturb(
                            &p.data,
                            cfg.shrink.alpha,
                            cfg.shrink.noise,
                            &mut stream(visit_seed, "shrink-perturb"),
                        )?,
                    },
                    lineage: LineageRecord::new(),
                    init: "previous",
                },
                None => Chosen {
                    params: fresh(),
                    lineage: LineageRecord::new(),
                    init: "scratch",
                },
            },
            Method::Telapa | Method::TelapaStatic => {
                let nonempty: Vec<&UnstructuredArchive> = archives.iter().filter(|a| !a.is_empty()).collect();
                if nonempty.is_empty() {
                    Chosen {
                        params: fresh(),
                        lineage: LineageRecord::new(),
                        init: "scratch",
                    }
                } else {
                    let pool = pool_candidates(&nonempty, cfg.selection.k_pool, state.version)?;
                    let (elite, probes) =
                        few_shot_select(&pool, &spec, tag, &cfg.ppo, &cfg.selection, derive(visit_seed, "select"))?;
                    for (p, cand) in probes.iter().zip(&pool) {
                        budget.probe += p.env_steps;
                        log.write(&Event::Probe {
                            visit: k,
                            target_tag: tag.clone(),
                            candidate_id: p.candidate_id,
                            source_tag: p.source_tag.clone(),
                            lineage: p.lineage.clone(),
                            f_src: cand.fitness,
                            descriptor: cand.descriptor.clone(),
                            zero_shot_sr: p.zero_shot_sr,
                            final_sr: p.final_sr,
                            recoverability: p.recoverability,
                            chosen: p.chosen,
                            env_steps: p.env_steps,
                        })?;
                    }
                    Chosen {
                        params: elite.params,
                        lineage: elite.lineage,
                        init: "archive",
                    }
                }
            }
        };

        // (2) training
        let mut opt = match (method, carried_opt.take()) {
            (Method::Finetune, Some(o)) => o,
            _ => chosen.params.optimizer(cfg.ppo.lr),
        };
        let anchor = (method == Method::L2init).then(|| first_init.data.clone());
        let collect = method == Method::Telapa;
        let out = {
            let mut hook = |s: &EpisodeSet| {
                if collect {
                    store_episode_set(&mut banks, s);
                }
            };
            let mut ctx = TrainContext::new(visit_seed, tag);
            ctx.anchor = anchor.as_deref();
            ctx.hook = Some(&mut hook);
            train_task(&spec, &chosen.params, &mut opt, &cfg.ppo, ctx)?
        };
        budget.train += out.trace.env_steps;
        budget.train_eval += out.trace.eval_steps;
        log.write(&Event::Train {
            visit: k,
            tag: tag.clone(),
            base_tag: base.clone(),
            init: chosen.init.to_string(),
            lineage: chosen.lineage.clone(),
            curve: out.trace.curve(),
            zero_shot_sr: out.trace.zero_shot_sr(),
            sr_post: out.trace.final_sr(),
            budget: cfg.ppo.budget,
            env_steps: out.trace.env_steps,
            eval_steps: out.trace.eval_steps,
        })?;
        if method == Method::Finetune {
            carried_opt = Some(opt);
        }
        if method == Method::ScratchReuse && !stored.contains_key(&base) {
            stored.insert(base.clone(), out.params.clone());
        }

        // (3) illumination
        if method.uses_archives() {
            if state.normalizer.is_none() {
                bootstrap_normalizer(&mut state, &out.sets)?;
            }
            let pos = archives.iter().position(|a| a.base_tag == base);
            let initial = pos.map(|i| archives[i].clone());
            let pool = (cfg.illuminate.p_inj > 0.0).then(|| {
                InjectionPool::new(
                    archives
                        .iter()
                        .filter(|a| a.base_tag != base)
                        .flat_map(|a| a.elites.iter().cloned())
                        .collect(),
                )
            });
            let (archive, stats) = illuminate(
                &spec,
                tag,
                &out.params,
                &chosen.lineage,
                &state,
                &cfg.illuminate,
                pool.as_ref(),
                initial,
                derive(visit_seed, "illuminate"),
            )?;
            budget.illumination += stats.env_steps;
            log.write(&Event::Illumination {
                visit: k,
                tag: tag.clone(),
                stats,
            })?;
            save_snapshot(&archive, &archives_dir.join(&base), "current")?;
            match pos {
                Some(i) => archives[i] = archive,
                None => archives.push(archive),
            }
        }

        // (4) boundary maintenance
        if method == Method::Telapa {
            let (next, report) = boundary_maintenance(
                &state,
                &banks,
                &mut archives,
                &cfg.maintenance,
                derive(visit_seed, "maintenance"),
                Some(&archives_dir),
            )?;
            budget.reeval += report.reeval_env_steps;
            if report.performed {
                state = next;
                state.save(&embed_dir, &format!("state-v{}", state.version))?;
                for a in &archives {
                    save_snapshot(a, &archives_dir.join(&a.base_tag), "current")?;
                }
            }
            log.write(&Event::Maintenance { visit: k, report })?;
        }

        current = Some(out.params);
    }

    // end-of-sequence evaluation of the final policy on every visit
    let last = current.expect("curriculum is non-empty");
    for (k, tag) in cfg.curriculum.visits.iter().enumerate() {
        let base = base_tag(tag)?;
        let spec = cfg.task_spec(&base)?;
        let ev = evaluate_policy(
            &last,
            &spec,
            cfg.end_eval_episodes,
            derive(seed, &format!("end-eval-{base}")),
            tag,
        )?;
        budget.final_eval += ev.env_steps();
        log.write(&Event::FinalEval {
            visit: k,
            tag: tag.clone(),
            base_tag: base,
            sr_end: ev.sr,
            env_steps: ev.env_steps(),
        })?;
    }
    log.write(&Event::RunEnd {
        budget,
        total_env_steps: budget.total(),
    })?;

    let mut files = vec!["config.json".to_string(), "log.jsonl".to_string()];
    if method.uses_archives() {
        files.push("archives".into());
        files.push("embedding".into());
    }
    let manifest = Manifest {
        method: method.name().to_string(),
        seed,
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        budget,
        total_env_steps: budget.total(),
        files,
        finished_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let manifest_path = dir.join("manifest.json");
    write(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(RunArtifacts {
        dir,
        log: log_path,
        manifest: manifest_path,
        config: config_path,
        archives: method.uses_archives().then_some(archives_dir),
        embedding: method.uses_archives().then_some(embed_dir),
        budget,
    })
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub runs: Vec<(Method, u64, Result<RunArtifacts>)>,
}

/// Independent runs for every (method, seed) pair under
/// `<suite_dir>/<method>-s<seed>`. Parallelism is capped by
/// `QDCL_THREADS` when set.
pub fn run_suite(template: &RunConfig, methods: &[Method], seeds: &[u64], suite_dir: &Path) -> Result<SuiteOutcome> {
    if seeds.is_empty() || methods.is_empty() {
        return Err(Error::Config("a suite needs at least one method and one seed".into()));
    }
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let threads = std::env::var("QDCL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| {
                let cfg = RunConfig {
                    method: m,
                    seed: s,
                    out_dir: suite_dir.join(format!("{}-s{s}", m.name())),
                    ..template.clone()
                };
                (m, s, run_sequence(&cfg))
            })
            .collect()
    });
    Ok(SuiteOutcome { runs })
}
