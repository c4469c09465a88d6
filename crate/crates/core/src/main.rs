use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qdcl::agent::{train_task, PolicyParams, TrainContext};
use qdcl::archive::{illuminate, save_snapshot};
use qdcl::embedder::{fit_normalizer, EmbeddingState, EncoderParams};
use qdcl::metrics::TAU_MIN;
use qdcl::rng::{derive, stream};
use qdcl::runner::{
    analyze_run, base_tag, emit_report, load_run_log, report_suite, run_sequence, run_suite,
    thresholds_from_scratch, Method, RunConfig,
};
use qdcl::transfer::LineageRecord;
use qdcl::{Error, Result};

#[derive(Parser)]
#[command(name = "qdcl", version, about = "Quality-diversity policy archives for continual RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one curriculum.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several methods over several seeds into one suite directory.
    Suite {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated method names.
        #[arg(long, default_value = "telapa,scratch")]
        methods: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a base policy on one task and build its archive.
    Illuminate {
        #[arg(long)]
        task: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "illuminate-out")]
        out: PathBuf,
    },
    /// Write metric CSVs for one run directory.
    Analyze {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Aggregate every run under a suite directory.
    Report {
        #[arg(long)]
        suite_dir: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn configure_threads() -> Result<()> {
    if let Some(n) = std::env::var("QDCL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_illuminate(task: &str, cfg: &RunConfig, seed: u64, out: &std::path::Path) -> Result<()> {
    let base = base_tag(task)?;
    let cfg = RunConfig { seed, ..cfg.clone() };
    let spec = cfg.task_spec(&base)?;
    let init = PolicyParams::init(&mut stream(seed, "policy-init"));
    let mut opt = init.optimizer(cfg.ppo.lr);
    let trained = train_task(&spec, &init, &mut opt, &cfg.ppo, TrainContext::new(derive(seed, "train"), task))?;
    let mut state = EmbeddingState::new(EncoderParams::init(&mut stream(seed, "encoder-init")));
    state.normalizer = Some(fit_normalizer(&state.encoder, &trained.sets, None)?);
    let (archive, stats) = illuminate(
        &spec,
        task,
        &trained.params,
        &LineageRecord::new(),
        &state,
        &cfg.illuminate,
        None,
        None,
        derive(seed, "illuminate"),
    )?;
    save_snapshot(&archive, &out.join("archives").join(&base), "current")?;
    state.save(&out.join("embedding"), "state-v0")?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_analyze(run_dir: &std::path::Path) -> Result<()> {
    let (method, _, log) = load_run_log(run_dir)?;
    let mut tags: Vec<String> = log.visits.iter().map(|v| v.base_tag.clone()).collect();
    tags.sort();
    tags.dedup();
    let scratch = if method == Method::Scratch { vec![log] } else { Vec::new() };
    let thresholds = thresholds_from_scratch(&scratch, &tags, TAU_MIN)?;
    let analysis = analyze_run(run_dir, &thresholds)?;
    for f in emit_report(&[analysis], &thresholds, run_dir)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            method,
            seed,
            out,
        } => {
            configure_threads()?;
            let mut cfg = load_config(&config)?;
            if let Some(m) = method {
                cfg.method = Method::parse(&m)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let art = run_sequence(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&art)?);
        }
        Command::Suite {
            config,
            methods,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let methods = methods.split(',').map(|m| Method::parse(m.trim())).collect::<Result<Vec<_>>>()?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let outcome = run_suite(&cfg, &methods, &seeds, &out)?;
            for (m, s, r) in &outcome.runs {
                if let Err(e) = r {
                    eprintln!("{} seed {s} failed: {e}", m.name());
                }
            }
            let rows = report_suite(&out)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        Command::Illuminate {
            task,
            config,
            seed,
            out,
        } => {
            configure_threads()?;
            cmd_illuminate(&task, &load_config(&config)?, seed, &out)?;
        }
        Command::Analyze { run_dir } => cmd_analyze(&run_dir)?,
        Command::Report { suite_dir } => {
            let rows = report_suite(&suite_dir)?;
            let mut by_method = BTreeMap::new();
            for r in rows {
                by_method.insert(r.method.clone(), r);
            }
            println!("{}", serde_json::to_string_pretty(&by_method)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
