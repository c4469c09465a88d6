//! Curricula, method variants, run persistence and reports.

mod log;
mod report;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use log::{read_log, Budget, Event, LogWriter};
pub use report::{analyze_run, emit_report, load_run_log, report_suite, thresholds_from_scratch, RunAnalysis, SuiteRow};
pub use run::{run_sequence, run_suite, RunArtifacts, SuiteOutcome};

use crate::agent::PPOConfig;
use crate::archive::IlluminateConfig;
use crate::gridworld::{Family, TaskSpec, Variant};
use crate::maintenance::MaintenanceConfig;
use crate::rng::derive;
use crate::transfer::SelectionConfig;
use crate::{Error, Result};

/// Strip the revisit prime: `"A'"` becomes `"A"`.
pub fn base_tag(tag: &str) -> Result<String> {
    let body = tag.strip_suffix('\'').unwrap_or(tag);
    let mut chars = body.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if Family::from_letter(c).is_some() => Ok(c.to_string()),
        _ => Err(Error::Tag(tag.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Telapa,
    TelapaStatic,
    Scratch,
    ScratchReuse,
    Finetune,
    FinetuneReset,
    L2init,
    ShrinkPerturb,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Telapa,
        Method::TelapaStatic,
        Method::Scratch,
        Method::ScratchReuse,
        Method::Finetune,
        Method::FinetuneReset,
        Method::L2init,
        Method::ShrinkPerturb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Telapa => "telapa",
            Method::TelapaStatic => "telapa_static",
            Method::Scratch => "scratch",
            Method::ScratchReuse => "scratch_reuse",
            Method::Finetune => "finetune",
            Method::FinetuneReset => "finetune_reset",
            Method::L2init => "l2init",
            Method::ShrinkPerturb => "shrink_perturb",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method `{s}`")))
    }

    pub fn uses_archives(self) -> bool {
        matches!(self, Method::Telapa | Method::TelapaStatic)
    }

    /// Methods that start each task from the previous task's parameters.
    pub fn chains_params(self) -> bool {
        matches!(
            self,
            Method::Finetune | Method::FinetuneReset | Method::L2init | Method::ShrinkPerturb
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumName {
    Main,
    Anti,
    Scrambled,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub name: CurriculumName,
    pub visits: Vec<String>,
}

fn tags(s: &[&str]) -> Vec<String> {
    s.iter().map(|t| t.to_string()).collect()
}

impl CurriculumSpec {
    pub fn main() -> Self {
        CurriculumSpec {
            name: CurriculumName::Main,
            visits: tags(&["A", "B", "C", "D", "E", "A'", "B'", "C'", "D'", "E'"]),
        }
    }

    pub fn anti() -> Self {
        CurriculumSpec {
            name: CurriculumName::Anti,
            visits: tags(&["E", "D", "C", "B", "A", "E'", "D'", "C'", "B'", "A'"]),
        }
    }

    pub fn scrambled() -> Self {
        CurriculumSpec {
            name: CurriculumName::Scrambled,
            visits: tags(&["C", "A", "E", "B", "D", "C'", "A'", "E'", "B'", "D'"]),
        }
    }

    pub fn custom(visits: &[&str]) -> Result<Self> {
        let c = CurriculumSpec {
            name: CurriculumName::Custom,
            visits: tags(visits),
        };
        c.validate()?;
        Ok(c)
    }

    /// Every tag is well formed and every primed visit follows a visit of
    /// its base task.
    pub fn validate(&self) -> Result<()> {
        if self.visits.is_empty() {
            return Err(Error::Config("curriculum has no visits".into()));
        }
        let mut seen: Vec<String> = Vec::new();
        for t in &self.visits {
            let b = base_tag(t)?;
            if t.ends_with('\'') && !seen.contains(&b) {
                return Err(Error::Config(format!("revisit {t} comes before any visit of {b}")));
            }
            seen.push(b);
        }
        Ok(())
    }

    /// Base tags in order of first appearance.
    pub fn order(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.visits {
            if let Ok(b) = base_tag(t) {
                if !out.contains(&b) {
                    out.push(b);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShrinkConfig {
    pub alpha: f64,
    pub noise: f64,
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        ShrinkConfig { alpha: 0.9, noise: 1e-3 }
    }
}

/// One run: a method on a curriculum with one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub curriculum: CurriculumSpec,
    pub seed: u64,
    pub variant: Variant,
    /// PPO settings; `ppo.budget` is the per-task training budget.
    pub ppo: PPOConfig,
    pub illuminate: IlluminateConfig,
    pub selection: SelectionConfig,
    pub maintenance: MaintenanceConfig,
    pub shrink: ShrinkConfig,
    /// Episodes for the end-of-sequence evaluation of every visited task.
    pub end_eval_episodes: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Telapa,
            curriculum: CurriculumSpec::main(),
            seed: 0,
            variant: Variant::Standard,
            ppo: PPOConfig::default(),
            illuminate: IlluminateConfig::default(),
            selection: SelectionConfig::default(),
            maintenance: MaintenanceConfig::default(),
            shrink: ShrinkConfig::default(),
            end_eval_episodes: 20,
            out_dir: PathBuf::from("runs/run"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.curriculum.validate()?;
        self.ppo.validate()?;
        if self.method.uses_archives() {
            self.illuminate.validate()?;
            self.selection.validate()?;
        }
        if self.method == Method::ShrinkPerturb && !(self.shrink.alpha > 0.0 && self.shrink.alpha <= 1.0) {
            return Err(Error::Config(format!("shrink alpha {} outside (0, 1]", self.shrink.alpha)));
        }
        if self.method == Method::L2init && self.ppo.l2_lambda < 0.0 {
            return Err(Error::Config("l2init needs a non-negative lambda".into()));
        }
        if self.end_eval_episodes == 0 {
            return Err(Error::Config("end-of-run evaluation needs at least one episode".into()));
        }
        Ok(())
    }

    /// Task geometry for a base tag; the task seed depends only on the run
    /// seed, so methods sharing a seed see the same tasks.
    pub fn task_spec(&self, base: &str) -> Result<TaskSpec> {
        let fam = base
            .chars()
            .next()
            .and_then(Family::from_letter)
            .ok_or_else(|| Error::Tag(base.to_string()))?;
        Ok(TaskSpec::new(fam, self.variant, derive(self.seed, &format!("task-{base}"))))
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_tags() {
        assert_eq!(base_tag("A'").unwrap(), "A");
        assert_eq!(base_tag("C").unwrap(), "C");
        assert!(base_tag("F'").is_err());
        assert!(base_tag("AB").is_err());
        assert!(base_tag("").is_err());
    }

    #[test]
    fn curricula_validate() {
        for c in [CurriculumSpec::main(), CurriculumSpec::anti(), CurriculumSpec::scrambled()] {
            c.validate().unwrap();
            assert_eq!(c.visits.len(), 10);
            assert_eq!(c.order().len(), 5);
        }
        assert!(CurriculumSpec::custom(&["A'", "A"]).is_err());
        assert!(CurriculumSpec::custom(&["A", "B", "A'"]).is_ok());
    }

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"method":"scratch","seed":3}"#).unwrap();
        assert_eq!((partial.method, partial.seed), (Method::Scratch, 3));
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
    }
}
