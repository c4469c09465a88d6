//! JSON-lines run log. Every line is one event tagged by `kind`; the log
//! carries no wall-clock data so equal runs produce equal bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::IlluminationStats;
use crate::maintenance::MaintenanceReport;
use crate::transfer::LineageRecord;
use crate::{Error, Result};

/// Environment steps by purpose; training steps are the only ones that
/// count towards the per-task budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub train: usize,
    pub train_eval: usize,
    pub probe: usize,
    pub illumination: usize,
    pub reeval: usize,
    pub final_eval: usize,
}

impl Budget {
    pub fn total(&self) -> usize {
        self.train + self.train_eval + self.probe + self.illumination + self.reeval + self.final_eval
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        method: String,
        seed: u64,
        curriculum: Vec<String>,
        config_hash: String,
    },
    Probe {
        visit: usize,
        target_tag: String,
        candidate_id: u64,
        source_tag: String,
        lineage: LineageRecord,
        f_src: f64,
        descriptor: Vec<f64>,
        zero_shot_sr: f64,
        final_sr: f64,
        recoverability: f64,
        chosen: bool,
        env_steps: usize,
    },
    Train {
        visit: usize,
        tag: String,
        base_tag: String,
        /// scratch, reuse, previous or archive
        init: String,
        lineage: LineageRecord,
        curve: Vec<(usize, f64)>,
        zero_shot_sr: f64,
        sr_post: f64,
        budget: usize,
        env_steps: usize,
        eval_steps: usize,
    },
    Illumination {
        visit: usize,
        tag: String,
        stats: IlluminationStats,
    },
    Maintenance {
        visit: usize,
        report: MaintenanceReport,
    },
    FinalEval {
        visit: usize,
        tag: String,
        base_tag: String,
        sr_end: f64,
        env_steps: usize,
    },
    RunEnd {
        budget: Budget,
        total_env_steps: usize,
    },
}

/// Appends events and flushes after each line, so a failed run leaves the
/// events up to the failure on disk.
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<LogWriter> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, ev: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(ev)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
