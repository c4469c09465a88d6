//! Post-hoc analysis of run directories and the CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::log::{read_log, Event};
use super::{base_tag, Method};
use crate::archive::load_snapshot;
use crate::metrics::{
    basin_analysis, compute_threshold, geometry, lineage_matrices, mean_ci, summarize_run, BasinStats, Geometry,
    LineageReport, LineageSample, MetricsReport, RunLog, TaskThreshold, ThresholdSource, TransferSample, VisitRecord,
    TAU_MIN,
};
use crate::{Error, Result};

pub const BASIN_GAMMA: f64 = 0.9;
pub const BASIN_TAU_RANK: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub tag: String,
    pub elite_id: u64,
    pub fitness: f64,
    pub sr: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAnalysis {
    pub method: Method,
    pub seed: u64,
    pub order: Vec<String>,
    pub log: RunLog,
    pub report: MetricsReport,
    pub basin: Vec<(String, String, BasinStats)>,
    pub lineage: LineageReport,
    pub geometry: Option<Geometry>,
    pub latents: Vec<LatentRow>,
}

struct Parsed {
    method: Method,
    seed: u64,
    curriculum: Vec<String>,
    log: RunLog,
    events: Vec<Event>,
}

fn parse(run_dir: &Path) -> Result<Parsed> {
    let path = run_dir.join("log.jsonl");
    if !path.exists() {
        return Err(Error::Insufficient(format!("missing run log {}", path.display())));
    }
    let events = read_log(&path)?;
    let mut head = None;
    let mut visits: Vec<VisitRecord> = Vec::new();
    let mut sr_end: BTreeMap<usize, f64> = BTreeMap::new();
    for ev in &events {
        match ev {
            Event::RunStart {
                method,
                seed,
                curriculum,
                ..
            } => head = Some((Method::parse(method)?, *seed, curriculum.clone())),
            Event::Train {
                tag,
                base_tag,
                curve,
                sr_post,
                budget,
                ..
            } => visits.push(VisitRecord {
                tag: tag.clone(),
                base_tag: base_tag.clone(),
                sr_post: *sr_post,
                sr_end: f64::NAN,
                curve: curve.clone(),
                budget: *budget,
            }),
            Event::FinalEval { visit, sr_end: s, .. } => {
                sr_end.insert(*visit, *s);
            }
            _ => {}
        }
    }
    let (method, seed, curriculum) =
        head.ok_or_else(|| Error::Format(format!("{} has no run_start event", path.display())))?;
    for (k, v) in visits.iter_mut().enumerate() {
        v.sr_end = *sr_end
            .get(&k)
            .ok_or_else(|| Error::Insufficient(format!("run {} has no final evaluation for visit {k}", run_dir.display())))?;
    }
    Ok(Parsed {
        method,
        seed,
        curriculum,
        log: RunLog { visits },
        events,
    })
}

/// Method, seed and per-visit records of a finished run.
pub fn load_run_log(run_dir: &Path) -> Result<(Method, u64, RunLog)> {
    let p = parse(run_dir)?;
    Ok((p.method, p.seed, p.log))
}

/// Per-task thresholds from Scratch logs (mean of per-visit best checkpoint
/// SR); tasks without Scratch data get the fallback.
pub fn thresholds_from_scratch(scratch: &[RunLog], tags: &[String], tau_min: f64) -> Result<BTreeMap<String, TaskThreshold>> {
    let mut best: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for log in scratch {
        for v in &log.visits {
            let b = v.curve.iter().map(|c| c.1).fold(v.sr_post, f64::max);
            best.entry(v.base_tag.clone()).or_default().push(b);
        }
    }
    tags.iter()
        .map(|t| {
            let xs = best.get(t).map_or(&[][..], Vec::as_slice);
            Ok((t.clone(), compute_threshold(t, xs, tau_min)?))
        })
        .collect()
}

fn tau_map(th: &BTreeMap<String, TaskThreshold>) -> BTreeMap<String, f64> {
    th.iter().map(|(k, v)| (k.clone(), v.tau)).collect()
}

/// Analyse one run directory under the given thresholds.
pub fn analyze_run(run_dir: &Path, thresholds: &BTreeMap<String, TaskThreshold>) -> Result<RunAnalysis> {
    let p = parse(run_dir)?;
    let report = summarize_run(&p.log, &tau_map(thresholds))?;
    let mut groups: BTreeMap<(usize, String, String), Vec<TransferSample>> = BTreeMap::new();
    let mut lineage_samples = Vec::new();
    for ev in &p.events {
        if let Event::Probe {
            visit,
            target_tag,
            candidate_id,
            source_tag,
            lineage,
            f_src,
            descriptor,
            final_sr,
            ..
        } = ev
        {
            groups
                .entry((*visit, source_tag.clone(), target_tag.clone()))
                .or_default()
                .push(TransferSample {
                    source: source_tag.clone(),
                    target: target_tag.clone(),
                    candidate_id: *candidate_id,
                    f_src: *f_src,
                    y_tgt: *final_sr,
                    z: descriptor.clone(),
                });
            lineage_samples.push(LineageSample {
                target: target_tag.clone(),
                source: source_tag.clone(),
                lineage: Some(lineage.clone()),
                final_sr: *final_sr,
            });
        }
    }
    let mut basin = Vec::new();
    for ((_, s, t), samples) in &groups {
        basin.push((s.clone(), t.clone(), basin_analysis(samples, BASIN_GAMMA, BASIN_TAU_RANK)?));
    }
    let mut order: Vec<String> = Vec::new();
    for t in &p.curriculum {
        let b = base_tag(t)?;
        if !order.contains(&b) {
            order.push(b);
        }
    }
    let lineage = lineage_matrices(&lineage_samples, &order);

    let mut archives = Vec::new();
    for tag in &order {
        let d = run_dir.join("archives").join(tag);
        if d.join("current.json").exists() {
            archives.push(load_snapshot(&d, "current")?);
        }
    }
    let latents = archives
        .iter()
        .flat_map(|a| {
            a.elites.iter().map(|e| LatentRow {
                tag: a.base_tag.clone(),
                elite_id: e.id,
                fitness: e.fitness,
                sr: e.sr,
                z: e.descriptor.clone(),
            })
        })
        .collect();
    let refs: Vec<_> = archives.iter().filter(|a| !a.is_empty()).collect();
    let geometry = if refs.is_empty() { None } else { Some(geometry(&refs)?) };
    Ok(RunAnalysis {
        method: p.method,
        seed: p.seed,
        order,
        log: p.log,
        report,
        basin,
        lineage,
        geometry,
        latents,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn save(dir: &Path, name: &str, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(())
}

/// Write every report CSV for `runs` into `out_dir`. TTT is written in
/// millions of environment steps.
pub fn emit_report(runs: &[RunAnalysis], thresholds: &BTreeMap<String, TaskThreshold>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut metrics = String::from("method,seed,mean_sr,ttt,bwt,coverage,nbwt,tr\n");
    let mut per_task = String::from("method,seed,visit,tag,tau,sr_post,sr_end,ttt\n");
    let mut basin = String::from("method,seed,source,target,n_good,n_basin,delta_good,delta_local,span75\n");
    let mut geo = String::from("method,seed,tag_a,tag_b,separation,radius_a,radius_b\n");
    let mut imm = String::from("method,seed,source,target,count\n");
    let mut vis = String::from("method,seed,tag,target,count\n");
    let mut grp = String::from("method,seed,grouping,side,n,mean_final_sr\n");
    let mut lat = String::from("method,seed,tag,elite_id,fitness,sr");
    for i in 0..crate::embedder::LATENT_DIM {
        let _ = write!(lat, ",z{i}");
    }
    lat.push('\n');

    for r in runs {
        let (m, s) = (r.method.name(), r.seed);
        let ret = r.report.retention;
        let _ = writeln!(
            metrics,
            "{m},{s},{},{},{},{},{},{}",
            r.report.mean_sr,
            r.report.ttt / 1e6,
            opt(ret.map(|x| x.bwt)),
            opt(ret.map(|x| x.coverage)),
            opt(ret.and_then(|x| x.nbwt)),
            opt(ret.map(|x| x.tr)),
        );
        for (k, t) in r.report.per_task.iter().enumerate() {
            let _ = writeln!(per_task, "{m},{s},{k},{},{},{},{},{}", t.tag, t.tau, t.sr_post, t.sr_end, t.ttt);
        }
        for (src, tgt, b) in &r.basin {
            let _ = writeln!(
                basin,
                "{m},{s},{src},{tgt},{},{},{},{},{}",
                b.good, b.basin, b.delta_good, b.delta_local, b.span75
            );
        }
        if let Some(g) = &r.geometry {
            for a in 0..g.tags.len() {
                for b in 0..g.tags.len() {
                    let _ = writeln!(
                        geo,
                        "{m},{s},{},{},{},{},{}",
                        g.tags[a], g.tags[b], g.separation[a][b], g.radii[a], g.radii[b]
                    );
                }
            }
        }
        for ((src, tgt), c) in &r.lineage.immediate {
            let _ = writeln!(imm, "{m},{s},{src},{tgt},{c}");
        }
        for ((tag, tgt), c) in &r.lineage.visits {
            let _ = writeln!(vis, "{m},{s},{tag},{tgt},{c}");
        }
        for (name, g) in [
            ("breadth", &r.lineage.breadth),
            ("membership", &r.lineage.membership),
            ("non_adjacent", &r.lineage.non_adjacent),
        ] {
            for (side, xs) in [("yes", &g.yes), ("no", &g.no)] {
                let mean = mean_ci(xs).map(|m| m.0);
                let _ = writeln!(grp, "{m},{s},{name},{side},{},{}", xs.len(), opt(mean));
            }
        }
        for l in &r.latents {
            let _ = write!(lat, "{m},{s},{},{},{},{}", l.tag, l.elite_id, l.fitness, l.sr);
            for z in &l.z {
                let _ = write!(lat, ",{z}");
            }
            lat.push('\n');
        }
    }
    save(out_dir, "metrics.csv", &metrics, &mut files)?;
    save(out_dir, "per_task.csv", &per_task, &mut files)?;
    save(out_dir, "basin.csv", &basin, &mut files)?;
    save(out_dir, "geometry.csv", &geo, &mut files)?;
    save(out_dir, "lineage_immediate.csv", &imm, &mut files)?;
    save(out_dir, "lineage_visits.csv", &vis, &mut files)?;
    save(out_dir, "lineage_groups.csv", &grp, &mut files)?;
    save(out_dir, "latents.csv", &lat, &mut files)?;

    let mut th = String::from("tag,tau,source\n");
    for t in thresholds.values() {
        let src = match t.source {
            ThresholdSource::ScratchCalibrated => "scratch_calibrated",
            ThresholdSource::Fallback => "fallback",
        };
        let _ = writeln!(th, "{},{},{src}", t.tag, t.tau);
    }
    save(out_dir, "thresholds.csv", &th, &mut files)?;

    let mut summary = String::new();
    for r in runs {
        let _ = writeln!(
            summary,
            "{} seed {}: mean SR {:.3}, TTT {:.4}M steps{}",
            r.method.name(),
            r.seed,
            r.report.mean_sr,
            r.report.ttt / 1e6,
            match r.report.retention {
                Some(x) => format!(
                    ", BWT {:.3}, coverage {:.2}, nBWT {}, TR {:.2}",
                    x.bwt,
                    x.coverage,
                    x.nbwt.map_or("n/a".to_string(), |v| format!("{v:.3}")),
                    x.tr
                ),
                None => String::new(),
            }
        );
        if let Some(g) = &r.geometry {
            if !g.degenerate.is_empty() {
                let _ = writeln!(summary, "  zero-radius archives: {}", g.degenerate.join(" "));
            }
        }
    }
    if thresholds.values().any(|t| t.source == ThresholdSource::Fallback) {
        let _ = writeln!(summary, "note: some thresholds use the fallback value (no Scratch calibration)");
    }
    save(out_dir, "summary.txt", &summary, &mut files)?;
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub method: String,
    pub seeds: usize,
    pub failed: Vec<String>,
    /// `(mean, 95% half-width)` per column: mean_sr, ttt, bwt, coverage,
    /// nbwt, tr.
    pub columns: Vec<(String, Option<(f64, Option<f64>)>)>,
}

fn task_tags(runs: &[(PathBuf, Parsed)]) -> Vec<String> {
    let mut tags: Vec<String> = runs
        .iter()
        .flat_map(|(_, p)| p.log.visits.iter().map(|v| v.base_tag.clone()))
        .collect();
    tags.sort();
    tags.dedup();
    tags
}

/// Analyse every run directory under `suite_dir`, write the per-run CSVs
/// and `aggregate.csv` with means and 95% intervals per method.
pub fn report_suite(suite_dir: &Path) -> Result<Vec<SuiteRow>> {
    let entries = std::fs::read_dir(suite_dir).map_err(|e| Error::io(suite_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut parsed = Vec::new();
    let mut failed: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for d in dirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match parse(&d) {
            Ok(p) => parsed.push((d, p)),
            Err(e) => {
                let method = name.split("-s").next().unwrap_or(&name).to_string();
                failed.entry(method).or_default().push(format!("{name}: {e}"));
            }
        }
    }
    if parsed.is_empty() {
        return Err(Error::Insufficient(format!("no complete runs under {}", suite_dir.display())));
    }
    let scratch: Vec<RunLog> = parsed
        .iter()
        .filter(|(_, p)| p.method == Method::Scratch)
        .map(|(_, p)| p.log.clone())
        .collect();
    let thresholds = thresholds_from_scratch(&scratch, &task_tags(&parsed), TAU_MIN)?;
    let mut analyses = Vec::new();
    for (d, _) in &parsed {
        analyses.push(analyze_run(d, &thresholds)?);
    }
    analyses.sort_by_key(|a| (a.method, a.seed));
    emit_report(&analyses, &thresholds, suite_dir)?;

    let mut rows = Vec::new();
    let mut agg = String::from("method,seeds,failed");
    let cols = ["mean_sr", "ttt", "bwt", "coverage", "nbwt", "tr"];
    for c in cols {
        let _ = write!(agg, ",{c},{c}_ci95");
    }
    agg.push('\n');
    for m in Method::ALL {
        let runs: Vec<&RunAnalysis> = analyses.iter().filter(|a| a.method == m).collect();
        let fail = failed.remove(m.name()).unwrap_or_default();
        if runs.is_empty() && fail.is_empty() {
            continue;
        }
        let pick = |f: &dyn Fn(&RunAnalysis) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
        let values: Vec<Vec<f64>> = vec![
            pick(&|r| Some(r.report.mean_sr)),
            pick(&|r| Some(r.report.ttt / 1e6)),
            pick(&|r| r.report.retention.map(|x| x.bwt)),
            pick(&|r| r.report.retention.map(|x| x.coverage)),
            pick(&|r| r.report.retention.and_then(|x| x.nbwt)),
            pick(&|r| r.report.retention.map(|x| x.tr)),
        ];
        let columns: Vec<(String, Option<(f64, Option<f64>)>)> =
            cols.iter().zip(&values).map(|(c, v)| (c.to_string(), mean_ci(v))).collect();
        let _ = write!(agg, "{},{},{}", m.name(), runs.len(), fail.len());
        for (_, c) in &columns {
            let _ = write!(agg, ",{},{}", opt(c.map(|x| x.0)), opt(c.and_then(|x| x.1)));
        }
        agg.push('\n');
        rows.push(SuiteRow {
            method: m.name().to_string(),
            seeds: runs.len(),
            failed: fail,
            columns,
        });
    }
    let p = suite_dir.join("aggregate.csv");
    std::fs::write(&p, agg).map_err(|e| Error::io(&p, e))?;
    Ok(rows)
}
