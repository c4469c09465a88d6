//! Which prior archives the transfer candidates came from and passed
//! through, and how final transfer SR splits across ancestry groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::transfer::LineageRecord;

pub const UNTAGGED: &str = "untagged";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageSample {
    pub target: String,
    pub source: String,
    pub lineage: Option<LineageRecord>,
    pub final_sr: f64,
}

/// Final SRs of the two sides of one grouping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub yes: Vec<f64>,
    pub no: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineageReport {
    /// `(immediate source, target) → count`.
    pub immediate: BTreeMap<(String, String), usize>,
    /// `(tag in lineage, target) → count`; one candidate counts for every
    /// tag it visited.
    pub visits: BTreeMap<(String, String), usize>,
    /// Breadth above the per-target median (`yes`) versus at or below it.
    pub breadth: GroupSplit,
    /// Lineage already contains the target's base tag.
    pub membership: GroupSplit,
    /// Lineage has a consecutive pair at least two curriculum slots apart.
    pub non_adjacent: GroupSplit,
}

fn distinct(l: &LineageRecord) -> usize {
    let mut v: Vec<&String> = l.visited.iter().collect();
    v.sort();
    v.dedup();
    v.len()
}

/// `order` lists base tags by curriculum index (first appearance).
pub fn lineage_matrices(samples: &[LineageSample], order: &[String]) -> LineageReport {
    let mut rep = LineageReport::default();
    let index = |t: &str| order.iter().position(|o| o == t);
    let mut medians: BTreeMap<&str, f64> = BTreeMap::new();
    let mut per_target: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in samples {
        let b = s.lineage.as_ref().map_or(0, distinct) as f64;
        per_target.entry(&s.target).or_default().push(b);
    }
    for (t, mut bs) in per_target {
        bs.sort_by(f64::total_cmp);
        medians.insert(t, crate::embedder::quantile(&bs, 0.5));
    }
    for s in samples {
        let target_base = s.target.trim_end_matches('\'').to_string();
        let lineage = s.lineage.as_ref().filter(|l| !l.visited.is_empty());
        let src = if lineage.is_some() { s.source.clone() } else { UNTAGGED.to_string() };
        *rep.immediate.entry((src, s.target.clone())).or_default() += 1;
        let Some(l) = lineage else {
            *rep.visits.entry((UNTAGGED.to_string(), s.target.clone())).or_default() += 1;
            continue;
        };
        let mut seen: Vec<&String> = l.visited.iter().collect();
        seen.sort();
        seen.dedup();
        for tag in seen {
            *rep.visits.entry((tag.clone(), s.target.clone())).or_default() += 1;
        }
        let rich = distinct(l) as f64 > medians[s.target.as_str()];
        push(&mut rep.breadth, rich, s.final_sr);
        push(&mut rep.membership, l.contains(&target_base), s.final_sr);
        let far = l.visited.windows(2).any(|w| match (index(&w[0]), index(&w[1])) {
            (Some(a), Some(b)) => a.abs_diff(b) >= 2,
            _ => false,
        });
        push(&mut rep.non_adjacent, far, s.final_sr);
    }
    rep
}

fn push(g: &mut GroupSplit, yes: bool, v: f64) {
    if yes {
        g.yes.push(v)
    } else {
        g.no.push(v)
    }
}
