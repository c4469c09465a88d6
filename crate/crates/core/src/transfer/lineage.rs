use serde::{Deserialize, Serialize};

use crate::runner::base_tag;
use crate::Result;

/// Ordered base tags an elite's ancestry passed through.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub visited: Vec<String>,
}

impl LineageRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.visited.len()
    }

    pub fn last(&self) -> Option<&str> {
        self.visited.last().map(String::as_str)
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.visited.iter().any(|t| t == tag)
    }

    /// Append `tag` unless the lineage already ends with it, so repeated
    /// mutation within one task adds the tag only once.
    pub fn extended(&self, tag: &str) -> LineageRecord {
        let mut next = self.clone();
        if next.last() != Some(tag) {
            next.visited.push(tag.to_string());
        }
        next
    }
}

/// Lineage after archiving an elite under `tag` (primes are dropped).
pub fn record_lineage(lineage: &LineageRecord, tag: &str) -> Result<LineageRecord> {
    Ok(lineage.extended(&base_tag(tag)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_rules() {
        let fresh = record_lineage(&LineageRecord::new(), "A").unwrap();
        assert_eq!(fresh.visited, vec!["A"]);
        let ab = LineageRecord {
            visited: vec!["A".into(), "B".into()],
        };
        assert_eq!(record_lineage(&ab, "C").unwrap().visited, vec!["A", "B", "C"]);
        assert_eq!(record_lineage(&ab, "A'").unwrap().visited, vec!["A", "B", "A"]);
        assert_eq!(record_lineage(&ab, "B").unwrap().depth(), 2);
        assert!(record_lineage(&ab, "F").is_err());
    }
}
