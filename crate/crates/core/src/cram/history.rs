//! Ring of recently measured candidate paths and the path-change rule.

use std::collections::VecDeque;
use std::time::Duration;

use serde::Serialize;

use crate::time::SimTime;
use crate::topo::Path;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub path: Path,
    /// Raw path objective of the most recent measurement.
    pub objective: f64,
    pub recorded_at: SimTime,
}

/// What is currently routing the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent<'a> {
    pub path: &'a Path,
    pub installed_at: SimTime,
    /// Latest measurement of the installed path; falls back to the window.
    pub objective: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PathHistory {
    z: usize,
    records: VecDeque<PathRecord>,
}

impl PathHistory {
    pub fn new(z: usize) -> Self {
        let z = z.max(1);
        PathHistory { z, records: VecDeque::with_capacity(z) }
    }

    pub fn push(&mut self, rec: PathRecord) {
        if self.records.len() == self.z {
            self.records.pop_front();
        }
        self.records.push_back(rec);
    }

    pub fn records(&self) -> impl DoubleEndedIterator<Item = &PathRecord> {
        self.records.iter()
    }

    /// Re-scores every record with `estimate`, e.g. from fresher per-link
    /// data. Records the estimator cannot score keep their value.
    pub fn refresh(&mut self, mut estimate: impl FnMut(&Path) -> Option<f64>) {
        for rec in &mut self.records {
            if let Some(o) = estimate(&rec.path) {
                rec.objective = o;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Lowest-objective path in the window. A path seen several times counts
    /// with its latest objective; ties go to the most recent record.
    pub fn best(&self) -> Option<&PathRecord> {
        let mut best: Option<&PathRecord> = None;
        for (idx, rec) in self.records.iter().enumerate() {
            let superseded = self.records.iter().skip(idx + 1).any(|later| later.path == rec.path);
            if superseded {
                continue;
            }
            if best.is_none_or(|b| rec.objective <= b.objective) {
                best = Some(rec);
            }
        }
        best
    }

    /// Challenger that should replace the incumbent, if any.
    pub fn best_of_z(&self, inc: &Incumbent<'_>, now: SimTime, min_hold: Duration) -> Option<Path> {
        if now.since(inc.installed_at) < min_hold {
            return None;
        }
        let best = self.best()?;
        if &best.path == inc.path {
            return None;
        }
        let current =
            inc.objective.or_else(|| self.records.iter().rev().find(|r| &r.path == inc.path).map(|r| r.objective)).unwrap_or(f64::INFINITY);
        (best.objective < current).then(|| best.path.clone())
    }
}
