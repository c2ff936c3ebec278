//! Query tapes: the complete record of how a step looked at `H`.

use serde::{Deserialize, Serialize};

use crate::point::{MultiIndex, PhasePoint};

/// One derivative evaluation `∂_α H(point) = value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub point: PhasePoint,
    pub alpha: MultiIndex,
    pub value: f64,
}

/// Append-only list of every query made during one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryTape {
    records: Vec<QueryRecord>,
}

impl QueryTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: QueryRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every position component of every queried point, in tape order.
    ///
    /// A potential depending on any single `qᵢ` agrees with zero at all queries
    /// once it vanishes near each of these values.
    pub fn q_coordinates(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.point.q.iter().copied())
            .collect()
    }

    /// Distinct query points in first-seen order.
    pub fn distinct_points(&self) -> Vec<&PhasePoint> {
        let mut out: Vec<&PhasePoint> = Vec::new();
        for r in &self.records {
            if !out.contains(&&r.point) {
                out.push(&r.point);
            }
        }
        out
    }

    /// Largest query order present on the tape.
    pub fn max_order(&self) -> u32 {
        self.records.iter().map(|r| r.alpha.order()).max().unwrap_or(0)
    }
}

impl<'a> IntoIterator for &'a QueryTape {
    type Item = &'a QueryRecord;
    type IntoIter = std::slice::Iter<'a, QueryRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
