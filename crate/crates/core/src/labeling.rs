//! Final per-disc labels produced from a candidate set.

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::skeleton::Assignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscLabel {
    /// Zero-based disc index.
    pub disc: usize,
    pub present: bool,
    pub row: Option<f64>,
    pub col: Option<f64>,
    /// Heatmap value at the chosen candidate; 0 when absent.
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingResult {
    pub discs: Vec<DiscLabel>,
}

impl LabelingResult {
    fn from_choice(set: &CandidateSet, choice: &[Option<usize>]) -> Self {
        let discs = set
            .per_disc
            .iter()
            .zip(choice)
            .enumerate()
            .map(|(disc, (cs, c))| match c.and_then(|c| cs.get(c)) {
                Some(c) => DiscLabel {
                    disc,
                    present: true,
                    row: Some(c.row),
                    col: Some(c.col),
                    confidence: c.score,
                },
                None => DiscLabel {
                    disc,
                    present: false,
                    row: None,
                    col: None,
                    confidence: 0.0,
                },
            })
            .collect();
        Self { discs }
    }

    pub fn from_assignment(set: &CandidateSet, a: &Assignment) -> Self {
        Self::from_choice(set, &a.choice)
    }

    /// Highest-scoring candidate of every channel, no geometric check.
    pub fn top1(set: &CandidateSet) -> Self {
        let choice: Vec<Option<usize>> = set.per_disc.iter().map(|c| (!c.is_empty()).then_some(0)).collect();
        Self::from_choice(set, &choice)
    }

    /// `(row, col)` per disc, `None` when absent.
    pub fn positions(&self) -> Vec<Option<(f64, f64)>> {
        self.discs
            .iter()
            .map(|d| match (d.row, d.col) {
                (Some(r), Some(c)) if d.present => Some((r, c)),
                _ => None,
            })
            .collect()
    }

    pub fn num_present(&self) -> usize {
        self.discs.iter().filter(|d| d.present).count()
    }
}
