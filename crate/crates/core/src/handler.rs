//! Confidence-based three-state label handling.
//!
//! Every label entry is retained, deactivated (loss weight 0) or flipped
//! (inverted and supervised as a pseudo-label), depending on the predicted
//! probability and four thresholds:
//!
//! | label | probability                   | state      | ỹ | w |
//! |-------|-------------------------------|------------|---|---|
//! | 1     | p < t1_flip                   | flip       | 0 | 1 |
//! | 1     | t1_flip ≤ p < t1_w0           | deactivate | 1 | 0 |
//! | 1     | p ≥ t1_w0                     | retain     | 1 | 1 |
//! | 0     | p > t0_flip                   | flip       | 1 | 1 |
//! | 0     | t0_w0 < p ≤ t0_flip           | deactivate | 0 | 0 |
//! | 0     | p ≤ t0_w0                     | retain     | 0 | 1 |

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSet {
    pub t1_flip: f64,
    pub t1_w0: f64,
    pub t0_w0: f64,
    pub t0_flip: f64,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet {
            t1_flip: 0.1,
            t1_w0: 0.5,
            t0_w0: 0.5,
            t0_flip: 0.9,
        }
    }
}

impl ThresholdSet {
    pub fn new(t1_flip: f64, t1_w0: f64, t0_w0: f64, t0_flip: f64) -> Result<Self> {
        let t = ThresholdSet {
            t1_flip,
            t1_w0,
            t0_w0,
            t0_flip,
        };
        t.validate()?;
        Ok(t)
    }

    /// Thresholds under which every entry is retained.
    pub fn all_retain() -> Self {
        ThresholdSet {
            t1_flip: 0.0,
            t1_w0: 0.0,
            t0_w0: 1.0,
            t0_flip: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.t1_flip
            && self.t1_flip <= self.t1_w0
            && self.t1_w0 <= 1.0
            && 0.0 <= self.t0_w0
            && self.t0_w0 <= self.t0_flip
            && self.t0_flip <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 ≤ t1_flip ≤ t1_w0 ≤ 1 and 0 ≤ t0_w0 ≤ t0_flip ≤ 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// The rule table for one entry.
    pub fn classify(&self, label: u8, p: f64) -> EntryState {
        if label == 1 {
            if p < self.t1_flip {
                EntryState::Flip
            } else if p < self.t1_w0 {
                EntryState::Deactivate
            } else {
                EntryState::Retain
            }
        } else if p > self.t0_flip {
            EntryState::Flip
        } else if p > self.t0_w0 {
            EntryState::Deactivate
        } else {
            EntryState::Retain
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryState {
    Retain,
    Deactivate,
    Flip,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StateCounts {
    pub retain: usize,
    pub deactivate: usize,
    pub flip: usize,
}

impl StateCounts {
    pub fn total(&self) -> usize {
        self.retain + self.deactivate + self.flip
    }

    pub fn add(&mut self, other: &StateCounts) {
        self.retain += other.retain;
        self.deactivate += other.deactivate;
        self.flip += other.flip;
    }
}

/// Corrected labels ỹ, binary weights w and the state of every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct HandlingResult {
    corrected: LabelMatrix,
    weights: LabelMatrix,
    states: Vec<EntryState>,
}

impl HandlingResult {
    /// Applies per-entry states to the observed labels.
    pub fn from_states(labels: &LabelMatrix, states: Vec<EntryState>) -> Result<Self> {
        let (n, c) = labels.shape();
        if states.len() != n * c {
            return Err(Error::shape(
                "HandlingResult::from_states",
                (n, c),
                (states.len(), 1),
            ));
        }
        let mut corrected = Vec::with_capacity(n * c);
        let mut weights = Vec::with_capacity(n * c);
        for (&y, &s) in labels.entries().iter().zip(&states) {
            let (yt, w) = match s {
                EntryState::Retain => (y, 1),
                EntryState::Deactivate => (y, 0),
                EntryState::Flip => (1 - y, 1),
            };
            corrected.push(yt);
            weights.push(w);
        }
        Ok(HandlingResult {
            corrected: LabelMatrix::new(n, c, corrected)?,
            weights: LabelMatrix::new(n, c, weights)?,
            states,
        })
    }

    pub fn all_retain(labels: &LabelMatrix) -> Self {
        HandlingResult::from_states(labels, vec![EntryState::Retain; labels.entries().len()])
            .expect("state count matches label shape")
    }

    pub fn corrected(&self) -> &LabelMatrix {
        &self.corrected
    }

    pub fn weights(&self) -> &LabelMatrix {
        &self.weights
    }

    pub fn states(&self) -> &[EntryState] {
        &self.states
    }

    pub fn shape(&self) -> (usize, usize) {
        self.corrected.shape()
    }

    pub fn counts(&self) -> StateCounts {
        let mut counts = StateCounts::default();
        for s in &self.states {
            match s {
                EntryState::Retain => counts.retain += 1,
                EntryState::Deactivate => counts.deactivate += 1,
                EntryState::Flip => counts.flip += 1,
            }
        }
        counts
    }

    pub fn select_rows(&self, indices: &[usize]) -> HandlingResult {
        let c = self.corrected.cols();
        let mut states = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            states.extend_from_slice(&self.states[i * c..(i + 1) * c]);
        }
        HandlingResult {
            corrected: self.corrected.select_rows(indices),
            weights: self.weights.select_rows(indices),
            states,
        }
    }
}

pub fn handle(
    labels: &LabelMatrix,
    probs: &Matrix,
    thresholds: &ThresholdSet,
) -> Result<HandlingResult> {
    handle_with(labels, probs, thresholds, Exec::default())
}

/// Row-parallel under `Exec::Parallel`; entries are independent so the
/// result is the same for every policy.
pub fn handle_with(
    labels: &LabelMatrix,
    probs: &Matrix,
    thresholds: &ThresholdSet,
    exec: Exec,
) -> Result<HandlingResult> {
    thresholds.validate()?;
    if labels.shape() != probs.shape() {
        return Err(Error::shape("handle", labels.shape(), probs.shape()));
    }
    if probs.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(
            "handle: probabilities must lie in [0, 1]".into(),
        ));
    }
    let (n, c) = labels.shape();
    let rows = exec.for_work(n * c * 64).map(n, |i| {
        labels
            .row(i)
            .iter()
            .zip(probs.row(i))
            .map(|(&y, &p)| thresholds.classify(y, p))
            .collect::<Vec<_>>()
    });
    HandlingResult::from_states(labels, rows.concat())
}
