//! Controlled label-noise injection.
//!
//! Additive and subtractive noise flip, per class, `round(r · n_c)` entries,
//! where `n_c` is the number of clean positives of the class. Subtractive
//! flips positives to 0, additive flips negatives to 1, mixed applies both on
//! disjoint entries. Uniform noise flips `round(r · N · C)` entries drawn over
//! the whole matrix regardless of value.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::numerics::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Additive,
    Subtractive,
    Mixed,
    Uniform,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::Additive,
        NoiseKind::Subtractive,
        NoiseKind::Mixed,
        NoiseKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Additive => "additive",
            NoiseKind::Subtractive => "subtractive",
            NoiseKind::Mixed => "mixed",
            NoiseKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec { kind, rate, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "noise rate {} outside [0, 1]",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Flip count for one class: `round(r · n)`, halves rounded away from zero.
pub fn class_flip_count(rate: f64, positives: usize) -> usize {
    (rate * positives as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub noisy: LabelMatrix,
    /// 1 where the noisy entry differs from the clean one.
    pub mask: LabelMatrix,
    /// Per class, 0 → 1 flips.
    pub additive_flips: Vec<usize>,
    /// Per class, 1 → 0 flips.
    pub subtractive_flips: Vec<usize>,
    pub warnings: Vec<String>,
}

impl CorruptionRecord {
    pub fn total_flips(&self) -> usize {
        self.additive_flips.iter().sum::<usize>() + self.subtractive_flips.iter().sum::<usize>()
    }

    /// Fraction of flipped entries that went 1 → 0 (0 when nothing flipped).
    pub fn subtractive_share(&self) -> f64 {
        let total = self.total_flips();
        if total == 0 {
            0.0
        } else {
            self.subtractive_flips.iter().sum::<usize>() as f64 / total as f64
        }
    }
}

pub fn inject(clean: &LabelMatrix, spec: &NoiseSpec) -> Result<CorruptionRecord> {
    spec.validate()?;
    let (n, c) = clean.shape();
    let mut record = CorruptionRecord {
        noisy: clean.clone(),
        mask: LabelMatrix::zeros(n, c),
        additive_flips: vec![0; c],
        subtractive_flips: vec![0; c],
        warnings: Vec::new(),
    };
    let root = RngState::new(spec.seed);
    match spec.kind {
        NoiseKind::Subtractive => flip_class_wise(clean, spec.rate, true, &root, &mut record),
        NoiseKind::Additive => flip_class_wise(clean, spec.rate, false, &root, &mut record),
        NoiseKind::Mixed => {
            flip_class_wise(clean, spec.rate, true, &root, &mut record);
            flip_class_wise(clean, spec.rate, false, &root, &mut record);
        }
        NoiseKind::Uniform => {
            let total = n * c;
            let k = (spec.rate * total as f64).round() as usize;
            let mut rng = root.child("uniform");
            for flat in index::sample(&mut rng, total, k.min(total)) {
                let (i, j) = (flat / c, flat % c);
                flip(&mut record, clean, i, j);
            }
        }
    }
    Ok(record)
}

/// Class-normalized flips of one direction. Candidates are always drawn from
/// the clean matrix, so subtractive and additive passes touch disjoint entries.
fn flip_class_wise(
    clean: &LabelMatrix,
    rate: f64,
    subtractive: bool,
    root: &RngState,
    record: &mut CorruptionRecord,
) {
    let source = u8::from(subtractive);
    let stream = root.child(if subtractive {
        "subtractive"
    } else {
        "additive"
    });
    for j in 0..clean.cols() {
        let demand = class_flip_count(rate, clean.positives_per_class()[j]);
        if demand == 0 {
            continue;
        }
        let candidates: Vec<usize> = (0..clean.rows())
            .filter(|&i| clean.get(i, j) == source)
            .collect();
        let k = demand.min(candidates.len());
        if k < demand {
            record.warnings.push(format!(
                "class {j}: additive demand {demand} exceeds {} available negatives; capped",
                candidates.len()
            ));
        }
        let mut rng = stream.child_index(j as u64);
        for pick in index::sample(&mut rng, candidates.len(), k) {
            flip(record, clean, candidates[pick], j);
        }
    }
}

fn flip(record: &mut CorruptionRecord, clean: &LabelMatrix, i: usize, j: usize) {
    let was_positive = clean.get(i, j) == 1;
    record.noisy.set(i, j, !was_positive);
    record.mask.set(i, j, true);
    if was_positive {
        record.subtractive_flips[j] += 1;
    } else {
        record.additive_flips[j] += 1;
    }
}

/// Per-class flip rates, each normalized by the clean positive count of the
/// class (0 for classes without positives).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseAudit {
    pub additive_rate: Vec<f64>,
    pub subtractive_rate: Vec<f64>,
    pub additive_flips: Vec<usize>,
    pub subtractive_flips: Vec<usize>,
}

pub fn audit(clean: &LabelMatrix, noisy: &LabelMatrix) -> Result<NoiseAudit> {
    if clean.shape() != noisy.shape() {
        return Err(Error::shape("audit", clean.shape(), noisy.shape()));
    }
    let c = clean.cols();
    let mut additive_flips = vec![0; c];
    let mut subtractive_flips = vec![0; c];
    for i in 0..clean.rows() {
        for j in 0..c {
            match (clean.get(i, j), noisy.get(i, j)) {
                (0, 1) => additive_flips[j] += 1,
                (1, 0) => subtractive_flips[j] += 1,
                _ => {}
            }
        }
    }
    let rate = |flips: &[usize]| -> Vec<f64> {
        flips
            .iter()
            .zip(clean.positives_per_class())
            .map(|(&f, &p)| if p == 0 { 0.0 } else { f as f64 / p as f64 })
            .collect()
    };
    Ok(NoiseAudit {
        additive_rate: rate(&additive_flips),
        subtractive_rate: rate(&subtractive_flips),
        additive_flips,
        subtractive_flips,
    })
}
