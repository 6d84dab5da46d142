//! Oracle label-handling study.
//!
//! With the corruption mask known, two entry sets are fixed before training:
//! the oracle-noisy set (every corrupted entry) and an equally sized per-class
//! set of uncertain clean entries, i.e. clean entries a confidence-based
//! handler would most likely mistake for noise. Each set gets one of three
//! strategies (none, ignore, flip), giving a 3×3 grid of training runs.

use std::fmt;
use std::str::FromStr;

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::handler::{EntryState, HandlingResult};
use crate::noise::{inject, CorruptionRecord, NoiseKind, NoiseSpec};
use crate::numerics::Matrix;
use crate::trainer::{predict, Method, TrainConfig};

use super::config::{data_entries, train_entries};
use super::{
    canonical, configs_csv, fit_and_score, header, mean_std, render_csv, CellSeeds, DataSource,
    Splits,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    Ignore,
    Flip,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::Ignore, Strategy::Flip];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Ignore => "ignore",
            Strategy::Flip => "flip",
        }
    }

    fn state(self) -> EntryState {
        match self {
            Strategy::None => EntryState::Retain,
            Strategy::Ignore => EntryState::Deactivate,
            Strategy::Flip => EntryState::Flip,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    /// Additive or subtractive.
    pub kind: NoiseKind,
    pub rate: f64,
    pub seeds: Vec<u64>,
    /// `(oracle-noisy strategy, uncertain-clean strategy)` pairs, in output order.
    pub pairs: Vec<(Strategy, Strategy)>,
    /// Training settings; the method is forced to BCE.
    pub train: TrainConfig,
    /// Recorded in the configuration sidecar.
    pub data: DataSource,
    pub cells: Exec,
}

impl OracleConfig {
    pub fn all_pairs() -> Vec<(Strategy, Strategy)> {
        Strategy::ALL
            .iter()
            .flat_map(|&a| Strategy::ALL.iter().map(move |&b| (a, b)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kind, NoiseKind::Additive | NoiseKind::Subtractive) {
            return Err(Error::Config(format!(
                "the oracle study needs additive or subtractive noise, got {}",
                self.kind
            )));
        }
        NoiseSpec::new(self.kind, self.rate, 0)?;
        if self.seeds.is_empty() || self.pairs.is_empty() {
            return Err(Error::Config(
                "oracle study needs at least one seed and strategy pair".into(),
            ));
        }
        self.base().validate()
    }

    fn base(&self) -> TrainConfig {
        TrainConfig {
            method: Method::Bce,
            ..self.train.clone()
        }
    }
}

/// Per class, the `k_c` clean entries most likely to be misidentified, where
/// `k_c` is the number of corrupted entries of class `c`. Under subtractive
/// noise these are the clean positives with the lowest `p`; under additive
/// noise the clean negatives with the highest `p`. Ties go to the lower row.
pub fn uncertain_clean_set(
    clean: &LabelMatrix,
    record: &CorruptionRecord,
    probs: &Matrix,
    kind: NoiseKind,
) -> Result<LabelMatrix> {
    if clean.shape() != probs.shape() || clean.shape() != record.mask.shape() {
        return Err(Error::shape(
            "uncertain_clean_set",
            clean.shape(),
            probs.shape(),
        ));
    }
    let subtractive = match kind {
        NoiseKind::Subtractive => true,
        NoiseKind::Additive => false,
        other => {
            let msg = format!(
                "uncertain-clean selection needs additive or subtractive noise, got {other}"
            );
            return Err(Error::Config(msg));
        }
    };
    let (n, c) = clean.shape();
    let mut set = LabelMatrix::zeros(n, c);
    for j in 0..c {
        let k = record.mask.positives_per_class()[j];
        let wanted = u8::from(subtractive);
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&i| record.mask.get(i, j) == 0 && clean.get(i, j) == wanted)
            .collect();
        candidates.sort_by(|&a, &b| {
            let (pa, pb) = (probs.get(a, j), probs.get(b, j));
            let ord = if subtractive {
                pa.total_cmp(&pb)
            } else {
                pb.total_cmp(&pa)
            };
            ord.then(a.cmp(&b))
        });
        for &i in candidates.iter().take(k) {
            set.set(i, j, true);
        }
    }
    Ok(set)
}

/// Static handling of `noisy` for one strategy pair. The two sets are
/// disjoint by construction (corrupted vs. clean entries).
pub fn oracle_handling(
    noisy: &LabelMatrix,
    oracle_set: &LabelMatrix,
    uncertain_set: &LabelMatrix,
    pair: (Strategy, Strategy),
) -> Result<HandlingResult> {
    let states = oracle_set
        .entries()
        .iter()
        .zip(uncertain_set.entries())
        .map(|(&o, &u)| match (o, u) {
            (1, _) => pair.0.state(),
            (_, 1) => pair.1.state(),
            _ => EntryState::Retain,
        })
        .collect();
    HandlingResult::from_states(noisy, states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub oracle: Strategy,
    pub uncertain: Strategy,
    pub seed: u64,
    pub config: String,
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub kind: NoiseKind,
    pub rate: f64,
    pub rows: Vec<OracleRow>,
    /// Test mAP of each seed's BCE reference model, in seed order.
    pub reference_maps: Vec<(u64, f64)>,
}

struct Prepared {
    seed: u64,
    record: CorruptionRecord,
    uncertain: LabelMatrix,
    config: TrainConfig,
}

pub fn run_oracle(config: &OracleConfig) -> Result<OracleReport> {
    config.validate()?;
    let splits = config.data.load()?;
    run_oracle_on(config, &splits)
}

/// [`run_oracle`] on already loaded data.
pub fn run_oracle_on(config: &OracleConfig, splits: &Splits) -> Result<OracleReport> {
    config.validate()?;
    let clean = splits.train.labels();
    let base = config.base();

    // reference models, one per seed, trained on the noisy labels with BCE
    let prepared = config
        .cells
        .map(config.seeds.len(), |i| -> Result<(Prepared, f64)> {
            let seed = config.seeds[i];
            let seeds = CellSeeds::from_run_seed(seed);
            let record = inject(
                clean,
                &NoiseSpec::new(config.kind, config.rate, seeds.noise)?,
            )?;
            let train = TrainConfig {
                seed: seeds.train,
                ..base.clone()
            };
            let (outcome, report) = fit_and_score(splits, &record.noisy, &train, None)?;
            let probs = predict(&outcome.params, splits.train.features())?;
            let uncertain = uncertain_clean_set(clean, &record, &probs, config.kind)?;
            Ok((
                Prepared {
                    seed,
                    record,
                    uncertain,
                    config: train,
                },
                report.map_macro,
            ))
        });
    let prepared: Vec<(Prepared, f64)> = prepared.into_iter().collect::<Result<_>>()?;

    let jobs: Vec<(usize, (Strategy, Strategy))> = config
        .pairs
        .iter()
        .flat_map(|&pair| (0..prepared.len()).map(move |s| (s, pair)))
        .collect();
    let data = data_entries(&config.data);
    let rows = config.cells.map(jobs.len(), |j| -> Result<OracleRow> {
        let (s, pair) = jobs[j];
        let p = &prepared[s].0;
        let handling = oracle_handling(&p.record.noisy, &p.record.mask, &p.uncertain, pair)?;
        let mut entries = data.clone();
        entries.extend(train_entries(&p.config));
        entries.push(("noise.kind", config.kind.to_string()));
        entries.push(("noise.rate", config.rate.to_string()));
        entries.push(("plan.seed", p.seed.to_string()));
        entries.push(("oracle.strategy", pair.0.to_string()));
        entries.push(("oracle.uncertain_strategy", pair.1.to_string()));
        let outcome = match fit_and_score(splits, &p.record.noisy, &p.config, Some(&handling)) {
            Ok((_, report)) => Ok(report.map_macro),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => Err(e.to_string()),
        };
        Ok(OracleRow {
            oracle: pair.0,
            uncertain: pair.1,
            seed: p.seed,
            config: canonical(&entries),
            outcome,
        })
    });
    Ok(OracleReport {
        kind: config.kind,
        rate: config.rate,
        rows: rows.into_iter().collect::<Result<_>>()?,
        reference_maps: prepared.iter().map(|(p, m)| (p.seed, *m)).collect(),
    })
}

impl OracleReport {
    /// `oracle_strategy,uncertain_strategy,seed,map_macro`
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.oracle.to_string(),
                    r.uncertain.to_string(),
                    r.seed.to_string(),
                    r.outcome.as_ref().map_or("nan".to_string(), f64::to_string),
                ]
            })
            .collect();
        render_csv(
            &header(&["oracle_strategy", "uncertain_strategy", "seed", "map_macro"]),
            &rows,
        )
    }

    pub fn configs_csv(&self) -> String {
        let entries: Vec<(String, String)> = self
            .rows
            .iter()
            .map(|r| {
                let status = match &r.outcome {
                    Ok(_) => "ok".to_string(),
                    Err(msg) => format!("failed: {msg}"),
                };
                (status, r.config.clone())
            })
            .collect();
        configs_csv(&entries)
    }

    /// Mean test mAP over seeds for one strategy pair (failed runs excluded).
    pub fn mean_map(&self, oracle: Strategy, uncertain: Strategy) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.oracle == oracle && r.uncertain == uncertain)
            .filter_map(|r| r.outcome.as_ref().ok().copied())
            .collect();
        (!values.is_empty()).then(|| mean_std(&values).0)
    }
}
