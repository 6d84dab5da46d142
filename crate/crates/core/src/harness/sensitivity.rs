//! Grid sweep over the deactivation thresholds `t0_w0` and `t1_w0`.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::handler::ThresholdSet;
use crate::noise::{inject, NoiseKind, NoiseSpec};
use crate::trainer::TrainConfig;

use super::config::{data_entries, train_entries};
use super::{
    canonical, configs_csv, fit_and_score, header, mean_std, render_csv, CellSeeds, DataSource,
    Splits,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPlan {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seeds: Vec<u64>,
    pub t0_w0_grid: Vec<f64>,
    pub t1_w0_grid: Vec<f64>,
    /// Base training configuration; its `t1_flip` and `t0_flip` stay fixed.
    pub train: TrainConfig,
    pub data: DataSource,
    pub cells: Exec,
}

impl SensitivityPlan {
    pub fn validate(&self) -> Result<()> {
        NoiseSpec::new(self.kind, self.rate, 0)?;
        if self.seeds.is_empty() || self.t0_w0_grid.is_empty() || self.t1_w0_grid.is_empty() {
            return Err(Error::Config(
                "sensitivity grid needs at least one seed and threshold value".into(),
            ));
        }
        self.train.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointStatus {
    Ok(f64),
    Failed(String),
    /// The grid point violates the threshold ordering.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRow {
    pub thresholds: ThresholdSet,
    pub seed: u64,
    pub config: String,
    pub status: PointStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub kind: NoiseKind,
    pub rate: f64,
    pub rows: Vec<SensitivityRow>,
}

pub fn run_sensitivity(plan: &SensitivityPlan) -> Result<SensitivityReport> {
    plan.validate()?;
    let splits = plan.data.load()?;
    run_sensitivity_on(plan, &splits)
}

/// [`run_sensitivity`] on already loaded data.
pub fn run_sensitivity_on(plan: &SensitivityPlan, splits: &Splits) -> Result<SensitivityReport> {
    plan.validate()?;
    let mut points = Vec::new();
    for &t1_w0 in &plan.t1_w0_grid {
        for &t0_w0 in &plan.t0_w0_grid {
            for &seed in &plan.seeds {
                points.push((t1_w0, t0_w0, seed));
            }
        }
    }
    let data = data_entries(&plan.data);
    let rows = plan.cells.map(points.len(), |i| -> Result<SensitivityRow> {
        let (t1_w0, t0_w0, seed) = points[i];
        let thresholds = ThresholdSet {
            t1_w0,
            t0_w0,
            ..plan.train.thresholds
        };
        let seeds = CellSeeds::from_run_seed(seed);
        let config = TrainConfig {
            thresholds,
            seed: seeds.train,
            ..plan.train.clone()
        };
        let mut entries = data.clone();
        entries.extend(train_entries(&config));
        entries.push(("noise.kind", plan.kind.to_string()));
        entries.push(("noise.rate", plan.rate.to_string()));
        entries.push(("plan.seed", seed.to_string()));
        let config_text = canonical(&entries);
        if let Err(e) = thresholds.validate() {
            return Ok(SensitivityRow {
                thresholds,
                seed,
                config: config_text,
                status: PointStatus::Skipped(e.to_string()),
            });
        }
        let record = inject(
            splits.train.labels(),
            &NoiseSpec::new(plan.kind, plan.rate, seeds.noise)?,
        )?;
        let status = match fit_and_score(splits, &record.noisy, &config, None) {
            Ok((_, report)) => PointStatus::Ok(report.map_macro),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => PointStatus::Failed(e.to_string()),
        };
        Ok(SensitivityRow {
            thresholds,
            seed,
            config: config_text,
            status,
        })
    });
    Ok(SensitivityReport {
        kind: plan.kind,
        rate: plan.rate,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

fn status_text(status: &PointStatus) -> (String, String) {
    match status {
        PointStatus::Ok(m) => (m.to_string(), "ok".into()),
        PointStatus::Failed(msg) => ("nan".into(), format!("failed: {msg}")),
        PointStatus::Skipped(msg) => (String::new(), format!("skipped: {msg}")),
    }
}

impl SensitivityReport {
    /// `noise_kind,noise_rate,t1_flip,t1_w0,t0_w0,t0_flip,seed,map_macro,status`
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let t = &r.thresholds;
                let (map, status) = status_text(&r.status);
                vec![
                    self.kind.to_string(),
                    self.rate.to_string(),
                    t.t1_flip.to_string(),
                    t.t1_w0.to_string(),
                    t.t0_w0.to_string(),
                    t.t0_flip.to_string(),
                    r.seed.to_string(),
                    map,
                    status,
                ]
            })
            .collect();
        render_csv(
            &header(&[
                "noise_kind",
                "noise_rate",
                "t1_flip",
                "t1_w0",
                "t0_w0",
                "t0_flip",
                "seed",
                "map_macro",
                "status",
            ]),
            &rows,
        )
    }

    pub fn configs_csv(&self) -> String {
        let entries: Vec<(String, String)> = self
            .rows
            .iter()
            .map(|r| (status_text(&r.status).1, r.config.clone()))
            .collect();
        configs_csv(&entries)
    }

    /// Mean mAP over seeds at one grid point, ignoring failed and skipped runs.
    pub fn mean_map(&self, t1_w0: f64, t0_w0: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.thresholds.t1_w0 == t1_w0 && r.thresholds.t0_w0 == t0_w0)
            .filter_map(|r| match r.status {
                PointStatus::Ok(m) => Some(m),
                _ => None,
            })
            .collect();
        (!values.is_empty()).then(|| mean_std(&values).0)
    }

    /// The `t0_w0` with the highest mean mAP at the given `t1_w0`; on ties
    /// the smallest threshold wins.
    pub fn best_t0_w0(&self, t1_w0: f64) -> Option<f64> {
        let mut grid: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.thresholds.t1_w0 == t1_w0)
            .map(|r| r.thresholds.t0_w0)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut best: Option<(f64, f64)> = None;
        for t in grid {
            if let Some(m) = self.mean_map(t1_w0, t) {
                if best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((t, m));
                }
            }
        }
        best.map(|(t, _)| t)
    }
}
