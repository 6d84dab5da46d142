//! Method-comparison sweeps over noise kinds, rates and seeds.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::MetricsReport;
use crate::noise::{inject, NoiseKind, NoiseSpec};
use crate::trainer::{Method, TrainConfig};

use super::config::{data_entries, train_entries, Settings};
use super::{
    canonical, configs_csv, fit_and_score, header, mean_std, render_csv, CellSeeds, DataSource,
    Splits,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub data: DataSource,
    /// Resolved training configuration per method, in output order.
    pub methods: Vec<(Method, TrainConfig)>,
    pub kinds: Vec<NoiseKind>,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Policy across cells; each cell's own policy is in its `TrainConfig`.
    pub cells: Exec,
}

impl ExperimentPlan {
    pub fn from_settings(settings: &Settings) -> Result<Self> {
        settings.validate()?;
        Ok(ExperimentPlan {
            data: settings.data.clone(),
            methods: settings
                .methods
                .iter()
                .map(|&m| settings.train_config(m).map(|c| (m, c)))
                .collect::<Result<_>>()?,
            kinds: settings.kinds.clone(),
            rates: settings.rates.clone(),
            seeds: settings.seeds.clone(),
            cells: settings.cells,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.kinds.is_empty()
            || self.rates.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::Config(
                "plan needs at least one method, kind, rate and seed".into(),
            ));
        }
        for &rate in &self.rates {
            NoiseSpec::new(NoiseKind::Mixed, rate, 0)?;
        }
        for (_, cfg) in &self.methods {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Cells in output order: method, kind, rate, seed.
    fn cells(&self) -> Vec<(usize, NoiseKind, f64, u64)> {
        let mut out = Vec::new();
        for m in 0..self.methods.len() {
            for &kind in &self.kinds {
                for &rate in &self.rates {
                    for &seed in &self.seeds {
                        out.push((m, kind, rate, seed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    /// Canonical `key=value;…` text of everything that determines the cell.
    pub config: String,
    pub total_flips: usize,
    pub subtractive_flips: usize,
    /// Test-set metrics, or the diagnostic of a failed run.
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub kind: NoiseKind,
    pub rate: f64,
    pub mean_map: f64,
    pub std_map: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub classes: usize,
    pub cells: Vec<CellResult>,
}

pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepReport> {
    plan.validate()?;
    let splits = plan.data.load()?;
    run_sweep_on(plan, &splits)
}

/// [`run_sweep`] on already loaded data (`plan.data` is only recorded).
pub fn run_sweep_on(plan: &ExperimentPlan, splits: &Splits) -> Result<SweepReport> {
    plan.validate()?;
    let cells = plan.cells();
    let data = data_entries(&plan.data);
    let results = plan.cells.map(cells.len(), |i| {
        let (m, kind, rate, seed) = cells[i];
        let (method, base) = &plan.methods[m];
        run_cell(splits, &data, *method, base, kind, rate, seed)
    });
    Ok(SweepReport {
        classes: splits.train.num_classes(),
        cells: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Uniform-noise study: a sweep restricted to uniform corruption.
pub fn run_uniform(plan: &ExperimentPlan) -> Result<SweepReport> {
    run_sweep(&ExperimentPlan {
        kinds: vec![NoiseKind::Uniform],
        ..plan.clone()
    })
}

fn run_cell(
    splits: &Splits,
    data: &[(&str, String)],
    method: Method,
    base: &TrainConfig,
    kind: NoiseKind,
    rate: f64,
    seed: u64,
) -> Result<CellResult> {
    let seeds = CellSeeds::from_run_seed(seed);
    let noise = NoiseSpec::new(kind, rate, seeds.noise)?;
    let record = inject(splits.train.labels(), &noise)?;
    let config = TrainConfig {
        method,
        seed: seeds.train,
        ..base.clone()
    };
    let mut entries = data.to_vec();
    entries.extend(train_entries(&config));
    entries.push(("noise.kind", kind.to_string()));
    entries.push(("noise.rate", rate.to_string()));
    entries.push(("noise.seed", noise.seed.to_string()));
    entries.push(("plan.seed", seed.to_string()));

    let outcome = match fit_and_score(splits, &record.noisy, &config, None) {
        Ok((_, report)) => Ok(report),
        // configuration problems abort the sweep; anything else is a failed cell
        Err(e) if e.is_config() => return Err(e),
        Err(e) => Err(e.to_string()),
    };
    Ok(CellResult {
        method,
        kind,
        rate,
        seed,
        config: canonical(&entries),
        total_flips: record.total_flips(),
        subtractive_flips: record.subtractive_flips.iter().sum(),
        outcome,
    })
}

impl SweepReport {
    /// `method,noise_kind,noise_rate,seed,map_macro,ap_class_0,…`; failed
    /// cells have `nan` mAP and empty per-class fields.
    pub fn results_csv(&self) -> String {
        let mut head = header(&["method", "noise_kind", "noise_rate", "seed", "map_macro"]);
        head.extend((0..self.classes).map(|c| format!("ap_class_{c}")));
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|cell| {
                let mut row = vec![
                    cell.method.to_string(),
                    cell.kind.to_string(),
                    cell.rate.to_string(),
                    cell.seed.to_string(),
                ];
                match &cell.outcome {
                    Ok(report) => row.extend(report.csv_fields()),
                    Err(_) => {
                        row.push("nan".into());
                        row.extend(std::iter::repeat_n(String::new(), self.classes));
                    }
                }
                row
            })
            .collect();
        render_csv(&head, &rows)
    }

    /// Sidecar with the full configuration and status of every results row.
    pub fn configs_csv(&self) -> String {
        let entries: Vec<(String, String)> = self
            .cells
            .iter()
            .map(|c| {
                let status = match &c.outcome {
                    Ok(_) => "ok".to_string(),
                    Err(msg) => format!("failed: {msg}"),
                };
                (status, c.config.clone())
            })
            .collect();
        configs_csv(&entries)
    }

    /// Mean and standard deviation over seeds of every (method, kind, rate),
    /// in plan order. Failed cells are excluded from the statistics.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for cell in &self.cells {
            let pos = rows.iter().position(|r| {
                r.method == cell.method && r.kind == cell.kind && r.rate == cell.rate
            });
            let idx = pos.unwrap_or_else(|| {
                rows.push(SummaryRow {
                    method: cell.method,
                    kind: cell.kind,
                    rate: cell.rate,
                    mean_map: f64::NAN,
                    std_map: f64::NAN,
                    completed: 0,
                    failed: 0,
                });
                values.push(Vec::new());
                rows.len() - 1
            });
            match &cell.outcome {
                Ok(r) => {
                    rows[idx].completed += 1;
                    values[idx].push(r.map_macro);
                }
                Err(_) => rows[idx].failed += 1,
            }
        }
        for (row, v) in rows.iter_mut().zip(&values) {
            (row.mean_map, row.std_map) = mean_std(v);
        }
        rows
    }

    /// Mean mAP for one (method, kind, rate), if present.
    pub fn mean_map(&self, method: Method, kind: NoiseKind, rate: f64) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.method == method && r.kind == kind && r.rate == rate)
            .map(|r| r.mean_map)
    }

    /// `method,noise_kind,noise_rate,mean_map,std_map,completed,failed`
    pub fn summary_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .summary()
            .iter()
            .map(|r| {
                vec![
                    r.method.to_string(),
                    r.kind.to_string(),
                    r.rate.to_string(),
                    r.mean_map.to_string(),
                    r.std_map.to_string(),
                    r.completed.to_string(),
                    r.failed.to_string(),
                ]
            })
            .collect();
        render_csv(
            &header(&[
                "method",
                "noise_kind",
                "noise_rate",
                "mean_map",
                "std_map",
                "completed",
                "failed",
            ]),
            &rows,
        )
    }

    /// `noise_rate,seed,total_flips,subtractive_flips,subtractive_share` for
    /// every distinct (kind, rate, seed); the corruption does not depend on
    /// the method.
    pub fn composition_csv(&self) -> String {
        let mut seen = Vec::new();
        let mut rows = Vec::new();
        for c in &self.cells {
            let key = (c.kind, c.rate.to_bits(), c.seed);
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let share = if c.total_flips == 0 {
                0.0
            } else {
                c.subtractive_flips as f64 / c.total_flips as f64
            };
            rows.push(vec![
                c.rate.to_string(),
                c.seed.to_string(),
                c.total_flips.to_string(),
                c.subtractive_flips.to_string(),
                share.to_string(),
            ]);
        }
        render_csv(
            &header(&[
                "noise_rate",
                "seed",
                "total_flips",
                "subtractive_flips",
                "subtractive_share",
            ]),
            &rows,
        )
    }
}
