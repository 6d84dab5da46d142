//! `nar`: command-line front end for data generation, noise injection,
//! training, evaluation and the experiment drivers.
//!
//! Exit codes: 0 on success, 1 for configuration or input errors, 2 when a
//! training run diverges (for drivers: when any cell failed; the CSVs are
//! still written and record the failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nar_core::dataset::{dataset_to_csv, labels_to_csv};
use nar_core::harness::config::{data_entries, train_entries};
use nar_core::harness::oracle::run_oracle_on;
use nar_core::harness::sensitivity::{run_sensitivity_on, PointStatus};
use nar_core::harness::sweep::run_sweep_on;
use nar_core::harness::{
    canonical, configs_csv, score, write_outputs, ExperimentPlan, OracleConfig, SensitivityPlan,
    Settings, SweepReport,
};
use nar_core::noise::{inject, NoiseSpec};
use nar_core::trainer::{checkpoint_to_string, load_checkpoint, train, Method};

#[derive(Parser)]
#[command(
    name = "nar",
    version,
    about = "Noise-adaptive regularization for multi-label classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines, applied over the defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Extra `key=value` assignment applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val/test splits as CSV.
    GenData(Common),
    /// Corrupt the training labels with `noise.*` and write a ready-to-train
    /// data directory plus the flip mask.
    Inject(Common),
    /// Train `train.method` on the data as loaded and evaluate it on test.
    Train(Common),
    /// Evaluate a saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    /// Method comparison over the `plan.*` grid of methods, kinds, rates and seeds.
    Sweep(Common),
    /// Oracle handling study at `noise.kind` (additive or subtractive) and `noise.rate`.
    Oracle(Common),
    /// Threshold grid over `plan.t0_w0_grid` x `plan.t1_w0_grid` at `noise.kind` and `noise.rate`.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Handler-based method to sweep.
        #[arg(long, default_value = "nar_with_elr")]
        method: Method,
    },
    /// Uniform-noise study over `plan.methods`, `plan.rates` and `plan.seeds`.
    Uniform(Common),
}

/// Outputs were written but some runs failed.
#[derive(Debug, thiserror::Error)]
#[error("{0} run(s) failed; see the status columns of the written CSVs")]
struct FailedRuns(usize);

fn load_settings(common: &Common) -> Result<Settings> {
    let mut settings = match &common.config {
        Some(path) => {
            Settings::from_file(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => Settings::default(),
    };
    for assignment in &common.sets {
        settings.set_assignment(assignment)?;
    }
    settings.validate()?;
    Ok(settings)
}

fn write(dir: &Path, files: Vec<(&str, String)>) -> Result<()> {
    let files: Vec<(String, String)> = files.into_iter().map(|(n, c)| (n.to_string(), c)).collect();
    write_outputs(dir, &files).with_context(|| format!("writing outputs to {}", dir.display()))
}

fn sweep_outputs(prefix: &str, report: &SweepReport, composition: bool) -> Vec<(String, String)> {
    let mut files = vec![
        (format!("{prefix}_results.csv"), report.results_csv()),
        (format!("{prefix}_summary.csv"), report.summary_csv()),
        (format!("{prefix}_configs.csv"), report.configs_csv()),
    ];
    if composition {
        files.push((
            format!("{prefix}_composition.csv"),
            report.composition_csv(),
        ));
    }
    files
}

fn finish(failed: usize) -> Result<()> {
    if failed > 0 {
        return Err(FailedRuns(failed).into());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let splits = load_settings(&common)?.data.load()?;
            write(
                &common.out,
                vec![
                    ("train.csv", dataset_to_csv(&splits.train)),
                    ("val.csv", dataset_to_csv(&splits.val)),
                    ("test.csv", dataset_to_csv(&splits.test)),
                ],
            )
        }
        Command::Inject(common) => {
            let settings = load_settings(&common)?;
            let splits = settings.data.load()?;
            let spec = NoiseSpec::new(
                settings.noise_kind,
                settings.noise_rate,
                settings.noise_seed,
            )?;
            let record = inject(splits.train.labels(), &spec)?;
            for w in &record.warnings {
                eprintln!("warning: {w}");
            }
            let mut summary =
                String::from("class,clean_positives,additive_flips,subtractive_flips\n");
            for (c, &p) in splits
                .train
                .labels()
                .positives_per_class()
                .iter()
                .enumerate()
            {
                summary.push_str(&format!(
                    "{c},{p},{},{}\n",
                    record.additive_flips[c], record.subtractive_flips[c]
                ));
            }
            let noisy = splits.train.with_labels(record.noisy.clone())?;
            write(
                &common.out,
                vec![
                    ("train.csv", dataset_to_csv(&noisy)),
                    ("val.csv", dataset_to_csv(&splits.val)),
                    ("test.csv", dataset_to_csv(&splits.test)),
                    (
                        "clean_train_labels.csv",
                        labels_to_csv(splits.train.labels()),
                    ),
                    ("noise_mask.csv", labels_to_csv(&record.mask)),
                    ("noise_summary.csv", summary),
                ],
            )
        }
        Command::Train(common) => {
            let settings = load_settings(&common)?;
            let config = settings.train_config(settings.train.method)?;
            let splits = settings.data.load()?;
            let outcome = train(&splits.train, &splits.val, &config)?;
            let report = score(&outcome, &splits.test)?;
            let mut entries = data_entries(&settings.data);
            entries.extend(train_entries(&config));
            write(
                &common.out,
                vec![
                    ("model.ckpt", checkpoint_to_string(&outcome.params)),
                    ("train_log.csv", outcome.log.to_csv()),
                    ("metrics.csv", metrics_csv(&report)),
                    (
                        "config.csv",
                        configs_csv(&[("ok".to_string(), canonical(&entries))]),
                    ),
                ],
            )?;
            println!(
                "{}: best epoch {}, val mAP {:.4}, test mAP {:.4}",
                config.method,
                outcome.log.best_epoch,
                outcome.log.best_val_map(),
                report.map_macro
            );
            Ok(())
        }
        Command::Eval { common, model } => {
            let settings = load_settings(&common)?;
            let params = load_checkpoint(&model)?;
            let splits = settings.data.load()?;
            let report = nar_core::metrics::map_macro(
                &nar_core::trainer::predict(&params, splits.test.features())?,
                splits.test.labels(),
            )?;
            write(&common.out, vec![("metrics.csv", metrics_csv(&report))])?;
            println!("test mAP {:.4}", report.map_macro);
            Ok(())
        }
        Command::Sweep(common) => {
            let settings = load_settings(&common)?;
            let plan = ExperimentPlan::from_settings(&settings)?;
            let report = run_sweep_on(&plan, &plan.data.load()?)?;
            write_outputs(&common.out, &sweep_outputs("sweep", &report, false))?;
            finish(report.cells.iter().filter(|c| c.outcome.is_err()).count())
        }
        Command::Uniform(common) => {
            let settings = load_settings(&common)?;
            let plan = ExperimentPlan::from_settings(&settings)?;
            let report = nar_core::harness::run_uniform(&plan)?;
            write_outputs(&common.out, &sweep_outputs("uniform", &report, true))?;
            finish(report.cells.iter().filter(|c| c.outcome.is_err()).count())
        }
        Command::Oracle(common) => {
            let settings = load_settings(&common)?;
            let config = OracleConfig {
                kind: settings.noise_kind,
                rate: settings.noise_rate,
                seeds: settings.seeds.clone(),
                pairs: OracleConfig::all_pairs(),
                train: settings.train.clone(),
                data: settings.data.clone(),
                cells: settings.cells,
            };
            config.validate()?;
            let report = run_oracle_on(&config, &config.data.load()?)?;
            write(
                &common.out,
                vec![
                    ("oracle.csv", report.to_csv()),
                    ("oracle_configs.csv", report.configs_csv()),
                ],
            )?;
            finish(report.rows.iter().filter(|r| r.outcome.is_err()).count())
        }
        Command::Sensitivity { common, method } => {
            let settings = load_settings(&common)?;
            if !method.uses_handler() {
                anyhow::bail!(nar_core::Error::Config(format!(
                    "sensitivity needs a handler-based method, got `{method}`"
                )));
            }
            let plan = SensitivityPlan {
                kind: settings.noise_kind,
                rate: settings.noise_rate,
                seeds: settings.seeds.clone(),
                t0_w0_grid: settings.t0_w0_grid.clone(),
                t1_w0_grid: settings.t1_w0_grid.clone(),
                train: settings.train_config(method)?,
                data: settings.data.clone(),
                cells: settings.cells,
            };
            let report = run_sensitivity_on(&plan, &plan.data.load()?)?;
            write(
                &common.out,
                vec![
                    ("sensitivity.csv", report.to_csv()),
                    ("sensitivity_configs.csv", report.configs_csv()),
                ],
            )?;
            finish(
                report
                    .rows
                    .iter()
                    .filter(|r| matches!(r.status, PointStatus::Failed(_)))
                    .count(),
            )
        }
    }
}

fn metrics_csv(report: &nar_core::metrics::MetricsReport) -> String {
    let mut out = String::from("class,ap\n");
    for (c, ap) in report.per_class_ap.iter().enumerate() {
        out.push_str(&format!(
            "{c},{}\n",
            ap.map_or(String::new(), |v| v.to_string())
        ));
    }
    out.push_str(&format!("macro,{}\n", report.map_macro));
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<FailedRuns>().is_some() {
        return 2;
    }
    match err.downcast_ref::<nar_core::Error>() {
        Some(nar_core::Error::Training { .. } | nar_core::Error::NonFinite(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
