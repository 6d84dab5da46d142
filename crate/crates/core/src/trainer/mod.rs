//! Training loop for the four methods (BCE, ELR, NAR with and without ELR).
//!
//! RNG streams, all children of the run seed: `init` for the weights and
//! `shuffle` → epoch index for the per-epoch batch order.

pub mod model;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::dataset::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::handler::{handle_with, HandlingResult, StateCounts, ThresholdSet};
use crate::losses::{
    bce_with_grad, nar_loss, update_elr_targets, ElrTargetMode, ElrTargetState, LossConfig,
};
use crate::metrics::map_macro_with;
use crate::numerics::RngState;

pub use model::{
    backward, checkpoint_to_string, forward, load_checkpoint, predict, save_checkpoint, ModelParams,
};
pub use optim::{adamw_step, AdamWConfig, AdamWState, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Bce,
    Elr,
    NarNoElr,
    NarWithElr,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Bce,
        Method::Elr,
        Method::NarNoElr,
        Method::NarWithElr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bce => "bce",
            Method::Elr => "elr",
            Method::NarNoElr => "nar_no_elr",
            Method::NarWithElr => "nar_with_elr",
        }
    }

    pub fn uses_elr(self) -> bool {
        matches!(self, Method::Elr | Method::NarWithElr)
    }

    pub fn uses_handler(self) -> bool {
        matches!(self, Method::NarNoElr | Method::NarWithElr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
    pub method: Method,
    pub thresholds: ThresholdSet,
    pub loss: LossConfig,
    /// Epochs during which the label handler is bypassed.
    pub handler_warmup_epochs: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            base_lr: 1e-3,
            warmup_steps: 100,
            weight_decay: 1e-2,
            hidden: 64,
            seed: 0,
            method: Method::Bce,
            thresholds: ThresholdSet::default(),
            loss: LossConfig::default(),
            handler_warmup_epochs: 5,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.warmup_steps == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "epochs, batch size, warmup steps and hidden width must be positive".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.base_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        self.thresholds.validate()?;
        self.loss.validate()
    }

    pub fn schedule(&self, train_len: usize) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.epochs * train_len.div_ceil(self.batch_size),
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses.
    pub loss: f64,
    pub val_map: f64,
    pub states: StateCounts,
    pub handler_active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_val_map(&self) -> f64 {
        self.epochs[self.best_epoch].val_map
    }

    /// `epoch,loss,val_map,retain,deactivate,flip,handler_active`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_map,retain,deactivate,flip,handler_active\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch,
                e.loss,
                e.val_map,
                e.states.retain,
                e.states.deactivate,
                e.states.flip,
                u8::from(e.handler_active)
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the best validation mAP.
    pub params: ModelParams,
    pub log: TrainLog,
}

/// How supervision for each batch is derived.
enum Supervision<'a> {
    Plain,
    Dynamic(ThresholdSet),
    Static(&'a HandlingResult),
}

/// Trains on `train` (possibly noisy labels) and selects the epoch with the
/// best mAP on `val` (clean labels).
pub fn train(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let supervision = if config.method.uses_handler() {
        Supervision::Dynamic(config.thresholds)
    } else {
        Supervision::Plain
    };
    run(train, val, config, supervision)
}

/// Trains with a fixed, precomputed handling of the training labels applied
/// for the whole run (the oracle study). ELR is added when the method uses it.
pub fn train_with_static_handling(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    config: &TrainConfig,
    handling: &HandlingResult,
) -> Result<TrainOutcome> {
    if handling.shape() != train.labels().shape() {
        return Err(Error::shape(
            "train_with_static_handling",
            handling.shape(),
            train.labels().shape(),
        ));
    }
    run(train, val, config, Supervision::Static(handling))
}

fn run(
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    config: &TrainConfig,
    supervision: Supervision<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.num_features() != val.num_features() || train.num_classes() != val.num_classes() {
        return Err(Error::shape(
            "train",
            (train.num_features(), train.num_classes()),
            (val.num_features(), val.num_classes()),
        ));
    }
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let (n, c) = train.labels().shape();
    let root = RngState::new(config.seed);
    let mut params = ModelParams::init(
        train.num_features(),
        config.hidden,
        c,
        &mut root.child("init"),
    );
    let mut moments = AdamWState::new(&params);
    let schedule = config.schedule(n);
    let adamw = config.adamw();
    let eps = config.loss.eps;
    let mut targets = ElrTargetState::zeros(n, c);
    let shuffle = root.child("shuffle");
    let exec = config.exec;

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle.child_index(epoch as u64));
        let handler_active = match supervision {
            Supervision::Dynamic(_) => epoch >= config.handler_warmup_epochs,
            Supervision::Static(_) => true,
            Supervision::Plain => false,
        };
        let mut states = StateCounts::default();
        let mut loss_sum = 0.0;
        let mut batches = 0;

        for (batch_idx, rows) in order.chunks(config.batch_size).enumerate() {
            let x = train.features().select_rows(rows);
            let y = train.labels().select_rows(rows);
            let cache = model::forward_with(&params, &x, exec).map_err(|e| match e {
                Error::NonFinite(op) => Error::Training {
                    epoch,
                    batch: batch_idx,
                    message: format!("non-finite activations in {op}"),
                },
                other => other,
            })?;
            let probs = &cache.probs;

            let out = match (&supervision, config.method) {
                (Supervision::Plain, Method::Bce) => {
                    states.retain += y.entries().len();
                    bce_with_grad(&y, probs, eps)?
                }
                _ => {
                    let handling = match &supervision {
                        Supervision::Dynamic(t) if handler_active => {
                            handle_with(&y, probs, t, exec)?
                        }
                        Supervision::Static(h) => h.select_rows(rows),
                        _ => HandlingResult::all_retain(&y),
                    };
                    states.add(&handling.counts());
                    let elr_targets =
                        config
                            .method
                            .uses_elr()
                            .then(|| match config.loss.target_mode {
                                ElrTargetMode::Ema => targets.select_rows(rows),
                                ElrTargetMode::RawLabel => y.to_matrix(),
                            });
                    nar_loss(
                        &handling,
                        probs,
                        elr_targets.as_ref(),
                        config.loss.lambda,
                        eps,
                    )?
                }
            };
            if !out.loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_idx,
                    message: format!("non-finite loss {}", out.loss),
                });
            }
            let grads = model::backward_with(&params, &cache, &out.grad, exec)?;
            let lr = schedule.lr_at(moments.step + 1);
            adamw_step(&mut params, &grads, &mut moments, lr, &adamw);
            if !params.all_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_idx,
                    message: "non-finite parameters after update".into(),
                });
            }
            if config.method.uses_elr() && config.loss.target_mode == ElrTargetMode::Ema {
                update_elr_targets(&mut targets, probs, rows, config.loss.ema_momentum)?;
            }
            loss_sum += out.loss;
            batches += 1;
            step_losses.push(out.loss);
        }

        let val_probs = model::forward_with(&params, val.features(), exec)?.probs;
        let val_map = map_macro_with(&val_probs, val.labels(), exec)?.map_macro;
        if best.as_ref().is_none_or(|(m, _, _)| val_map > *m) {
            best = Some((val_map, epoch, params.clone()));
        }
        epochs.push(EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            val_map,
            states,
            handler_active,
        });
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        log: TrainLog {
            epochs,
            step_losses,
            best_epoch,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::metrics::map_macro;

    fn small_data(noise: f64) -> crate::dataset::SyntheticData {
        generate_synthetic(&SyntheticSpec {
            samples: 400,
            classes: 4,
            features: 8,
            class_priors: vec![0.3; 4],
            feature_noise: noise,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn quick(method: Method) -> TrainConfig {
        TrainConfig {
            epochs: 6,
            batch_size: 32,
            warmup_steps: 10,
            hidden: 16,
            method,
            handler_warmup_epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_data_is_fit() {
        let data = small_data(0.0);
        let cfg = TrainConfig {
            epochs: 60,
            base_lr: 1e-2,
            ..quick(Method::Bce)
        };
        // selecting on the training split itself, so the snapshot is the
        // best fit rather than an early one that saturates a small val split
        let out = train(&data.train, &data.train, &cfg).unwrap();
        let p = predict(&out.params, data.train.features()).unwrap();
        let m = map_macro(&p, data.train.labels()).unwrap().map_macro;
        assert!(m >= 0.999, "train mAP {m}");
    }

    #[test]
    fn runs_are_bit_identical() {
        let data = small_data(0.5);
        for method in Method::ALL {
            let a = train(&data.train, &data.val, &quick(method)).unwrap();
            let b = train(&data.train, &data.val, &quick(method)).unwrap();
            assert_eq!(a, b, "{method}");
        }
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let data = small_data(0.5);
        let mut cfg = quick(Method::NarWithElr);
        cfg.exec = Exec::Sequential;
        let a = train(&data.train, &data.val, &cfg).unwrap();
        cfg.exec = Exec::Parallel;
        assert_eq!(a, train(&data.train, &data.val, &cfg).unwrap());
    }

    #[test]
    fn nar_with_degenerate_settings_reduces_to_bce() {
        let data = small_data(0.5);
        let bce = train(&data.train, &data.val, &quick(Method::Bce)).unwrap();
        let mut cfg = quick(Method::NarWithElr);
        cfg.thresholds = ThresholdSet::all_retain();
        cfg.loss.lambda = 0.0;
        cfg.handler_warmup_epochs = 0;
        let nar = train(&data.train, &data.val, &cfg).unwrap();
        assert_eq!(bce.log.step_losses, nar.log.step_losses);
        assert_eq!(bce.params, nar.params);
    }

    #[test]
    fn state_counts_cover_every_entry() {
        let data = small_data(0.5);
        let out = train(&data.train, &data.val, &quick(Method::NarNoElr)).unwrap();
        let total = data.train.len() * data.train.num_classes();
        for e in &out.log.epochs {
            assert_eq!(e.states.total(), total);
            assert_eq!(e.handler_active, e.epoch >= 2);
        }
        let csv = out.log.to_csv();
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn best_epoch_has_the_highest_validation_map() {
        let data = small_data(0.5);
        let out = train(&data.train, &data.val, &quick(Method::Elr)).unwrap();
        let best = out.log.best_val_map();
        assert!(out.log.epochs.iter().all(|e| e.val_map <= best));
        let p = predict(&out.params, data.val.features()).unwrap();
        assert_eq!(map_macro(&p, data.val.labels()).unwrap().map_macro, best);
    }

    #[test]
    fn invalid_config_is_rejected_before_training() {
        let data = small_data(0.5);
        let mut cfg = quick(Method::NarNoElr);
        cfg.thresholds.t0_w0 = 0.95;
        assert!(train(&data.train, &data.val, &cfg).unwrap_err().is_config());
        let cfg = TrainConfig {
            base_lr: 0.0,
            ..quick(Method::Bce)
        };
        assert!(train(&data.train, &data.val, &cfg).is_err());
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let data = small_data(0.5);
        let cfg = TrainConfig {
            base_lr: 1e300,
            warmup_steps: 1,
            weight_decay: 0.0,
            ..quick(Method::Bce)
        };
        match train(&data.train, &data.val, &cfg) {
            Err(Error::Training { epoch, message, .. }) => {
                assert_eq!(epoch, 0);
                assert!(message.contains("non-finite"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
