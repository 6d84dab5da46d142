//! Flat `key=value` configuration shared by every harness command.
//!
//! Lines are `namespace.key = value`; `#` starts a comment and blank lines are
//! ignored. Lists are comma separated. Namespaces:
//!
//! * `train.*`: `epochs`, `batch_size`, `lr`, `warmup_steps`, `weight_decay`,
//!   `hidden`, `seed`, `method`, `handler_warmup_epochs`, `parallel`
//! * `thresholds.*`: `t1_flip`, `t1_w0`, `t0_w0`, `t0_flip`
//! * `loss.*`: `lambda`, `target_mode`, `ema_momentum`, `eps`
//! * `noise.*`: `kind`, `rate`, `seed`
//! * `plan.*`: experiment grid (`methods`, `kinds`, `rates`, `seeds`,
//!   `t0_w0_grid`, `t1_w0_grid`, `parallel`), the dataset (`data_dir` or the
//!   synthetic `samples`, `classes`, `features`, `class_prior`,
//!   `prototype_scale`, `feature_noise`, `data_seed`) and per-method training
//!   overrides `plan.override.<method>.<train|loss|thresholds key>`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::SyntheticSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::ElrTargetMode;
use crate::noise::NoiseKind;
use crate::trainer::{Method, TrainConfig};

use super::DataSource;

/// Fully resolved settings. Start from [`Settings::default`] and apply keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub data: DataSource,
    pub train: TrainConfig,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub noise_seed: u64,
    pub methods: Vec<Method>,
    pub kinds: Vec<NoiseKind>,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub t0_w0_grid: Vec<f64>,
    pub t1_w0_grid: Vec<f64>,
    /// Execution policy across experiment cells.
    pub cells: Exec,
    /// `(method, key, value)` applied on top of `train` for that method only.
    pub overrides: Vec<(Method, String, String)>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            train: TrainConfig::default(),
            noise_kind: NoiseKind::Subtractive,
            noise_rate: 0.4,
            noise_seed: 0,
            methods: Method::ALL.to_vec(),
            kinds: vec![
                NoiseKind::Additive,
                NoiseKind::Subtractive,
                NoiseKind::Mixed,
            ],
            rates: vec![0.1, 0.2, 0.3, 0.4, 0.6],
            seeds: vec![0, 1, 2],
            t0_w0_grid: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            t1_w0_grid: vec![0.5],
            cells: Exec::default(),
            overrides: Vec::new(),
        }
    }
}

impl Settings {
    /// Parses a configuration file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut settings = Settings::default();
        settings.apply_text(&text, path)?;
        Ok(settings)
    }

    /// Applies every `key=value` line of `text`. `origin` only labels errors.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(message) => parse_err(message),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies a single `key=value` assignment (also the form of `--set`).
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("plan.override.") {
            let (method, inner) = rest
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{key}` lacks a setting")))?;
            let method: Method = method.parse()?;
            // validate now so a typo fails at load time rather than mid-sweep
            if !apply_train_key(&mut self.train.clone(), inner, value)? {
                return Err(Error::Config(format!(
                    "override key `{key}` must name a train, thresholds or loss setting"
                )));
            }
            self.overrides
                .push((method, inner.to_string(), value.to_string()));
            return Ok(());
        }
        if apply_train_key(&mut self.train, key, value)? {
            return Ok(());
        }
        match key {
            "noise.kind" => self.noise_kind = value.parse()?,
            "noise.rate" => self.noise_rate = parse(key, value)?,
            "noise.seed" => self.noise_seed = parse(key, value)?,
            "plan.methods" => self.methods = parse_list(key, value)?,
            "plan.kinds" => self.kinds = parse_list(key, value)?,
            "plan.rates" => self.rates = parse_list(key, value)?,
            "plan.seeds" => self.seeds = parse_list(key, value)?,
            "plan.t0_w0_grid" => self.t0_w0_grid = parse_list(key, value)?,
            "plan.t1_w0_grid" => self.t1_w0_grid = parse_list(key, value)?,
            "plan.parallel" => self.cells = parse_exec(key, value)?,
            "plan.data_dir" => self.data = DataSource::Files(PathBuf::from(value)),
            _ => return self.set_synthetic(key, value),
        }
        Ok(())
    }

    fn set_synthetic(&mut self, key: &str, value: &str) -> Result<()> {
        let DataSource::Synthetic(spec) = &mut self.data else {
            return Err(Error::Config(format!(
                "`{key}` configures synthetic data but plan.data_dir is set"
            )));
        };
        match key {
            "plan.samples" => spec.samples = parse(key, value)?,
            "plan.classes" => {
                spec.classes = parse(key, value)?;
                let prior = spec.class_priors.first().copied().unwrap_or(0.2);
                spec.class_priors = vec![prior; spec.classes];
            }
            "plan.features" => spec.features = parse(key, value)?,
            "plan.class_prior" => {
                let priors: Vec<f64> = parse_list(key, value)?;
                spec.class_priors = if priors.len() == 1 {
                    vec![priors[0]; spec.classes]
                } else {
                    priors
                };
            }
            "plan.prototype_scale" => spec.prototype_scale = parse(key, value)?,
            "plan.feature_noise" => spec.feature_noise = parse(key, value)?,
            "plan.data_seed" => spec.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Training configuration for `method`, with its overrides applied.
    pub fn train_config(&self, method: Method) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            method,
            ..self.train.clone()
        };
        for (m, key, value) in &self.overrides {
            if *m == method {
                apply_train_key(&mut cfg, key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
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
        if let Some(r) = self
            .rates
            .iter()
            .chain([&self.noise_rate])
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::Config(format!("noise rate {r} outside [0, 1]")));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        for &m in &self.methods {
            self.train_config(m)?;
        }
        Ok(())
    }
}

/// Applies a `train.*`, `thresholds.*` or `loss.*` key. Returns `Ok(false)`
/// when the key belongs to another namespace.
pub fn apply_train_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "train.epochs" => cfg.epochs = parse(key, value)?,
        "train.batch_size" => cfg.batch_size = parse(key, value)?,
        "train.lr" => cfg.base_lr = parse(key, value)?,
        "train.warmup_steps" => cfg.warmup_steps = parse(key, value)?,
        "train.weight_decay" => cfg.weight_decay = parse(key, value)?,
        "train.hidden" => cfg.hidden = parse(key, value)?,
        "train.seed" => cfg.seed = parse(key, value)?,
        "train.method" => cfg.method = value.parse()?,
        "train.handler_warmup_epochs" => cfg.handler_warmup_epochs = parse(key, value)?,
        "train.parallel" => cfg.exec = parse_exec(key, value)?,
        "thresholds.t1_flip" => cfg.thresholds.t1_flip = parse(key, value)?,
        "thresholds.t1_w0" => cfg.thresholds.t1_w0 = parse(key, value)?,
        "thresholds.t0_w0" => cfg.thresholds.t0_w0 = parse(key, value)?,
        "thresholds.t0_flip" => cfg.thresholds.t0_flip = parse(key, value)?,
        "loss.lambda" => cfg.loss.lambda = parse(key, value)?,
        "loss.target_mode" => cfg.loss.target_mode = value.parse::<ElrTargetMode>()?,
        "loss.ema_momentum" => cfg.loss.ema_momentum = parse(key, value)?,
        "loss.eps" => cfg.loss.eps = parse(key, value)?,
        _ if ["train.", "thresholds.", "loss."]
            .iter()
            .any(|p| key.starts_with(p)) =>
        {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Every training setting as `(key, value)` pairs in a fixed order, using the
/// same keys the parser accepts.
pub fn train_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    let t = &cfg.thresholds;
    vec![
        ("train.method", cfg.method.to_string()),
        ("train.epochs", cfg.epochs.to_string()),
        ("train.batch_size", cfg.batch_size.to_string()),
        ("train.lr", cfg.base_lr.to_string()),
        ("train.warmup_steps", cfg.warmup_steps.to_string()),
        ("train.weight_decay", cfg.weight_decay.to_string()),
        ("train.hidden", cfg.hidden.to_string()),
        ("train.seed", cfg.seed.to_string()),
        (
            "train.handler_warmup_epochs",
            cfg.handler_warmup_epochs.to_string(),
        ),
        ("thresholds.t1_flip", t.t1_flip.to_string()),
        ("thresholds.t1_w0", t.t1_w0.to_string()),
        ("thresholds.t0_w0", t.t0_w0.to_string()),
        ("thresholds.t0_flip", t.t0_flip.to_string()),
        ("loss.lambda", cfg.loss.lambda.to_string()),
        ("loss.target_mode", cfg.loss.target_mode.name().to_string()),
        ("loss.ema_momentum", cfg.loss.ema_momentum.to_string()),
        ("loss.eps", cfg.loss.eps.to_string()),
    ]
}

/// Dataset settings as `(key, value)` pairs.
pub fn data_entries(data: &DataSource) -> Vec<(&'static str, String)> {
    match data {
        DataSource::Files(dir) => vec![("plan.data_dir", dir.display().to_string())],
        DataSource::Synthetic(s) => vec![
            ("plan.samples", s.samples.to_string()),
            ("plan.classes", s.classes.to_string()),
            ("plan.features", s.features.to_string()),
            ("plan.class_prior", join(&s.class_priors)),
            ("plan.prototype_scale", s.prototype_scale.to_string()),
            ("plan.feature_noise", s.feature_noise.to_string()),
            ("plan.data_seed", s.seed.to_string()),
        ],
    }
}

pub(crate) fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse list item `{s}`")))
        })
        .collect()
}

fn parse_exec(key: &str, value: &str) -> Result<Exec> {
    Ok(if parse::<bool>(key, value)? {
        Exec::Parallel
    } else {
        Exec::Sequential
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(text: &str) -> Result<Settings> {
        let mut s = Settings::default();
        s.apply_text(text, Path::new("test.cfg"))?;
        Ok(s)
    }

    #[test]
    fn parses_every_namespace() {
        let s = apply(
            "# comment\n\
             train.epochs = 7\n\
             train.lr=0.01   # trailing\n\
             thresholds.t0_w0 = 0.4\n\
             loss.lambda = 0.5\n\
             loss.target_mode = raw_label\n\
             noise.kind = mixed\n\
             plan.rates = 0.1, 0.3\n\
             plan.methods = bce,nar_with_elr\n\
             plan.samples = 500\n",
        )
        .unwrap();
        assert_eq!(s.train.epochs, 7);
        assert_eq!(s.train.base_lr, 0.01);
        assert_eq!(s.train.thresholds.t0_w0, 0.4);
        assert_eq!(s.train.loss.lambda, 0.5);
        assert_eq!(s.train.loss.target_mode, ElrTargetMode::RawLabel);
        assert_eq!(s.noise_kind, NoiseKind::Mixed);
        assert_eq!(s.rates, vec![0.1, 0.3]);
        assert_eq!(s.methods, vec![Method::Bce, Method::NarWithElr]);
        let DataSource::Synthetic(spec) = &s.data else {
            panic!()
        };
        assert_eq!(spec.samples, 500);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = apply("train.epochs = 3\n\ntrain.epochs = many\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("train.epochs"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            apply("no equals sign").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(apply("train.nonsense = 1").unwrap_err().is_config());
        assert!(apply("whatever.key = 1").unwrap_err().is_config());
    }

    #[test]
    fn per_method_overrides_apply_only_to_their_method() {
        let s = apply("train.epochs = 4\nplan.override.nar_with_elr.train.epochs = 9\n").unwrap();
        assert_eq!(s.train_config(Method::Bce).unwrap().epochs, 4);
        assert_eq!(s.train_config(Method::NarWithElr).unwrap().epochs, 9);
        assert!(apply("plan.override.nope.train.epochs = 1").is_err());
        assert!(apply("plan.override.bce.train.epochs = x").is_err());
    }

    #[test]
    fn override_keys_outside_training_namespaces_are_rejected() {
        let mut s = Settings::default();
        assert!(s.set("plan.override.elr.lr", "1e-2").is_err());
        assert!(s.set("plan.override.elr.noise.rate", "0.1").is_err());
        assert!(s.set("plan.override.elr.train.lr", "1e-2").is_ok());
    }

    #[test]
    fn changing_class_count_resizes_priors() {
        let s = apply("plan.class_prior = 0.3\nplan.classes = 4\n").unwrap();
        let DataSource::Synthetic(spec) = &s.data else {
            panic!()
        };
        assert_eq!(spec.class_priors, vec![0.3; 4]);
    }

    #[test]
    fn validation_rejects_empty_grids_and_bad_rates() {
        assert!(apply("plan.seeds = ").unwrap().validate().is_err());
        assert!(apply("plan.rates = 0.1, 1.5").unwrap().validate().is_err());
        assert!(apply("thresholds.t1_flip = 0.9")
            .unwrap()
            .validate()
            .is_err());
        assert!(Settings::default().validate().is_ok());
    }

    #[test]
    fn train_entries_round_trip_through_the_parser() {
        let mut cfg = TrainConfig::default();
        cfg.loss.lambda = 0.25;
        cfg.thresholds.t0_w0 = 0.35;
        cfg.method = Method::Elr;
        let mut back = TrainConfig::default();
        for (k, v) in train_entries(&cfg) {
            assert!(apply_train_key(&mut back, k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }
}
