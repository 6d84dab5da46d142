//! Loss family and analytic gradients with respect to logits.
//!
//! * `bce`    – mean binary cross-entropy over all n·C entries (minimized form).
//! * `elr_ml` – entry-wise early-learning regularizer `(λ/N) Σ log(1 − p·t)`.
//! * `bce_cw` – BCE over corrected labels ỹ, weighted by w, normalized by Σw.
//! * `nar_loss` – `bce_cw + elr_ml` with its gradient.
//!
//! Probabilities are clamped to `[eps, 1 − eps]` before any logarithm. The
//! cross-entropy gradients use the logit form `p − y`; the regularizer
//! gradient is the derivative of the clamped expression, so it vanishes
//! wherever a clamp is active.

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::handler::HandlingResult;
use crate::numerics::{stable_log1m, Matrix, DEFAULT_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElrTargetMode {
    /// Exponential moving average of past predictions.
    Ema,
    /// The observed (noisy) label itself.
    RawLabel,
}

impl ElrTargetMode {
    pub fn name(self) -> &'static str {
        match self {
            ElrTargetMode::Ema => "ema",
            ElrTargetMode::RawLabel => "raw_label",
        }
    }
}

impl std::str::FromStr for ElrTargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ema" => Ok(ElrTargetMode::Ema),
            "raw_label" => Ok(ElrTargetMode::RawLabel),
            _ => Err(Error::Config(format!("unknown ELR target mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub target_mode: ElrTargetMode,
    pub ema_momentum: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 3.0,
            target_mode: ElrTargetMode::Ema,
            ema_momentum: 0.7,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "EMA momentum must lie in [0, 1), got {}",
                self.ema_momentum
            )));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(Error::Config(format!(
                "clamp eps must lie in (0, 1e-3], got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Running ELR targets, one row per training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ElrTargetState {
    targets: Matrix,
}

impl ElrTargetState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ElrTargetState {
            targets: Matrix::zeros(rows, cols),
        }
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        self.targets.select_rows(indices)
    }
}

/// `T ← β·T + (1 − β)·p` on the given rows; `probs` row `k` belongs to
/// training row `rows[k]`.
pub fn update_elr_targets(
    state: &mut ElrTargetState,
    probs: &Matrix,
    rows: &[usize],
    momentum: f64,
) -> Result<()> {
    let (n, c) = state.targets.shape();
    if probs.rows() != rows.len() || probs.cols() != c {
        return Err(Error::shape(
            "update_elr_targets",
            (rows.len(), c),
            probs.shape(),
        ));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            rows: n,
        });
    }
    let data = state.targets.data_mut();
    for (k, &r) in rows.iter().enumerate() {
        for (t, &p) in data[r * c..(r + 1) * c].iter_mut().zip(probs.row(k)) {
            *t = momentum * *t + (1.0 - momentum) * p;
        }
    }
    Ok(())
}

fn clamp_p(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Per-entry cross-entropy `−[y log p + (1 − y) log(1 − p)]` on a clamped p.
fn entry_ce(y: u8, p: f64, eps: f64) -> f64 {
    let p = clamp_p(p, eps);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    /// dL/dlogits, same shape as the probabilities.
    pub grad: Matrix,
}

pub fn bce(labels: &LabelMatrix, probs: &Matrix, eps: f64) -> Result<f64> {
    Ok(bce_with_grad(labels, probs, eps)?.loss)
}

pub fn bce_with_grad(labels: &LabelMatrix, probs: &Matrix, eps: f64) -> Result<LossAndGrad> {
    if labels.shape() != probs.shape() {
        return Err(Error::shape("bce", labels.shape(), probs.shape()));
    }
    let count = labels.entries().len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(labels.entries().len());
    for (&y, &p) in labels.entries().iter().zip(probs.data()) {
        sum += entry_ce(y, p, eps);
        grad.push((p - f64::from(y)) / count);
    }
    Ok(LossAndGrad {
        loss: if count > 0.0 { sum / count } else { 0.0 },
        grad: Matrix::new(probs.rows(), probs.cols(), grad)?,
    })
}

pub fn bce_cw(handling: &HandlingResult, probs: &Matrix, eps: f64) -> Result<f64> {
    Ok(bce_cw_with_grad(handling, probs, eps)?.loss)
}

pub fn bce_cw_with_grad(
    handling: &HandlingResult,
    probs: &Matrix,
    eps: f64,
) -> Result<LossAndGrad> {
    if handling.shape() != probs.shape() {
        return Err(Error::shape("bce_cw", handling.shape(), probs.shape()));
    }
    let weights = handling.weights().entries();
    let corrected = handling.corrected().entries();
    let total_weight: f64 = weights.iter().map(|&w| f64::from(w)).sum();
    if total_weight == 0.0 {
        return Ok(LossAndGrad {
            loss: 0.0,
            grad: Matrix::zeros(probs.rows(), probs.cols()),
        });
    }
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(weights.len());
    for ((&w, &y), &p) in weights.iter().zip(corrected).zip(probs.data()) {
        let w = f64::from(w);
        sum += w * entry_ce(y, p, eps);
        grad.push(w * (p - f64::from(y)) / total_weight);
    }
    Ok(LossAndGrad {
        loss: sum / total_weight,
        grad: Matrix::new(probs.rows(), probs.cols(), grad)?,
    })
}

pub fn elr_ml(targets: &Matrix, probs: &Matrix, lambda: f64, eps: f64) -> Result<f64> {
    Ok(elr_ml_with_grad(targets, probs, lambda, eps)?.loss)
}

pub fn elr_ml_with_grad(
    targets: &Matrix,
    probs: &Matrix,
    lambda: f64,
    eps: f64,
) -> Result<LossAndGrad> {
    if targets.shape() != probs.shape() {
        return Err(Error::shape("elr_ml", targets.shape(), probs.shape()));
    }
    let n = probs.rows();
    if n == 0 {
        return Ok(LossAndGrad {
            loss: 0.0,
            grad: Matrix::zeros(0, probs.cols()),
        });
    }
    let scale = lambda / n as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(probs.data().len());
    for (&t, &p_raw) in targets.data().iter().zip(probs.data()) {
        let p = clamp_p(p_raw, eps);
        let inner = 1.0 - p * t;
        sum += stable_log1m(p * t, eps);
        let clamped = inner < eps || p != p_raw;
        let g = if clamped || t == 0.0 {
            0.0
        } else {
            -scale * t * p * (1.0 - p) / inner
        };
        grad.push(g);
    }
    Ok(LossAndGrad {
        loss: scale * sum,
        grad: Matrix::new(probs.rows(), probs.cols(), grad)?,
    })
}

/// Confidence-weighted BCE plus, when `elr_targets` is given, the ELR-ML
/// regularizer at strength `lambda`.
pub fn nar_loss(
    handling: &HandlingResult,
    probs: &Matrix,
    elr_targets: Option<&Matrix>,
    lambda: f64,
    eps: f64,
) -> Result<LossAndGrad> {
    let mut out = bce_cw_with_grad(handling, probs, eps)?;
    if let Some(targets) = elr_targets {
        let elr = elr_ml_with_grad(targets, probs, lambda, eps)?;
        out.loss += elr.loss;
        for (g, e) in out.grad.data_mut().iter_mut().zip(elr.grad.data()) {
            *g += e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handler::{handle, EntryState, ThresholdSet};
    use crate::numerics::{sigmoid, RngState};
    use rand::Rng;

    const EPS: f64 = DEFAULT_EPS;

    fn random_case(rng: &mut RngState, n: usize, c: usize) -> (LabelMatrix, Matrix) {
        let labels = LabelMatrix::new(
            n,
            c,
            (0..n * c).map(|_| u8::from(rng.random_bool(0.4))).collect(),
        )
        .unwrap();
        let probs = Matrix::from_fn(n, c, |_, _| rng.random_range(0.02..0.98));
        (labels, probs)
    }

    fn scalar_bce(labels: &LabelMatrix, probs: &Matrix) -> f64 {
        let mut s = 0.0;
        for i in 0..labels.rows() {
            for j in 0..labels.cols() {
                let y = f64::from(labels.get(i, j));
                let p = probs.get(i, j);
                s += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
        }
        s / (labels.rows() * labels.cols()) as f64
    }

    #[test]
    fn bce_closed_forms() {
        let y = LabelMatrix::new(1, 1, vec![1]).unwrap();
        let p = Matrix::new(1, 1, vec![0.5]).unwrap();
        assert!((bce(&y, &p, EPS).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let y = LabelMatrix::new(1, 2, vec![1, 0]).unwrap();
        let p = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(bce(&y, &p, EPS).unwrap() <= -(1.0 - EPS).ln() + 1e-15);
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = RngState::new(1);
        let (y, p) = random_case(&mut rng, 4, 3);
        assert!((bce(&y, &p, EPS).unwrap() - scalar_bce(&y, &p)).abs() < 1e-12);
    }

    #[test]
    fn elr_closed_forms() {
        let t = Matrix::new(1, 1, vec![1.0]).unwrap();
        let p = Matrix::new(1, 1, vec![0.8]).unwrap();
        // 3 · ln 0.2, extended precision
        assert!((elr_ml(&t, &p, 3.0, EPS).unwrap() - (-4.828_313_737_302_301)).abs() < 1e-12);

        let mut rng = RngState::new(2);
        let (_, p) = random_case(&mut rng, 3, 3);
        assert_eq!(elr_ml(&Matrix::zeros(3, 3), &p, 3.0, EPS).unwrap(), 0.0);
        let t = Matrix::filled(3, 3, 0.6);
        assert_eq!(elr_ml(&t, &p, 0.0, EPS).unwrap(), 0.0);
    }

    #[test]
    fn elr_is_finite_at_saturation() {
        let t = Matrix::filled(1, 2, 1.0);
        let p = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let out = elr_ml_with_grad(&t, &p, 3.0, EPS).unwrap();
        assert!(out.loss.is_finite() && out.grad.all_finite());
    }

    #[test]
    fn ema_updates() {
        let mut state = ElrTargetState::zeros(2, 1);
        let ones = Matrix::filled(1, 1, 1.0);
        update_elr_targets(&mut state, &ones, &[1], 0.5).unwrap();
        update_elr_targets(&mut state, &ones, &[1], 0.5).unwrap();
        assert_eq!(state.targets().data(), &[0.0, 0.75]);

        let p = Matrix::new(2, 1, vec![0.3, 0.9]).unwrap();
        update_elr_targets(&mut state, &p, &[0, 1], 0.0).unwrap();
        assert_eq!(state.targets(), &p);

        assert!(matches!(
            update_elr_targets(&mut state, &ones, &[2], 0.5),
            Err(Error::IndexOutOfRange { index: 2, rows: 2 })
        ));
    }

    #[test]
    fn bce_cw_reduces_to_bce() {
        let mut rng = RngState::new(3);
        let (y, p) = random_case(&mut rng, 6, 4);
        let h = HandlingResult::all_retain(&y);
        assert_eq!(
            bce_cw_with_grad(&h, &p, EPS).unwrap(),
            bce_with_grad(&y, &p, EPS).unwrap()
        );
    }

    #[test]
    fn fully_deactivated_batch_is_silent() {
        let mut rng = RngState::new(4);
        let (y, p) = random_case(&mut rng, 3, 2);
        let h = HandlingResult::from_states(&y, vec![EntryState::Deactivate; 6]).unwrap();
        let out = nar_loss(&h, &p, Some(&Matrix::filled(3, 2, 0.5)), 0.0, EPS).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_cw_matches_masked_loop() {
        let mut rng = RngState::new(5);
        let (y, p) = random_case(&mut rng, 3, 2);
        let h = handle(&y, &p, &ThresholdSet::new(0.2, 0.6, 0.3, 0.7).unwrap()).unwrap();
        let (mut s, mut wsum) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..2 {
                let w = f64::from(h.weights().get(i, j));
                let yt = f64::from(h.corrected().get(i, j));
                let pp = p.get(i, j);
                s += w * -(yt * pp.ln() + (1.0 - yt) * (1.0 - pp).ln());
                wsum += w;
            }
        }
        assert!(wsum > 0.0 && wsum < 6.0, "case should mix weights");
        assert!((bce_cw(&h, &p, EPS).unwrap() - s / wsum).abs() < 1e-12);
    }

    #[test]
    fn nar_gradient_isolates_bce_when_lambda_is_zero() {
        let mut rng = RngState::new(6);
        let (y, p) = random_case(&mut rng, 5, 3);
        let h = HandlingResult::all_retain(&y);
        let out = nar_loss(&h, &p, Some(&Matrix::filled(5, 3, 0.4)), 0.0, EPS).unwrap();
        for (k, g) in out.grad.data().iter().enumerate() {
            let expected = (p.data()[k] - f64::from(y.entries()[k])) / 15.0;
            assert_eq!(*g, expected);
        }
    }

    /// Central differences of `nar_loss` with respect to logits.
    #[test]
    fn nar_gradient_matches_finite_differences() {
        let h_step = 1e-5;
        let mut rng = RngState::new(7);
        for case in 0..120 {
            let (n, c) = (rng.random_range(1..5), rng.random_range(1..5));
            let labels = LabelMatrix::new(
                n,
                c,
                (0..n * c).map(|_| u8::from(rng.random_bool(0.4))).collect(),
            )
            .unwrap();
            let logits = Matrix::from_fn(n, c, |_, _| rng.random_range(-3.0..3.0));
            let targets = if case % 2 == 0 {
                Matrix::from_fn(n, c, |_, _| rng.random_range(0.0..1.0))
            } else {
                labels.to_matrix()
            };
            let lambda = rng.random_range(0.0..4.0);
            let probs = sigmoid(&logits);
            let thresholds = ThresholdSet::new(0.15, 0.4, 0.45, 0.85).unwrap();
            // handling depends on p but is held fixed, as during training
            let handling = handle(&labels, &probs, &thresholds).unwrap();
            let loss_at = |z: &Matrix| {
                nar_loss(&handling, &sigmoid(z), Some(&targets), lambda, EPS)
                    .unwrap()
                    .loss
            };
            let analytic = nar_loss(&handling, &probs, Some(&targets), lambda, EPS)
                .unwrap()
                .grad;
            for k in 0..n * c {
                let mut plus = logits.clone();
                plus.data_mut()[k] += h_step;
                let mut minus = logits.clone();
                minus.data_mut()[k] -= h_step;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h_step);
                let a = analytic.data()[k];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    err < 1e-4 || (a - fd).abs() < 1e-9,
                    "case {case} entry {k}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig {
            ema_momentum: 1.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            lambda: -1.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            eps: 0.1,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(
            "raw_label".parse::<ElrTargetMode>().unwrap(),
            ElrTargetMode::RawLabel
        );
    }
}
