//! One-hidden-layer ReLU network with per-class sigmoid heads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{matmul_with, sigmoid, Matrix, RngState};

/// Weights `w1` (D×H), `b1` (1×H), `w2` (H×C), `b2` (1×C). Also used as the
/// container for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

const TENSOR_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl ModelParams {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        ModelParams {
            w1: Matrix::zeros(inputs, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, classes),
            b2: Matrix::zeros(1, classes),
        }
    }

    pub fn zeros_like(other: &ModelParams) -> Self {
        ModelParams::zeros(other.inputs(), other.hidden(), other.classes())
    }

    /// Glorot-uniform weights in ±√(6 / (fan_in + fan_out)), zero biases.
    pub fn init(inputs: usize, hidden: usize, classes: usize, rng: &mut RngState) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
        };
        let w1 = glorot(inputs, hidden);
        let w2 = glorot(hidden, classes);
        ModelParams {
            w1,
            b1: Matrix::zeros(1, hidden),
            w2,
            b2: Matrix::zeros(1, classes),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn tensors(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Matrix,
    pub pre_activation: Matrix,
    pub hidden: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

pub fn forward(params: &ModelParams, x: &Matrix) -> Result<ForwardCache> {
    forward_with(params, x, Exec::default())
}

pub fn forward_with(params: &ModelParams, x: &Matrix, exec: Exec) -> Result<ForwardCache> {
    if x.cols() != params.inputs() {
        return Err(Error::shape("forward", x.shape(), params.w1.shape()));
    }
    let pre_activation = matmul_with(x, &params.w1, exec)?.add_row_vector(params.b1.data())?;
    let hidden = pre_activation.map(|v| v.max(0.0));
    let logits = matmul_with(&hidden, &params.w2, exec)?.add_row_vector(params.b2.data())?;
    let probs = sigmoid(&logits);
    Ok(ForwardCache {
        inputs: x.clone(),
        pre_activation,
        hidden,
        logits,
        probs,
    })
}

pub fn predict(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    Ok(forward(params, x)?.probs)
}

/// Parameter gradients from the loss gradient with respect to logits.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Matrix,
) -> Result<ModelParams> {
    backward_with(params, cache, dlogits, Exec::default())
}

pub fn backward_with(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Matrix,
    exec: Exec,
) -> Result<ModelParams> {
    if dlogits.shape() != cache.logits.shape() {
        return Err(Error::shape(
            "backward",
            dlogits.shape(),
            cache.logits.shape(),
        ));
    }
    let w2 = matmul_with(&cache.hidden.transpose(), dlogits, exec)?;
    let b2 = Matrix::new(1, dlogits.cols(), dlogits.column_sums())?;
    let dhidden = matmul_with(dlogits, &params.w2.transpose(), exec)?;
    let mut dpre = dhidden;
    for (g, &a) in dpre.data_mut().iter_mut().zip(cache.pre_activation.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    let w1 = matmul_with(&cache.inputs.transpose(), &dpre, exec)?;
    let b1 = Matrix::new(1, dpre.cols(), dpre.column_sums())?;
    Ok(ModelParams { w1, b1, w2, b2 })
}

/// Text checkpoint: a `nar-checkpoint 1` line, then for each tensor a
/// `<name> <rows> <cols>` header followed by one line of space-separated
/// values per row, in shortest round-trip decimal form.
pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let mut out = String::from("nar-checkpoint 1\n");
    for (name, t) in TENSOR_NAMES.iter().zip(params.tensors()) {
        writeln!(out, "{name} {} {}", t.rows(), t.cols()).expect("write to String");
        for i in 0..t.rows() {
            let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

fn parse_checkpoint(text: &str) -> std::result::Result<ModelParams, (u64, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    match lines.next() {
        Some((_, "nar-checkpoint 1")) => {}
        _ => return Err((1, "missing `nar-checkpoint 1` header".into())),
    }
    let mut tensors = Vec::with_capacity(4);
    for name in TENSOR_NAMES {
        let (ln, header) = lines
            .next()
            .ok_or((0, format!("missing tensor `{name}`")))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (rows, cols) = match parts.as_slice() {
            [n, r, c] if *n == name => (
                r.parse::<usize>().map_err(|e| (ln, e.to_string()))?,
                c.parse::<usize>().map_err(|e| (ln, e.to_string()))?,
            ),
            _ => return Err((ln, format!("expected `{name} <rows> <cols>`"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, line) = lines
                .next()
                .ok_or((0, format!("truncated tensor `{name}`")))?;
            let before = data.len();
            for field in line.split_whitespace() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| (ln, format!("malformed value `{field}`")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err((ln, format!("expected {cols} values")));
            }
        }
        tensors.push(Matrix::new(rows, cols, data).map_err(|e| (ln, e.to_string()))?);
    }
    let [w1, b1, w2, b2]: [Matrix; 4] = tensors.try_into().expect("four tensors");
    if b1.shape() != (1, w1.cols()) || w2.rows() != w1.cols() || b2.shape() != (1, w2.cols()) {
        return Err((0, "inconsistent tensor shapes".into()));
    }
    Ok(ModelParams { w1, b1, w2, b2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(seed: u64, d: usize, h: usize, c: usize) -> ModelParams {
        let mut rng = RngState::new(seed);
        let mut p = ModelParams::init(d, h, c, &mut rng);
        p.b1 = Matrix::from_fn(1, h, |_, _| rng.random_range(-0.5..0.5));
        p.b2 = Matrix::from_fn(1, c, |_, _| rng.random_range(-0.5..0.5));
        p
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let p = ModelParams::zeros(3, 4, 2);
        let x = Matrix::filled(5, 3, 1.7);
        assert!(predict(&p, &x).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let p = random_params(1, 3, 5, 2);
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.3);
        assert_eq!(predict(&p, &x).unwrap(), predict(&p, &x).unwrap());
        assert!(forward(&p, &Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let p = random_params(2, 3, 4, 2);
        let x = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let probs = predict(&p, &x).unwrap();
        for i in 0..2 {
            let mut h = [0.0; 4];
            for (k, hk) in h.iter_mut().enumerate() {
                let mut s = 0.0;
                for d in 0..3 {
                    s += x.get(i, d) * p.w1.get(d, k);
                }
                *hk = (s + p.b1.get(0, k)).max(0.0);
            }
            for c in 0..2 {
                let mut z = 0.0;
                for (k, hk) in h.iter().enumerate() {
                    z += hk * p.w2.get(k, c);
                }
                z += p.b2.get(0, c);
                let expected = 1.0 / (1.0 + (-z).exp());
                assert!((probs.get(i, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = random_params(3, 3, 4, 2);
        let cache = forward(&p, &Matrix::filled(2, 3, 0.3)).unwrap();
        let g = backward(&p, &cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    /// Loss `Σ v ⊙ logits` has dL/dlogits = v; compare against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let p = random_params(4, 3, 5, 2);
        let x = Matrix::new(1, 3, vec![0.7, -0.2, 1.1]).unwrap();
        let v = Matrix::new(1, 2, vec![0.8, -1.3]).unwrap();
        let loss = |q: &ModelParams| -> f64 {
            let z = forward(q, &x).unwrap().logits;
            z.data().iter().zip(v.data()).map(|(a, b)| a * b).sum()
        };
        let grads = backward(&p, &forward(&p, &x).unwrap(), &v).unwrap();
        let h = 1e-5;
        for t in 0..4 {
            for k in 0..p.tensors()[t].data().len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t].data_mut()[k] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t].data_mut()[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = grads.tensors()[t].data()[k];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6),
                    "tensor {t} entry {k}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let p = random_params(5, 3, 4, 2);
        let x = Matrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64).sin());
        let v = Matrix::from_fn(3, 2, |i, j| ((i + 2 * j) as f64).cos());
        let batch = backward(&p, &forward(&p, &x).unwrap(), &v.map(|g| g / 3.0)).unwrap();
        let mut mean = ModelParams::zeros_like(&p);
        for i in 0..3 {
            let xi = x.select_rows(&[i]);
            let vi = v.select_rows(&[i]);
            let gi = backward(&p, &forward(&p, &xi).unwrap(), &vi).unwrap();
            for (m, g) in mean.tensors_mut().into_iter().zip(gi.tensors()) {
                for (a, b) in m.data_mut().iter_mut().zip(g.data()) {
                    *a += b / 3.0;
                }
            }
        }
        for (a, b) in batch.tensors().iter().zip(mean.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = random_params(6, 4, 3, 2);
        let text = checkpoint_to_string(&p);
        assert_eq!(parse_checkpoint(&text).unwrap(), p);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&p, f.path()).unwrap();
        assert_eq!(load_checkpoint(f.path()).unwrap(), p);
        assert!(parse_checkpoint("nar-checkpoint 1\nw1 1 1\nx\n").is_err());
        assert!(parse_checkpoint("hello").is_err());
    }
}
