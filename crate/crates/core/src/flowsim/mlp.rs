use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowField, Result};
use crate::rng;

/// Small tanh network `[d + 1, h, h, d]` taking `(x, t)` and returning a
/// velocity. Parameters live in one flat buffer: for each layer the
/// row-major `out x in` weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpJson {
    widths: Vec<usize>,
    activation: String,
    /// `weights[l][o][i]`
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

/// Conditional flow-matching regression batch: inputs `x_t`, times `t`,
/// targets `x1 - x0`.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub inputs: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
}

impl FlowBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Draws `t ~ U[0, 1)` and `x0 ~ N(0, I)` for each `x1` in order.
    pub fn sample<R: Rng + ?Sized>(x1s: &[&[f64]], rng: &mut R) -> Self {
        let mut batch = FlowBatch {
            inputs: Vec::with_capacity(x1s.len()),
            times: Vec::with_capacity(x1s.len()),
            targets: Vec::with_capacity(x1s.len()),
        };
        for x1 in x1s {
            let t: f64 = rng.gen();
            let x0: Vec<f64> = x1.iter().map(|_| rng.sample(StandardNormal)).collect();
            batch
                .inputs
                .push(x0.iter().zip(*x1).map(|(a, b)| (1.0 - t) * a + t * b).collect());
            batch.targets.push(x0.iter().zip(*x1).map(|(a, b)| b - a).collect());
            batch.times.push(t);
        }
        batch
    }
}

impl MlpField {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init for weights and
    /// biases, drawn layer by layer from `rng::seeded(seed)`.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(FlowError::InvalidArg("dim and hidden must be >= 1".into()));
        }
        let widths = vec![dim + 1, hidden, hidden, dim];
        let mut r = rng::seeded(seed);
        let mut params = Vec::with_capacity(param_count(&widths));
        for l in 0..widths.len() - 1 {
            let bound = 1.0 / (widths[l] as f64).sqrt();
            for _ in 0..(widths[l] + 1) * widths[l + 1] {
                params.push(r.gen_range(-bound..=bound));
            }
        }
        Ok(MlpField { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| (self.widths[k] + 1) * self.widths[k + 1]).sum()
    }

    /// Activations of every layer; the last entry is the output.
    fn forward_all(&self, x: &[f64], t: f64) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.widths.len());
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(t);
        acts.push(input);
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let prev = &acts[l];
            let last = l + 1 == self.n_layers();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(prev).map(|(a, c)| a * c).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Mean over the batch of `|v(x_t, t) - target|^2`.
    pub fn loss(&self, batch: &FlowBatch) -> f64 {
        let mut total = 0.0;
        for ((x, &t), y) in batch.inputs.iter().zip(&batch.times).zip(&batch.targets) {
            let out = self.velocity(x, t);
            total += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        total / batch.len() as f64
    }

    /// Loss and its gradient with respect to the flat parameter buffer.
    pub fn loss_and_grad(&self, batch: &FlowBatch) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ((x, &t), y) in batch.inputs.iter().zip(&batch.times).zip(&batch.targets) {
            let acts = self.forward_all(x, t);
            let out = acts.last().unwrap();
            let mut delta: Vec<f64> = out
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    total += (a - b) * (a - b);
                    2.0 * scale * (a - b)
                })
                .collect();
            for l in (0..self.n_layers()).rev() {
                let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
                let off = self.layer_offset(l);
                let prev = &acts[l];
                for o in 0..n_out {
                    let row = off + o * n_in;
                    for i in 0..n_in {
                        grad[row + i] += delta[o] * prev[i];
                    }
                    grad[off + n_in * n_out + o] += delta[o];
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                            back * (1.0 - prev[i] * prev[i])
                        })
                        .collect();
                }
            }
        }
        (total * scale, grad)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            weights.push(
                (0..n_out)
                    .map(|o| self.params[off + o * n_in..off + (o + 1) * n_in].to_vec())
                    .collect(),
            );
            biases.push(self.params[off + n_in * n_out..off + (n_in + 1) * n_out].to_vec());
        }
        serde_json::to_value(MlpJson {
            widths: self.widths.clone(),
            activation: "tanh".into(),
            weights,
            biases,
        })
        .expect("plain numbers serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: MlpJson = serde_json::from_value(value.clone())
            .map_err(|e| FlowError::BadField(e.to_string()))?;
        if raw.activation != "tanh" {
            return Err(FlowError::BadField(format!("unsupported activation {:?}", raw.activation)));
        }
        let w = &raw.widths;
        if w.len() != 4 || w[0] != w[3] + 1 || w[1] != w[2] || w.contains(&0) {
            return Err(FlowError::BadField(format!("widths {w:?} are not [d+1, h, h, d]")));
        }
        if raw.weights.len() != 3 || raw.biases.len() != 3 {
            return Err(FlowError::BadField("expected 3 layers".into()));
        }
        let mut params = Vec::with_capacity(param_count(w));
        for l in 0..3 {
            let (n_in, n_out) = (w[l], w[l + 1]);
            if raw.weights[l].len() != n_out || raw.weights[l].iter().any(|r| r.len() != n_in) {
                return Err(FlowError::BadField(format!("layer {l}: weight shape mismatch")));
            }
            if raw.biases[l].len() != n_out {
                return Err(FlowError::BadField(format!("layer {l}: bias shape mismatch")));
            }
            for row in &raw.weights[l] {
                params.extend_from_slice(row);
            }
            params.extend_from_slice(&raw.biases[l]);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::BadField("non-finite parameter".into()));
        }
        Ok(MlpField {
            widths: raw.widths,
            params,
        })
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl FlowField for MlpField {
    fn dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward_all(x, t).pop().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch: 64,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub field: MlpField,
    /// Mean batch loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Flow-matching regression with heavy-ball momentum. Initialization uses
/// `rng::seeded(seed)`; shuffles and per-example draws use the stream
/// `rng::sub_seed(seed, 1)`.
pub fn train_mlp(points: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainedMlp> {
    if points.len() < 2 {
        return Err(FlowError::InvalidArg("need at least 2 points".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(FlowError::InvalidArg("points have differing dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FlowError::InvalidArg("non-finite point".into()));
    }
    if cfg.batch == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(FlowError::InvalidArg("batch >= 1, lr > 0, momentum in [0, 1) required".into()));
    }
    let mut field = MlpField::init(dim, cfg.hidden, cfg.seed)?;
    let mut velocity = vec![0.0; field.params.len()];
    let mut r = rng::seeded(rng::sub_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let x1s: Vec<&[f64]> = chunk.iter().map(|&i| points[i].as_slice()).collect();
            let batch = FlowBatch::sample(&x1s, &mut r);
            let (loss, grad) = field.loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(FlowError::DivergedTraining(epoch));
            }
            for ((p, v), g) in field.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
            epoch_loss += loss;
            n_batches += 1;
        }
        let mean = epoch_loss / n_batches as f64;
        if !mean.is_finite() || field.params.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::DivergedTraining(epoch));
        }
        history.push(mean);
    }
    Ok(TrainedMlp {
        field,
        loss_history: history,
    })
}

/// Deterministic two-moons point cloud (upper arc centered at the origin,
/// lower arc shifted by `(1, -0.5)`), with Gaussian jitter `noise`.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::PI * r.gen::<f64>();
            let (x, y) = if i % 2 == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let jx: f64 = r.sample(StandardNormal);
            let jy: f64 = r.sample(StandardNormal);
            vec![x + noise * jx, y + noise * jy]
        })
        .collect()
}
