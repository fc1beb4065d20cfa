//! Dense autoencoder `d -> units -> bottleneck -> units -> d` trained with
//! minibatch Adam on mean squared reconstruction error.
//!
//! Hidden layers use ReLU, the bottleneck is linear and the output is a
//! logistic sigmoid, matching min-max scaled inputs. Training runs on one
//! thread with a fixed summation order, so a seed fully determines the
//! result.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detectors::Points;
use crate::error::{Error, Result};
use crate::features::Scaler;

pub const DEFAULT_UNITS: usize = 128;
pub const DEFAULT_BOTTLENECK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn zeros_like(&self) -> Dense {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            activation: self.activation,
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            let z = row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v);
            *o = self.activation.apply(z);
        }
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(format!(
                "training needs learning_rate > 0, batch_size >= 1, epochs >= 1; got {}, {}, {}",
                self.learning_rate, self.batch_size, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    /// Empty when no validation rows were given.
    pub validation: Vec<f64>,
}

impl LossCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for (i, t) in self.train.iter().enumerate() {
            let v = self.validation.get(i).map(f64::to_string).unwrap_or_default();
            w.write_record([(i + 1).to_string(), t.to_string(), v])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub input_dim: usize,
    pub units: usize,
    pub bottleneck: usize,
    pub layers: Vec<Dense>,
    pub seed: u64,
    /// Scaler fitted on the training normals, if the model was trained
    /// through the pipeline.
    #[serde(default)]
    pub scaler: Option<Scaler>,
    #[serde(default)]
    pub config: Option<TrainConfig>,
    #[serde(default)]
    pub losses: LossCurve,
}

/// Closed-form parameter count of the architecture.
pub fn parameter_count(input_dim: usize, units: usize, bottleneck: usize) -> usize {
    2 * input_dim * units + 2 * units * bottleneck + 2 * units + bottleneck + input_dim
}

pub fn ae_init(input_dim: usize, units: usize, bottleneck: usize, seed: u64) -> Result<AutoencoderModel> {
    if input_dim == 0 || units == 0 || bottleneck == 0 {
        return Err(Error::InvalidConfig(format!(
            "autoencoder dimensions must be positive; got {input_dim}, {units}, {bottleneck}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [
        (input_dim, units, Activation::Relu),
        (units, bottleneck, Activation::Linear),
        (bottleneck, units, Activation::Relu),
        (units, input_dim, Activation::Sigmoid),
    ];
    let layers = shapes
        .iter()
        .map(|&(inputs, outputs, activation)| {
            let gain = if activation == Activation::Relu { 6.0 } else { 3.0 };
            let limit = (gain / inputs as f64).sqrt();
            Dense {
                inputs,
                outputs,
                weights: (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect(),
                bias: vec![0.0; outputs],
                activation,
            }
        })
        .collect();
    Ok(AutoencoderModel {
        input_dim,
        units,
        bottleneck,
        layers,
        seed,
        scaler: None,
        config: None,
        losses: LossCurve::default(),
    })
}

/// Per-layer gradient buffers, same shapes as the model layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl AutoencoderModel {
    /// Parameter count by enumerating every weight and bias.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: self.parameter_count(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.input_dim]];
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.outputs]));
        let deltas = self.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Workspace { acts, deltas }
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            layer.forward(&before[i], &mut after[0]);
        }
    }

    fn sample_error(&self, x: &[f64], ws: &Workspace) -> f64 {
        let y = ws.acts.last().expect("output layer");
        y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.input_dim as f64
    }

    /// Reconstruction of a single row.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws);
        ws.acts.pop().expect("output layer")
    }

    /// Mean reconstruction loss over `rows` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradient<'a, I>(&self, rows: I) -> (f64, Gradients)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut grads = Gradients {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        };
        let mut ws = self.workspace();
        let mut total = 0.0;
        let mut n = 0usize;
        for x in rows {
            self.forward_into(x, &mut ws);
            total += self.sample_error(x, &ws);
            n += 1;
            self.backward(x, &mut ws, &mut grads);
        }
        let scale = 1.0 / n.max(1) as f64;
        for g in &mut grads.layers {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= scale);
        }
        (total * scale, grads)
    }

    /// Accumulates the unscaled gradient of one sample's loss.
    fn backward(&self, x: &[f64], ws: &mut Workspace, grads: &mut Gradients) {
        let last = self.layers.len() - 1;
        let d = self.input_dim as f64;
        {
            let y = &ws.acts[last + 1];
            let act = self.layers[last].activation;
            for (j, delta) in ws.deltas[last].iter_mut().enumerate() {
                *delta = 2.0 * (y[j] - x[j]) / d * act.derivative_from_output(y[j]);
            }
        }
        for li in (0..=last).rev() {
            let layer = &self.layers[li];
            let g = &mut grads.layers[li];
            let input = &ws.acts[li];
            let delta = &ws.deltas[li];
            for (o, &dv) in delta.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += dv * a;
                }
            }
            if li == 0 {
                break;
            }
            let prev_act = self.layers[li - 1].activation;
            let (lower, upper) = ws.deltas.split_at_mut(li);
            let prev_delta = &mut lower[li - 1];
            prev_delta.fill(0.0);
            for (o, &dv) in upper[0].iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (pd, &w) in prev_delta.iter_mut().zip(row) {
                    *pd += w * dv;
                }
            }
            for (pd, &a) in prev_delta.iter_mut().zip(&ws.acts[li]) {
                *pd *= prev_act.derivative_from_output(a);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AutoencoderModel> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let m: AutoencoderModel = serde_json::from_reader(f)?;
        if m.layers.len() != 4 || m.layers[0].inputs != m.input_dim {
            return Err(Error::InvalidData(
                "autoencoder checkpoint has an unexpected layout".into(),
            ));
        }
        Ok(m)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains in place and returns per-epoch mean training loss (accumulated
/// over the epoch's minibatches) and validation loss (after the epoch).
pub fn ae_train(
    model: &mut AutoencoderModel,
    train: &Points,
    validation: Option<&Points>,
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("autoencoder training rows"));
    }
    train.check_dim(model.input_dim)?;
    if let Some(v) = validation {
        v.check_dim(model.input_dim)?;
    }
    let n_params = model.parameter_count();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut params = model.parameters();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = model.loss_and_gradient(batch.iter().map(|&i| train.row(i)));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut params, &grads.flatten(), cfg);
            model.set_parameters(&params)?;
        }
        curve.train.push(epoch_loss / train.len() as f64);
        if let Some(v) = validation.filter(|v| !v.is_empty()) {
            let errs = ae_score(model, v)?;
            curve.validation.push(errs.iter().sum::<f64>() / errs.len() as f64);
        }
        log::debug!("epoch {}: train loss {:.6}", epoch + 1, curve.train[epoch]);
    }
    model.config = Some(cfg.clone());
    model.losses = curve.clone();
    Ok(curve)
}

/// Per-row mean squared reconstruction error.
pub fn ae_score(model: &AutoencoderModel, points: &Points) -> Result<Vec<f64>> {
    points.check_dim(model.input_dim)?;
    let mut ws = model.workspace();
    Ok(points
        .rows()
        .map(|x| {
            model.forward_into(x, &mut ws);
            model.sample_error(x, &ws)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let m = ae_init(11, 128, 2, 0).unwrap();
        assert_eq!(m.parameter_count(), 3597);
        assert_eq!(parameter_count(11, 128, 2), 257 * 11 + 770);
        assert_eq!(ae_init(1, 1, 1, 0).unwrap().parameter_count(), 8);
        for units in [4, 8, 16, 32, 64, 128] {
            for bottleneck in [2, 4, 8] {
                let m = ae_init(11, units, bottleneck, 1).unwrap();
                assert_eq!(m.parameter_count(), parameter_count(11, units, bottleneck));
            }
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(ae_init(11, 16, 2, 42).unwrap(), ae_init(11, 16, 2, 42).unwrap());
        assert_ne!(ae_init(11, 16, 2, 42).unwrap(), ae_init(11, 16, 2, 43).unwrap());
        assert!(ae_init(0, 16, 2, 1).is_err());
    }

    #[test]
    fn exact_reconstruction_scores_zero() {
        // zero weights and bias 0 give a sigmoid output of exactly 0.5
        let mut m = ae_init(3, 4, 2, 0).unwrap();
        let zeros = vec![0.0; m.parameter_count()];
        m.set_parameters(&zeros).unwrap();
        let pts = Points::from_vecs(&[vec![0.5, 0.5, 0.5], vec![0.5, 1.0, 0.5]]).unwrap();
        let s = ae_score(&m, &pts).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scores_follow_row_permutation() {
        let m = ae_init(3, 8, 2, 5).unwrap();
        let rows = vec![vec![0.1, 0.2, 0.3], vec![0.9, 0.1, 0.5], vec![0.4, 0.4, 0.0]];
        let a = ae_score(&m, &Points::from_vecs(&rows).unwrap()).unwrap();
        let rev: Vec<_> = rows.iter().rev().cloned().collect();
        let mut b = ae_score(&m, &Points::from_vecs(&rev).unwrap()).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = ae_init(3, 4, 2, 0).unwrap();
        let pts = Points::from_vecs(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(ae_score(&m, &pts), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn training_rejects_bad_input() {
        let mut m = ae_init(2, 4, 2, 0).unwrap();
        let empty = Points::new(Vec::new(), 2).unwrap();
        assert!(ae_train(&mut m, &empty, None, &TrainConfig::default()).is_err());
        let one = Points::from_vecs(&[vec![0.1, 0.2]]).unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(ae_train(&mut m, &one, None, &bad).is_err());
    }

    #[test]
    fn diverging_training_aborts() {
        let mut m = ae_init(2, 4, 2, 0).unwrap();
        let pts = Points::from_vecs(&[vec![f64::NAN, 0.2]]).unwrap();
        let err = ae_train(&mut m, &pts, None, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0 }));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = ae_init(11, 128, 2, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ae.json");
        m.save(&p).unwrap();
        assert_eq!(AutoencoderModel::load(&p).unwrap(), m);
    }
}
