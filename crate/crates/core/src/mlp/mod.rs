//! Feed-forward binary classifier:
//! `Linear(d, 128) -> BatchNorm -> ReLU -> Dropout(0.3) -> Linear(128, 64)
//! -> BatchNorm -> ReLU -> Dropout(0.2) -> Linear(64, 1)`, trained on
//! sigmoid cross-entropy of the logits with Adam.
//!
//! Everything is `f64`. Dropout is inverted (scaled at train time), so the
//! eval-mode pass is a fixed affine/ReLU composition.

mod gradcheck;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use gradcheck::{gradient_check, gradient_check_batch_stats};
pub use train::{fit, TrainReport};

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub dropout_rates: [f64; 2],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Fraction of training respondents held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 0,
            hidden_dims: [128, 64],
            dropout_rates: [0.3, 0.2],
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            early_stop_patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn new(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.dropout_rates.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad(format!("dropout rates {:?} must be in [0, 1)", self.dropout_rates));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad("batch normalisation needs a training batch of at least 2".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction {} must be in (0, 1)",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Linear ablation used to check gradients against closed forms.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((output, input), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    pub activation: Activation,
    pub mode: Mode,
}

/// Which statistics batch normalisation uses in a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NormStats {
    Batch,
    Running,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_activation: Array2<f64>,
    mask: Option<Array2<f64>>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

pub(crate) struct ForwardCache {
    layers: Vec<LayerCache>,
    last_hidden: Array2<f64>,
    pub(crate) logits: Array1<f64>,
}

/// Parameter gradients, in the order of [`MlpModel::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Randomly initialised model in training mode.
    pub fn new<R: Rng + ?Sized>(config: &MlpConfig, rng: &mut R) -> Self {
        let dims = [config.input_dim, config.hidden_dims[0], config.hidden_dims[1]];
        let hidden = (0..2)
            .map(|i| HiddenLayer {
                dense: Dense::init(dims[i], dims[i + 1], rng),
                norm: BatchNorm::new(dims[i + 1]),
                dropout: config.dropout_rates[i],
            })
            .collect();
        MlpModel {
            config: config.clone(),
            hidden,
            output: Dense::init(dims[2], 1, rng),
            activation: Activation::Relu,
            mode: Mode::Train,
        }
    }

    /// All weights and biases zero, eval mode.
    pub fn zeros(config: &MlpConfig) -> Self {
        let dims = [config.input_dim, config.hidden_dims[0], config.hidden_dims[1]];
        let hidden = (0..2)
            .map(|i| HiddenLayer {
                dense: Dense::zeros(dims[i], dims[i + 1]),
                norm: BatchNorm::new(dims[i + 1]),
                dropout: config.dropout_rates[i],
            })
            .collect();
        MlpModel {
            config: config.clone(),
            hidden,
            output: Dense::zeros(dims[2], 1),
            activation: Activation::Relu,
            mode: Mode::Eval,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_width(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<f64>,
        stats: NormStats,
        mut dropout_rng: Option<&mut R>,
    ) -> ForwardCache {
        let mut h = batch.to_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let z = layer.dense.forward(h.view());
            let n = z.nrows() as f64;
            let batch_mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &batch_mean;
            let batch_var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let (mean, var) = match stats {
                NormStats::Batch => (batch_mean.clone(), batch_var.clone()),
                NormStats::Running => (layer.norm.running_mean.clone(), layer.norm.running_var.clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BATCHNORM_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let pre_activation = &xhat * &layer.norm.gamma + &layer.norm.beta;
            let mut a = pre_activation.mapv(|v| self.activation.apply(v));
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if layer.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - layer.dropout);
                    let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if rng.random::<f64>() < layer.dropout {
                            0.0
                        } else {
                            keep
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            layers.push(LayerCache {
                input: h,
                xhat,
                inv_std,
                pre_activation,
                mask,
                batch_mean,
                batch_var,
            });
            h = a;
        }
        let logits = self.output.forward(h.view()).column(0).to_owned();
        ForwardCache {
            layers,
            last_hidden: h,
            logits,
        }
    }

    /// Backpropagate `d loss / d logits` through a cached pass.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: ArrayView1<f64>, stats: NormStats) -> Gradients {
        let n = dlogits.len() as f64;
        let dl = dlogits.insert_axis(Axis(1));
        let d_out_w = dl.t().dot(&cache.last_hidden);
        let d_out_b = Array1::from_elem(1, dlogits.sum());
        let mut dh = dl.dot(&self.output.weight);

        let mut per_layer = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &lc.mask {
                dh *= mask;
            }
            let act = self.activation;
            let mut dy = dh;
            Zip::from(&mut dy)
                .and(&lc.pre_activation)
                .for_each(|d, &y| *d *= act.derivative(y));
            let d_gamma = (&dy * &lc.xhat).sum_axis(Axis(0));
            let d_beta = dy.sum_axis(Axis(0));
            let dxhat = &dy * &layer.norm.gamma;
            let dz = match stats {
                NormStats::Batch => {
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &lc.xhat).sum_axis(Axis(0));
                    let inner = &dxhat * n - &sum_dxhat - &lc.xhat * &sum_dxhat_xhat;
                    inner * &(&lc.inv_std / n)
                }
                NormStats::Running => &dxhat * &lc.inv_std,
            };
            let d_w = dz.t().dot(&lc.input);
            let d_b = dz.sum_axis(Axis(0));
            dh = dz.dot(&layer.dense.weight);
            per_layer.push([d_w.into_raw_vec_and_offset().0, d_b.to_vec(), d_gamma.to_vec(), d_beta.to_vec()]);
        }
        per_layer.reverse();
        let mut tensors: Vec<Vec<f64>> = per_layer.into_iter().flatten().collect();
        tensors.push(d_out_w.iter().copied().collect());
        tensors.push(d_out_b.to_vec());
        Gradients { tensors }
    }

    /// Running-statistic update from a training-mode pass.
    pub(crate) fn update_running_stats(&mut self, cache: &ForwardCache, batch_rows: usize) {
        let unbias = if batch_rows > 1 {
            batch_rows as f64 / (batch_rows as f64 - 1.0)
        } else {
            1.0
        };
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            let m = BATCHNORM_MOMENTUM;
            layer.norm.running_mean = &layer.norm.running_mean * (1.0 - m) + &lc.batch_mean * m;
            layer.norm.running_var = &layer.norm.running_var * (1.0 - m) + &(&lc.batch_var * (m * unbias));
        }
    }

    /// Mutable views of all trainable parameters: per hidden layer
    /// `[weight, bias, gamma, beta]`, then output `[weight, bias]`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(layer.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.dense.bias.as_slice_mut().expect("standard layout"));
            out.push(layer.norm.gamma.as_slice_mut().expect("standard layout"));
            out.push(layer.norm.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.dense.weight.len() + l.dense.bias.len() + 2 * l.norm.gamma.len())
            .sum::<usize>()
            + self.output.weight.len()
            + 1
    }

    /// Eval-mode logits, one per row.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        if self.mode != Mode::Eval {
            return Err(Error::NotEvalMode);
        }
        self.check_width(&batch)?;
        if batch.nrows() == 0 {
            return Ok(Array1::zeros(0));
        }
        Ok(self
            .forward_cached::<rand_chacha::ChaCha8Rng>(batch, NormStats::Running, None)
            .logits)
    }

    /// `sigmoid(forward(batch))`.
    pub fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.iter().map(|&z| sigmoid(z)).collect())
    }

    /// Class prediction `sigmoid(logit) > 0.5`.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.forward(batch)?.iter().map(|&z| z > 0.0).collect())
    }

    /// Smallest `|pre-activation|` over an eval-mode pass; values near zero
    /// sit on a ReLU kink where finite differences are meaningless.
    pub fn min_abs_preactivation(&self, batch: ArrayView2<f64>) -> f64 {
        let cache = self.forward_cached::<rand_chacha::ChaCha8Rng>(batch, NormStats::Running, None);
        cache
            .layers
            .iter()
            .flat_map(|l| l.pre_activation.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid cross-entropy on logits.
pub fn bce_with_logits(logits: ArrayView1<f64>, labels: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

/// `d mean-BCE / d logits`.
pub(crate) fn bce_grad(logits: ArrayView1<f64>, labels: &[f64]) -> Array1<f64> {
    let n = logits.len() as f64;
    Array1::from_iter(logits.iter().zip(labels).map(|(&z, &y)| (sigmoid(z) - y) / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn small_config(d: usize) -> MlpConfig {
        MlpConfig {
            hidden_dims: [5, 4],
            ..MlpConfig::new(d)
        }
    }

    /// Per-element loops, no ndarray arithmetic.
    fn naive_forward(m: &MlpModel, row: &[f64]) -> f64 {
        let mut h: Vec<f64> = row.to_vec();
        for layer in &m.hidden {
            let w = &layer.dense.weight;
            let mut next = vec![0.0; w.nrows()];
            for o in 0..w.nrows() {
                let mut z = layer.dense.bias[o];
                for i in 0..w.ncols() {
                    z += w[[o, i]] * h[i];
                }
                let bn = (z - layer.norm.running_mean[o]) / (layer.norm.running_var[o] + BATCHNORM_EPS).sqrt()
                    * layer.norm.gamma[o]
                    + layer.norm.beta[o];
                next[o] = if bn > 0.0 { bn } else { 0.0 };
            }
            h = next;
        }
        let mut out = m.output.bias[0];
        for i in 0..h.len() {
            out += m.output.weight[[0, i]] * h[i];
        }
        out
    }

    fn randomized(config: &MlpConfig, seed: u64) -> MlpModel {
        let mut r = rng::stream(seed, 0);
        let mut m = MlpModel::new(config, &mut r);
        for layer in &mut m.hidden {
            layer.dense.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
            layer.norm.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
            layer.norm.beta.mapv_inplace(|_| r.random_range(-0.5..0.5));
            layer.norm.running_mean.mapv_inplace(|_| r.random_range(-0.3..0.3));
            layer.norm.running_var.mapv_inplace(|_| r.random_range(0.5..2.0));
        }
        m.output.bias[0] = 0.1;
        m.set_mode(Mode::Eval);
        m
    }

    #[test]
    fn zero_model_outputs_zero_logits() {
        let m = MlpModel::zeros(&MlpConfig::new(3));
        let x = array![[1.0, -1.0, 0.0], [0.5, 2.0, 3.0]];
        assert_eq!(m.forward(x.view()).unwrap().to_vec(), vec![0.0, 0.0]);
        assert_eq!(m.predict_proba(x.view()).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn duplicated_rows_give_identical_logits() {
        let m = randomized(&MlpConfig::new(3), 1);
        let x = array![[0.2, -0.7, 1.0], [0.2, -0.7, 1.0], [0.2, -0.7, 1.0]];
        let out = m.forward(x.view()).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
        assert_eq!(out, m.forward(x.view()).unwrap());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for seed in 0..10 {
            let m = randomized(&small_config(3), seed);
            let mut r = rng::stream(seed, 9);
            let x = Array2::from_shape_simple_fn((16, 3), || r.random_range(-2.0..2.0));
            let fast = m.forward(x.view()).unwrap();
            for (i, row) in x.rows().into_iter().enumerate() {
                let slow = naive_forward(&m, row.as_slice().unwrap());
                assert!((fast[i] - slow).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn full_size_forward_matches_naive_oracle() {
        let m = randomized(&MlpConfig::new(3), 42);
        let x = array![[1.0, 0.0, -1.0], [0.3, 0.3, 0.3]];
        let fast = m.forward(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            assert!((fast[i] - naive_forward(&m, row.as_slice().unwrap())).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_and_train_mode_are_errors() {
        let mut m = randomized(&MlpConfig::new(3), 2);
        let x = array![[1.0, 2.0]];
        assert!(matches!(m.forward(x.view()), Err(Error::ShapeMismatch { expected: 3, got: 2 })));
        m.set_mode(Mode::Train);
        assert!(matches!(m.predict_proba(array![[1.0, 2.0, 3.0]].view()), Err(Error::NotEvalMode)));
    }

    #[test]
    fn sigmoid_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        let mut r = rng::stream(3, 0);
        for _ in 0..1000 {
            let x: f64 = r.random_range(-40.0..40.0);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
            assert!((sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-12);
        }
        assert!(sigmoid(1.0) > sigmoid(0.5));
    }

    #[test]
    fn predict_proba_matches_scalar_sigmoid() {
        let m = randomized(&MlpConfig::new(4), 5);
        let mut r = rng::stream(5, 1);
        let x = Array2::from_shape_simple_fn((32, 4), || r.random_range(-1.0..1.0));
        let logits = m.forward(x.view()).unwrap();
        let probs = m.predict_proba(x.view()).unwrap();
        for (z, p) in logits.iter().zip(&probs) {
            assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let m = randomized(&MlpConfig::new(6), 8);
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        let mut r = rng::stream(8, 1);
        let x = Array2::from_shape_simple_fn((20, 6), || r.random_range(-1.0..1.0));
        let a = m.forward(x.view()).unwrap();
        let b = back.forward(x.view()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), m);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let z = array![0.3, -2.0, 5.0];
        let y = [1.0, 0.0, 0.0];
        let direct: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln()))
            .sum::<f64>()
            / 3.0;
        assert!((bce_with_logits(z.view(), &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::new(3).validate().is_ok());
        assert!(MlpConfig { batch_size: 1, ..MlpConfig::new(3) }.validate().is_err());
        assert!(MlpConfig { validation_fraction: 0.0, ..MlpConfig::new(3) }.validate().is_err());
        assert!(MlpConfig::new(0).validate().is_err());
    }
}
