//! Multilayer perceptron: sigmoid hidden layers, linear output, trained by
//! full-batch gradient descent with momentum and test-set early stopping.
//!
//! Inputs and targets are standardized with statistics from the training
//! set; the network itself works in standardized units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample};
use crate::error::{Error, Result};

const MAX_RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Epochs without a test-RMSE improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![25, 25],
            learning_rate: 0.1,
            momentum: 0.9,
            max_epochs: 20_000,
            patience: 200,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.iter().any(|w| *w == 0) {
            return Err(Error::config("hidden layer widths must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b`, `W` row-major with one row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.biases))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Mean and standard deviation used to standardize one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, std: 1.0 };

    /// Population statistics; a constant quantity gets unit spread.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Standardizer {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input: [Standardizer; 2],
    pub target: Standardizer,
}

/// Gradient of the mean squared error, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    /// Zero-weight network with the given layer widths, from 2 inputs to 1
    /// output.
    pub fn zeros(hidden: &[usize], input: [Standardizer; 2], target: Standardizer) -> Self {
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(1);
        MlpModel {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            input,
            target,
        }
    }

    /// Standardizers from `train`, weights uniform in `±1/√fan_in`.
    pub fn init(config: &MlpConfig, train: &[Sample]) -> Self {
        let input = [
            Standardizer::fit(train.iter().map(|s| s.point.u)),
            Standardizer::fit(train.iter().map(|s| s.point.v)),
        ];
        let target = Standardizer::fit(train.iter().map(|s| s.value));
        let mut model = MlpModel::zeros(&config.hidden_layers, input, target);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.gen_range(-bound..bound);
            }
        }
        model
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Mutable view of every parameter in [`Gradient::flatten`] order.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        let mut acts = vec![vec![0.0; 2]];
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.outputs]));
        acts
    }

    /// Fills `acts` with every layer's output; returns the standardized output.
    fn run(&self, query: Point, acts: &mut [Vec<f64>]) -> f64 {
        acts[0][0] = self.input[0].forward(query.u);
        acts[0][1] = self.input[1].forward(query.v);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(k + 1);
            let out = &mut after[0];
            layer.apply(&before[k], out);
            if k < last {
                out.iter_mut().for_each(|z| *z = sigmoid(*z));
            }
        }
        acts[last + 1][0]
    }

    pub fn forward(&self, query: Point) -> f64 {
        let mut acts = self.buffers();
        self.target.inverse(self.run(query, &mut acts))
    }

    pub fn mse(&self, batch: &[Sample]) -> f64 {
        let mut acts = self.buffers();
        batch
            .iter()
            .map(|s| (self.target.inverse(self.run(s.point, &mut acts)) - s.value).powi(2))
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn rmse(&self, batch: &[Sample]) -> f64 {
        self.mse(batch).sqrt()
    }

    /// Backpropagated gradient of `mean((f(x) − y)²)` in rate units.
    pub fn gradient(&self, batch: &[Sample]) -> Result<Gradient> {
        if batch.is_empty() {
            return Err(Error::data("gradient needs a non-empty batch"));
        }
        Ok(self.gradient_and_mse(batch).0)
    }

    fn gradient_and_mse(&self, batch: &[Sample]) -> (Gradient, f64) {
        let mut grad = Gradient {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        };
        let mut acts = self.buffers();
        let mut deltas: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        let scale = 2.0 * self.target.std / batch.len() as f64;
        let last = self.layers.len() - 1;
        let mut sse = 0.0;
        for s in batch {
            let out = self.run(s.point, &mut acts);
            let err = self.target.inverse(out) - s.value;
            sse += err * err;
            deltas[last][0] = scale * err;
            for k in (0..=last).rev() {
                let layer = &self.layers[k];
                let g = &mut grad.layers[k];
                let input = &acts[k];
                for (o, d) in deltas[k].iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
                }
                if k > 0 {
                    let (lower, upper) = deltas.split_at_mut(k);
                    let below = &mut lower[k - 1];
                    below.iter_mut().for_each(|b| *b = 0.0);
                    for (o, d) in upper[0].iter().enumerate() {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        below.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
                    }
                    below
                        .iter_mut()
                        .zip(input)
                        .for_each(|(b, a)| *b *= a * (1.0 - a));
                }
            }
        }
        (grad, sse / batch.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct MlpTraining {
    /// Weights from the epoch with the lowest test RMSE.
    pub model: MlpModel,
    /// Weights after the last recorded epoch.
    pub final_model: MlpModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Learning rate actually used, after any divergence restarts.
    pub learning_rate: f64,
    pub restarts: usize,
}

/// Trains from a seeded initialization. Epoch `e` records the RMSEs of the
/// weights after `e` updates. A non-finite loss halves the learning rate and
/// restarts, at most three times.
pub fn mlp_train(config: &MlpConfig, train: &[Sample], test: &[Sample]) -> Result<MlpTraining> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::data("MLP training needs non-empty train and test sets"));
    }
    if train
        .iter()
        .chain(test)
        .any(|s| !(s.value.is_finite() && s.point.u.is_finite() && s.point.v.is_finite()))
    {
        return Err(Error::data("MLP inputs must be finite"));
    }
    let mut lr = config.learning_rate;
    for restart in 0..=MAX_RESTARTS {
        if let Some(mut run) = train_once(config, lr, train, test) {
            run.restarts = restart;
            return Ok(run);
        }
        lr *= 0.5;
    }
    Err(Error::numerical(format!(
        "MLP training diverged after {MAX_RESTARTS} learning-rate halvings"
    )))
}

fn train_once(config: &MlpConfig, lr: f64, train: &[Sample], test: &[Sample]) -> Option<MlpTraining> {
    let mut model = MlpModel::init(config, train);
    let var = model.target.std * model.target.std;
    let mut velocity = vec![0.0; model.parameter_count()];
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    for epoch in 0..=config.max_epochs {
        let (grad, train_mse) = model.gradient_and_mse(train);
        let test_rmse = model.rmse(test);
        if !(train_mse.is_finite() && test_rmse.is_finite()) {
            return None;
        }
        history.push(EpochRecord {
            epoch,
            train_rmse: train_mse.sqrt(),
            test_rmse,
        });
        match &best {
            Some((b, _, _)) if test_rmse >= *b => {}
            _ => best = Some((test_rmse, epoch, model.clone())),
        }
        let since_best = epoch - best.as_ref().map_or(0, |b| b.1);
        if epoch == config.max_epochs || since_best >= config.patience.max(1) {
            break;
        }
        // Step on the standardized loss, i.e. the rate-unit gradient over σ².
        for ((p, v), g) in model
            .parameters_mut()
            .zip(velocity.iter_mut())
            .zip(grad.flatten())
        {
            *v = config.momentum * *v - lr * g / var;
            *p += *v;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch recorded");
    Some(MlpTraining {
        model: best_model,
        final_model: model,
        history,
        best_epoch,
        learning_rate: lr,
        restarts: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<Sample> {
        (0..n * n)
            .map(|i| {
                let (u, v) = ((i % n) as f64 / (n - 1) as f64, (i / n) as f64 / (n - 1) as f64);
                Sample::new(u, v, f(u, v))
            })
            .collect()
    }

    #[test]
    fn zero_network_outputs_target_mean() {
        let model = MlpModel::zeros(&[25, 25], [Standardizer::IDENTITY; 2], Standardizer { mean: 2.3, std: 1.0 });
        assert_eq!(model.forward(Point::new(0.1, 0.9)), 2.3);
        assert_eq!(model.forward(Point::new(-5.0, 3.0)), 2.3);
    }

    #[test]
    fn hand_set_one_unit_network() {
        let mut model = MlpModel::zeros(&[1], [Standardizer::IDENTITY; 2], Standardizer::IDENTITY);
        model.layers[0].weights = vec![1.0, 0.0];
        model.layers[1].weights = vec![2.0];
        assert_eq!(model.forward(Point::new(0.0, 0.0)), 1.0);
        let a = model.forward(Point::new(0.3, 0.7));
        let b = model.forward(Point::new(0.3, 0.7));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let cfg = MlpConfig { hidden_layers: vec![4, 3], seed: 5, ..MlpConfig::default() };
        let probe = grid(3, |u, v| u + v);
        let model = MlpModel::init(&cfg, &probe);
        let batch: Vec<Sample> = probe.iter().map(|s| Sample { value: model.forward(s.point), ..*s }).collect();
        let g = model.gradient(&batch).unwrap();
        assert!(g.flatten().iter().all(|v| v.abs() < 1e-12));
        assert!(model.gradient(&[]).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let cfg = MlpConfig { hidden_layers: vec![5, 5], seed: 2, ..MlpConfig::default() };
        let batch = grid(3, |u, v| (u * 3.0).sin() - v);
        let model = MlpModel::init(&cfg, &batch);
        let doubled: Vec<Sample> = batch.iter().flat_map(|s| [*s, *s]).collect();
        let a = model.gradient(&batch).unwrap().flatten();
        let b = model.gradient(&doubled).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn standardizer_round_trip() {
        let s = Standardizer::fit([1.0, 2.0, 4.5, -3.0].into_iter());
        for y in [0.0, 1.234_567, -9.5, 1e3] {
            assert!((s.inverse(s.forward(y)) - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        assert_eq!(Standardizer::fit([2.0, 2.0].into_iter()).std, 1.0);
    }

    #[test]
    fn constant_targets_converge() {
        let data = grid(6, |_, _| 1.5);
        let (train, test): (Vec<(usize, Sample)>, Vec<(usize, Sample)>) =
            data.into_iter().enumerate().partition(|(i, _)| i % 5 != 2);
        let train: Vec<Sample> = train.into_iter().map(|(_, s)| s).collect();
        let test: Vec<Sample> = test.into_iter().map(|(_, s)| s).collect();
        for seed in 0..3 {
            let cfg = MlpConfig { max_epochs: 500, seed, ..MlpConfig::default() };
            let run = mlp_train(&cfg, &train, &test).unwrap();
            assert!(run.model.rmse(&train) <= 1e-3, "seed {seed}");
        }
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_epoch() {
        let data = grid(7, |u, v| u * u + 0.5 * v);
        let (train, test) = data.split_at(39);
        let cfg = MlpConfig { hidden_layers: vec![6, 6], max_epochs: 300, patience: 50, seed: 4, ..MlpConfig::default() };
        let a = mlp_train(&cfg, train, test).unwrap();
        let b = mlp_train(&cfg, train, test).unwrap();
        assert_eq!(a.history, b.history);
        let best = a.history.iter().map(|r| r.test_rmse).fold(f64::INFINITY, f64::min);
        assert_eq!(a.model.rmse(test), best);
        assert_eq!(a.history[a.best_epoch].test_rmse, best);
        assert!(a.model.rmse(test) <= a.final_model.rmse(test));
    }

    #[test]
    fn divergence_halves_learning_rate() {
        let data = grid(5, |u, v| 10.0 * u - v);
        let (train, test) = data.split_at(20);
        let cfg = MlpConfig { hidden_layers: vec![4], learning_rate: 1e6, momentum: 0.0, max_epochs: 50, ..MlpConfig::default() };
        match mlp_train(&cfg, train, test) {
            Ok(run) => assert!(run.restarts > 0 && run.learning_rate < cfg.learning_rate),
            Err(e) => assert!(matches!(e, Error::Numerical(_))),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let data = grid(3, |u, _| u);
        let bad = MlpConfig { hidden_layers: vec![0], ..MlpConfig::default() };
        assert!(mlp_train(&bad, &data, &data).is_err());
        assert!(mlp_train(&MlpConfig::default(), &data, &[]).is_err());
        let bad = MlpConfig { momentum: 1.0, ..MlpConfig::default() };
        assert!(bad.validate().is_err());
    }
}
