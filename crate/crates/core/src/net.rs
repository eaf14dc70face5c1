//! Feed-forward utility network with hand-written backprop and an AdamW optimizer.
//!
//! Hidden layers use ReLU, the output layer is linear and has a single unit.
//! Everything is `f64`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense layer. `weights` is row-major with shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }
}

/// Scalar utility function `u: R^d -> R`.
///
/// The same type doubles as a gradient buffer (see [`UtilityNet::zeros_like`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityNet {
    layers: Vec<Layer>,
}

/// Random initialization scheme for [`UtilityNet::init_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Weights iid `N(0, 2/fan_in)`, biases zero.
    KaimingNormal,
    /// Weights and biases iid `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual
    /// library default for dense layers.
    UniformFanIn,
}

impl UtilityNet {
    /// Kaiming-normal initialization: weights iid `N(0, 2/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::init_with(layer_sizes, Init::KaimingNormal, rng)
    }

    pub fn init_with<R: Rng + ?Sized>(layer_sizes: &[usize], scheme: Init, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &mut net.layers {
            let fan_in = layer.inputs as f64;
            match scheme {
                Init::KaimingNormal => {
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite sd");
                    for w in &mut layer.weights {
                        *w = normal.sample(rng);
                    }
                }
                Init::UniformFanIn => {
                    let bound = fan_in.sqrt().recip();
                    for p in layer.weights.iter_mut().chain(&mut layer.biases) {
                        *p = rng.random_range(-bound..bound);
                    }
                }
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(
                "utility networks have a single output unit".into(),
            ));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidConfig(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].outputs,
                    got: l.inputs,
                });
            }
        }
        if layers.last().unwrap().outputs != 1 {
            return Err(Error::InvalidConfig(
                "utility networks have a single output unit".into(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat view over all parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Forward pass.
    pub fn utility(&self, item: &[f64]) -> Result<f64> {
        self.check_dim(item)?;
        Ok(self.eval(item))
    }

    /// `u(winner) - u(loser)`.
    pub fn strength_score(&self, winner: &[f64], loser: &[f64]) -> Result<f64> {
        self.check_dim(winner)?;
        self.check_dim(loser)?;
        Ok(self.eval(winner) - self.eval(loser))
    }

    fn check_dim(&self, item: &[f64]) -> Result<()> {
        if item.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: item.len(),
            });
        }
        Ok(())
    }

    /// Unchecked forward pass; callers guarantee `item.len() == input_dim()`.
    pub(crate) fn eval(&self, item: &[f64]) -> f64 {
        let mut current = item.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            affine(layer, &current, &mut next);
            if i != last {
                relu_in_place(&mut next);
            }
            std::mem::swap(&mut current, &mut next);
        }
        current[0]
    }

    /// Adds `upstream * du(item)/dparams` into `grads` and returns `u(item)`.
    pub fn accumulate_grad(&self, item: &[f64], upstream: f64, grads: &mut Self) -> f64 {
        let trace = self.trace(item);
        self.backward(&trace, upstream, grads);
        trace.output()
    }

    /// Runs the forward pass keeping every layer's activation.
    pub(crate) fn trace(&self, item: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(item.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            affine(layer, activations.last().unwrap(), &mut out);
            if i != last {
                relu_in_place(&mut out);
            }
            activations.push(out);
        }
        Trace { activations }
    }

    pub(crate) fn backward(&self, trace: &Trace, upstream: f64, grads: &mut Self) {
        let mut delta = vec![upstream];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[idx];
            let g = &mut grads.layers[idx];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if idx == 0 {
                break;
            }
            // input is the ReLU output of the previous layer; zero activations had
            // non-positive preactivations and pass no gradient.
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

pub(crate) struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> f64 {
        self.activations.last().unwrap()[0]
    }
}

fn affine(layer: &Layer, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(layer.biases.iter().enumerate().map(|(o, &b)| {
        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
        b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
    }));
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first_moment: UtilityNet,
    second_moment: UtilityNet,
}

impl AdamW {
    pub fn new(net: &UtilityNet, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: net.zeros_like(),
            second_moment: net.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut UtilityNet, grads: &UtilityNet) -> Result<()> {
        if grads.layer_sizes() != net.layer_sizes() {
            return Err(Error::InvalidConfig(
                "gradient shapes do not match the network".into(),
            ));
        }
        for (li, layer) in grads.layers.iter().enumerate() {
            if let Some(j) = layer.weights.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("layer {li} weight {j}")));
            }
            if let Some(j) = layer.biases.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("layer {li} bias {j}")));
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        let params = net.params_mut();
        let moments = self
            .first_moment
            .params_mut()
            .zip(self.second_moment.params_mut());
        for ((p, g), (m, v)) in params.zip(grads.params()).zip(moments) {
            *p *= decay;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Full-batch training loop. `objective` returns the loss and its gradient for
/// the current parameters. Returns the final network and the loss recorded
/// before each step.
pub fn train<F>(mut net: UtilityNet, config: &TrainConfig, mut objective: F) -> Result<(UtilityNet, Vec<f64>)>
where
    F: FnMut(&UtilityNet) -> (f64, UtilityNet),
{
    if config.steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    let mut opt = AdamW::new(&net, config.optimizer);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, grads) = objective(&net);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        losses.push(loss);
        opt.step(&mut net, &grads)?;
    }
    Ok((net, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_hidden_unit() -> UtilityNet {
        UtilityNet::from_layers(vec![
            Layer {
                inputs: 2,
                outputs: 1,
                weights: vec![1.0, 0.0],
                biases: vec![0.0],
            },
            Layer {
                inputs: 1,
                outputs: 1,
                weights: vec![2.0],
                biases: vec![0.0],
            },
        ])
        .unwrap()
    }

    #[test]
    fn init_zero_biases_and_kaiming_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = UtilityNet::init(&[50, 200, 1], &mut rng).unwrap();
        assert!(net.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let w = &net.layers()[0].weights;
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = 2.0 / 50.0;
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn uniform_init_bounds_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = UtilityNet::init_with(&[25, 400, 1], Init::UniformFanIn, &mut rng).unwrap();
        let first = &net.layers()[0];
        assert!(first.weights.iter().chain(&first.biases).all(|w| w.abs() < 0.2));
        let n = first.weights.len() as f64;
        let var = first.weights.iter().map(|w| w * w).sum::<f64>() / n;
        // U(-b, b) has variance b^2 / 3 = 1 / (3 * 25)
        assert!((var * 75.0 - 1.0).abs() < 0.1, "{var}");
        assert!(first.biases.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn init_depends_on_seed() {
        let a = UtilityNet::init(&[4, 8, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = UtilityNet::init(&[4, 8, 1], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a.layers()[0].weights, b.layers()[0].weights);
    }

    #[test]
    fn rejects_bad_layer_sizes() {
        assert!(UtilityNet::zeros(&[3]).is_err());
        assert!(UtilityNet::zeros(&[3, 0, 1]).is_err());
        assert!(UtilityNet::zeros(&[3, 2]).is_err());
    }

    #[test]
    fn zero_weights_output_bias() {
        let net = UtilityNet::zeros(&[3, 4, 1]).unwrap();
        assert_eq!(net.utility(&[0.3, 0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn hand_forward_pass() {
        let net = single_hidden_unit();
        assert_eq!(net.utility(&[3.0, 5.0]).unwrap(), 6.0);
        // negative preactivation is clipped by the ReLU
        assert_eq!(net.utility(&[-3.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let net = single_hidden_unit();
        assert!(matches!(
            net.utility(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn strength_score_antisymmetric_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = UtilityNet::init(&[3, 5, 1], &mut rng).unwrap();
        let a = [0.1, 0.7, 0.3];
        let b = [0.9, 0.2, 0.5];
        assert_eq!(net.strength_score(&a, &a).unwrap(), 0.0);
        let ab = net.strength_score(&a, &b).unwrap();
        assert_eq!(ab, -net.strength_score(&b, &a).unwrap());
        net.layers_mut().last_mut().unwrap().biases[0] += 3.5;
        assert!((net.strength_score(&a, &b).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = UtilityNet::init(&[4, 6, 5, 1], &mut rng).unwrap();
        let x = [0.2, 0.9, 0.4, 0.6];
        let mut grads = net.zeros_like();
        net.accumulate_grad(&x, 1.0, &mut grads);
        let analytic: Vec<f64> = grads.params().copied().collect();
        let h = 1e-6;
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            let fd = (plus.eval(&x) - minus.eval(&x)) / (2.0 * h);
            assert!((fd - a).abs() < 1e-6, "param {i}: {fd} vs {a}");
        }
    }

    #[test]
    fn adamw_zero_grad_is_pure_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = UtilityNet::init(&[3, 4, 1], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = AdamW::new(&net, AdamWConfig::default());
        opt.step(&mut net, &before.zeros_like()).unwrap();
        assert_eq!(opt.steps_taken(), 1);
        for (p, q) in net.params().zip(before.params()) {
            assert!((p - q * 0.99999).abs() <= 1e-15 * q.abs().max(1.0));
        }
    }

    #[test]
    fn adamw_first_step_displacement() {
        let mut net = UtilityNet::zeros(&[1, 1]).unwrap();
        let mut grads = net.zeros_like();
        grads.layers_mut()[0].weights[0] = 1.0;
        let mut opt = AdamW::new(&net, AdamWConfig::default());
        opt.step(&mut net, &grads).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((net.layers()[0].weights[0] - expected).abs() < 1e-15);
        assert_eq!(net.layers()[0].biases[0], 0.0);
    }

    #[test]
    fn adamw_rejects_non_finite_gradient() {
        let mut net = UtilityNet::zeros(&[2, 2, 1]).unwrap();
        let mut grads = net.zeros_like();
        grads.layers_mut()[1].biases[0] = f64::NAN;
        let mut opt = AdamW::new(&net, AdamWConfig::default());
        let err = opt.step(&mut net, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 1 bias 0"), "{err}");
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn train_aborts_on_non_finite_loss() {
        let net = UtilityNet::zeros(&[2, 1]).unwrap();
        let cfg = TrainConfig::default();
        let mut calls = 0;
        let err = train(net, &cfg, |n| {
            calls += 1;
            let loss = if calls == 4 { f64::INFINITY } else { 1.0 };
            (loss, n.zeros_like())
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(3)));
    }
}
