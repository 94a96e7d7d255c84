//! Multilayer perceptron trained by backpropagation with momentum.
//!
//! The input layer passes values through unchanged; every later layer applies
//! its activation to the biased weighted sum. Weights move by
//! `dw_ij = eta * delta_j * o_i + alpha * dw_ij(previous)`, one pattern at a time.

mod format;
mod scaler;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::rng::{self, Purpose};
use crate::{Error, Result};

pub use format::TrainedModel;
pub use scaler::Scaler;
pub use train::{invert, train, Inversion, TrainingConfig, TrainingHistory};

/// Layer sizes `input : hidden1 : hidden2 : output`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topology(Vec<usize>);

impl Topology {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() != 4 {
            return Err(Error::validation(format!(
                "topology needs 4 layers (input, two hidden, output), got {}",
                sizes.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::validation("every layer needs at least one neuron"));
        }
        Ok(Self(sizes))
    }

    /// The three registered experiment topologies for `inputs` sensors and `outputs` cells.
    pub fn canonical(inputs: usize, outputs: usize) -> [Topology; 3] {
        [(6, 12), (7, 8), (15, 30)].map(|(a, b)| Topology(vec![inputs, a, b, outputs]))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn inputs(&self) -> usize {
        self.0[0]
    }

    pub fn outputs(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    /// File-name friendly form, `6-15-30-12`.
    pub fn tag(&self) -> String {
        self.0.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&s.join(":"))
    }
}

impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split([':', '-'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::validation(format!("invalid topology {s:?}")))?;
        Topology::new(sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LogSigmoid,
    TanSigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::LogSigmoid => 1.0 / (1.0 + (-s).exp()),
            Activation::TanSigmoid => s.tanh(),
            Activation::Linear => s,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_at_output(self, o: f64) -> f64 {
        match self {
            Activation::LogSigmoid => o * (1.0 - o),
            Activation::TanSigmoid => 1.0 - o * o,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LogSigmoid => "logsig",
            Activation::TanSigmoid => "tansig",
            Activation::Linear => "purelin",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logsig" => Ok(Activation::LogSigmoid),
            "tansig" => Ok(Activation::TanSigmoid),
            "purelin" => Ok(Activation::Linear),
            other => Err(Error::validation(format!("unknown activation {other:?}"))),
        }
    }
}

/// Fully connected layer; `weights` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
    /// Corrections applied by the previous update, for momentum.
    pub prev_dw: Vec<f64>,
    pub prev_db: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
            activation,
            prev_dw: vec![0.0; n_in * n_out],
            prev_db: vec![0.0; n_out],
        }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.biases)
            .map(|(row, b)| {
                let s: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
                self.activation.apply(s)
            })
            .collect()
    }
}

/// Gradient of `E = 1/2 sum (target - output)^2` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    topology: Topology,
    pub layers: Vec<Layer>,
    /// Completed training epochs; zero means the weights are untrained.
    pub trained_epochs: usize,
}

/// Network with log-sigmoid hidden and output layers, weights uniform in
/// `[-0.5, 0.5] / sqrt(fan_in)` and zero biases.
pub fn init_network(topology: &Topology, seed: u64) -> MlpNetwork {
    let acts = vec![Activation::LogSigmoid; topology.sizes().len() - 1];
    init_network_with(topology, &acts, seed).expect("activation count matches topology")
}

pub fn init_network_with(topology: &Topology, activations: &[Activation], seed: u64) -> Result<MlpNetwork> {
    let mut net = MlpNetwork::zeros(topology, activations)?;
    let mut rng = rng::stream(seed, Purpose::WeightInit, 0, 0);
    for layer in &mut net.layers {
        let scale = 1.0 / (layer.n_in as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-0.5..=0.5) * scale;
        }
    }
    Ok(net)
}

impl MlpNetwork {
    /// All weights and biases zero.
    pub fn zeros(topology: &Topology, activations: &[Activation]) -> Result<Self> {
        let sizes = topology.sizes();
        if activations.len() != sizes.len() - 1 {
            return Err(Error::DimensionMismatch { expected: sizes.len() - 1, found: activations.len() });
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Layer::zeros(w[0], w[1], a))
            .collect();
        Ok(Self { topology: topology.clone(), layers, trained_epochs: 0 })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Outputs of every layer, starting with the (identity) input layer.
    pub fn forward_pass(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.topology.inputs() {
            return Err(Error::DimensionMismatch { expected: self.topology.inputs(), found: input.len() });
        }
        let mut outs = Vec::with_capacity(self.layers.len() + 1);
        outs.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(outs.last().expect("non-empty"));
            outs.push(next);
        }
        Ok(outs)
    }

    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.topology.inputs() {
            return Err(Error::DimensionMismatch { expected: self.topology.inputs(), found: input.len() });
        }
        let (first, rest) = self.layers.split_first().expect("at least one layer");
        Ok(rest.iter().fold(first.forward(input), |x, layer| layer.forward(&x)))
    }

    /// Local error signals `delta_j` per layer (sign: `(t - o) f'` at the output)
    /// plus the sum-squared error.
    fn deltas(&self, outs: &[Vec<f64>], target: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        let output = outs.last().expect("non-empty");
        if target.len() != output.len() {
            return Err(Error::DimensionMismatch { expected: output.len(), found: target.len() });
        }
        let n = self.layers.len();
        let mut deltas = vec![Vec::new(); n];
        let last = &self.layers[n - 1];
        let mut sse = 0.0;
        deltas[n - 1] = output
            .iter()
            .zip(target)
            .map(|(o, t)| {
                sse += (t - o) * (t - o);
                (t - o) * last.activation.derivative_at_output(*o)
            })
            .collect();
        for l in (0..n - 1).rev() {
            let above = &self.layers[l + 1];
            let act = self.layers[l].activation;
            deltas[l] = (0..self.layers[l].n_out)
                .map(|j| {
                    let back: f64 = (0..above.n_out)
                        .map(|k| above.weights[k * above.n_in + j] * deltas[l + 1][k])
                        .sum();
                    back * act.derivative_at_output(outs[l + 1][j])
                })
                .collect();
        }
        Ok((deltas, sse))
    }

    /// Gradient of half the sum-squared error with respect to every parameter.
    pub fn gradients(&self, input: &[f64], target: &[f64]) -> Result<(Vec<LayerGradient>, f64)> {
        let outs = self.forward_pass(input)?;
        let (deltas, sse) = self.deltas(&outs, target)?;
        let grads = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut weights = Vec::with_capacity(layer.weights.len());
                for j in 0..layer.n_out {
                    for i in 0..layer.n_in {
                        weights.push(-deltas[l][j] * outs[l][i]);
                    }
                }
                LayerGradient { weights, biases: deltas[l].iter().map(|d| -d).collect() }
            })
            .collect();
        Ok((grads, sse))
    }

    /// One momentum-backpropagation update for a single pattern. Returns the
    /// sum-squared error measured before the update.
    pub fn backprop_update(&mut self, input: &[f64], target: &[f64], eta: f64, alpha: f64) -> Result<f64> {
        let outs = self.forward_pass(input)?;
        let (deltas, sse) = self.deltas(&outs, target)?;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let o = &outs[l];
            for j in 0..layer.n_out {
                let d = deltas[l][j];
                let row = j * layer.n_in;
                for i in 0..layer.n_in {
                    let dw = eta * d * o[i] + alpha * layer.prev_dw[row + i];
                    layer.weights[row + i] += dw;
                    layer.prev_dw[row + i] = dw;
                }
                let db = eta * d + alpha * layer.prev_db[j];
                layer.biases[j] += db;
                layer.prev_db[j] = db;
            }
        }
        Ok(sse)
    }

    /// Sum-squared error over a set of (input, target) patterns without updating.
    pub fn sse<'a>(&self, patterns: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in patterns {
            let y = self.output(x)?;
            if y.len() != t.len() {
                return Err(Error::DimensionMismatch { expected: y.len(), found: t.len() });
            }
            total += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total)
    }

    /// Flat view of every parameter in layer order (weights then biases).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_parameter(&mut self, mut index: usize, value: f64) {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                l.weights[index] = value;
                return;
            }
            index -= nw;
            if index < l.biases.len() {
                l.biases[index] = value;
                return;
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }
}

/// Flattens gradients in the same order as [`MlpNetwork::parameters`].
pub fn flatten_gradients(grads: &[LayerGradient]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(&g.biases).copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn topo(s: &str) -> Topology {
        s.parse().unwrap()
    }

    #[test]
    fn topology_parsing_and_validation() {
        let t = topo("6:15:30:12");
        assert_eq!(t.sizes(), &[6, 15, 30, 12]);
        assert_eq!(t.to_string(), "6:15:30:12");
        assert_eq!(t.tag(), "6-15-30-12");
        assert_eq!(topo("6-7-8-12").sizes(), &[6, 7, 8, 12]);
        assert!("6:12:12".parse::<Topology>().is_err());
        assert!("6:0:12:12".parse::<Topology>().is_err());
        let [a, b, c] = Topology::canonical(6, 12);
        assert_eq!((a.to_string(), b.to_string(), c.to_string()), ("6:6:12:12".into(), "6:7:8:12".into(), "6:15:30:12".into()));
    }

    #[test]
    fn init_shapes_and_determinism() {
        let t = topo("6:15:30:12");
        let a = init_network(&t, 11);
        assert_eq!(a, init_network(&t, 11));
        assert_ne!(a, init_network(&t, 12));
        let shapes: Vec<(usize, usize)> = a.layers.iter().map(|l| (l.n_out, l.n_in)).collect();
        assert_eq!(shapes, vec![(15, 6), (30, 15), (12, 30)]);
        for l in &a.layers {
            let bound = 0.5 / (l.n_in as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.biases.iter().all(|b| *b == 0.0));
            assert!(l.prev_dw.iter().chain(&l.prev_db).all(|d| *d == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let t = topo("3:4:5:2");
        let net = MlpNetwork::zeros(&t, &[Activation::LogSigmoid; 3]).unwrap();
        let outs = net.forward_pass(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(outs[0], vec![1.0, -2.0, 3.0]);
        for layer_out in &outs[1..] {
            assert!(layer_out.iter().all(|o| *o == 0.5));
        }
        assert!(net.forward_pass(&[1.0]).is_err());
    }

    #[test]
    fn sigmoid_saturates() {
        let a = Activation::LogSigmoid;
        assert_eq!(a.apply(0.0), 0.5);
        assert!(a.apply(40.0) > 1.0 - 1e-15);
        assert!(a.apply(-40.0) < 1e-15);
    }

    #[test]
    fn hand_computed_small_network() {
        // 2-2-2-1 with hand-set weights; expected value computed independently:
        //   h1 = logsig(0.5*1 - 0.25*2 + 0.1) = logsig(0.1)
        //   h2 = logsig(-0.3*1 + 0.8*2 - 0.2) = logsig(1.1)
        //   g1 = logsig(1.0*h1 - 1.0*h2), g2 = logsig(0.5*h1 + 0.5*h2 + 0.3)
        //   y  = logsig(2.0*g1 - 1.5*g2 + 0.05)
        let t = topo("2:2:2:1");
        let mut net = MlpNetwork::zeros(&t, &[Activation::LogSigmoid; 3]).unwrap();
        net.layers[0].weights = vec![0.5, -0.25, -0.3, 0.8];
        net.layers[0].biases = vec![0.1, -0.2];
        net.layers[1].weights = vec![1.0, -1.0, 0.5, 0.5];
        net.layers[1].biases = vec![0.0, 0.3];
        net.layers[2].weights = vec![2.0, -1.5];
        net.layers[2].biases = vec![0.05];
        let y = net.output(&[1.0, 2.0]).unwrap()[0];
        assert_relative_eq!(y, 0.465_033_581_419_105_17, epsilon = 1e-14);
    }

    #[test]
    fn update_without_momentum_is_gradient_step() {
        let t = topo("3:4:3:2");
        let mut net = init_network(&t, 5);
        for l in &mut net.layers {
            l.prev_dw.iter_mut().for_each(|d| *d = 0.37);
            l.prev_db.iter_mut().for_each(|d| *d = -0.2);
        }
        let (x, y) = ([0.2, 0.4, 0.9], [0.1, 0.8]);
        let (grads, _) = net.gradients(&x, &y).unwrap();
        let before = net.parameters();
        net.backprop_update(&x, &y, 0.1, 0.0).unwrap();
        let after = net.parameters();
        for ((b, a), g) in before.iter().zip(&after).zip(flatten_gradients(&grads)) {
            assert_relative_eq!(a - b, -0.1 * g, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_weight_update_formula() {
        // One output neuron, linear, so delta = target - output.
        // Input o_i = 2, output 0 -> delta 1 with target 1: dw = 0.1 * 1 * 2 = 0.2.
        let t = topo("1:1:1:1");
        let mut net = MlpNetwork::zeros(&t, &[Activation::Linear; 3]).unwrap();
        net.layers[0].weights = vec![1.0];
        net.layers[1].weights = vec![0.0];
        net.layers[2].weights = vec![1.0];
        net.backprop_update(&[2.0], &[1.0], 0.1, 0.5).unwrap();
        // layer 1 input is 2 (the first hidden output), its delta is 1 * w3 = 1
        assert_relative_eq!(net.layers[1].prev_dw[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn momentum_accumulates_previous_correction() {
        let t = topo("2:2:2:2");
        let mut a = init_network(&t, 1);
        let mut b = a.clone();
        let (x, y) = ([0.3, 0.6], [0.2, 0.7]);
        a.backprop_update(&x, &y, 0.1, 0.5).unwrap();
        let first: Vec<f64> = a.layers.iter().flat_map(|l| l.prev_dw.clone()).collect();
        b.backprop_update(&x, &y, 0.1, 0.0).unwrap();
        let first_plain: Vec<f64> = b.layers.iter().flat_map(|l| l.prev_dw.clone()).collect();
        assert_eq!(first, first_plain);
        let (grads, _) = a.gradients(&x, &y).unwrap();
        a.backprop_update(&x, &y, 0.1, 0.5).unwrap();
        let second: Vec<f64> = a.layers.iter().flat_map(|l| l.prev_dw.clone()).collect();
        let gw: Vec<f64> = grads.iter().flat_map(|g| g.weights.clone()).collect();
        for k in 0..second.len() {
            assert_relative_eq!(second[k], -0.1 * gw[k] + 0.5 * first[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn sse_is_pre_update() {
        let t = topo("2:3:3:1");
        let mut net = init_network(&t, 3);
        let y = net.output(&[0.5, 0.5]).unwrap()[0];
        let sse = net.backprop_update(&[0.5, 0.5], &[0.9], 0.1, 0.5).unwrap();
        assert_relative_eq!(sse, (0.9 - y) * (0.9 - y), epsilon = 1e-15);
    }
}
