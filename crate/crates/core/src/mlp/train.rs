use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{MlpNetwork, Scaler};
use crate::rng::{self, Purpose};
use crate::source_receptor::{EmissionVector, ObservationVector, TrainingPair};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Learning rate.
    pub eta: f64,
    /// Momentum.
    pub alpha: f64,
    /// Number of epochs.
    pub max_iterations: usize,
    /// Seeds the per-epoch pattern order.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { eta: 0.1, alpha: 0.5, max_iterations: 20_000, seed: 7 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("at least one epoch is required"));
        }
        Ok(())
    }
}

/// Per-epoch sum-squared errors in scaled units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Accumulated pre-update error over the epoch's patterns.
    pub training_sse: Vec<f64>,
    /// Error on the activation set after each epoch (empty without one).
    pub activation_sse: Vec<f64>,
}

impl TrainingHistory {
    /// Epoch (0-based) with the lowest activation error, if one was recorded.
    pub fn best_activation_epoch(&self) -> Option<usize> {
        self.activation_sse
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

fn scaled(pairs: &[TrainingPair], scaler: &Scaler) -> Vec<(Vec<f64>, Vec<f64>)> {
    pairs
        .iter()
        .map(|p| (scaler.scale_input(p.observation.concentrations()), scaler.scale_target(p.emission.rates())))
        .collect()
}

/// Incremental training: every epoch visits the training pairs once in a
/// freshly shuffled order, updating after each pattern.
pub fn train(
    net: &mut MlpNetwork,
    training: &[TrainingPair],
    activation: &[TrainingPair],
    config: &TrainingConfig,
    scaler: &Scaler,
) -> Result<TrainingHistory> {
    config.validate()?;
    scaler.validate()?;
    if training.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let train_set = scaled(training, scaler);
    let act_set = scaled(activation, scaler);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = rng::stream(config.seed, Purpose::Shuffle, 0, 0);
    let mut history = TrainingHistory::default();

    for _ in 0..config.max_iterations {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for &k in &order {
            let (x, t) = &train_set[k];
            sse += net.backprop_update(x, t, config.eta, config.alpha)?;
        }
        history.training_sse.push(sse);
        if !act_set.is_empty() {
            history
                .activation_sse
                .push(net.sse(act_set.iter().map(|(x, t)| (x.as_slice(), t.as_slice())))?);
        }
        net.trained_epochs += 1;
    }
    Ok(history)
}

/// Emission estimate produced by a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub emission: EmissionVector,
    /// The observation lay outside the training input range.
    pub extrapolated: bool,
}

/// Scales the observation, runs the network and maps the output back to
/// emission rates, clamped to the scaler's target range.
pub fn invert(net: &MlpNetwork, scaler: &Scaler, observation: &ObservationVector) -> Result<Inversion> {
    if net.trained_epochs == 0 {
        return Err(Error::validation("network has not been trained"));
    }
    let x = observation.concentrations();
    let y = net.output(&scaler.scale_input(x))?;
    let rates: Vec<f64> = scaler
        .unscale_output(&y)
        .into_iter()
        .zip(scaler.out_min.iter().zip(&scaler.out_max))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi).max(0.0))
        .collect();
    Ok(Inversion {
        emission: EmissionVector::new(rates)?,
        extrapolated: !scaler.input_within_range(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_network, Topology};
    use crate::source_receptor::{generate_training_set, EmissionPrior, NoiseModel, TransitionMatrix};

    fn fit(pairs: &[TrainingPair]) -> Scaler {
        let n_in = pairs[0].observation.len();
        let n_out = pairs[0].emission.len();
        Scaler::fit(
            pairs.iter().map(|p| p.observation.concentrations()),
            pairs.iter().map(|p| p.emission.rates()),
            n_in,
            n_out,
        )
        .unwrap()
    }

    fn diagonal_fixture(n: usize, pairs: usize, seed: u64) -> (TransitionMatrix, Vec<TrainingPair>) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 2.0 + i as f64 } else { 0.0 }).collect())
            .collect();
        let m = TransitionMatrix::from_rows(&rows).unwrap();
        let prior = EmissionPrior::Independent { min: 0.0, max: 30.0 };
        let set = generate_training_set(&m, pairs, &prior, &NoiseModel::new(0.0, seed).unwrap()).unwrap();
        (m, set)
    }

    #[test]
    fn epoch_accounting() {
        let (_, set) = diagonal_fixture(2, 10, 1);
        let scaler = fit(&set);
        let t: Topology = "2:3:3:2".parse().unwrap();
        let mut net = init_network(&t, 1);
        let zero = TrainingConfig { max_iterations: 0, ..Default::default() };
        assert!(train(&mut net, &set, &[], &zero, &scaler).is_err());
        let one = TrainingConfig { max_iterations: 1, ..Default::default() };
        let h = train(&mut net, &set, &set[..3], &one, &scaler).unwrap();
        assert_eq!(h.training_sse.len(), 1);
        assert_eq!(h.activation_sse.len(), 1);
        assert_eq!(net.trained_epochs, 1);
        assert!(train(&mut net, &[], &[], &one, &scaler).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (_, set) = diagonal_fixture(3, 20, 2);
        let scaler = fit(&set);
        let t: Topology = "3:5:5:3".parse().unwrap();
        let cfg = TrainingConfig { max_iterations: 50, ..Default::default() };
        let mut a = init_network(&t, 4);
        let mut b = init_network(&t, 4);
        let ha = train(&mut a, &set, &set[..5], &cfg, &scaler).unwrap();
        let hb = train(&mut b, &set, &set[..5], &cfg, &scaler).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn linear_fixture_converges() {
        let (_, set) = diagonal_fixture(3, 30, 3);
        let scaler = fit(&set);
        let t: Topology = "3:8:8:3".parse().unwrap();
        let mut net = init_network(&t, 9);
        let cfg = TrainingConfig { max_iterations: 5000, ..Default::default() };
        let h = train(&mut net, &set, &[], &cfg, &scaler).unwrap();
        // Pattern-by-pattern updates leave a noise floor well above zero.
        let last = *h.training_sse.last().unwrap();
        assert!(last < 0.05, "final SSE {last}");
        assert!(last < h.training_sse[0] / 10.0, "{} -> {last}", h.training_sse[0]);
    }

    #[test]
    fn memorises_a_tiny_noiseless_set() {
        let (_, set) = diagonal_fixture(2, 2, 5);
        let scaler = fit(&set);
        let t: Topology = "2:6:6:2".parse().unwrap();
        let mut net = init_network(&t, 2);
        let cfg = TrainingConfig { max_iterations: 4000, ..Default::default() };
        train(&mut net, &set, &[], &cfg, &scaler).unwrap();
        for p in &set {
            let est = invert(&net, &scaler, &p.observation).unwrap();
            assert!(!est.extrapolated);
            let got = scaler.scale_target(est.emission.rates());
            let want = scaler.scale_target(p.emission.rates());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-2, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn untrained_network_refuses_to_invert() {
        let (_, set) = diagonal_fixture(2, 4, 5);
        let scaler = fit(&set);
        let net = init_network(&"2:2:2:2".parse().unwrap(), 1);
        assert!(matches!(invert(&net, &scaler, &set[0].observation), Err(Error::Validation(_))));
    }

    #[test]
    fn estimates_stay_in_target_range_and_flag_extrapolation() {
        let (_, set) = diagonal_fixture(2, 10, 6);
        let scaler = fit(&set);
        let mut net = init_network(&"2:3:3:2".parse().unwrap(), 1);
        train(&mut net, &set, &[], &TrainingConfig { max_iterations: 5, ..Default::default() }, &scaler).unwrap();
        for obs in [vec![0.0, 0.0], vec![1e6, 1e6], vec![-5.0, 3.0]] {
            let inv = invert(&net, &scaler, &ObservationVector(obs)).unwrap();
            assert!(inv.extrapolated || inv.emission.rates().iter().all(|r| *r >= 0.0));
            for (k, r) in inv.emission.rates().iter().enumerate() {
                assert!(*r >= scaler.out_min[k] && *r <= scaler.out_max[k]);
            }
        }
    }
}
