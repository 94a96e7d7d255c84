//! Source-receptor transition matrices and synthetic observations.
//!
//! Concentrations are linear in the emission rates, `C = M S`. The matrix is
//! estimated from particle detection counts, and noisy synthetic data follow
//! the multiplicative model `C_noisy = C_exact (1 + sigma mu)`, `mu ~ N(0, 1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DetectionCounts, Direction, DomainGrid, SensorSpec};
use crate::rng::{self, Purpose, StreamRng};
use crate::textio::{self, Metadata};
use crate::{Error, Result};

/// Linear operator from emission rates (g m^-3 s^-1) to concentrations (g m^-3).
/// Entries are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub receptor_ids: Vec<String>,
    pub source_ids: Vec<String>,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    /// `entries` is row-major, one row per receptor.
    pub fn new(receptor_ids: Vec<String>, source_ids: Vec<String>, entries: Vec<f64>) -> Result<Self> {
        let expected = receptor_ids.len() * source_ids.len();
        if entries.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: entries.len() });
        }
        if entries.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::validation("transition matrix entries must be finite and non-negative"));
        }
        Ok(Self { receptor_ids, source_ids, entries })
    }

    /// Builds a matrix from rows, labelling receptors `S1..` and sources `A1..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_s = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_s) {
            return Err(Error::DimensionMismatch { expected: n_s, found: bad.len() });
        }
        Self::new(
            (0..rows.len()).map(crate::dispersion::sensor_label).collect(),
            (0..n_s).map(crate::dispersion::cell_label).collect(),
            rows.concat(),
        )
    }

    pub fn n_receptors(&self) -> usize {
        self.receptor_ids.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn get(&self, receptor: usize, source: usize) -> f64 {
        self.entries[receptor * self.n_sources() + source]
    }

    pub fn row(&self, receptor: usize) -> &[f64] {
        let n = self.n_sources();
        &self.entries[receptor * n..(receptor + 1) * n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `M x` without any checks on the sign of `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_sources() {
            return Err(Error::DimensionMismatch { expected: self.n_sources(), found: x.len() });
        }
        Ok((0..self.n_receptors())
            .map(|i| self.row(i).iter().zip(x).map(|(m, s)| m * s).sum())
            .collect())
    }

    /// `M^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_receptors() {
            return Err(Error::DimensionMismatch { expected: self.n_receptors(), found: y.len() });
        }
        let mut out = vec![0.0; self.n_sources()];
        for (i, yi) in y.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += m * yi;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self, meta: &Metadata) -> String {
        let mut meta = meta.clone();
        meta.set("format", "transition-matrix v1");
        let mut out = String::new();
        meta.write_to(&mut out);
        out.push_str("receptor");
        for s in &self.source_ids {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for i in 0..self.n_receptors() {
            out.push_str(&self.receptor_ids[i]);
            out.push(',');
            out.push_str(&textio::join_f64(self.row(i)));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let meta = Metadata::parse(text);
        if meta.get("format") != Some("transition-matrix v1") {
            return Err(Error::format(1, "not a transition-matrix v1 file"));
        }
        let mut lines = textio::data_lines(text);
        let (_, header) = lines.next().ok_or_else(|| Error::format(0, "missing header row"))?;
        let header = textio::split_fields(header);
        if header.first() != Some(&"receptor") {
            return Err(Error::format(0, "header must start with `receptor`"));
        }
        let source_ids: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
        let mut receptor_ids = Vec::new();
        let mut entries = Vec::new();
        for (row, line) in lines {
            let f = textio::split_fields(line);
            if f.len() != source_ids.len() + 1 {
                return Err(Error::format(row, format!("expected {} fields", source_ids.len() + 1)));
            }
            receptor_ids.push(f[0].to_string());
            for (c, v) in f[1..].iter().enumerate() {
                entries.push(textio::parse_f64(v, row, c + 2)?);
            }
        }
        Self::new(receptor_ids, source_ids, entries)
    }
}

fn check_direction(counts: &DetectionCounts, want: Direction) -> Result<()> {
    if counts.direction != want {
        return Err(Error::Inconsistent(format!(
            "{} counts cannot build a {} matrix",
            counts.direction, want
        )));
    }
    Ok(())
}

fn per_particle_step(counts: &DetectionCounts, i: usize, j: usize, dt: f64) -> Result<f64> {
    let n = counts.count(i, j);
    let released = counts.released_for(i, j);
    if released == 0 {
        if n > 0 {
            return Err(Error::Inconsistent(format!(
                "{} detections of {} with no particles released",
                n, counts.source_ids[j]
            )));
        }
        return Ok(0.0);
    }
    Ok(dt / released as f64 * n as f64)
}

/// `M_ij = (V_S,j / V_R,i) (dt / N_S,j) N_R,i,j` from a forward run.
pub fn build_matrix_forward(
    counts: &DetectionCounts,
    grid: &DomainGrid,
    sensors: &[SensorSpec],
    dt: f64,
) -> Result<TransitionMatrix> {
    check_direction(counts, Direction::Forward)?;
    if sensors.len() != counts.n_sensors() {
        return Err(Error::DimensionMismatch { expected: counts.n_sensors(), found: sensors.len() });
    }
    let v_source = grid.cell_volume();
    let mut entries = Vec::with_capacity(counts.n_sensors() * counts.n_sources());
    for (i, sensor) in sensors.iter().enumerate() {
        for j in 0..counts.n_sources() {
            entries.push(v_source / sensor.volume() * per_particle_step(counts, i, j, dt)?);
        }
    }
    TransitionMatrix::new(counts.sensor_ids.clone(), counts.source_ids.clone(), entries)
}

/// `M_ij = (dt / N_i) N_S,i,j` from a backward run, where `N_i` is the number
/// of particles released at receptor `i`.
pub fn build_matrix_backward(counts: &DetectionCounts, dt: f64) -> Result<TransitionMatrix> {
    check_direction(counts, Direction::Backward)?;
    let mut entries = Vec::with_capacity(counts.n_sensors() * counts.n_sources());
    for i in 0..counts.n_sensors() {
        for j in 0..counts.n_sources() {
            entries.push(per_particle_step(counts, i, j, dt)?);
        }
    }
    TransitionMatrix::new(counts.sensor_ids.clone(), counts.source_ids.clone(), entries)
}

/// Per-cell emission rates (g m^-3 s^-1).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionVector(Vec<f64>);

impl EmissionVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::validation("emission rates must be finite and non-negative"));
        }
        Ok(Self(rates))
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Per-sensor concentrations (g m^-3).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector(pub Vec<f64>);

impl ObservationVector {
    pub fn concentrations(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn predict_concentrations(m: &TransitionMatrix, s: &EmissionVector) -> Result<ObservationVector> {
    Ok(ObservationVector(m.apply(s.rates())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Relative noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::validation("noise level must be non-negative"));
        }
        Ok(Self { sigma, seed })
    }
}

/// Applies `c (1 + sigma mu)` per component with `mu` supplied by the caller,
/// clamping negative results to zero.
pub fn add_noise_with(exact: &ObservationVector, sigma: f64, mut mu: impl FnMut() -> f64) -> ObservationVector {
    ObservationVector(exact.0.iter().map(|c| (c * (1.0 + sigma * mu())).max(0.0)).collect())
}

pub fn add_noise(exact: &ObservationVector, model: &NoiseModel) -> ObservationVector {
    let mut rng = rng::stream(model.seed, Purpose::Noise, 0, 0);
    add_noise_with(exact, model.sigma, || rng.sample(StandardNormal))
}

/// Distribution of emission vectors used to synthesise training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmissionPrior {
    /// Every rate uniform in `[min, max]`, independently.
    Independent { min: f64, max: f64 },
    /// Each zone (a list of positions in the emission vector) shares a level
    /// uniform in `[min, max]`; each member deviates from it by a relative
    /// uniform jitter in `[-jitter, jitter]`. Positions outside every zone are
    /// drawn independently.
    Zonal {
        min: f64,
        max: f64,
        zones: Vec<Vec<usize>>,
        jitter: f64,
    },
}

impl EmissionPrior {
    pub fn range(&self) -> (f64, f64) {
        match *self {
            EmissionPrior::Independent { min, max } | EmissionPrior::Zonal { min, max, .. } => (min, max),
        }
    }

    pub fn validate(&self, n_sources: usize) -> Result<()> {
        let (min, max) = self.range();
        if !(min.is_finite() && max.is_finite() && min >= 0.0 && min < max) {
            return Err(Error::validation(format!("invalid emission range [{min}, {max}]")));
        }
        if let EmissionPrior::Zonal { zones, jitter, .. } = self {
            if !(0.0..1.0).contains(jitter) {
                return Err(Error::validation("zone jitter must lie in [0, 1)"));
            }
            let mut seen = vec![false; n_sources];
            for &k in zones.iter().flatten() {
                if k >= n_sources || seen[k] {
                    return Err(Error::validation(format!("zone member {k} out of range or repeated")));
                }
                seen[k] = true;
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_sources: usize, rng: &mut R) -> EmissionVector {
        let (min, max) = self.range();
        let mut rates: Vec<f64> = (0..n_sources).map(|_| rng.random_range(min..=max)).collect();
        if let EmissionPrior::Zonal { zones, jitter, .. } = self {
            for zone in zones {
                let level = rng.random_range(min..=max);
                for &k in zone {
                    let factor = 1.0 + jitter * rng.random_range(-1.0..=1.0);
                    rates[k] = (level * factor).clamp(min, max);
                }
            }
        }
        EmissionVector(rates)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub emission: EmissionVector,
    pub observation: ObservationVector,
}

/// Forward-models `emission` through `m` and perturbs it with noise drawn from `rng`.
pub fn make_pair<R: Rng + ?Sized>(
    m: &TransitionMatrix,
    emission: EmissionVector,
    sigma: f64,
    rng: &mut R,
) -> Result<TrainingPair> {
    let exact = predict_concentrations(m, &emission)?;
    let observation = add_noise_with(&exact, sigma, || rng.sample(StandardNormal));
    Ok(TrainingPair { emission, observation })
}

fn pair_stream(seed: u64, index: usize) -> StreamRng {
    rng::stream(seed, Purpose::TrainingPair, 0, index as u64)
}

/// Draws `n_pairs` emission vectors from `prior` and pairs each with its noisy
/// concentrations. Pair `k` uses its own stream, so prefixes are stable when
/// `n_pairs` grows.
pub fn generate_training_set(
    m: &TransitionMatrix,
    n_pairs: usize,
    prior: &EmissionPrior,
    noise: &NoiseModel,
) -> Result<Vec<TrainingPair>> {
    if n_pairs == 0 {
        return Err(Error::validation("at least one training pair is required"));
    }
    prior.validate(m.n_sources())?;
    NoiseModel::new(noise.sigma, noise.seed)?;
    (0..n_pairs)
        .map(|k| {
            let mut rng = pair_stream(noise.seed, k);
            let s = prior.sample(m.n_sources(), &mut rng);
            make_pair(m, s, noise.sigma, &mut rng)
        })
        .collect()
}

/// Training, activation and generalization sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub training: Vec<TrainingPair>,
    pub activation: Vec<TrainingPair>,
    pub generalization: Vec<TrainingPair>,
}

/// Consecutive partition: the first `n_training`, the next `n_activation`, the rest.
pub fn split_pairs(mut pairs: Vec<TrainingPair>, n_training: usize, n_activation: usize) -> Result<DataSplit> {
    if n_training == 0 || n_training + n_activation > pairs.len() {
        return Err(Error::validation(format!(
            "cannot split {} pairs into {n_training} training and {n_activation} activation",
            pairs.len()
        )));
    }
    let generalization = pairs.split_off(n_training + n_activation);
    let activation = pairs.split_off(n_training);
    Ok(DataSplit { training: pairs, activation, generalization })
}

pub fn pairs_to_text(pairs: &[TrainingPair], source_ids: &[String], receptor_ids: &[String], meta: &Metadata) -> String {
    let mut meta = meta.clone();
    meta.set("format", "training-set v1");
    meta.set("sources", source_ids.len());
    let mut out = String::new();
    meta.write_to(&mut out);
    let header: Vec<String> = source_ids
        .iter()
        .map(|s| format!("S_{s}"))
        .chain(receptor_ids.iter().map(|r| format!("C_{r}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in pairs {
        out.push_str(&textio::join_f64(p.emission.rates()));
        out.push(',');
        out.push_str(&textio::join_f64(p.observation.concentrations()));
        out.push('\n');
    }
    out
}

/// Parsed training-set file: pairs plus the source and receptor ids.
pub fn pairs_from_text(text: &str) -> Result<(Vec<TrainingPair>, Vec<String>, Vec<String>)> {
    let meta = Metadata::parse(text);
    if meta.get("format") != Some("training-set v1") {
        return Err(Error::format(1, "not a training-set v1 file"));
    }
    let mut lines = textio::data_lines(text);
    let (_, header) = lines.next().ok_or_else(|| Error::format(0, "missing header row"))?;
    let header = textio::split_fields(header);
    let sources: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("S_")).map(String::from).collect();
    let receptors: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("C_")).map(String::from).collect();
    if sources.len() + receptors.len() != header.len() {
        return Err(Error::format(0, "header columns must be S_<cell> or C_<sensor>"));
    }
    let mut pairs = Vec::new();
    for (row, line) in lines {
        let f = textio::split_fields(line);
        if f.len() != header.len() {
            return Err(Error::format(row, format!("expected {} fields", header.len())));
        }
        let vals: Vec<f64> = f
            .iter()
            .enumerate()
            .map(|(c, v)| textio::parse_f64(v, row, c + 1))
            .collect::<Result<_>>()?;
        let (s, c) = vals.split_at(sources.len());
        pairs.push(TrainingPair {
            emission: EmissionVector::new(s.to_vec())?,
            observation: ObservationVector(c.to_vec()),
        });
    }
    Ok((pairs, sources, receptors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn counts(direction: Direction, n_sensors: usize, n_sources: usize) -> DetectionCounts {
        DetectionCounts::zeros(
            direction,
            1.0,
            100,
            (0..n_sensors).map(crate::dispersion::sensor_label).collect(),
            (0..n_sources).map(crate::dispersion::cell_label).collect(),
        )
    }

    #[test]
    fn forward_matrix_direct_evaluation() {
        let mut c = counts(Direction::Forward, 1, 2);
        c.released = vec![10_000, 10_000];
        c.set_count(0, 1, 2);
        let sensors = vec![SensorSpec::cube(400.0, 500.0, 10.0, 0.1)];
        let m = build_matrix_forward(&c, &DomainGrid::paper(), &sensors, 1.0).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_relative_eq!(m.get(0, 1), 1.2e7, max_relative = 1e-12);
    }

    #[test]
    fn forward_matrix_is_linear_in_counts() {
        let mut c = counts(Direction::Forward, 2, 2);
        c.released = vec![500, 800];
        c.set_count(0, 0, 3);
        c.set_count(1, 1, 7);
        c.set_count(1, 0, 1);
        let sensors = vec![SensorSpec::cube(400.0, 500.0, 10.0, 2.0); 2];
        let g = DomainGrid::paper();
        let m1 = build_matrix_forward(&c, &g, &sensors, 1.0).unwrap();
        let mut c2 = c.clone();
        for i in 0..2 {
            for j in 0..2 {
                c2.set_count(i, j, 2 * c.count(i, j));
            }
        }
        let m2 = build_matrix_forward(&c2, &g, &sensors, 1.0).unwrap();
        for (a, b) in m1.entries().iter().zip(m2.entries()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn detections_without_release_are_inconsistent() {
        let mut c = counts(Direction::Forward, 1, 1);
        c.set_count(0, 0, 1);
        let sensors = vec![SensorSpec::cube(400.0, 500.0, 10.0, 0.1)];
        assert!(matches!(
            build_matrix_forward(&c, &DomainGrid::paper(), &sensors, 1.0),
            Err(Error::Inconsistent(_))
        ));
        let mut b = counts(Direction::Backward, 1, 1);
        b.set_count(0, 0, 1);
        assert!(matches!(build_matrix_backward(&b, 1.0), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn backward_matrix_direct_evaluation() {
        let mut c = counts(Direction::Backward, 1, 2);
        c.released = vec![10_000];
        c.set_count(0, 1, 50);
        let m = build_matrix_backward(&c, 1.0).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_relative_eq!(m.get(0, 1), 5.0e-3, max_relative = 1e-12);
    }

    #[test]
    fn direction_mismatch() {
        let c = counts(Direction::Forward, 1, 1);
        assert!(matches!(build_matrix_backward(&c, 1.0), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn predict_zero_and_identity() {
        let id = TransitionMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let zero = EmissionVector::new(vec![0.0; 3]).unwrap();
        assert_eq!(predict_concentrations(&id, &zero).unwrap().0, vec![0.0; 3]);
        let e3 = EmissionVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(predict_concentrations(&id, &e3).unwrap().0, vec![0.0, 0.0, 1.0]);
        let short = EmissionVector::new(vec![1.0]).unwrap();
        assert!(matches!(predict_concentrations(&id, &short), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn noise_examples() {
        let exact = ObservationVector(vec![1.0, 2.5, 40.0]);
        assert_eq!(add_noise(&exact, &NoiseModel::new(0.0, 3).unwrap()), exact);
        let pinned = add_noise_with(&exact, 0.05, || 1.0);
        for (a, b) in pinned.0.iter().zip(&exact.0) {
            assert_relative_eq!(*a, b * 1.05, max_relative = 1e-15);
        }
        let clamped = add_noise_with(&exact, 2.0, || -1.0);
        assert_eq!(clamped.0, vec![0.0; 3]);
        assert!(NoiseModel::new(-0.1, 0).is_err());
    }

    #[test]
    fn training_set_examples() {
        let m = TransitionMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let prior = EmissionPrior::Independent { min: 0.0, max: 30.0 };
        let set = generate_training_set(&m, 50, &prior, &NoiseModel::new(0.05, 1).unwrap()).unwrap();
        assert_eq!(set.len(), 50);
        assert!(set.iter().flat_map(|p| p.emission.rates()).all(|r| (0.0..=30.0).contains(r)));

        let bad = EmissionPrior::Independent { min: 5.0, max: 5.0 };
        assert!(generate_training_set(&m, 5, &bad, &NoiseModel::new(0.0, 1).unwrap()).is_err());
        assert!(generate_training_set(&m, 0, &prior, &NoiseModel::new(0.0, 1).unwrap()).is_err());

        let mut rng = pair_stream(1, 0);
        let s = EmissionVector::new(vec![3.0, 4.0]).unwrap();
        let pair = make_pair(&m, s, 0.0, &mut rng).unwrap();
        assert_eq!(pair.observation.0, vec![11.0, 1.5]);
    }

    #[test]
    fn training_prefix_is_stable() {
        let m = TransitionMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let prior = EmissionPrior::Independent { min: 0.0, max: 30.0 };
        let noise = NoiseModel::new(0.1, 8).unwrap();
        let a = generate_training_set(&m, 10, &prior, &noise).unwrap();
        let b = generate_training_set(&m, 20, &prior, &noise).unwrap();
        assert_eq!(a[..], b[..10]);
    }

    #[test]
    fn zonal_prior_ties_members() {
        let prior = EmissionPrior::Zonal { min: 0.0, max: 30.0, zones: vec![vec![0, 1, 2], vec![3, 4]], jitter: 0.0 };
        prior.validate(6).unwrap();
        let mut rng = pair_stream(2, 0);
        for _ in 0..20 {
            let s = prior.sample(6, &mut rng);
            let r = s.rates();
            assert_eq!(r[0], r[1]);
            assert_eq!(r[1], r[2]);
            assert_eq!(r[3], r[4]);
            assert!(r.iter().all(|x| (0.0..=30.0).contains(x)));
        }
        let overlapping = EmissionPrior::Zonal { min: 0.0, max: 30.0, zones: vec![vec![0, 1], vec![1]], jitter: 0.0 };
        assert!(overlapping.validate(6).is_err());
        let jittered = EmissionPrior::Zonal { min: 0.0, max: 30.0, zones: vec![vec![0, 1]], jitter: 0.1 };
        let s = jittered.sample(2, &mut rng);
        let r = s.rates();
        assert!((r[0] - r[1]).abs() <= 0.2 * r[0].max(r[1]) + 1e-12);
    }

    #[test]
    fn split_is_a_partition() {
        let m = TransitionMatrix::from_rows(&[vec![1.0]]).unwrap();
        let prior = EmissionPrior::Independent { min: 0.0, max: 30.0 };
        let pairs = generate_training_set(&m, 100, &prior, &NoiseModel::new(0.0, 4).unwrap()).unwrap();
        let split = split_pairs(pairs.clone(), 50, 25).unwrap();
        assert_eq!((split.training.len(), split.activation.len(), split.generalization.len()), (50, 25, 25));
        let rejoined: Vec<_> = split.training.iter().chain(&split.activation).chain(&split.generalization).cloned().collect();
        assert_eq!(rejoined, pairs);
        assert!(split_pairs(pairs, 80, 30).is_err());
    }

    #[test]
    fn text_formats_round_trip() {
        let m = TransitionMatrix::from_rows(&[vec![0.1, 1e7], vec![3.0, 0.0]]).unwrap();
        let text = m.to_text(&Metadata::new().with("seed", 1));
        assert_eq!(TransitionMatrix::from_text(&text).unwrap(), m);

        let prior = EmissionPrior::Independent { min: 0.0, max: 30.0 };
        let pairs = generate_training_set(&m, 4, &prior, &NoiseModel::new(0.05, 4).unwrap()).unwrap();
        let text = pairs_to_text(&pairs, &m.source_ids, &m.receptor_ids, &Metadata::new());
        let (back, s, r) = pairs_from_text(&text).unwrap();
        assert_eq!(back, pairs);
        assert_eq!(s, m.source_ids);
        assert_eq!(r, m.receptor_ids);
    }

    proptest! {
        #[test]
        fn prediction_is_linear(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1e3, 4), 3),
            s1 in proptest::collection::vec(0.0f64..30.0, 4),
            s2 in proptest::collection::vec(0.0f64..30.0, 4),
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
        ) {
            let m = TransitionMatrix::from_rows(&rows).unwrap();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.apply(&mix).unwrap();
            let c1 = m.apply(&s1).unwrap();
            let c2 = m.apply(&s2).unwrap();
            for i in 0..3 {
                let rhs = a * c1[i] + b * c2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300) + 1e-9);
            }
        }

        #[test]
        fn backward_matrix_is_nonnegative(c in proptest::collection::vec(0u64..1000, 6), released in 1u64..1000) {
            let mut k = counts(Direction::Backward, 2, 3);
            k.released = vec![released; 2];
            for (idx, v) in c.iter().enumerate() {
                k.set_count(idx / 3, idx % 3, *v);
            }
            let m = build_matrix_backward(&k, 1.0).unwrap();
            prop_assert!(m.entries().iter().all(|e| *e >= 0.0));
        }
    }
}
