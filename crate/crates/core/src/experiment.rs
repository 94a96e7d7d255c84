//! The end-to-end emission-estimation experiment.
//!
//! Each stage is available in two forms: an in-memory function (`simulate`,
//! `build_matrix`, `synthesize`, ...) and a file-backed wrapper (`stage_*`)
//! that reads its inputs from and writes its artifacts to an output
//! directory. Every artifact starts with `# key: value` comments recording the
//! config hash and seed, and contains nothing time- or host-dependent, so a
//! rerun with the same config reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dispersion::{
    self, parse_cell_label, sensor_label, DetectionCounts, Direction, DomainGrid, ReleaseSchedule,
    Scenario, SensorSpec, SimulationConfig,
};
use crate::meteo::{self, Meteorology, TurbulenceParams};
use crate::mlp::{self, Activation, Scaler, Topology, TrainedModel, TrainingConfig, TrainingHistory};
use crate::regularized::{self, InverseObjective, PsoConfig, QnConfig, Regularizer, SolverDiagnostics};
use crate::source_receptor::{
    self, DataSplit, EmissionPrior, EmissionVector, NoiseModel, ObservationVector, TransitionMatrix,
};
use crate::textio::{self, Metadata};
use crate::{Error, Result};

/// Sizes of the three synthetic data sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub training: usize,
    pub activation: usize,
    pub generalization: usize,
}

/// Complete description of one experiment. Every field has a default, so a
/// config file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives every random stream (particles, noise, pairs, weights, swarm).
    pub seed: u64,
    pub grid: DomainGrid,
    pub sensors: Vec<SensorSpec>,
    /// Detection box used instead of the sensor volume in forward runs; `null`
    /// keeps the sensor volume.
    pub forward_sampling_extent: Option<[f64; 3]>,
    /// Emitting cells, e.g. `"A2"`.
    pub active_cells: Vec<String>,
    /// True emission rates of `active_cells` (g m^-3 s^-1).
    pub exact_rates: Vec<f64>,
    /// Wind table; `null` uses the built-in Copenhagen table.
    pub meteorology_file: Option<PathBuf>,
    pub meteorology_heights: Vec<f64>,
    /// Duration of one wind record (s).
    pub record_period: f64,
    pub turbulence: TurbulenceParams,
    pub direction: Direction,
    pub dt: f64,
    pub particles_per_cell: usize,
    pub duration: f64,
    pub release: ReleaseSchedule,
    /// Relative noise level of the observations and training pairs.
    pub noise: f64,
    pub prior: EmissionPrior,
    pub pairs: PairCounts,
    pub topology: String,
    /// One activation per non-input layer.
    pub activations: Vec<String>,
    pub eta: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub regularizer: Regularizer,
    pub s_max: f64,
    /// Fixed regularization weight; `null` selects one by the discrepancy principle.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub qn: QnConfig,
    /// The swarm's `seed` is replaced by the top-level seed.
    pub pso: PsoConfig,
}

pub const PAPER_ACTIVE_CELLS: [&str; 12] =
    ["A2", "A3", "A4", "A7", "A8", "A9", "A12", "A13", "A14", "A17", "A18", "A19"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        let active: Vec<String> = PAPER_ACTIVE_CELLS.iter().map(|s| s.to_string()).collect();
        let exact_rates = (0..12).map(|k| if k < 6 { 10.0 } else { 20.0 }).collect();
        Self {
            seed: 42,
            grid: DomainGrid::paper(),
            sensors: SensorSpec::paper_sensors(),
            forward_sampling_extent: Some([40.0, 40.0, 20.0]),
            active_cells: active,
            exact_rates,
            meteorology_file: None,
            meteorology_heights: meteo::COPENHAGEN_HEIGHTS.to_vec(),
            record_period: meteo::DEFAULT_RECORD_PERIOD,
            turbulence: TurbulenceParams::default(),
            direction: Direction::Forward,
            dt: 1.0,
            particles_per_cell: 10_000,
            duration: 3000.0,
            release: ReleaseSchedule::Continuous,
            noise: 0.05,
            prior: EmissionPrior::Zonal {
                min: 0.0,
                max: 30.0,
                zones: vec![(0..6).collect(), (6..12).collect()],
                jitter: 0.05,
            },
            pairs: PairCounts { training: 200, activation: 50, generalization: 50 },
            topology: "6:15:30:12".into(),
            activations: vec!["logsig".into(); 3],
            eta: 0.1,
            alpha: 0.5,
            epochs: 20_000,
            regularizer: Regularizer::MaxEntropy,
            s_max: 30.0,
            lambda: None,
            lambda_grid: regularized::default_lambda_grid(),
            qn: QnConfig::default(),
            pso: PsoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.sensors.is_empty() {
            return Err(Error::validation("at least one sensor is required"));
        }
        for s in self.sampling_sensors(self.direction) {
            s.validate(&self.grid)?;
        }
        let cells = self.active_indices()?;
        if cells.is_empty() {
            return Err(Error::validation("at least one active cell is required"));
        }
        let mut sorted = cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != cells.len() {
            return Err(Error::validation("active cells must be distinct"));
        }
        if self.exact_rates.len() != cells.len() {
            return Err(Error::validation(format!(
                "{} exact rates for {} active cells",
                self.exact_rates.len(),
                cells.len()
            )));
        }
        EmissionVector::new(self.exact_rates.clone())?;
        self.turbulence.validate()?;
        self.simulation_config().validate(&self.turbulence)?;
        NoiseModel::new(self.noise, self.seed)?;
        self.prior.validate(cells.len())?;
        if self.pairs.training == 0 {
            return Err(Error::validation("at least one training pair is required"));
        }
        let t = self.topology()?;
        if t.inputs() != self.sensors.len() || t.outputs() != cells.len() {
            return Err(Error::validation(format!(
                "topology {t} does not map {} sensors to {} cells",
                self.sensors.len(),
                cells.len()
            )));
        }
        self.activations()?;
        self.training_config().validate()?;
        if self.lambda.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::validation("regularization weight must be non-negative"));
        }
        if !(self.s_max.is_finite() && self.s_max > 0.0) {
            return Err(Error::validation("entropy normalisation must be positive"));
        }
        if self.lambda.is_none() && (self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0))) {
            return Err(Error::validation("lambda grid needs non-negative values"));
        }
        self.qn.validate()?;
        self.pso.validate()?;
        Ok(())
    }

    pub fn active_indices(&self) -> Result<Vec<usize>> {
        self.active_cells
            .iter()
            .map(|l| {
                let k = parse_cell_label(l)?;
                self.grid.row_col(k).map_err(|_| Error::validation(format!("cell {l} is outside the grid")))?;
                Ok(k)
            })
            .collect()
    }

    pub fn topology(&self) -> Result<Topology> {
        self.topology.parse()
    }

    pub fn activations(&self) -> Result<Vec<Activation>> {
        let acts = self.activations.iter().map(|a| a.parse()).collect::<Result<Vec<Activation>>>()?;
        if acts.len() != 3 {
            return Err(Error::validation("one activation per hidden and output layer is required"));
        }
        Ok(acts)
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            dt: self.dt,
            n_particles_per_source: self.particles_per_cell,
            duration: self.duration,
            direction: self.direction,
            release: self.release,
            seed: self.seed,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig { eta: self.eta, alpha: self.alpha, max_iterations: self.epochs, seed: self.seed }
    }

    pub fn pso_config(&self) -> PsoConfig {
        PsoConfig { seed: self.seed, ..self.pso.clone() }
    }

    /// Detection volumes used by runs in `direction`.
    pub fn sampling_sensors(&self, direction: Direction) -> Vec<SensorSpec> {
        match (direction, self.forward_sampling_extent) {
            (Direction::Forward, Some(extent)) => self.sensors.iter().map(|s| SensorSpec { extent, ..*s }).collect(),
            _ => self.sensors.clone(),
        }
    }

    pub fn meteorology(&self) -> Result<Meteorology> {
        let Some(path) = &self.meteorology_file else {
            let records = meteo::load_meteorology(meteo::COPENHAGEN_TABLE, &self.meteorology_heights)?;
            return Meteorology::new(records, self.record_period);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read meteorology file {}: {e}", path.display())))?;
        Meteorology::new(meteo::load_meteorology(&text, &self.meteorology_heights)?, self.record_period)
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        (0..self.sensors.len()).map(sensor_label).collect()
    }

    /// Header comments shared by every artifact.
    pub fn metadata(&self) -> Metadata {
        Metadata::new().with("config_hash", self.hash()).with("seed", self.seed)
    }
}

/// Runs the particle model for every active cell (forward) or sensor (backward).
pub fn simulate(cfg: &ExperimentConfig) -> Result<DetectionCounts> {
    let sensors = cfg.sampling_sensors(cfg.direction);
    let sources = cfg.active_indices()?;
    let met = cfg.meteorology()?;
    let scenario = Scenario {
        grid: &cfg.grid,
        sensors: &sensors,
        sources: &sources,
        meteorology: &met,
        turbulence: &cfg.turbulence,
    };
    dispersion::run_dispersion(&scenario, &cfg.simulation_config())
}

/// Transition matrix from counts, using the formula of the counts' direction.
pub fn build_matrix(cfg: &ExperimentConfig, counts: &DetectionCounts) -> Result<TransitionMatrix> {
    if counts.source_ids != cfg.active_cells || counts.sensor_ids != cfg.sensor_ids() {
        return Err(Error::Inconsistent("counts do not match the configured cells and sensors".into()));
    }
    match counts.direction {
        Direction::Forward => {
            let sensors = cfg.sampling_sensors(Direction::Forward);
            source_receptor::build_matrix_forward(counts, &cfg.grid, &sensors, counts.dt)
        }
        Direction::Backward => source_receptor::build_matrix_backward(counts, counts.dt),
    }
}

/// Exact and noisy observations of the configured emission, plus the data sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub exact: ObservationVector,
    pub observed: ObservationVector,
    pub split: DataSplit,
}

pub fn synthesize(cfg: &ExperimentConfig, m: &TransitionMatrix) -> Result<Synthesis> {
    let truth = EmissionVector::new(cfg.exact_rates.clone())?;
    let exact = source_receptor::predict_concentrations(m, &truth)?;
    let noise = NoiseModel::new(cfg.noise, cfg.seed)?;
    let observed = source_receptor::add_noise(&exact, &noise);
    let n = cfg.pairs.training + cfg.pairs.activation + cfg.pairs.generalization;
    let pairs = source_receptor::generate_training_set(m, n, &cfg.prior, &noise)?;
    let split = source_receptor::split_pairs(pairs, cfg.pairs.training, cfg.pairs.activation)?;
    Ok(Synthesis { exact, observed, split })
}

/// Fits the scaler on the training set and trains the configured network.
pub fn train_network(
    cfg: &ExperimentConfig,
    topology: &Topology,
    split: &DataSplit,
) -> Result<(TrainedModel, TrainingHistory)> {
    let training = &split.training;
    let scaler = Scaler::fit(
        training.iter().map(|p| p.observation.concentrations()),
        training.iter().map(|p| p.emission.rates()),
        topology.inputs(),
        topology.outputs(),
    )?;
    let mut network = mlp::init_network_with(topology, &cfg.activations()?, cfg.seed)?;
    let history = mlp::train(&mut network, training, &split.activation, &cfg.training_config(), &scaler)?;
    Ok((TrainedModel { network, scaler }, history))
}

/// Estimates from one solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverEstimate {
    /// Column label: `Q-N`, `PSO` or `ANN <topology>`.
    pub solver: String,
    pub emission: EmissionVector,
    /// Wall-clock seconds; informational only, never written to artifacts.
    pub runtime: f64,
}

pub fn ann_label(topology: &Topology) -> String {
    format!("ANN {topology}")
}

pub fn invert_ann(model: &TrainedModel, observed: &ObservationVector) -> Result<SolverEstimate> {
    let start = Instant::now();
    let inv = mlp::invert(&model.network, &model.scaler, observed)?;
    Ok(SolverEstimate {
        solver: ann_label(model.network.topology()),
        emission: inv.emission,
        runtime: start.elapsed().as_secs_f64(),
    })
}

/// Regularized solutions with the weight chosen once for both solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedRun {
    pub lambda: f64,
    pub qn: SolverEstimate,
    pub qn_diagnostics: SolverDiagnostics,
    pub pso: SolverEstimate,
    pub pso_diagnostics: SolverDiagnostics,
}

pub fn objective(cfg: &ExperimentConfig, m: &TransitionMatrix, observed: &ObservationVector, lambda: f64) -> Result<InverseObjective> {
    InverseObjective::new(m.clone(), observed, lambda, cfg.regularizer, cfg.s_max)
}

pub fn choose_lambda(cfg: &ExperimentConfig, m: &TransitionMatrix, observed: &ObservationVector) -> Result<f64> {
    match cfg.lambda {
        Some(l) => Ok(l),
        None => {
            let template = objective(cfg, m, observed, 0.0)?;
            Ok(regularized::select_lambda(&template, cfg.noise, &cfg.lambda_grid, &cfg.qn)?.lambda)
        }
    }
}

pub fn invert_regularized(cfg: &ExperimentConfig, m: &TransitionMatrix, observed: &ObservationVector) -> Result<RegularizedRun> {
    let lambda = choose_lambda(cfg, m, observed)?;
    let obj = objective(cfg, m, observed, lambda)?;
    let start = Instant::now();
    let (qn_s, qn_diagnostics) = regularized::quasi_newton_solve(&obj, &cfg.qn)?;
    let qn_time = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (pso_s, pso_diagnostics) = regularized::pso_solve(&obj, &cfg.pso_config())?;
    let pso_time = start.elapsed().as_secs_f64();
    Ok(RegularizedRun {
        lambda,
        qn: SolverEstimate { solver: "Q-N".into(), emission: qn_s, runtime: qn_time },
        qn_diagnostics,
        pso: SolverEstimate { solver: "PSO".into(), emission: pso_s, runtime: pso_time },
        pso_diagnostics,
    })
}

/// Accuracy summary of one solver column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// Largest `|estimate - exact| / exact` over the cells.
    pub max_relative_error: f64,
    /// Root-mean-square of `estimate - exact` (g m^-3 s^-1).
    pub rms_error: f64,
}

pub fn error_metrics(exact: &[f64], estimate: &[f64]) -> ErrorMetrics {
    let max_relative_error = exact
        .iter()
        .zip(estimate)
        .map(|(e, s)| ((s - e) / e).abs())
        .fold(0.0, f64::max);
    let sq: f64 = exact.iter().zip(estimate).map(|(e, s)| (s - e) * (s - e)).sum();
    ErrorMetrics { max_relative_error, rms_error: (sq / exact.len() as f64).sqrt() }
}

/// Per-cell comparison of the solvers against the exact rates.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionReport {
    pub cells: Vec<String>,
    pub exact: Vec<f64>,
    pub columns: Vec<SolverEstimate>,
}

impl InversionReport {
    pub fn new(cells: Vec<String>, exact: Vec<f64>, columns: Vec<SolverEstimate>) -> Result<Self> {
        for c in &columns {
            if c.emission.len() != cells.len() {
                return Err(Error::DimensionMismatch { expected: cells.len(), found: c.emission.len() });
            }
        }
        if exact.len() != cells.len() {
            return Err(Error::DimensionMismatch { expected: cells.len(), found: exact.len() });
        }
        Ok(Self { cells, exact, columns })
    }

    pub fn metrics(&self) -> Vec<(String, ErrorMetrics)> {
        self.columns
            .iter()
            .map(|c| (c.solver.clone(), error_metrics(&self.exact, c.emission.rates())))
            .collect()
    }

    pub fn column(&self, solver: &str) -> Option<&SolverEstimate> {
        self.columns.iter().find(|c| c.solver == solver)
    }

    /// Table of estimates followed by a metrics block.
    pub fn to_text(&self, meta: &Metadata) -> String {
        let mut meta = meta.clone();
        meta.set("format", "inversion-report v1");
        let mut out = String::new();
        meta.write_to(&mut out);
        let names: Vec<&str> = self.columns.iter().map(|c| c.solver.as_str()).collect();
        let _ = writeln!(out, "cell,Exact,{}", names.join(","));
        for (k, cell) in self.cells.iter().enumerate() {
            let row: Vec<f64> = std::iter::once(self.exact[k])
                .chain(self.columns.iter().map(|c| c.emission.rates()[k]))
                .collect();
            let _ = writeln!(out, "{cell},{}", textio::join_f64(&row));
        }
        let metrics = self.metrics();
        let max: Vec<f64> = metrics.iter().map(|(_, m)| m.max_relative_error).collect();
        let rms: Vec<f64> = metrics.iter().map(|(_, m)| m.rms_error).collect();
        let _ = writeln!(out, "# metrics");
        let _ = writeln!(out, "max_relative_error,,{}", textio::join_f64(&max));
        let _ = writeln!(out, "rms_error,,{}", textio::join_f64(&rms));
        out
    }

    /// Reads the estimate rows back; the metric rows are recomputed, not trusted.
    pub fn from_text(text: &str) -> Result<Self> {
        if Metadata::parse(text).get("format") != Some("inversion-report v1") {
            return Err(Error::format(1, "not an inversion-report v1 file"));
        }
        let mut lines = textio::data_lines(text);
        let (_, header) = lines.next().ok_or_else(|| Error::format(0, "missing header row"))?;
        let header = textio::split_fields(header);
        if header.len() < 2 || header[0] != "cell" || header[1] != "Exact" {
            return Err(Error::format(0, "header must start with cell,Exact"));
        }
        let solvers: Vec<String> = header[2..].iter().map(|s| s.to_string()).collect();
        let mut cells = Vec::new();
        let mut exact = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); solvers.len()];
        for (row, line) in lines {
            let f = textio::split_fields(line);
            if f[0] == "max_relative_error" || f[0] == "rms_error" {
                continue;
            }
            if f.len() != header.len() {
                return Err(Error::format(row, format!("expected {} fields", header.len())));
            }
            cells.push(f[0].to_string());
            exact.push(textio::parse_f64(f[1], row, 2)?);
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(textio::parse_f64(f[k + 2], row, k + 3)?);
            }
        }
        let columns = solvers
            .into_iter()
            .zip(cols)
            .map(|(solver, v)| Ok(SolverEstimate { solver, emission: EmissionVector::new(v)?, runtime: f64::NAN }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cells, exact, columns)
    }
}

/// `ny` rows of `nx` values (first row at y = 0); inactive cells are 0.
pub fn emission_grid(grid: &DomainGrid, cells: &[usize], rates: &[f64]) -> Result<Vec<Vec<f64>>> {
    if cells.len() != rates.len() {
        return Err(Error::DimensionMismatch { expected: cells.len(), found: rates.len() });
    }
    let mut out = vec![vec![0.0; grid.nx]; grid.ny];
    for (&c, &r) in cells.iter().zip(rates) {
        let (row, col) = grid.row_col(c)?;
        out[row][col] = r;
    }
    Ok(out)
}

pub fn grid_to_text(values: &[Vec<f64>], meta: &Metadata) -> String {
    let mut out = String::new();
    meta.write_to(&mut out);
    for row in values {
        out.push_str(&textio::join_f64(row));
        out.push('\n');
    }
    out
}

/// Everything produced by one in-memory run of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub counts: DetectionCounts,
    pub matrix: TransitionMatrix,
    pub synthesis: Synthesis,
    pub models: Vec<(TrainedModel, TrainingHistory)>,
    pub regularized: RegularizedRun,
    pub report: InversionReport,
}

/// Simulate, build the matrix, synthesise, train each topology and invert.
pub fn run_pipeline(cfg: &ExperimentConfig, topologies: &[Topology]) -> Result<PipelineRun> {
    cfg.validate()?;
    let counts = simulate(cfg)?;
    let matrix = build_matrix(cfg, &counts)?;
    let synthesis = synthesize(cfg, &matrix)?;
    let mut models = Vec::new();
    let mut columns = Vec::new();
    let regularized = invert_regularized(cfg, &matrix, &synthesis.observed)?;
    columns.push(regularized.qn.clone());
    columns.push(regularized.pso.clone());
    for t in topologies {
        let (model, history) = train_network(cfg, t, &synthesis.split)?;
        columns.push(invert_ann(&model, &synthesis.observed)?);
        models.push((model, history));
    }
    let report = InversionReport::new(cfg.active_cells.clone(), cfg.exact_rates.clone(), columns)?;
    Ok(PipelineRun { counts, matrix, synthesis, models, regularized, report })
}

// File-backed stages.

pub const COUNTS_FILE: &str = "counts.csv";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const OBSERVATION_FILE: &str = "observation.csv";
pub const TRAINING_FILE: &str = "training.csv";
pub const ACTIVATION_FILE: &str = "activation.csv";
pub const GENERALIZATION_FILE: &str = "generalization.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn network_file(topology: &Topology) -> String {
    format!("network_{}.txt", topology.tag())
}

pub fn history_file(topology: &Topology) -> String {
    format!("history_{}.csv", topology.tag())
}

/// File-name stem of a solver column: `qn`, `pso`, `ann_6-15-30-12`.
pub fn solver_stem(solver: &str) -> String {
    match solver {
        "Q-N" => "qn".into(),
        "PSO" => "pso".into(),
        other => other.to_lowercase().replace(' ', "_").replace(':', "-"),
    }
}

fn read(out: &Path, name: &str) -> Result<String> {
    let path = out.join(name);
    fs::read_to_string(&path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn write(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

/// Rejects artifacts produced under a different config.
fn check_provenance(cfg: &ExperimentConfig, text: &str, name: &str) -> Result<()> {
    match Metadata::parse(text).get("config_hash") {
        Some(h) if h == cfg.hash() => Ok(()),
        _ => Err(Error::Inconsistent(format!("{name} was produced with a different config"))),
    }
}

pub fn stage_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<DetectionCounts> {
    cfg.validate()?;
    let counts = simulate(cfg)?;
    let meta = cfg.metadata().with("stage", "simulate");
    write(out, COUNTS_FILE, &counts.to_text(&meta))?;
    Ok(counts)
}

pub fn stage_matrix(cfg: &ExperimentConfig, out: &Path) -> Result<TransitionMatrix> {
    cfg.validate()?;
    let text = read(out, COUNTS_FILE)?;
    check_provenance(cfg, &text, COUNTS_FILE)?;
    let counts = DetectionCounts::from_text(&text)?;
    let m = build_matrix(cfg, &counts)?;
    let meta = cfg.metadata().with("stage", "matrix").with("direction", counts.direction);
    write(out, MATRIX_FILE, &m.to_text(&meta))?;
    Ok(m)
}

fn load_matrix(cfg: &ExperimentConfig, out: &Path) -> Result<TransitionMatrix> {
    let text = read(out, MATRIX_FILE)?;
    check_provenance(cfg, &text, MATRIX_FILE)?;
    TransitionMatrix::from_text(&text)
}

fn observation_to_text(ids: &[String], exact: &ObservationVector, observed: &ObservationVector, meta: &Metadata) -> String {
    let mut meta = meta.clone();
    meta.set("format", "observation v1");
    let mut out = String::new();
    meta.write_to(&mut out);
    out.push_str("sensor,exact,observed\n");
    for (k, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "{id},{},{}", exact.0[k], observed.0[k]);
    }
    out
}

/// Sensor ids and the noisy observation column of an observation file.
pub fn observation_from_text(text: &str) -> Result<(Vec<String>, ObservationVector)> {
    if Metadata::parse(text).get("format") != Some("observation v1") {
        return Err(Error::format(1, "not an observation v1 file"));
    }
    let mut lines = textio::data_lines(text);
    match lines.next() {
        Some((_, "sensor,exact,observed")) => {}
        _ => return Err(Error::format(0, "header must be sensor,exact,observed")),
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines {
        let f = textio::split_fields(line);
        if f.len() != 3 {
            return Err(Error::format(row, "expected 3 fields"));
        }
        ids.push(f[0].to_string());
        values.push(textio::parse_f64(f[2], row, 3)?);
    }
    Ok((ids, ObservationVector(values)))
}

pub fn stage_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Synthesis> {
    cfg.validate()?;
    let m = load_matrix(cfg, out)?;
    let syn = synthesize(cfg, &m)?;
    let meta = cfg.metadata().with("stage", "synth").with("noise", cfg.noise);
    write(out, OBSERVATION_FILE, &observation_to_text(&m.receptor_ids, &syn.exact, &syn.observed, &meta))?;
    for (name, set) in [
        (TRAINING_FILE, &syn.split.training),
        (ACTIVATION_FILE, &syn.split.activation),
        (GENERALIZATION_FILE, &syn.split.generalization),
    ] {
        let text = source_receptor::pairs_to_text(set, &m.source_ids, &m.receptor_ids, &meta);
        write(out, name, &text)?;
    }
    Ok(syn)
}

fn load_pairs(cfg: &ExperimentConfig, out: &Path, name: &str) -> Result<Vec<source_receptor::TrainingPair>> {
    let text = read(out, name)?;
    check_provenance(cfg, &text, name)?;
    Ok(source_receptor::pairs_from_text(&text)?.0)
}

pub fn stage_train(cfg: &ExperimentConfig, topology: &Topology, out: &Path) -> Result<(TrainedModel, TrainingHistory)> {
    cfg.validate()?;
    let split = DataSplit {
        training: load_pairs(cfg, out, TRAINING_FILE)?,
        activation: load_pairs(cfg, out, ACTIVATION_FILE)?,
        generalization: Vec::new(),
    };
    let (model, history) = train_network(cfg, topology, &split)?;
    let meta = cfg.metadata().with("stage", "train").with("topology", topology);
    write(out, &network_file(topology), &model.to_text(&meta))?;
    let mut text = String::new();
    meta.write_to(&mut text);
    text.push_str("epoch,training_sse,activation_sse\n");
    for (k, sse) in history.training_sse.iter().enumerate() {
        let act = history.activation_sse.get(k).map_or(String::new(), |v| v.to_string());
        let _ = writeln!(text, "{},{sse},{act}", k + 1);
    }
    write(out, &history_file(topology), &text)?;
    Ok((model, history))
}

fn estimate_to_text(cells: &[String], est: &SolverEstimate, meta: &Metadata) -> String {
    let mut meta = meta.clone();
    meta.set("format", "estimate v1");
    meta.set("solver", &est.solver);
    let mut out = String::new();
    meta.write_to(&mut out);
    out.push_str("cell,estimate\n");
    for (cell, v) in cells.iter().zip(est.emission.rates()) {
        let _ = writeln!(out, "{cell},{v}");
    }
    out
}

fn estimate_from_text(text: &str) -> Result<(Vec<String>, SolverEstimate)> {
    let meta = Metadata::parse(text);
    if meta.get("format") != Some("estimate v1") {
        return Err(Error::format(1, "not an estimate v1 file"));
    }
    let solver = textio::require(&meta, "solver")?.to_string();
    let mut cells = Vec::new();
    let mut values = Vec::new();
    for (row, line) in textio::data_lines(text).skip(1) {
        let f = textio::split_fields(line);
        if f.len() != 2 {
            return Err(Error::format(row, "expected 2 fields"));
        }
        cells.push(f[0].to_string());
        values.push(textio::parse_f64(f[1], row, 2)?);
    }
    Ok((cells, SolverEstimate { solver, emission: EmissionVector::new(values)?, runtime: f64::NAN }))
}

fn estimate_file(solver: &str) -> String {
    format!("estimates_{}.csv", solver_stem(solver))
}

/// Estimates written by [`stage_invert`], with the regularization weight used.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertOutput {
    pub estimates: Vec<SolverEstimate>,
    pub lambda: f64,
}

/// Runs the network for `topology` (when its file exists) and both
/// regularized solvers on the stored observation.
pub fn stage_invert(cfg: &ExperimentConfig, topology: &Topology, out: &Path) -> Result<InvertOutput> {
    cfg.validate()?;
    let m = load_matrix(cfg, out)?;
    let obs_text = read(out, OBSERVATION_FILE)?;
    check_provenance(cfg, &obs_text, OBSERVATION_FILE)?;
    let (_, observed) = observation_from_text(&obs_text)?;
    let net_text = read(out, &network_file(topology))?;
    check_provenance(cfg, &net_text, &network_file(topology))?;
    let model = TrainedModel::from_text(&net_text)?;
    let ann = invert_ann(&model, &observed)?;
    let reg = invert_regularized(cfg, &m, &observed)?;
    let meta = cfg.metadata().with("stage", "invert").with("lambda", reg.lambda);
    for est in [&ann, &reg.qn, &reg.pso] {
        write(out, &estimate_file(&est.solver), &estimate_to_text(&m.source_ids, est, &meta))?;
    }
    write(out, "diagnostics_qn.csv", &reg.qn_diagnostics.to_text(&meta.clone().with("solver", "Q-N")))?;
    write(out, "diagnostics_pso.csv", &reg.pso_diagnostics.to_text(&meta.clone().with("solver", "PSO")))?;
    Ok(InvertOutput { estimates: vec![ann, reg.qn, reg.pso], lambda: reg.lambda })
}

/// Collects every estimate file in `out` into the report and the grid files.
/// Columns are ordered Q-N, PSO, then the networks by file name.
pub fn stage_compare(cfg: &ExperimentConfig, out: &Path) -> Result<InversionReport> {
    cfg.validate()?;
    let mut names: Vec<String> = fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("estimates_") && n.ends_with(".csv"))
        .collect();
    let rank = |n: &str| match n {
        "estimates_qn.csv" => 0,
        "estimates_pso.csv" => 1,
        _ => 2,
    };
    names.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
    if names.is_empty() {
        return Err(Error::Inconsistent("no estimate files to compare; run invert first".into()));
    }
    let mut columns = Vec::new();
    for name in &names {
        let text = read(out, name)?;
        check_provenance(cfg, &text, name)?;
        let (cells, est) = estimate_from_text(&text)?;
        if cells != cfg.active_cells {
            return Err(Error::Inconsistent(format!("{name} does not list the configured cells")));
        }
        columns.push(est);
    }
    let report = InversionReport::new(cfg.active_cells.clone(), cfg.exact_rates.clone(), columns)?;
    let meta = cfg.metadata().with("stage", "compare");
    write(out, REPORT_FILE, &report.to_text(&meta))?;
    let cells = cfg.active_indices()?;
    let exact_grid = emission_grid(&cfg.grid, &cells, &cfg.exact_rates)?;
    write(out, "grid_exact.csv", &grid_to_text(&exact_grid, &meta.clone().with("solver", "Exact")))?;
    for c in &report.columns {
        let g = emission_grid(&cfg.grid, &cells, c.emission.rates())?;
        let name = format!("grid_{}.csv", solver_stem(&c.solver));
        write(out, &name, &grid_to_text(&g, &meta.clone().with("solver", &c.solver)))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            particles_per_cell: 200,
            duration: 600.0,
            pairs: PairCounts { training: 20, activation: 5, generalization: 5 },
            epochs: 5,
            lambda: Some(1e-3),
            pso: PsoConfig { max_iterations: 10, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.active_indices().unwrap(), vec![1, 2, 3, 6, 7, 8, 11, 12, 13, 16, 17, 18]);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9, "noise": 0.1}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.noise, 0.1);
        assert_eq!(cfg.topology, "6:15:30:12");
        assert!(ExperimentConfig::from_json(r#"{"sed": 9}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ExperimentConfig { particles_per_cell: 0, ..Default::default() },
            ExperimentConfig { active_cells: vec!["A26".into()], exact_rates: vec![1.0], ..Default::default() },
            ExperimentConfig { exact_rates: vec![1.0], ..Default::default() },
            ExperimentConfig { topology: "6:6:12:11".into(), ..Default::default() },
            ExperimentConfig { activations: vec!["relu".into(); 3], ..Default::default() },
            ExperimentConfig { noise: -0.1, ..Default::default() },
            ExperimentConfig { meteorology_file: Some("/nonexistent/met.csv".into()), ..Default::default() },
        ];
        for cfg in &bad[..6] {
            assert!(matches!(cfg.validate(), Err(Error::Validation(_))), "{cfg:?}");
        }
        assert!(bad[6].meteorology().unwrap_err().is_usage());
    }

    #[test]
    fn grid_places_inactive_cells_at_zero() {
        let cfg = ExperimentConfig::default();
        let g = emission_grid(&cfg.grid, &cfg.active_indices().unwrap(), &cfg.exact_rates).unwrap();
        assert_eq!(g.len(), 5);
        assert!(g.iter().all(|r| r.len() == 5));
        assert_eq!(g.iter().flatten().filter(|v| **v == 0.0).count(), 13);
        assert_eq!(g[0], vec![0.0, 10.0, 10.0, 10.0, 0.0]);
        assert_eq!(g[3], vec![0.0, 20.0, 20.0, 20.0, 0.0]);
        assert_eq!(g[4], vec![0.0; 5]);
    }

    #[test]
    fn metrics_by_hand() {
        let m = error_metrics(&[10.0, 20.0], &[11.0, 19.0]);
        assert!((m.max_relative_error - 0.1).abs() < 1e-15);
        assert!((m.rms_error - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_round_trip_recomputes_metrics() {
        let cells = vec!["A2".to_string(), "A3".to_string()];
        let cols = vec![
            SolverEstimate { solver: "Q-N".into(), emission: EmissionVector::new(vec![9.0, 22.0]).unwrap(), runtime: 1.0 },
            SolverEstimate { solver: "ANN 6:6:12:12".into(), emission: EmissionVector::new(vec![10.5, 20.0]).unwrap(), runtime: 0.0 },
        ];
        let report = InversionReport::new(cells, vec![10.0, 20.0], cols).unwrap();
        let text = report.to_text(&Metadata::new());
        assert!(text.contains("cell,Exact,Q-N,ANN 6:6:12:12\nA2,10,9,10.5\n"));
        assert!(text.contains("max_relative_error,,0.1,0.05\n"));
        let back = InversionReport::from_text(&text).unwrap();
        assert_eq!(back.metrics(), report.metrics());
    }

    #[test]
    fn stem_names() {
        assert_eq!(solver_stem("Q-N"), "qn");
        assert_eq!(solver_stem("ANN 6:15:30:12"), "ann_6-15-30-12");
    }

    #[test]
    fn staged_run_matches_in_memory_run() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let t = cfg.topology().unwrap();
        stage_simulate(&cfg, dir.path()).unwrap();
        stage_matrix(&cfg, dir.path()).unwrap();
        stage_synth(&cfg, dir.path()).unwrap();
        stage_train(&cfg, &t, dir.path()).unwrap();
        stage_invert(&cfg, &t, dir.path()).unwrap();
        let staged = stage_compare(&cfg, dir.path()).unwrap();
        let direct = run_pipeline(&cfg, &[t]).unwrap();
        let solvers: Vec<&str> = staged.columns.iter().map(|c| c.solver.as_str()).collect();
        assert_eq!(solvers, ["Q-N", "PSO", "ANN 6:15:30:12"]);
        for c in &direct.report.columns {
            assert_eq!(staged.column(&c.solver).unwrap().emission, c.emission, "{}", c.solver);
        }
        let grid = fs::read_to_string(dir.path().join("grid_ann_6-15-30-12.csv")).unwrap();
        assert_eq!(textio::data_lines(&grid).count(), 5);
    }

    #[test]
    fn stages_refuse_foreign_artifacts() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        stage_simulate(&cfg, dir.path()).unwrap();
        let other = ExperimentConfig { seed: 1, ..small() };
        assert!(matches!(stage_matrix(&other, dir.path()), Err(Error::Inconsistent(_))));
        assert!(matches!(stage_synth(&cfg, dir.path()), Err(Error::Io(_))));
    }
}
