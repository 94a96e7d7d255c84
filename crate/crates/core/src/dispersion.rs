//! Lagrangian stochastic particle dispersion.
//!
//! Velocity fluctuations follow a Langevin equation with the drift of the
//! homogeneous Gaussian case, `a_i = -u_i / tau_Li`, and a diagonal diffusion
//! `b_ii = sqrt(2 sigma_i^2 / tau_Li)`. Positions advance with the mean wind
//! plus the fluctuation. Integration is Euler-Maruyama with perfect
//! reflection at the ground and at the domain top; leaving the domain
//! horizontally deactivates the particle.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meteo::{Meteorology, TurbulenceParams};
use crate::rng::{self, Purpose};
use crate::textio::{self, Metadata};
use crate::{Error, Result};

/// Wind is evaluated no lower than this (m); the profile is clamped below 10 m anyway.
const MIN_WIND_HEIGHT: f64 = 1e-3;

/// Axis-aligned box, closed on both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(min[i].is_finite() && max[i].is_finite() && min[i] <= max[i])) {
            return Err(Error::validation("region bounds must be finite with min <= max"));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (0..3).all(|i| x[i] >= self.min[i] && x[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    pub fn centroid(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| 0.5 * (self.min[i] + self.max[i]))
    }
}

/// Regular horizontal grid of emission cells spanning the full domain height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_dx: f64,
    pub cell_dy: f64,
    pub height: f64,
}

impl Default for DomainGrid {
    fn default() -> Self {
        Self::paper()
    }
}

impl DomainGrid {
    /// 5 x 5 cells of 300 m x 200 m x 1000 m.
    pub fn paper() -> Self {
        Self {
            nx: 5,
            ny: 5,
            cell_dx: 300.0,
            cell_dy: 200.0,
            height: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::validation("grid needs at least one cell per axis"));
        }
        let dims = [self.cell_dx, self.cell_dy, self.height];
        if dims.iter().any(|d| !(d.is_finite() && *d >= 0.0)) || !(self.height > 0.0) {
            return Err(Error::validation("grid extents must be non-negative with positive height"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_dx * self.cell_dy * self.height
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.cell_dx,
            self.ny as f64 * self.cell_dy,
            self.height,
        ]
    }

    /// Zero-based `(row, col)` of a zero-based cell index; rows advance along y.
    pub fn row_col(&self, cell: usize) -> Result<(usize, usize)> {
        if cell >= self.n_cells() {
            return Err(Error::domain(format!(
                "cell index {cell} outside grid of {} cells",
                self.n_cells()
            )));
        }
        Ok((cell / self.nx, cell % self.nx))
    }

    pub fn cell_region(&self, cell: usize) -> Result<Region> {
        let (row, col) = self.row_col(cell)?;
        let x0 = col as f64 * self.cell_dx;
        let y0 = row as f64 * self.cell_dy;
        Ok(Region {
            min: [x0, y0, 0.0],
            max: [x0 + self.cell_dx, y0 + self.cell_dy, self.height],
        })
    }

    /// Horizontal in-domain test; vertical bounds are enforced by reflection.
    pub fn contains_horizontal(&self, x: &[f64; 3]) -> bool {
        let [ex, ey, _] = self.extent();
        x[0] >= 0.0 && x[0] <= ex && x[1] >= 0.0 && x[1] <= ey
    }
}

/// `A1`-style label of a zero-based cell index.
pub fn cell_label(cell: usize) -> String {
    format!("A{}", cell + 1)
}

/// Zero-based cell index of an `A<k>` label.
pub fn parse_cell_label(label: &str) -> Result<usize> {
    label
        .trim()
        .strip_prefix(['A', 'a'])
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|k| *k >= 1)
        .map(|k| k - 1)
        .ok_or_else(|| Error::validation(format!("invalid cell label {label:?}")))
}

/// A concentration sensor: a box centred on `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Box edge lengths along x, y, z (m).
    pub extent: [f64; 3],
}

/// Horizontal sensor positions of the Copenhagen-style layout (m).
pub const PAPER_SENSOR_POSITIONS: [(f64, f64); 6] = [
    (400.0, 500.0),
    (600.0, 300.0),
    (800.0, 700.0),
    (1000.0, 500.0),
    (1200.0, 300.0),
    (1400.0, 700.0),
];

impl SensorSpec {
    pub fn cube(x: f64, y: f64, z: f64, edge: f64) -> Self {
        Self {
            x,
            y,
            z,
            extent: [edge; 3],
        }
    }

    /// The six 0.1 m cubes at 10 m height.
    pub fn paper_sensors() -> Vec<SensorSpec> {
        PAPER_SENSOR_POSITIONS
            .iter()
            .map(|&(x, y)| SensorSpec::cube(x, y, 10.0, 0.1))
            .collect()
    }

    pub fn region(&self) -> Region {
        let c = [self.x, self.y, self.z];
        Region {
            min: [0, 1, 2].map(|i| c[i] - 0.5 * self.extent[i]),
            max: [0, 1, 2].map(|i| c[i] + 0.5 * self.extent[i]),
        }
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::validation("sensor extents must be positive"));
        }
        let [ex, ey, ez] = grid.extent();
        let r = self.region();
        if r.min[0] < 0.0 || r.min[1] < 0.0 || r.min[2] < 0.0 || r.max[0] > ex || r.max[1] > ey || r.max[2] > ez {
            return Err(Error::validation(format!(
                "sensor at ({}, {}, {}) extends outside the domain",
                self.x, self.y, self.z
            )));
        }
        Ok(())
    }
}

pub fn sensor_label(sensor: usize) -> String {
    format!("S{}", sensor + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Sign applied to the mean wind.
    pub fn c_v(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::validation(format!("unknown direction {other:?}"))),
        }
    }
}

/// When particles leave their release region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReleaseSchedule {
    /// All particles start at the beginning of the run.
    Instantaneous,
    /// Release times are spread evenly over the run (constant emission).
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Time step (s).
    pub dt: f64,
    pub n_particles_per_source: usize,
    /// Simulated time (s).
    pub duration: f64,
    pub direction: Direction,
    pub release: ReleaseSchedule,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            n_particles_per_source: 10_000,
            duration: 3000.0,
            direction: Direction::Forward,
            release: ReleaseSchedule::Continuous,
            seed: 42,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self, params: &TurbulenceParams) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("time step must be positive"));
        }
        // Inertial-subrange ordering: the step must stay well below tau_L.
        if self.dt > 0.1 * params.min_tau() {
            return Err(Error::validation(format!(
                "time step {} exceeds 0.1 x min tau_L = {}",
                self.dt,
                0.1 * params.min_tau()
            )));
        }
        if self.n_particles_per_source == 0 {
            return Err(Error::validation("at least one particle per source is required"));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::validation("duration must cover at least one time step"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Position (m).
    pub x: [f64; 3],
    /// Lagrangian velocity fluctuation (m/s).
    pub u: [f64; 3],
    /// Index of the releasing source (or receptor when running backward).
    pub source_id: usize,
    pub alive: bool,
}

/// Drift of the homogeneous Gaussian Langevin model.
pub fn drift_coefficient(u: &[f64; 3], params: &TurbulenceParams) -> [f64; 3] {
    [0, 1, 2].map(|i| -u[i] / params.tau_l[i])
}

/// Diagonal diffusion coefficients `b_ii`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    pub b: [f64; 3],
}

impl Diffusion {
    /// Full `b_ij` (off-diagonal entries are zero).
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            m[i][i] = self.b[i];
        }
        m
    }

    /// `B_ij = 1/2 b_ik b_jk`, which reduces to `diag(sigma_i^2 / tau_Li)`.
    pub fn big_b(&self) -> [[f64; 3]; 3] {
        let b = self.matrix();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = 0.5 * (0..3).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            }
        }
        out
    }
}

pub fn diffusion_coefficient(params: &TurbulenceParams) -> Diffusion {
    Diffusion {
        b: [0, 1, 2].map(|i| (2.0 * params.sigma2[i] / params.tau_l[i]).sqrt()),
    }
}

/// One Euler-Maruyama step with an explicit standard-normal triple `xi`.
pub fn langevin_step_with_noise(
    p: &Particle,
    wind: &[f64; 3],
    params: &TurbulenceParams,
    dt: f64,
    c_v: f64,
    grid: &DomainGrid,
    xi: [f64; 3],
) -> Particle {
    let a = drift_coefficient(&p.u, params);
    let b = diffusion_coefficient(params).b;
    let sqrt_dt = dt.sqrt();
    let mut u = [0, 1, 2].map(|i| p.u[i] + a[i] * dt + b[i] * sqrt_dt * xi[i]);
    let mut x = [0, 1, 2].map(|i| p.x[i] + (c_v * wind[i] + u[i]) * dt);

    let h = grid.height;
    if x[2] < 0.0 {
        x[2] = -x[2];
        u[2] = -u[2];
    }
    if x[2] > h {
        x[2] = 2.0 * h - x[2];
        u[2] = -u[2];
    }
    // A step longer than the whole column; only reachable with absurd dt.
    x[2] = x[2].clamp(0.0, h);

    Particle {
        x,
        u,
        source_id: p.source_id,
        alive: p.alive && grid.contains_horizontal(&x),
    }
}

/// One Euler-Maruyama step drawing the Wiener increments from `rng`.
pub fn langevin_step<R: Rng + ?Sized>(
    p: &Particle,
    wind: &[f64; 3],
    params: &TurbulenceParams,
    dt: f64,
    c_v: f64,
    grid: &DomainGrid,
    rng: &mut R,
) -> Particle {
    let xi = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    langevin_step_with_noise(p, wind, params, dt, c_v, grid, xi)
}

/// A particle uniformly placed in `region` with velocity drawn from N(0, sigma_i^2).
pub fn release_in<R: Rng + ?Sized>(
    region: &Region,
    source_id: usize,
    params: &TurbulenceParams,
    rng: &mut R,
) -> Particle {
    let sigma = params.sigma();
    let x = [0, 1, 2].map(|i| region.min[i] + rng.random::<f64>() * (region.max[i] - region.min[i]));
    let u = [0, 1, 2].map(|i| sigma[i] * rng.sample::<f64, _>(StandardNormal));
    Particle {
        x,
        u,
        source_id,
        alive: true,
    }
}

pub fn release_particles<R: Rng + ?Sized>(
    grid: &DomainGrid,
    source_cell: usize,
    n: usize,
    params: &TurbulenceParams,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    if n == 0 {
        return Err(Error::validation("cannot release zero particles"));
    }
    let region = grid.cell_region(source_cell)?;
    Ok((0..n).map(|_| release_in(&region, source_cell, params, rng)).collect())
}

/// Particle-step detection counts between receptors (sensors) and source cells.
///
/// `counts[i][j]` is the number of time steps a particle was seen inside the
/// counting volume linking sensor `i` and source `j`. In forward runs the
/// particles come from source `j` and are counted in sensor `i`; in backward
/// runs they are released at sensor `i` and counted in source cell `j`.
/// `released` holds the number of particles per releasing entity: one per
/// source when forward, one per sensor when backward.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCounts {
    pub direction: Direction,
    pub dt: f64,
    pub n_steps: usize,
    pub sensor_ids: Vec<String>,
    pub source_ids: Vec<String>,
    counts: Vec<u64>,
    pub released: Vec<u64>,
}

impl DetectionCounts {
    pub fn zeros(
        direction: Direction,
        dt: f64,
        n_steps: usize,
        sensor_ids: Vec<String>,
        source_ids: Vec<String>,
    ) -> Self {
        let n_release = match direction {
            Direction::Forward => source_ids.len(),
            Direction::Backward => sensor_ids.len(),
        };
        Self {
            direction,
            dt,
            n_steps,
            counts: vec![0; sensor_ids.len() * source_ids.len()],
            released: vec![0; n_release],
            sensor_ids,
            source_ids,
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn count(&self, sensor: usize, source: usize) -> u64 {
        self.counts[sensor * self.n_sources() + source]
    }

    pub fn set_count(&mut self, sensor: usize, source: usize, value: u64) {
        let n = self.n_sources();
        self.counts[sensor * n + source] = value;
    }

    /// Particles released by the entity that normalises entry `(sensor, source)`.
    pub fn released_for(&self, sensor: usize, source: usize) -> u64 {
        match self.direction {
            Direction::Forward => self.released[source],
            Direction::Backward => self.released[sensor],
        }
    }

    pub fn released_ids(&self) -> &[String] {
        match self.direction {
            Direction::Forward => &self.source_ids,
            Direction::Backward => &self.sensor_ids,
        }
    }

    pub fn to_text(&self, meta: &Metadata) -> String {
        let mut meta = meta.clone();
        meta.set("format", "detection-counts v1");
        meta.set("direction", self.direction);
        meta.set("dt", self.dt);
        meta.set("steps", self.n_steps);
        let mut out = String::new();
        meta.write_to(&mut out);
        out.push_str("sensor_id,source_id,count\n");
        for (i, s) in self.sensor_ids.iter().enumerate() {
            for (j, c) in self.source_ids.iter().enumerate() {
                out.push_str(&format!("{s},{c},{}\n", self.count(i, j)));
            }
        }
        out.push_str("released_by,released\n");
        for (id, n) in self.released_ids().iter().zip(&self.released) {
            out.push_str(&format!("{id},{n}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let meta = Metadata::parse(text);
        if textio::require(&meta, "format")? != "detection-counts v1" {
            return Err(Error::format(1, "not a detection-counts v1 file"));
        }
        let direction: Direction = textio::require(&meta, "direction")?.parse()?;
        let dt = textio::parse_f64(textio::require(&meta, "dt")?, 0, 0)?;
        let n_steps = textio::parse_usize(textio::require(&meta, "steps")?, 0, 0)?;

        let mut pairs: Vec<(String, String, u64)> = Vec::new();
        let mut released: Vec<(String, u64)> = Vec::new();
        let mut block = 0;
        for (line_no, line) in textio::data_lines(text) {
            let f = textio::split_fields(line);
            match (block, f.as_slice()) {
                (0, ["sensor_id", "source_id", "count"]) => block = 1,
                (1, ["released_by", "released"]) => block = 2,
                (1, [s, c, n]) => pairs.push((s.to_string(), c.to_string(), textio::parse_usize(n, line_no, 3)? as u64)),
                (2, [id, n]) => released.push((id.to_string(), textio::parse_usize(n, line_no, 2)? as u64)),
                _ => return Err(Error::format(line_no, format!("unexpected line {line:?}"))),
            }
        }
        if block != 2 {
            return Err(Error::format(0, "missing counts or released block"));
        }
        let mut sensor_ids: Vec<String> = Vec::new();
        let mut source_ids: Vec<String> = Vec::new();
        for (s, c, _) in &pairs {
            if !sensor_ids.contains(s) {
                sensor_ids.push(s.clone());
            }
            if !source_ids.contains(c) {
                source_ids.push(c.clone());
            }
        }
        let mut out = Self::zeros(direction, dt, n_steps, sensor_ids, source_ids);
        if pairs.len() != out.counts.len() {
            return Err(Error::format(0, "counts block is not a full sensor x source table"));
        }
        let positions: Vec<(usize, usize)> = {
            let si = textio::index_by_name(&out.sensor_ids);
            let ci = textio::index_by_name(&out.source_ids);
            pairs.iter().map(|(s, c, _)| (si[s.as_str()], ci[c.as_str()])).collect()
        };
        for ((i, j), (_, _, n)) in positions.into_iter().zip(&pairs) {
            out.set_count(i, j, *n);
        }
        let ids = out.released_ids().to_vec();
        if released.len() != ids.len() {
            return Err(Error::format(0, "released block does not match the releasing entities"));
        }
        for (id, n) in released {
            let k = ids
                .iter()
                .position(|x| *x == id)
                .ok_or_else(|| Error::format(0, format!("unknown releasing entity {id}")))?;
            out.released[k] = n;
        }
        Ok(out)
    }
}

/// Everything a dispersion run needs besides the run settings.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub grid: &'a DomainGrid,
    pub sensors: &'a [SensorSpec],
    /// Zero-based indices of the emitting cells.
    pub sources: &'a [usize],
    pub meteorology: &'a Meteorology,
    pub turbulence: &'a TurbulenceParams,
}

impl Scenario<'_> {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.turbulence.validate()?;
        for s in self.sensors {
            s.validate(self.grid)?;
        }
        for &c in self.sources {
            self.grid.row_col(c)?;
        }
        Ok(())
    }
}

/// First integration step of particle `k` out of `n` under `schedule`.
pub fn release_step(schedule: ReleaseSchedule, k: usize, n: usize, n_steps: usize) -> usize {
    match schedule {
        ReleaseSchedule::Instantaneous => 0,
        ReleaseSchedule::Continuous => k * n_steps / n,
    }
}

/// Integrates every particle and accumulates detection counts.
///
/// Each particle owns the random stream `(seed, releaser, index)`, so the
/// counts are identical for any thread count.
pub fn run_dispersion(scenario: &Scenario<'_>, config: &SimulationConfig) -> Result<DetectionCounts> {
    scenario.validate()?;
    config.validate(scenario.turbulence)?;

    let n_steps = config.n_steps();
    let sensor_ids: Vec<String> = (0..scenario.sensors.len()).map(sensor_label).collect();
    let source_ids: Vec<String> = scenario.sources.iter().map(|&c| cell_label(c)).collect();
    let mut result = DetectionCounts::zeros(config.direction, config.dt, n_steps, sensor_ids, source_ids);

    let sensor_regions: Vec<Region> = scenario.sensors.iter().map(SensorSpec::region).collect();
    let cell_regions: Vec<Region> = scenario
        .sources
        .iter()
        .map(|&c| scenario.grid.cell_region(c))
        .collect::<Result<_>>()?;
    let (release_regions, detectors) = match config.direction {
        Direction::Forward => (&cell_regions, &sensor_regions),
        Direction::Backward => (&sensor_regions, &cell_regions),
    };

    let n = config.n_particles_per_source;
    let n_release = release_regions.len();
    let n_det = detectors.len();
    let total = n_release * n;

    // local[d * n_release + r]: detections of releaser r's particles in detector d
    let local = (0..total)
        .into_par_iter()
        .fold(
            || vec![0u64; n_det * n_release],
            |mut acc, idx| {
                let (r, k) = (idx / n, idx % n);
                let mut rng = rng::stream(config.seed, Purpose::Particle, r as u64, k as u64);
                let mut p = release_in(&release_regions[r], r, scenario.turbulence, &mut rng);
                let start = release_step(config.release, k, n, n_steps);
                trace_particle(&mut p, start, n_steps, scenario, config, &mut rng, |p| {
                    for (d, region) in detectors.iter().enumerate() {
                        if region.contains(&p.x) {
                            acc[d * n_release + r] += 1;
                        }
                    }
                });
                acc
            },
        )
        .reduce(
            || vec![0u64; n_det * n_release],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    for d in 0..n_det {
        for r in 0..n_release {
            let c = local[d * n_release + r];
            match config.direction {
                Direction::Forward => result.set_count(d, r, c),
                Direction::Backward => result.set_count(r, d, c),
            }
        }
    }
    result.released = vec![n as u64; n_release];
    Ok(result)
}

/// Advances `p` from step `start` to `n_steps`, calling `visit` after every step
/// while the particle is in the domain.
pub fn trace_particle<R: Rng + ?Sized>(
    p: &mut Particle,
    start: usize,
    n_steps: usize,
    scenario: &Scenario<'_>,
    config: &SimulationConfig,
    rng: &mut R,
    mut visit: impl FnMut(&Particle),
) {
    let c_v = config.direction.c_v();
    let duration = n_steps as f64 * config.dt;
    for step in start..n_steps {
        if !p.alive {
            break;
        }
        let t = match config.direction {
            Direction::Forward => step as f64 * config.dt,
            Direction::Backward => duration - (step + 1) as f64 * config.dt,
        };
        let wind = scenario
            .meteorology
            .mean_wind_at(p.x[2].max(MIN_WIND_HEIGHT), t)
            .expect("height is positive");
        *p = langevin_step(p, &wind, scenario.turbulence, config.dt, c_v, scenario.grid, rng);
        if p.alive {
            visit(p);
        }
    }
}
