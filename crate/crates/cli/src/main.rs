use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use emission_inverse::dispersion::Direction;
use emission_inverse::experiment::{self, ExperimentConfig};
use emission_inverse::mlp::Topology;
use emission_inverse::{Error, Result};

/// Emission-rate estimation from sensor concentrations: particle dispersion,
/// source-receptor matrices, neural and regularized inversion.
#[derive(Parser, Debug)]
#[command(name = "emission-inverse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the stage artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Relative observation noise, e.g. 0.05 or 0.10.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Network layer sizes, e.g. 6:15:30:12.
    #[arg(long, global = true)]
    topology: Option<String>,
    /// Integration direction of the particle model.
    #[arg(long, global = true)]
    direction: Option<Direction>,
    /// Particles released per source.
    #[arg(long, global = true)]
    particles: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the particle model and write detection counts.
    Simulate,
    /// Build the transition matrix from the counts.
    Matrix,
    /// Write the noisy observation and the training, activation and generalization sets.
    Synth,
    /// Train the network for the selected topology.
    Train,
    /// Invert the observation with the network, quasi-Newton and particle swarm.
    Invert,
    /// Tabulate all estimates against the exact rates and write emission grids.
    Compare,
    /// Every stage in order.
    Run,
    /// Print the effective config as JSON.
    Config,
}

fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = common.noise {
        cfg.noise = noise;
    }
    if let Some(t) = &common.topology {
        cfg.topology = t.clone();
    }
    if let Some(d) = common.direction {
        cfg.direction = d;
    }
    if let Some(n) = common.particles {
        cfg.particles_per_cell = n;
    }
    cfg.validate()?;
    // A missing wind file is a usage problem, caught before any stage runs.
    cfg.meteorology()?;
    Ok(cfg)
}

fn simulate(cfg: &ExperimentConfig, common: &Common) -> Result<()> {
    let start = Instant::now();
    let counts = experiment::stage_simulate(cfg, &common.out)?;
    let detections: u64 = (0..counts.n_sensors())
        .flat_map(|i| (0..counts.n_sources()).map(move |j| (i, j)))
        .map(|(i, j)| counts.count(i, j))
        .sum();
    let released: u64 = counts.released.iter().sum();
    println!(
        "simulate: {} run, {released} particles, {} steps, {detections} detections, {:.2} s",
        counts.direction,
        counts.n_steps,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn matrix(cfg: &ExperimentConfig, common: &Common) -> Result<()> {
    let m = experiment::stage_matrix(cfg, &common.out)?;
    let zero = m.entries().iter().filter(|v| **v == 0.0).count();
    println!("matrix: {}x{}, {zero} zero entries", m.n_receptors(), m.n_sources());
    Ok(())
}

fn synth(cfg: &ExperimentConfig, common: &Common) -> Result<()> {
    let syn = experiment::stage_synth(cfg, &common.out)?;
    println!(
        "synth: noise {}, {} training, {} activation, {} generalization pairs",
        cfg.noise,
        syn.split.training.len(),
        syn.split.activation.len(),
        syn.split.generalization.len()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, common: &Common, topology: &Topology) -> Result<()> {
    let start = Instant::now();
    let (_, history) = experiment::stage_train(cfg, topology, &common.out)?;
    let last = history.training_sse.last().copied().unwrap_or(f64::NAN);
    println!(
        "train: {topology}, {} epochs, final training SSE {last:.6}, {:.2} s",
        history.training_sse.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn invert(cfg: &ExperimentConfig, common: &Common, topology: &Topology) -> Result<()> {
    let out = experiment::stage_invert(cfg, topology, &common.out)?;
    println!("invert: lambda {}", out.lambda);
    for e in &out.estimates {
        println!("  {:<16} {:.6} s", e.solver, e.runtime);
    }
    Ok(())
}

fn compare(cfg: &ExperimentConfig, common: &Common) -> Result<()> {
    let report = experiment::stage_compare(cfg, &common.out)?;
    println!("compare: {}", common.out.join(experiment::REPORT_FILE).display());
    for (solver, m) in report.metrics() {
        println!(
            "  {solver:<16} max relative error {:.4}, rms error {:.4}",
            m.max_relative_error, m.rms_error
        );
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    let topology = cfg.topology()?;
    let common = &cli.common;
    match cli.command {
        Command::Simulate => simulate(&cfg, common),
        Command::Matrix => matrix(&cfg, common),
        Command::Synth => synth(&cfg, common),
        Command::Train => train(&cfg, common, &topology),
        Command::Invert => invert(&cfg, common, &topology),
        Command::Compare => compare(&cfg, common),
        Command::Run => {
            simulate(&cfg, common)?;
            matrix(&cfg, common)?;
            synth(&cfg, common)?;
            train(&cfg, common, &topology)?;
            invert(&cfg, common, &topology)?;
            compare(&cfg, common)
        }
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_usage() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
