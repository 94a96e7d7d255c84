//! Regularized least-squares inversion.
//!
//! Minimises `||M S - c||^2 + lambda R(S)` where `R` is either the negated
//! entropy `sum p ln p` with `p = S / s_max`, or the zeroth-order Tikhonov
//! term `||S||^2`. Two solvers are provided: BFGS on `y = ln S`, which keeps
//! every iterate positive, and a global-best particle swarm within box bounds.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Purpose};
use crate::source_receptor::{EmissionVector, ObservationVector, TransitionMatrix};
use crate::textio::Metadata;
use crate::{Error, Result};

/// Smallest admissible rate under the entropy regularizer.
pub const ENTROPY_FLOOR: f64 = 1e-9;

/// Regularization weight used when the data are noiseless.
pub const NOISELESS_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    MaxEntropy,
    Tikhonov0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseObjective {
    pub matrix: TransitionMatrix,
    pub c_obs: Vec<f64>,
    pub lambda: f64,
    pub regularizer: Regularizer,
    /// Normalisation of the entropy term (g m^-3 s^-1).
    pub s_max: f64,
}

/// Objective value split into its parts, with the analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub misfit: f64,
    pub regularization: f64,
    pub gradient: Vec<f64>,
}

impl InverseObjective {
    pub fn new(
        matrix: TransitionMatrix,
        c_obs: &ObservationVector,
        lambda: f64,
        regularizer: Regularizer,
        s_max: f64,
    ) -> Result<Self> {
        if c_obs.len() != matrix.n_receptors() {
            return Err(Error::DimensionMismatch { expected: matrix.n_receptors(), found: c_obs.len() });
        }
        let obj = Self { matrix, c_obs: c_obs.0.clone(), lambda, regularizer, s_max };
        obj.validate()?;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::validation("regularization weight must be non-negative"));
        }
        if !(self.s_max.is_finite() && self.s_max > 0.0) {
            return Err(Error::validation("entropy normalisation must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_sources()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// Regularizer value and gradient.
    pub fn regularization(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.regularizer {
            Regularizer::MaxEntropy => {
                if let Some(bad) = s.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::domain(format!("entropy needs positive rates, got {bad}")));
                }
                let mut value = 0.0;
                let grad = s
                    .iter()
                    .map(|v| {
                        let p = v / self.s_max;
                        value += p * p.ln();
                        (p.ln() + 1.0) / self.s_max
                    })
                    .collect();
                Ok((value, grad))
            }
            Regularizer::Tikhonov0 => Ok((s.iter().map(|v| v * v).sum(), s.iter().map(|v| 2.0 * v).collect())),
        }
    }

    pub fn evaluate(&self, s: &[f64]) -> Result<Evaluation> {
        let pred = self.matrix.apply(s)?;
        let resid: Vec<f64> = pred.iter().zip(&self.c_obs).map(|(p, c)| p - c).collect();
        let misfit: f64 = resid.iter().map(|r| r * r).sum();
        let mut gradient = self.matrix.apply_transpose(&resid)?;
        gradient.iter_mut().for_each(|g| *g *= 2.0);
        let (regularization, reg_grad) = self.regularization(s)?;
        for (g, r) in gradient.iter_mut().zip(reg_grad) {
            *g += self.lambda * r;
        }
        Ok(Evaluation { value: misfit + self.lambda * regularization, misfit, regularization, gradient })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        let pred = self.matrix.apply(s)?;
        let misfit: f64 = pred.iter().zip(&self.c_obs).map(|(p, c)| (p - c) * (p - c)).sum();
        Ok(misfit + self.lambda * self.regularization(s)?.0)
    }
}

/// One row of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub misfit: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_value: f64,
    pub history: Vec<IterationRecord>,
}

impl SolverDiagnostics {
    pub fn to_text(&self, meta: &Metadata) -> String {
        let mut out = String::new();
        meta.write_to(&mut out);
        let _ = writeln!(out, "# iterations: {}", self.iterations);
        let _ = writeln!(out, "# converged: {}", self.converged);
        out.push_str("iteration,objective,misfit,regularizer\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{},{}", r.iteration, r.value, r.misfit, r.regularization);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnConfig {
    pub max_iterations: usize,
    /// Stop once the gradient norm in the optimisation variables drops below this.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Largest change of any variable in one step.
    pub max_step: f64,
    /// Starting rate for every cell (g m^-3 s^-1).
    pub initial_guess: f64,
}

impl Default for QnConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            max_step: 2.0,
            initial_guess: 15.0,
        }
    }
}

impl QnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gradient_tolerance, self.armijo, self.max_step, self.initial_guess];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::validation("quasi-Newton tolerances and step limits must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || self.armijo >= 1.0 {
            return Err(Error::validation("line-search parameters must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of an unconstrained BFGS minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iterate, starting with `x0`.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BFGS with an inverse-Hessian approximation and Armijo backtracking.
///
/// `f` returns the value and gradient. Trial points with non-finite values are
/// rejected by the line search; if no finite trial is found, the search fails
/// with [`Error::NonFinite`] carrying the last accepted iterate.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], config: &QnConfig) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { last_iterate: x });
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut trace = vec![fx];
    let mut iterations = 0;
    let mut first_update = true;

    while iterations < config.max_iterations {
        if norm(&g) < config.gradient_tolerance {
            break;
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            // Lost positive definiteness; restart from steepest descent.
            h.iter_mut().enumerate().for_each(|(k, v)| *v = if k % (n + 1) == 0 { 1.0 } else { 0.0 });
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
            first_update = true;
        }
        let biggest = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if biggest > config.max_step {
            let k = config.max_step / biggest;
            p.iter_mut().for_each(|v| *v *= k);
            slope *= k;
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..=config.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + step * pi).collect();
            if trial == x {
                break;
            }
            let (ft, gt) = f(&trial)?;
            let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
            saw_finite |= finite;
            if finite && ft <= fx + config.armijo * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= config.backtrack;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if !saw_finite {
                return Err(Error::NonFinite { last_iterate: x });
            }
            // No sufficient decrease is representable any more.
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first_update {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
    }
    let gradient_norm = norm(&g);
    Ok(BfgsResult {
        converged: gradient_norm < config.gradient_tolerance,
        x,
        value: fx,
        gradient_norm,
        iterations,
        trace,
    })
}

fn record(obj: &InverseObjective, iteration: usize, s: &[f64]) -> Result<IterationRecord> {
    let e = obj.evaluate(s)?;
    Ok(IterationRecord { iteration, value: e.value, misfit: e.misfit, regularization: e.regularization })
}

/// BFGS on `y = ln S`, so every iterate and the returned estimate are positive.
pub fn quasi_newton_solve(obj: &InverseObjective, config: &QnConfig) -> Result<(EmissionVector, SolverDiagnostics)> {
    obj.validate()?;
    let y0 = vec![config.initial_guess.ln(); obj.dim()];
    let result = bfgs_minimize(
        |y| {
            let s: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            if s.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Ok((f64::INFINITY, vec![f64::NAN; y.len()]));
            }
            let e = obj.evaluate(&s)?;
            let grad = e.gradient.iter().zip(&s).map(|(g, v)| g * v).collect();
            Ok((e.value, grad))
        },
        &y0,
        config,
    );
    let result = result.map_err(|e| match e {
        Error::NonFinite { last_iterate } => Error::NonFinite {
            last_iterate: last_iterate.iter().map(|v| v.exp()).collect(),
        },
        other => other,
    })?;
    let s: Vec<f64> = result.x.iter().map(|v| v.exp()).collect();
    let mut history = Vec::with_capacity(result.trace.len());
    for (k, v) in result.trace.iter().enumerate() {
        history.push(IterationRecord { iteration: k, value: *v, misfit: f64::NAN, regularization: f64::NAN });
    }
    if let Some(last) = history.last_mut() {
        *last = record(obj, last.iteration, &s)?;
    }
    let diag = SolverDiagnostics {
        iterations: result.iterations,
        converged: result.converged,
        final_value: result.value,
        history,
    };
    Ok((EmissionVector::new(s)?, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub max_iterations: usize,
    /// Per-dimension `(min, max)`. A single entry applies to every dimension.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 40,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            max_iterations: 1000,
            bounds: vec![(0.0, 30.0)],
            seed: 11,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::validation("a swarm needs at least two particles"));
        }
        if self.bounds.is_empty() || self.bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::validation("swarm bounds need min < max"));
        }
        Ok(())
    }

    fn bounds_for(&self, dim: usize) -> Result<Vec<(f64, f64)>> {
        match self.bounds.len() {
            1 => Ok(vec![self.bounds[0]; dim]),
            n if n == dim => Ok(self.bounds.clone()),
            n => Err(Error::DimensionMismatch { expected: dim, found: n }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best value after initialisation (entry 0) and after every iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Global-best particle swarm with velocity and position clamping.
///
/// Random numbers come from one sequential stream, so results depend only on
/// the seed. Non-finite objective values count as `+inf`.
pub fn pso_minimize<F>(f: F, dim: usize, config: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let bounds = config.bounds_for(dim)?;
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut rng = rng::stream(config.seed, Purpose::Swarm, 0, 0);
    let eval = |x: &[f64]| -> Result<f64> {
        let v = f(x)?;
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    };

    let n = config.swarm_size;
    let mut pos: Vec<Vec<f64>> = (0..n)
        .map(|_| bounds.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect())
        .collect();
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| vmax.iter().map(|v| 0.1 * v * rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let mut fit: Vec<f64> = pos.iter().map(|x| eval(x)).collect::<Result<_>>()?;
    let mut evaluations = n;
    let mut pbest = pos.clone();
    let mut pbest_val = fit.clone();
    let lead = (0..n).min_by(|a, b| fit[*a].total_cmp(&fit[*b])).expect("non-empty swarm");
    let mut gbest = pos[lead].clone();
    let mut gbest_val = fit[lead];
    let mut history = vec![gbest_val];

    for _ in 0..config.max_iterations {
        for i in 0..n {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let v = config.inertia * vel[i][d]
                    + config.cognitive * r1 * (pbest[i][d] - pos[i][d])
                    + config.social * r2 * (gbest[d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(bounds[d].0, bounds[d].1);
            }
        }
        for i in 0..n {
            fit[i] = eval(&pos[i])?;
        }
        evaluations += n;
        for i in 0..n {
            if fit[i] < pbest_val[i] {
                pbest_val[i] = fit[i];
                pbest[i].clone_from(&pos[i]);
                if fit[i] < gbest_val {
                    gbest_val = fit[i];
                    gbest.clone_from(&pos[i]);
                }
            }
        }
        history.push(gbest_val);
    }
    Ok(PsoResult { best: gbest, best_value: gbest_val, history, evaluations })
}

/// Swarm search over the emission box. Under the entropy regularizer the lower
/// bound is raised to [`ENTROPY_FLOOR`] so every candidate stays admissible.
pub fn pso_solve(obj: &InverseObjective, config: &PsoConfig) -> Result<(EmissionVector, SolverDiagnostics)> {
    obj.validate()?;
    let mut cfg = config.clone();
    cfg.bounds = config
        .bounds_for(obj.dim())?
        .into_iter()
        .map(|(lo, hi)| match obj.regularizer {
            Regularizer::MaxEntropy => (lo.max(ENTROPY_FLOOR), hi),
            Regularizer::Tikhonov0 => (lo, hi),
        })
        .collect();
    let result = pso_minimize(|s| obj.value(s), obj.dim(), &cfg)?;
    let mut history: Vec<IterationRecord> = result
        .history
        .iter()
        .enumerate()
        .map(|(k, v)| IterationRecord { iteration: k, value: *v, misfit: f64::NAN, regularization: f64::NAN })
        .collect();
    if let Some(last) = history.last_mut() {
        *last = record(obj, last.iteration, &result.best)?;
    }
    let diag = SolverDiagnostics {
        iterations: config.max_iterations,
        converged: true,
        final_value: result.best_value,
        history,
    };
    Ok((EmissionVector::new(result.best)?, diag))
}

/// Default logarithmic grid for the regularization weight: 1e-6 .. 1e8,
/// four points per decade.
pub fn default_lambda_grid() -> Vec<f64> {
    (-24..=32).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

/// Regularization weight chosen by the discrepancy principle.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Misfit of the quasi-Newton solution at `lambda` (NaN when not solved).
    pub misfit: f64,
    /// `(sigma ||c_obs||)^2`.
    pub target: f64,
}

/// Picks the grid value whose optimal misfit is closest (in ratio) to the
/// expected noise energy `(sigma ||c_obs||)^2`. Noiseless data get
/// [`NOISELESS_LAMBDA`]; a one-point grid returns that point.
pub fn select_lambda(template: &InverseObjective, sigma: f64, grid: &[f64], qn: &QnConfig) -> Result<LambdaChoice> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::validation("noise level must be non-negative"));
    }
    let target = (sigma * norm(&template.c_obs)).powi(2);
    if sigma == 0.0 {
        return Ok(LambdaChoice { lambda: NOISELESS_LAMBDA, misfit: f64::NAN, target });
    }
    match grid {
        [] => Err(Error::validation("lambda grid is empty")),
        [only] => Ok(LambdaChoice { lambda: *only, misfit: f64::NAN, target }),
        _ => {
            let mut best: Option<(f64, LambdaChoice)> = None;
            for &lambda in grid {
                let obj = template.with_lambda(lambda);
                let (s, _) = quasi_newton_solve(&obj, qn)?;
                let misfit = obj.evaluate(s.rates())?.misfit;
                let distance = ((misfit + f64::MIN_POSITIVE) / target).ln().abs();
                if best.as_ref().is_none_or(|(d, _)| distance < *d) {
                    best = Some((distance, LambdaChoice { lambda, misfit, target }));
                }
            }
            Ok(best.expect("grid has several points").1)
        }
    }
}
