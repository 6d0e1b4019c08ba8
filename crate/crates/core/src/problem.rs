//! End-to-end driver: config → (optionally reduced) solve → full verification.

use crate::config::{Algorithm, ProblemConfig};
use crate::equivalence::{
    support_points, verify_with_threshold, EquivalenceReport, SupportPoint,
    DEFAULT_SUPPORT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::information::{InfoContext, WorkingMatrix};
use crate::model::DesignMeasure;
use crate::multiplicative::{solve_multiplicative, MultOptions};
use crate::solver::{solve, SolveReport, SolverOptions};
use crate::symmetry::{expand_reduced_weights, reduce_by_reflections, OrbitReduction};

/// Per-run settings; starts from the config and is then overridden by flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub algorithm: Algorithm,
    pub use_correlation: bool,
    /// Reflection axes (factor indices); empty means no reduction.
    pub axes: Vec<usize>,
    pub solver: SolverOptions,
    pub multiplicative: MultOptions,
    pub support_threshold: f64,
    pub threads: usize,
}

impl RunOptions {
    pub fn from_config(cfg: &ProblemConfig) -> Self {
        RunOptions {
            algorithm: cfg.algorithm,
            use_correlation: cfg.use_correlation,
            axes: cfg.symmetry_axes.clone(),
            solver: cfg.solver.clone(),
            multiplicative: cfg.multiplicative.clone(),
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
            threads: 1,
        }
    }

    /// Sets the stopping threshold of whichever algorithm runs.
    pub fn set_delta(&mut self, delta: f64) {
        self.solver.delta = delta;
        self.multiplicative.delta = delta;
    }

    pub fn delta(&self) -> f64 {
        match self.algorithm {
            Algorithm::Interior => self.solver.delta,
            Algorithm::Multiplicative => self.multiplicative.delta,
        }
    }
}

/// A solved problem, with weights on the full candidate set.
#[derive(Debug, Clone)]
pub struct Solution {
    pub algorithm: Algorithm,
    pub working: WorkingMatrix,
    pub reduction: Option<OrbitReduction>,
    /// Solver output in the coordinates it ran in (orbits when reduced).
    pub raw: SolveReport,
    pub weights: DesignMeasure,
    pub loss: f64,
    /// Equivalence check of `weights` on the full candidate set.
    pub equivalence: EquivalenceReport,
    pub support: Vec<SupportPoint>,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.equivalence.optimal
    }
}

pub fn build_context(cfg: &ProblemConfig, use_correlation: bool, threads: usize) -> Result<InfoContext> {
    Ok(InfoContext::build(&cfg.model, &cfg.space, &cfg.covariance, use_correlation)?
        .with_threads(threads))
}

pub fn reduction(cfg: &ProblemConfig, axes: &[usize]) -> Result<OrbitReduction> {
    reduce_by_reflections(&cfg.space, axes, &cfg.model)
}

pub fn solve_problem(cfg: &ProblemConfig, run: &RunOptions) -> Result<Solution> {
    if !(run.support_threshold >= 0.0) {
        return Err(Error::InvalidOptions("support threshold must be non-negative".into()));
    }
    let ctx = build_context(cfg, run.use_correlation, run.threads)?;
    let red = if run.axes.is_empty() {
        None
    } else {
        Some(reduction(cfg, &run.axes)?)
    };
    let raw = match &red {
        Some(r) => run_algorithm(&r.reduced_context(&ctx)?, run)?,
        None => run_algorithm(&ctx, run)?,
    };
    let weights = match &red {
        Some(r) => expand_reduced_weights(r, &raw.weights)?,
        None => DesignMeasure::new(raw.weights.clone())?,
    };
    let loss = ctx.info(&weights)?.log_loss();
    let equivalence = verify_with_threshold(&ctx, &weights, run.delta(), run.support_threshold)?;
    let support = support_points(&cfg.space, &weights, run.support_threshold);
    Ok(Solution {
        algorithm: run.algorithm,
        working: ctx.working(),
        reduction: red,
        raw,
        weights,
        loss,
        equivalence,
        support,
    })
}

fn run_algorithm(ctx: &InfoContext, run: &RunOptions) -> Result<SolveReport> {
    match run.algorithm {
        Algorithm::Interior => solve(ctx, &run.solver),
        Algorithm::Multiplicative => solve_multiplicative(ctx, &run.multiplicative),
    }
}

/// Equivalence check of a given design on the full candidate set.
pub fn verify_design(
    cfg: &ProblemConfig,
    w: &DesignMeasure,
    run: &RunOptions,
) -> Result<EquivalenceReport> {
    if w.weights().len() != cfg.space.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} candidate points",
            w.weights().len(),
            cfg.space.len()
        )));
    }
    let ctx = build_context(cfg, run.use_correlation, run.threads)?;
    verify_with_threshold(&ctx, w, run.delta(), run.support_threshold)
}
