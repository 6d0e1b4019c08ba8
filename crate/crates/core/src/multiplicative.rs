//! Multiplicative weight updates, kept as a cross-check for the barrier solver.
//!
//! Each iteration sets `w_j <- w_j ((d(w, j) + q) / q)^damping` and
//! renormalizes. Fixed points with positive weight have `d = 0`; the loop
//! stops on the same equivalence check as the barrier method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::InfoContext;
use crate::solver::SolveReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultOptions {
    pub max_iters: usize,
    pub delta: f64,
    pub damping: f64,
}

impl Default for MultOptions {
    fn default() -> Self {
        MultOptions {
            max_iters: 200_000,
            delta: 1e-8,
            damping: 1.0,
        }
    }
}

impl MultOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidOptions("delta must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidOptions("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One update from `w`; returns the new weights.
pub fn multiplicative_step(ctx: &InfoContext, w: &[f64], damping: f64) -> Result<Vec<f64>> {
    let state = ctx.info_matrix(w)?;
    let s = ctx.sensitivities(&state);
    Ok(update(w, &s, ctx.q() as f64, damping))
}

fn update(w: &[f64], s: &[f64], q: f64, damping: f64) -> Vec<f64> {
    let mut next: Vec<f64> = w
        .iter()
        .zip(s)
        .map(|(&wj, &sj)| {
            let ratio = (sj / q).max(0.0);
            if damping == 1.0 {
                wj * ratio
            } else {
                wj * ratio.powf(damping)
            }
        })
        .collect();
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= total);
    next
}

/// Runs the multiplicative algorithm from the uniform design.
pub fn solve_multiplicative(ctx: &InfoContext, opts: &MultOptions) -> Result<SolveReport> {
    opts.validate()?;
    let n = ctx.len();
    if n == 0 {
        return Err(Error::InvalidSpace("no candidate points".into()));
    }
    let q = ctx.q() as f64;
    let mut w = vec![1.0 / n as f64; n];
    let mut state = ctx.info_matrix(&w)?;
    let mut loss = state.log_loss();
    let mut increases = 0;
    let mut iterations = 0;
    loop {
        let s = ctx.sensitivities(&state);
        let max_d = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v - q));
        if max_d <= opts.delta || iterations == opts.max_iters {
            return Ok(SolveReport {
                weights: w,
                loss,
                max_d,
                converged: max_d <= opts.delta,
                iterations,
                outer_trace: Vec::new(),
                loss_increases: increases,
            });
        }
        w = update(&w, &s, q, opts.damping);
        state = ctx.info_matrix(&w)?;
        let next = state.log_loss();
        if next > loss + 1e-12 * loss.abs().max(1.0) {
            increases += 1;
        }
        loss = next;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovarianceSpec, DesignSpace, FactorSpec, ModelSpec, ResponseBasis};

    fn simple() -> InfoContext {
        let space = DesignSpace::grid(vec![FactorSpec::continuous("x", -1.0, 1.0, 3)]).unwrap();
        let model =
            ModelSpec::new(vec![ResponseBasis::monomial(vec![vec![0], vec![1]])], 1).unwrap();
        InfoContext::build(&model, &space, &CovarianceSpec::identity(1), true).unwrap()
    }

    #[test]
    fn simple_linear() {
        let rep = solve_multiplicative(&simple(), &MultOptions::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((rep.weights[0] - 0.5).abs() < 1e-5);
        assert!(rep.weights[1] < 1e-5);
        assert!((rep.weights[2] - 0.5).abs() < 1e-5);
        assert!((rep.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn optimum_is_fixed() {
        let w = multiplicative_step(&simple(), &[0.5, 0.0, 0.5], 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && w[1] == 0.0);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let opts = MultOptions {
            max_iters: 3,
            ..Default::default()
        };
        let rep = solve_multiplicative(&simple(), &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
    }

    #[test]
    fn options_checked() {
        let bad = MultOptions {
            damping: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
