//! Log-barrier interior-point method for R-optimal design weights.
//!
//! The simplex-constrained problem `min φ(w)` is replaced by a sequence of
//! barrier problems `min φ(w) + h(w, t)` with `t_k = t1 λ^{k-1}`. The equality
//! constraint is removed by eliminating the last weight,
//! `w_N = 1 - Σ_{j<N} w_j`, and each barrier problem is solved by BFGS with a
//! backtracking Armijo line search capped so every iterate stays strictly
//! inside the simplex. The outer loop stops as soon as the equivalence check
//! `max_j d(w, j) <= δ` holds.
//!
//! Close to a minimiser differences of `φ1` sink below rounding, so a trial
//! step whose value is within noise is also accepted when the directional
//! derivative at the trial point shows the same sufficient decrease.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::{reduced_gradient, InfoContext};

/// Returned by [`feasible_step_cap`] when no constraint binds.
pub const UNBOUNDED_STEP: f64 = 1e6;

/// Weights below this are set to zero in the returned design.
pub const CLAMP_BELOW: f64 = 1e-14;

/// Number of consecutive negligible decreases that ends a BFGS run.
const STALL_WINDOW: usize = 5;
const STALL_RTOL: f64 = 1e-14;
/// A gradient record below this fraction of the previous best resets the stall count.
const STALL_GRAD_GAIN: f64 = 0.99;
const CURVATURE_MIN: f64 = 1e-12;
const MIN_STEP: f64 = 1e-300;
/// Relative size of rounding noise in the barrier objective.
const NOISE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialHessian {
    /// The identity matrix.
    Identity,
    /// Inverse of the barrier Hessian's diagonal, `diag(min(1, t w_j^2))`.
    BarrierScaled,
    /// Inverse of the exact diagonal of the reduced Hessian of `φ1`.
    Diagonal,
    /// Like `Diagonal`, but with the exact Hessian block over the points
    /// carrying at least `0.1/N` mass (at most [`ACTIVE_MAX`] of them).
    ActiveBlock,
}

/// Largest active block used by [`InitialHessian::ActiveBlock`].
pub const ACTIVE_MAX: usize = 400;

/// Weights below `ACTIVE_FLOOR / N` get only the diagonal of the exact Hessian.
const ACTIVE_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub t1: f64,
    pub lambda: f64,
    pub delta: f64,
    pub bfgs_grad_tol: f64,
    pub bfgs_max_iters: usize,
    pub max_outer_iters: usize,
    pub step_shrink: f64,
    pub armijo_c: f64,
    pub feasibility_margin: f64,
    pub initial_hessian: InitialHessian,
    /// Shrink near-zero weights along the central path between stages.
    pub predictor: bool,
    /// Start each stage from the previous stage's solution; otherwise from
    /// the uniform design.
    pub warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            t1: 2.0,
            lambda: 2.0,
            delta: 1e-8,
            bfgs_grad_tol: 1e-10,
            bfgs_max_iters: 5000,
            max_outer_iters: 60,
            step_shrink: 0.5,
            armijo_c: 1e-4,
            feasibility_margin: 0.99,
            initial_hessian: InitialHessian::ActiveBlock,
            predictor: true,
            warm_start: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidOptions(m.to_string()));
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return fail("t1 must be positive");
        }
        if !(self.lambda > 1.0 && self.lambda.is_finite()) {
            return fail("lambda must exceed 1");
        }
        if !(self.delta > 0.0) {
            return fail("delta must be positive");
        }
        if !(self.bfgs_grad_tol > 0.0) {
            return fail("bfgs_grad_tol must be positive");
        }
        if self.bfgs_max_iters == 0 || self.max_outer_iters == 0 {
            return fail("iteration limits must be positive");
        }
        for (name, v) in [
            ("step_shrink", self.step_shrink),
            ("armijo_c", self.armijo_c),
            ("feasibility_margin", self.feasibility_margin),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidOptions(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Why a BFGS run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStop {
    Gradient,
    Stalled,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub t: f64,
    pub inner_iters: usize,
    pub phi1: f64,
    pub phi: f64,
    pub max_d: f64,
    pub grad_sup: f64,
    pub stop: InnerStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Final weights, indexed like the context's points.
    pub weights: Vec<f64>,
    /// `φ` at the returned weights, under the context's working matrix.
    pub loss: f64,
    pub max_d: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Barrier stages; empty for the multiplicative algorithm.
    pub outer_trace: Vec<StageTrace>,
    /// Iterations that increased `φ` (multiplicative algorithm only).
    #[serde(default)]
    pub loss_increases: usize,
}

/// A strictly feasible point in reduced coordinates with its implied last weight.
#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    last: f64,
    f: f64,
    g: Vec<f64>,
}

fn objective(ctx: &InfoContext, x: &[f64], last: f64, t: f64) -> Option<f64> {
    if !(last > 0.0) || x.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut w = Vec::with_capacity(x.len() + 1);
    w.extend_from_slice(x);
    w.push(last);
    let state = ctx.info_matrix(&w).ok()?;
    let h: f64 = w.iter().map(|v| v.ln()).sum::<f64>();
    Some(state.log_loss() - h / t)
}

fn evaluate(ctx: &InfoContext, x: Vec<f64>, last: f64, t: f64) -> Result<Iterate> {
    if !(last > 0.0) || x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Infeasible);
    }
    let mut w = x.clone();
    w.push(last);
    let state = ctx.info_matrix(&w)?;
    let s = ctx.sensitivities(&state);
    let h: f64 = w.iter().map(|v| v.ln()).sum::<f64>();
    let f = state.log_loss() - h / t;
    let g = reduced_gradient(&w, &s, t);
    Ok(Iterate { x, last, f, g })
}

fn cap_with_last(x: &[f64], last: f64, dir: &[f64], margin: f64) -> f64 {
    if dir.iter().all(|&p| p == 0.0) {
        return 0.0;
    }
    let mut limit = f64::INFINITY;
    for (&xi, &pi) in x.iter().zip(dir) {
        if pi < 0.0 {
            limit = limit.min(-xi / pi);
        }
    }
    let total: f64 = dir.iter().sum();
    if total > 0.0 {
        limit = limit.min(last / total);
    }
    if limit.is_finite() {
        (margin * limit).min(UNBOUNDED_STEP)
    } else {
        UNBOUNDED_STEP
    }
}

/// Largest step keeping every implied weight (including `w_N`) positive,
/// times `margin`; [`UNBOUNDED_STEP`] when nothing binds, 0 for a zero direction.
pub fn feasible_step_cap(w_reduced: &[f64], direction: &[f64], margin: f64) -> f64 {
    let last = 1.0 - w_reduced.iter().sum::<f64>();
    cap_with_last(w_reduced, last, direction, margin)
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub w_reduced: Vec<f64>,
    /// Implied last weight, tracked incrementally to avoid cancellation.
    pub last: f64,
    pub phi1: f64,
    pub grad_sup: f64,
    pub iterations: usize,
    pub stop: InnerStop,
}

impl BfgsOutcome {
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.w_reduced.clone();
        w.push(self.last);
        w
    }
}

/// Reduced coordinates with weight at least `ACTIVE_FLOOR / N`, largest
/// first, capped at [`ACTIVE_MAX`]; returned in index order.
fn active_set(x: &[f64]) -> Vec<usize> {
    let floor = ACTIVE_FLOOR / (x.len() + 1) as f64;
    let mut idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= floor).collect();
    if idx.len() > ACTIVE_MAX {
        idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
        idx.truncate(ACTIVE_MAX);
        idx.sort_unstable();
    }
    idx
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense inverse-Hessian approximation.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
}

impl InverseHessian {
    fn new(kind: InitialHessian, ctx: &InfoContext, x: &[f64], last: f64, t: f64) -> Result<Self> {
        let n = x.len();
        let mut h = vec![0.0; n * n];
        let invert = |v: f64| if v > 0.0 { 1.0 / v } else { 1.0 };
        match kind {
            InitialHessian::Identity => (0..n).for_each(|i| h[i * n + i] = 1.0),
            InitialHessian::BarrierScaled => {
                for (i, &v) in x.iter().enumerate() {
                    h[i * n + i] = (t * v.min(last).powi(2)).min(1.0);
                }
            }
            InitialHessian::Diagonal | InitialHessian::ActiveBlock => {
                let mut w = x.to_vec();
                w.push(last);
                let state = ctx.info_matrix(&w)?;
                let diag = ctx.reduced_hessian_diagonal(&state, &w, t);
                for (i, &v) in diag.iter().enumerate() {
                    h[i * n + i] = invert(v);
                }
                if kind == InitialHessian::ActiveBlock {
                    let active = active_set(x);
                    let block = ctx.reduced_hessian_block(&state, &w, t, &active);
                    if let Some(chol) = block.cholesky() {
                        let inv = chol.inverse();
                        for (a, &i) in active.iter().enumerate() {
                            for (b, &k) in active.iter().enumerate() {
                                h[i * n + k] = inv[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        Ok(InverseHessian { n, h })
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.h.chunks_exact(self.n).map(|row| dot(row, v)).collect()
    }

    /// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`, `ρ = 1/(sᵀy)`.
    fn update(&mut self, s: &[f64], y: &[f64], sy: f64) {
        let hy = self.apply(y);
        let yhy = dot(y, &hy);
        let rho = 1.0 / sy;
        let coef = (1.0 + rho * yhy) * rho;
        let n = self.n;
        for i in 0..n {
            let row = &mut self.h[i * n..(i + 1) * n];
            let (si, hyi) = (s[i], hy[i]);
            for j in 0..n {
                row[j] += coef * si * s[j] - rho * (hyi * s[j] + si * hy[j]);
            }
        }
    }
}

/// Minimizes `φ1(·, t)` from a strictly feasible start (all `N` implied weights positive).
pub fn bfgs_minimize(
    ctx: &InfoContext,
    w_start: &[f64],
    t: f64,
    opts: &SolverOptions,
) -> Result<BfgsOutcome> {
    let last = 1.0 - w_start.iter().sum::<f64>();
    bfgs_from(ctx, w_start.to_vec(), last, t, opts)
}

fn bfgs_from(
    ctx: &InfoContext,
    x0: Vec<f64>,
    last0: f64,
    t: f64,
    opts: &SolverOptions,
) -> Result<BfgsOutcome> {
    if x0.len() + 1 != ctx.len() {
        return Err(Error::Dimension(format!(
            "{} reduced weights for {} points",
            x0.len(),
            ctx.len()
        )));
    }
    let mut cur = evaluate(ctx, x0, last0, t)?;
    let n = cur.x.len();
    if n == 0 {
        return Ok(BfgsOutcome {
            w_reduced: cur.x,
            last: cur.last,
            phi1: cur.f,
            grad_sup: 0.0,
            iterations: 0,
            stop: InnerStop::Gradient,
        });
    }
    let mut hinv = InverseHessian::new(opts.initial_hessian, ctx, &cur.x, cur.last, t)?;
    let mut stalled = 0;
    let mut best_grad = sup_norm(&cur.g);
    let mut stop = InnerStop::MaxIters;
    let mut iterations = 0;

    while iterations < opts.bfgs_max_iters {
        if sup_norm(&cur.g) <= opts.bfgs_grad_tol {
            stop = InnerStop::Gradient;
            break;
        }
        let mut p: Vec<f64> = hinv.apply(&cur.g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&cur.g, &p);
        if !(slope < 0.0) {
            // lost descent; restart from the initial approximation
            hinv = InverseHessian::new(opts.initial_hessian, ctx, &cur.x, cur.last, t)?;
            p = hinv.apply(&cur.g).into_iter().map(|v| -v).collect();
            slope = dot(&cur.g, &p);
        }
        let p_total: f64 = p.iter().sum();
        let mut alpha = cap_with_last(&cur.x, cur.last, &p, opts.feasibility_margin).min(1.0);
        let noise = NOISE_RTOL * cur.f.abs().max(1.0);
        let mut accepted = None;
        while alpha > MIN_STEP {
            let x: Vec<f64> = cur.x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let last = cur.last - alpha * p_total;
            if let Some(f) = objective(ctx, &x, last, t) {
                if f <= cur.f + opts.armijo_c * alpha * slope {
                    accepted = Some(evaluate(ctx, x, last, t)?);
                    break;
                }
                // Near the minimum f differences drown in rounding; fall back
                // to the derivative form of the sufficient-decrease test.
                if f <= cur.f + noise {
                    let trial = evaluate(ctx, x, last, t)?;
                    if dot(&trial.g, &p) <= (1.0 - 2.0 * opts.armijo_c) * slope.abs() {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            alpha *= opts.step_shrink;
        }
        let Some(next) = accepted else {
            stop = InnerStop::LineSearchFailed;
            break;
        };
        iterations += 1;
        debug_assert!(next.last > 0.0 && next.x.iter().all(|&v| v > 0.0));
        let decrease = cur.f - next.f;
        let s: Vec<f64> = p.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_MIN {
            hinv.update(&s, &y, sy);
        }
        cur = next;
        let grad_after = sup_norm(&cur.g);
        if grad_after < STALL_GRAD_GAIN * best_grad {
            best_grad = grad_after;
            stalled = 0;
        } else if decrease < STALL_RTOL * cur.f.abs().max(1.0) {
            stalled += 1;
            if stalled >= STALL_WINDOW {
                stop = InnerStop::Stalled;
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok(BfgsOutcome {
        grad_sup: sup_norm(&cur.g),
        w_reduced: cur.x,
        last: cur.last,
        phi1: cur.f,
        iterations,
        stop,
    })
}

fn max_d(ctx: &InfoContext, w: &[f64]) -> Result<(f64, f64)> {
    let state = ctx.info_matrix(w)?;
    let q = ctx.q() as f64;
    let m = ctx
        .sensitivities(&state)
        .into_iter()
        .fold(f64::NEG_INFINITY, |m, s| m.max(s - q));
    Ok((state.log_loss(), m))
}

/// Moves near-zero weights along the central path before `t` grows by `lambda`.
///
/// At a barrier minimiser `d_j = (N - 1/w_j)/t`, so with `d_j` frozen the next
/// minimiser has `w_j' = w_j / (lambda - (lambda - 1) N w_j)`. Only points with
/// `(lambda - 1) N w_j < 1/2` are moved; the freed mass is spread by rescaling.
fn predict_inactive(x: &mut [f64], last: &mut f64, lambda: f64) {
    let n = (x.len() + 1) as f64;
    let shrink = |w: f64| {
        if (lambda - 1.0) * n * w < 0.5 {
            w / (lambda - (lambda - 1.0) * n * w)
        } else {
            w
        }
    };
    x.iter_mut().for_each(|v| *v = shrink(*v));
    *last = shrink(*last);
    let total = x.iter().sum::<f64>() + *last;
    x.iter_mut().for_each(|v| *v /= total);
    *last /= total;
}

/// Slot of the largest weight when it beats the eliminated one by a clear margin.
fn pivot(x: &[f64], last: f64) -> Option<usize> {
    let (k, big) = x
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    (big > 2.0 * last).then_some(k)
}

/// Runs the barrier loop from the uniform design.
pub fn solve(ctx: &InfoContext, opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    let n = ctx.len();
    if n == 0 {
        return Err(Error::InvalidSpace("no candidate points".into()));
    }
    let uniform = vec![1.0 / n as f64; n];
    ctx.info_matrix(&uniform)?;

    // The eliminated coordinate is kept at the largest weight: a near-zero
    // w_N puts 1/(t w_N^2) into every reduced Hessian entry and stalls BFGS.
    // `work` holds the B_j in the current order, `slot[k]` the point in slot k.
    let mut work = ctx.clone();
    let mut slot: Vec<usize> = (0..n).collect();
    let mut x = uniform[..n - 1].to_vec();
    let mut last = uniform[n - 1];
    let mut t = opts.t1;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_outer_iters {
        if let Some(k) = pivot(&x, last) {
            work.swap_points(k, n - 1);
            slot.swap(k, n - 1);
            std::mem::swap(&mut x[k], &mut last);
        }
        let out = bfgs_from(&work, x, last, t, opts)?;
        iterations += out.iterations;
        let w = out.weights();
        let (phi, md) = max_d(&work, &w)?;
        trace.push(StageTrace {
            t,
            inner_iters: out.iterations,
            phi1: out.phi1,
            phi,
            max_d: md,
            grad_sup: out.grad_sup,
            stop: out.stop,
        });
        x = out.w_reduced;
        last = out.last;
        if md <= opts.delta {
            break;
        }
        t *= opts.lambda;
        if !opts.warm_start {
            x = uniform[..n - 1].to_vec();
            last = uniform[n - 1];
        } else if opts.predictor {
            predict_inactive(&mut x, &mut last, opts.lambda);
        }
    }

    let mut w = vec![0.0; n];
    for (k, v) in x.into_iter().chain(std::iter::once(last)).enumerate() {
        w[slot[k]] = v;
    }
    for v in w.iter_mut() {
        if *v < CLAMP_BELOW {
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (loss, md) = max_d(ctx, &w)?;
    Ok(SolveReport {
        weights: w,
        loss,
        max_d: md,
        converged: md <= opts.delta,
        iterations,
        outer_trace: trace,
        loss_increases: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::{grad_phi1, phi1};
    use crate::model::{CovarianceSpec, DesignSpace, FactorSpec, ModelSpec, ResponseBasis};
    use nalgebra::dmatrix;

    #[test]
    fn step_cap_examples() {
        assert!((feasible_step_cap(&[0.5], &[-1.0], 0.99) - 0.495).abs() < 1e-15);
        assert!((feasible_step_cap(&[0.5], &[1.0], 0.99) - 0.495).abs() < 1e-15);
        assert_eq!(feasible_step_cap(&[0.2, 0.3], &[1e-9, -1e-9], 0.99), UNBOUNDED_STEP);
        assert_eq!(feasible_step_cap(&[0.5], &[0.0], 0.99), 0.0);
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        let bad = SolverOptions {
            lambda: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-13 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn two_point_bfgs_matches_golden_section() {
        let ctx = InfoContext::from_matrices(&[dmatrix![1.0, 0.3; 0.3, 0.2], dmatrix![0.4, -0.2; -0.2, 2.0]])
            .unwrap();
        let t = 5.0;
        let oracle = golden(|a| phi1(&ctx, &[a], t).unwrap(), 1e-9, 1.0 - 1e-9);
        let out = bfgs_minimize(&ctx, &[0.5], t, &SolverOptions::default()).unwrap();
        assert!((out.w_reduced[0] - oracle).abs() < 1e-8, "{} vs {oracle}", out.w_reduced[0]);
    }

    #[test]
    fn bfgs_reaches_gradient_tolerance() {
        let ctx = InfoContext::from_matrices(&[
            dmatrix![1.0, 0.3; 0.3, 0.2],
            dmatrix![0.4, -0.2; -0.2, 2.0],
            dmatrix![1.0, 0.0; 0.0, 1.0],
        ])
        .unwrap();
        let opts = SolverOptions::default();
        let out = bfgs_minimize(&ctx, &[0.3, 0.3], 10.0, &opts).unwrap();
        let g = grad_phi1(&ctx, &out.w_reduced, 10.0).unwrap();
        assert!(sup_norm(&g) < 1e-8, "{g:?} {:?}", out.stop);
    }

    #[test]
    fn simple_linear_model() {
        let space = DesignSpace::grid(vec![FactorSpec::continuous("x", -1.0, 1.0, 3)]).unwrap();
        let model =
            ModelSpec::new(vec![ResponseBasis::monomial(vec![vec![0], vec![1]])], 1).unwrap();
        let ctx = InfoContext::build(&model, &space, &CovarianceSpec::identity(1), true).unwrap();
        let rep = solve(&ctx, &SolverOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.max_d <= 1e-8);
        for (a, b) in rep.weights.iter().zip([0.5, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-6, "{:?}", rep.weights);
        }
        for (k, st) in rep.outer_trace.iter().enumerate() {
            assert_eq!(st.t, 2.0 * 2f64.powi(k as i32));
        }
    }

    #[test]
    fn singular_start_is_an_error() {
        let ctx = InfoContext::from_matrices(&vec![dmatrix![1.0, 0.0; 0.0, 0.0]; 3]).unwrap();
        assert!(matches!(
            solve(&ctx, &SolverOptions::default()),
            Err(Error::SingularInformation)
        ));
    }
}
