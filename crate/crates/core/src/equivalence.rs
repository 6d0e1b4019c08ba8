//! Equivalence-theorem check for R-optimality.
//!
//! `d(w, j) = trace(A B_j A Σ_r e_r e_r^T / A_rr) - q`. A design is
//! R-optimal iff `d(w, j) <= 0` for every candidate point, with equality on
//! the support. Numerically computed designs are accepted when
//! `max_j d(w, j) <= δ`.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::InfoContext;
use crate::model::{DesignMeasure, DesignSpace};

/// Weights above this count as support.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-5;

/// Slack on `|d|` at support points beyond δ.
pub const SUPPORT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub d_values: Vec<f64>,
    pub max_d: f64,
    pub argmax: usize,
    pub min_d: f64,
    pub support_indices: Vec<usize>,
    /// Largest `|d|` over the support.
    pub support_max_abs_d: f64,
    /// `Σ_j w_j d(w, j)`; zero up to rounding for any nonsingular design.
    pub weighted_sum: f64,
    pub delta_used: f64,
    pub optimal: bool,
}

impl EquivalenceReport {
    /// Support points whose `|d|` exceeds `δ + SUPPORT_SLACK`.
    pub fn support_violations(&self) -> Vec<usize> {
        self.support_indices
            .iter()
            .copied()
            .filter(|&j| self.d_values[j].abs() > self.delta_used + SUPPORT_SLACK)
            .collect()
    }
}

/// `d(w, j)` for every point, through the shared kernel `M = A diag(A)^{-1} A`.
pub fn d_values(ctx: &InfoContext, w: &[f64]) -> Result<Vec<f64>> {
    let state = ctx.info_matrix(w)?;
    let q = ctx.q() as f64;
    Ok(ctx.sensitivities(&state).into_iter().map(|s| s - q).collect())
}

/// `d(w, j)` for a single point as a sum of `q` quadratic forms.
pub fn directional_d(ctx: &InfoContext, w: &[f64], j: usize) -> Result<f64> {
    if j >= ctx.len() {
        return Err(Error::Dimension(format!("point index {j} out of range")));
    }
    let state = ctx.info_matrix(w)?;
    let b = ctx.b_matrix(j);
    let mut total = 0.0;
    for r in 0..ctx.q() {
        let col = state.inverse.column(r);
        total += (col.transpose() * &b * col)[(0, 0)] / state.diag_inverse[r];
    }
    Ok(total - ctx.q() as f64)
}

pub fn verify_optimality(
    ctx: &InfoContext,
    w: &DesignMeasure,
    delta: f64,
) -> Result<EquivalenceReport> {
    verify_with_threshold(ctx, w, delta, DEFAULT_SUPPORT_THRESHOLD)
}

pub fn verify_with_threshold(
    ctx: &InfoContext,
    w: &DesignMeasure,
    delta: f64,
    threshold: f64,
) -> Result<EquivalenceReport> {
    let w = w.weights();
    let d = d_values(ctx, w)?;
    let (argmax, max_d) = d
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
    let min_d = d.iter().copied().fold(f64::INFINITY, f64::min);
    let support_indices: Vec<usize> = (0..w.len()).filter(|&j| w[j] > threshold).collect();
    let support_max_abs_d = support_indices
        .iter()
        .map(|&j| d[j].abs())
        .fold(0.0, f64::max);
    let weighted_sum = w.iter().zip(&d).map(|(a, b)| a * b).sum();
    Ok(EquivalenceReport {
        optimal: max_d <= delta,
        d_values: d,
        max_d,
        argmax,
        min_d,
        support_indices,
        support_max_abs_d,
        weighted_sum,
        delta_used: delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub weight: f64,
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Points carrying more than `threshold` mass, sorted lexicographically.
pub fn support_points(space: &DesignSpace, w: &DesignMeasure, threshold: f64) -> Vec<SupportPoint> {
    let mut out: Vec<SupportPoint> = w
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &wj)| wj > threshold)
        .map(|(index, &weight)| SupportPoint {
            index,
            point: space.point(index).to_vec(),
            weight,
        })
        .collect();
    out.sort_by(|a, b| lex(&a.point, &b.point));
    out
}

/// `%.17g`-style formatting: 17 significant digits, round-trip exact.
pub fn fmt_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..17).contains(&exp) {
        let mant = trim_zeros(mant);
        return format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let fixed = format!("{v:.*}", (16 - exp) as usize);
    trim_zeros(&fixed).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// CSV `x1,...,xp,weight,d`, one row per grid point in enumeration order.
pub fn write_d_surface<W: Write>(
    out: W,
    space: &DesignSpace,
    ctx: &InfoContext,
    w: &DesignMeasure,
) -> Result<()> {
    if ctx.len() != space.len() {
        return Err(Error::Dimension(format!(
            "context has {} points, space has {}",
            ctx.len(),
            space.len()
        )));
    }
    let d = d_values(ctx, w.weights())?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = space.factors().iter().map(|f| f.name.clone()).collect();
    header.push("weight".into());
    header.push("d".into());
    wtr.write_record(&header)?;
    for (j, x) in space.points().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| fmt_g17(*v)).collect();
        row.push(fmt_g17(w.weights()[j]));
        row.push(fmt_g17(d[j]));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<d-surface>", e))?;
    Ok(())
}

pub fn export_d_surface(
    space: &DesignSpace,
    ctx: &InfoContext,
    w: &DesignMeasure,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_d_surface(&mut buf, space, ctx, w)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
