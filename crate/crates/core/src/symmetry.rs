//! Scale and reflection symmetries of a design problem.
//!
//! A transformation `T` of the design variables carries over to the optimal
//! design when there is a diagonal `Q` with `Z(Tx) = Z(x) Q` on the whole
//! space. For reflections this lets the solver work with one weight per
//! reflection orbit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::InfoContext;
use crate::model::{DesignMeasure, DesignSpace, ModelSpec};

/// Tolerance for `Z(Tx) = Z(x) Q` and for snapping reflection entries to ±1.
pub const Q_TOL: f64 = 1e-10;

/// Entry-wise tolerance for `R0 = Q1 R1 Q1`.
pub const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `x -> diag(factors) x`.
    Scale { factors: Vec<f64> },
    /// Sign change of one design variable.
    Reflection { axis: usize },
}

impl Transform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Transform::Scale { factors } => x.iter().zip(factors).map(|(a, b)| a * b).collect(),
            Transform::Reflection { axis } => {
                let mut y = x.to_vec();
                y[*axis] = -y[*axis];
                y
            }
        }
    }

    fn validate(&self, space: &DesignSpace) -> Result<()> {
        let p = space.dim();
        match self {
            Transform::Scale { factors } => {
                if factors.len() != p {
                    return Err(Error::Dimension(format!(
                        "{} scale factors for {p} design variables",
                        factors.len()
                    )));
                }
                if factors.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                    return Err(Error::Symmetry("scale factors must be positive".into()));
                }
            }
            Transform::Reflection { axis } => {
                let Some(f) = space.factors().get(*axis) else {
                    return Err(Error::Symmetry(format!("no design variable with index {axis}")));
                };
                if !f.is_continuous() {
                    return Err(Error::Symmetry(format!(
                        "`{}` is categorical; only continuous variables can be reflected",
                        f.name
                    )));
                }
                for x in space.points() {
                    if space.index_of(&self.apply(x)).is_none() {
                        return Err(Error::Symmetry(format!(
                            "space is not symmetric in `{}`: no mirror image of {x:?}",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A point at which every regressor is nonzero for monomial bases.
fn generic_point(space: &DesignSpace) -> Vec<f64> {
    let min_abs = |x: &[f64]| x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let best = space
        .points()
        .max_by(|a, b| min_abs(a).total_cmp(&min_abs(b)))
        .expect("non-empty space");
    if min_abs(best) > 0.0 {
        return best.to_vec();
    }
    // Off-grid probe; the identity is polynomial for monomial bases.
    (0..space.dim()).map(|l| 0.7371 + 0.1193 * l as f64).collect()
}

/// Diagonal of `Q` with `Z(Tx) = Z(x) Q` at every point of `space`.
///
/// The candidate comes from one generic point and is then checked everywhere;
/// reflection entries are snapped to exactly ±1.
pub fn detect_q(model: &ModelSpec, space: &DesignSpace, t: &Transform) -> Result<Vec<f64>> {
    if !model.is_linear() {
        return Err(Error::Symmetry(
            "symmetry detection needs monomial bases; nonlinear families are not supported".into(),
        ));
    }
    model.check_space(space)?;
    t.validate(space)?;

    let x0 = generic_point(space);
    let z0 = model.z_matrix(&x0)?;
    let zt = model.z_matrix(&t.apply(&x0))?;
    let blocks: Vec<std::ops::Range<usize>> = model
        .block_offsets()
        .into_iter()
        .zip(model.responses())
        .map(|(start, r)| start..start + r.dim())
        .collect();
    let mut q = vec![0.0; model.q()];
    for i in 0..model.m() {
        for c in blocks[i].clone() {
            let base = z0[(i, c)];
            if base == 0.0 {
                return Err(Error::Symmetry(format!(
                    "regressor {c} vanishes at the probe point {x0:?}"
                )));
            }
            q[c] = zt[(i, c)] / base;
        }
    }
    if let Transform::Reflection { .. } = t {
        for v in q.iter_mut() {
            if (v.abs() - 1.0).abs() > Q_TOL {
                return Err(Error::Symmetry(format!("reflection gives a Q entry {v}, not ±1")));
            }
            *v = v.signum();
        }
    }
    if q.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::Symmetry("Q is singular".into()));
    }

    for x in space.points() {
        let z = model.z_matrix(x)?;
        let zt = model.z_matrix(&t.apply(x))?;
        for i in 0..model.m() {
            for c in blocks[i].clone() {
                let lhs = zt[(i, c)];
                let rhs = z[(i, c)] * q[c];
                if (lhs - rhs).abs() > Q_TOL * (1.0 + lhs.abs()) {
                    return Err(Error::Symmetry(format!(
                        "Z(Tx) != Z(x) Q at x = {x:?} (column {c}: {lhs} vs {rhs})"
                    )));
                }
            }
        }
    }
    Ok(q)
}

/// Partition of the points into orbits of a group of axis reflections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReduction {
    pub axes: Vec<usize>,
    /// Sorted point indices per orbit; orbits ordered by their first index.
    pub orbits: Vec<Vec<usize>>,
    /// Lexicographically smallest point of each orbit.
    pub representatives: Vec<usize>,
}

impl OrbitReduction {
    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.orbits.iter().map(Vec::len).collect()
    }

    pub fn num_points(&self) -> usize {
        self.orbits.iter().map(Vec::len).sum()
    }

    /// Context over orbits with `B̂_k` the mean of `B_j` over orbit `k`.
    pub fn reduced_context(&self, ctx: &InfoContext) -> Result<InfoContext> {
        if ctx.len() != self.num_points() {
            return Err(Error::Dimension(format!(
                "context has {} points, reduction covers {}",
                ctx.len(),
                self.num_points()
            )));
        }
        Ok(ctx.averaged(&self.orbits))
    }

    /// Orbit weights of a full measure (sums over each orbit).
    pub fn collapse(&self, w: &[f64]) -> Vec<f64> {
        self.orbits
            .iter()
            .map(|o| o.iter().map(|&j| w[j]).sum())
            .collect()
    }
}

/// Orbits of the group generated by reflections in `axes`.
pub fn reduce_by_reflections(
    space: &DesignSpace,
    axes: &[usize],
    model: &ModelSpec,
) -> Result<OrbitReduction> {
    let mut axes = axes.to_vec();
    axes.sort_unstable();
    axes.dedup();
    for &axis in &axes {
        detect_q(model, space, &Transform::Reflection { axis })?;
    }
    let n = space.len();
    let mut seen = vec![false; n];
    let mut orbits = Vec::new();
    let mut representatives = Vec::new();
    for j in 0..n {
        if seen[j] {
            continue;
        }
        let mut orbit = Vec::new();
        for mask in 0..(1usize << axes.len()) {
            let mut y = space.point(j).to_vec();
            for (b, &axis) in axes.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    y[axis] = -y[axis];
                }
            }
            let k = space
                .index_of(&y)
                .ok_or_else(|| Error::Symmetry(format!("mirror image {y:?} is not a grid point")))?;
            if !seen[k] {
                seen[k] = true;
                orbit.push(k);
            }
        }
        orbit.sort_unstable();
        let rep = *orbit
            .iter()
            .min_by(|&&a, &&b| lex(space.point(a), space.point(b)))
            .expect("orbit contains j");
        orbits.push(orbit);
        representatives.push(rep);
    }
    Ok(OrbitReduction {
        axes,
        orbits,
        representatives,
    })
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Spreads each orbit weight evenly over its points.
pub fn expand_reduced_weights(red: &OrbitReduction, omega: &[f64]) -> Result<DesignMeasure> {
    if omega.len() != red.len() {
        return Err(Error::Dimension(format!(
            "{} orbit weights for {} orbits",
            omega.len(),
            red.len()
        )));
    }
    let mut w = vec![0.0; red.num_points()];
    for (orbit, &om) in red.orbits.iter().zip(omega) {
        let share = om / orbit.len() as f64;
        for &j in orbit {
            w[j] = share;
        }
    }
    DesignMeasure::new(w)
}

/// Sign vector `s` (first entry +1) with `R0 = diag(s) R1 diag(s)`, if any.
pub fn correlation_sign_equivalent(
    r0: &nalgebra::DMatrix<f64>,
    r1: &nalgebra::DMatrix<f64>,
) -> Option<Vec<f64>> {
    let m = r0.nrows();
    if r0.shape() != (m, m) || r1.shape() != (m, m) || m == 0 {
        return None;
    }
    let fits = |s: &[f64]| {
        (0..m).all(|i| (0..m).all(|k| (r0[(i, k)] - s[i] * s[k] * r1[(i, k)]).abs() <= SIGN_TOL))
    };
    (0..1usize << (m - 1)).find_map(|mask| {
        let s: Vec<f64> = (0..m)
            .map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        fits(&s).then_some(s)
    })
}

/// Permutation `π` of point indices with `point(π[j]) = map(point(j))`.
pub fn point_permutation(
    space: &DesignSpace,
    map: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<usize>> {
    let mut perm = Vec::with_capacity(space.len());
    let mut hit = vec![false; space.len()];
    for x in space.points() {
        let y = map(x);
        let k = space
            .index_of(&y)
            .ok_or_else(|| Error::Symmetry(format!("image {y:?} of {x:?} is not a grid point")))?;
        if std::mem::replace(&mut hit[k], true) {
            return Err(Error::Symmetry(format!("map is not one-to-one at {y:?}")));
        }
        perm.push(k);
    }
    Ok(perm)
}

/// Swap of two design variables, i.e. reflection in the line `x_a = x_b`.
pub fn swap_permutation(space: &DesignSpace, a: usize, b: usize) -> Result<Vec<usize>> {
    if a >= space.dim() || b >= space.dim() {
        return Err(Error::Symmetry("variable index out of range".into()));
    }
    point_permutation(space, |x| {
        let mut y = x.to_vec();
        y.swap(a, b);
        y
    })
}

/// `max |φ(w) - φ̃(w)|` over the sample measures, where `φ̃(w) = φ(w ∘ π)`.
///
/// The problem is symmetric under `π` when this vanishes for every `w`; a
/// symmetric optimum then exists. Samples with a singular information matrix
/// on either side are skipped; an error is returned if every sample is.
pub fn phi_invariance_gap(
    ctx: &InfoContext,
    perm: &[usize],
    samples: &[DesignMeasure],
) -> Result<f64> {
    if perm.len() != ctx.len() {
        return Err(Error::Dimension(format!(
            "permutation of {} points for {} points",
            perm.len(),
            ctx.len()
        )));
    }
    let mut gap: Option<f64> = None;
    for w in samples {
        let w = w.weights();
        let mut wp = vec![0.0; w.len()];
        for (j, &k) in perm.iter().enumerate() {
            wp[k] = w[j];
        }
        let (Ok(a), Ok(b)) = (ctx.info_matrix(w), ctx.info_matrix(&wp)) else {
            continue;
        };
        let d = (a.log_loss() - b.log_loss()).abs();
        gap = Some(gap.map_or(d, |g: f64| g.max(d)));
    }
    gap.ok_or(Error::SingularInformation)
}
