//! Design spaces, multi-response model bases and error covariance.
//!
//! A multi-response linear model stacks `m` responses, response `i` having
//! its own regressor vector `f_i(x)` of length `q_i`. At a point `x` the
//! block-diagonal matrix `Z(x)` (m × q, q = Σ q_i) carries `f_i(x)^T` in
//! row `i`. Nonlinear responses enter through the gradient of their mean
//! function at fixed local parameter values.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint for design measures.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorKind {
    /// `levels` equally spaced points in `[lower, upper]`, both endpoints included.
    Continuous {
        lower: f64,
        upper: f64,
        levels: usize,
    },
    /// Explicit level set, e.g. `[0, 1]` for a baseline/treatment coding.
    Categorical { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl FactorSpec {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64, levels: usize) -> Self {
        FactorSpec {
            name: name.into(),
            kind: FactorKind::Continuous {
                lower,
                upper,
                levels,
            },
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<f64>) -> Self {
        FactorSpec {
            name: name.into(),
            kind: FactorKind::Categorical { values },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidFactor {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        match &self.kind {
            FactorKind::Continuous {
                lower,
                upper,
                levels,
            } => {
                if !lower.is_finite() || !upper.is_finite() {
                    return Err(bad("bounds must be finite"));
                }
                if lower >= upper {
                    return Err(bad("lower bound must be below upper bound"));
                }
                if *levels < 2 {
                    return Err(bad("a continuous factor needs at least 2 levels"));
                }
            }
            FactorKind::Categorical { values } => {
                if values.is_empty() {
                    return Err(bad("no levels given"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(bad("levels must be finite"));
                }
                for (i, a) in values.iter().enumerate() {
                    if values[..i].contains(a) {
                        return Err(bad(&format!("duplicate level {a}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The level set in enumeration order.
    pub fn levels(&self) -> Vec<f64> {
        match &self.kind {
            FactorKind::Continuous {
                lower,
                upper,
                levels,
            } => {
                let n = (*levels - 1) as f64;
                // Written as a weighted mean so grids symmetric about zero
                // come out exactly symmetric in floating point.
                (0..*levels)
                    .map(|k| {
                        let k = k as f64;
                        (lower * (n - k) + upper * k) / n
                    })
                    .collect()
            }
            FactorKind::Categorical { values } => values.clone(),
        }
    }

    pub fn level_count(&self) -> usize {
        match &self.kind {
            FactorKind::Continuous { levels, .. } => *levels,
            FactorKind::Categorical { values } => values.len(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FactorKind::Continuous { .. })
    }

    /// The same factor with every level multiplied by `t > 0`.
    pub fn scaled(&self, t: f64) -> FactorSpec {
        let kind = match &self.kind {
            FactorKind::Continuous {
                lower,
                upper,
                levels,
            } => FactorKind::Continuous {
                lower: lower * t,
                upper: upper * t,
                levels: *levels,
            },
            FactorKind::Categorical { values } => FactorKind::Categorical {
                values: values.iter().map(|v| v * t).collect(),
            },
        };
        FactorSpec {
            name: self.name.clone(),
            kind,
        }
    }
}

type PointKey = Vec<i64>;

fn point_key(x: &[f64]) -> PointKey {
    x.iter().map(|v| (v * 1e9).round() as i64).collect()
}

/// A finite set of distinct candidate points in `R^p`.
#[derive(Debug, Clone)]
pub struct DesignSpace {
    factors: Vec<FactorSpec>,
    coords: Vec<f64>,
    lookup: HashMap<PointKey, usize>,
}

impl DesignSpace {
    /// Full Cartesian grid of the factor level sets, last factor varying fastest.
    pub fn grid(factors: Vec<FactorSpec>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidSpace("at least one factor is required".into()));
        }
        for f in &factors {
            f.validate()?;
        }
        let levels: Vec<Vec<f64>> = factors.iter().map(FactorSpec::levels).collect();
        let p = factors.len();
        let n: usize = levels.iter().map(Vec::len).product();
        let mut coords = Vec::with_capacity(n * p);
        let mut idx = vec![0usize; p];
        for _ in 0..n {
            coords.extend(idx.iter().zip(&levels).map(|(&k, l)| l[k]));
            for l in (0..p).rev() {
                idx[l] += 1;
                if idx[l] < levels[l].len() {
                    break;
                }
                idx[l] = 0;
            }
        }
        Self::from_coords(factors, coords)
    }

    /// An explicit point list; every coordinate must lie on its factor's level set.
    pub fn from_points(factors: Vec<FactorSpec>, points: &[Vec<f64>]) -> Result<Self> {
        for f in &factors {
            f.validate()?;
        }
        let p = factors.len();
        let mut coords = Vec::with_capacity(points.len() * p);
        for x in points {
            if x.len() != p {
                return Err(Error::Dimension(format!(
                    "point has {} coordinates, space has {p} factors",
                    x.len()
                )));
            }
            for (v, f) in x.iter().zip(&factors) {
                let on_grid = f
                    .levels()
                    .iter()
                    .any(|l| (l - v).abs() <= 1e-9 * (1.0 + l.abs()));
                if !on_grid {
                    return Err(Error::InvalidSpace(format!(
                        "coordinate {v} is not a level of factor `{}`",
                        f.name
                    )));
                }
            }
            coords.extend_from_slice(x);
        }
        Self::from_coords(factors, coords)
    }

    fn from_coords(factors: Vec<FactorSpec>, coords: Vec<f64>) -> Result<Self> {
        let p = factors.len();
        let n = coords.len() / p;
        if n == 0 {
            return Err(Error::InvalidSpace("design space is empty".into()));
        }
        let mut lookup = HashMap::with_capacity(n);
        for j in 0..n {
            let x = &coords[j * p..(j + 1) * p];
            if lookup.insert(point_key(x), j).is_some() {
                return Err(Error::InvalidSpace(format!("duplicate point {x:?}")));
            }
        }
        Ok(DesignSpace {
            factors,
            coords,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn point(&self, j: usize) -> &[f64] {
        let p = self.dim();
        &self.coords[j * p..(j + 1) * p]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    /// Index of the grid point equal to `x` (to about 1e-9).
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        self.lookup.get(&point_key(x)).copied()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    /// Image of the space under the diagonal scaling `x -> diag(t) x`, same point order.
    pub fn scaled(&self, t: &[f64]) -> Result<DesignSpace> {
        if t.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} scale factors for {} design variables",
                t.len(),
                self.dim()
            )));
        }
        if t.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Symmetry("scale factors must be positive".into()));
        }
        let factors = self.factors.iter().zip(t).map(|(f, &s)| f.scaled(s)).collect();
        let coords = self
            .coords
            .chunks_exact(self.dim())
            .flat_map(|x| x.iter().zip(t).map(|(v, s)| v * s))
            .collect();
        Self::from_coords(factors, coords)
    }
}

/// Regressor vector of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseBasis {
    /// Each term is an exponent vector over the `p` design variables.
    Monomial { terms: Vec<Vec<u32>> },
    /// Gradient in (emax, ed50) of `emax * x / (x + ed50)`, `x` being design variable `factor`.
    Emax { factor: usize, emax: f64, ed50: f64 },
}

impl ResponseBasis {
    pub fn monomial(terms: Vec<Vec<u32>>) -> Self {
        ResponseBasis::Monomial { terms }
    }

    pub fn emax(factor: usize, emax: f64, ed50: f64) -> Self {
        ResponseBasis::Emax { factor, emax, ed50 }
    }

    /// Number of regression parameters `q_i`.
    pub fn dim(&self) -> usize {
        match self {
            ResponseBasis::Monomial { terms } => terms.len(),
            ResponseBasis::Emax { .. } => 2,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        match self {
            ResponseBasis::Monomial { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidModel("response has no terms".into()));
                }
                for (i, t) in terms.iter().enumerate() {
                    if t.len() != p {
                        return Err(Error::Dimension(format!(
                            "exponent vector {t:?} has length {}, expected {p}",
                            t.len()
                        )));
                    }
                    if terms[..i].contains(t) {
                        return Err(Error::InvalidModel(format!("duplicate term {t:?}")));
                    }
                }
            }
            ResponseBasis::Emax { factor, emax, ed50 } => {
                if *factor >= p {
                    return Err(Error::Dimension(format!(
                        "emax response uses design variable {factor}, space has {p}"
                    )));
                }
                if !(*ed50 > 0.0) || !ed50.is_finite() || !emax.is_finite() {
                    return Err(Error::InvalidModel(
                        "emax parameters must be finite with ed50 > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Writes `f_i(x)` into `out` (length `dim()`).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ResponseBasis::Monomial { terms } => {
                for (o, t) in out.iter_mut().zip(terms) {
                    *o = t
                        .iter()
                        .zip(x)
                        .fold(1.0, |acc, (&e, &v)| acc * v.powi(e as i32));
                }
            }
            ResponseBasis::Emax { factor, emax, ed50 } => {
                let v = x[*factor];
                let den = v + ed50;
                if den == 0.0 {
                    return Err(Error::EmaxPole { x: v });
                }
                out[0] = v / den;
                out[1] = -emax * v / (den * den);
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

/// `m` stacked responses with `q = Σ q_i` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    responses: Vec<ResponseBasis>,
    p: usize,
}

impl ModelSpec {
    /// `p` is the number of design variables the bases are written over.
    pub fn new(responses: Vec<ResponseBasis>, p: usize) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::InvalidModel("at least one response is required".into()));
        }
        for r in &responses {
            r.validate(p)?;
        }
        Ok(ModelSpec { responses, p })
    }

    pub fn responses(&self) -> &[ResponseBasis] {
        &self.responses
    }

    pub fn m(&self) -> usize {
        self.responses.len()
    }

    pub fn q(&self) -> usize {
        self.responses.iter().map(ResponseBasis::dim).sum()
    }

    pub fn num_factors(&self) -> usize {
        self.p
    }

    /// Column offset of each response block in `Z(x)`.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.m());
        let mut acc = 0;
        for r in &self.responses {
            off.push(acc);
            acc += r.dim();
        }
        off
    }

    pub fn is_linear(&self) -> bool {
        self.responses
            .iter()
            .all(|r| matches!(r, ResponseBasis::Monomial { .. }))
    }

    /// The block-diagonal `m × q` matrix `Z(x)`.
    pub fn z_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.p {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, model has {} design variables",
                x.len(),
                self.p
            )));
        }
        let mut z = DMatrix::zeros(self.m(), self.q());
        let mut col = 0;
        let mut buf = Vec::new();
        for (i, r) in self.responses.iter().enumerate() {
            buf.resize(r.dim(), 0.0);
            r.eval_into(x, &mut buf)?;
            for (k, v) in buf.iter().enumerate() {
                z[(i, col + k)] = *v;
            }
            col += r.dim();
        }
        Ok(z)
    }

    pub fn check_space(&self, space: &DesignSpace) -> Result<()> {
        if space.dim() != self.p {
            return Err(Error::Dimension(format!(
                "model has {} design variables, space has {}",
                self.p,
                space.dim()
            )));
        }
        Ok(())
    }
}

/// Error covariance `V0 = Σ0 R0 Σ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    v0: DMatrix<f64>,
    r0: DMatrix<f64>,
    sigma: DVector<f64>,
}

fn check_spd(v: &DMatrix<f64>) -> Result<()> {
    if !v.is_square() || v.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "covariance must be square and non-empty, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entry".into()));
    }
    let scale = v.amax();
    let asym = (v - v.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "asymmetry {asym:e} exceeds tolerance"
        )));
    }
    if v.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("Cholesky factorization failed".into()));
    }
    Ok(())
}

impl CovarianceSpec {
    /// Validates `V0` and derives `R0 = Σ0^{-1} V0 Σ0^{-1}`.
    pub fn from_covariance(v0: DMatrix<f64>) -> Result<Self> {
        check_spd(&v0)?;
        let v0 = (&v0 + v0.transpose()) * 0.5;
        let sigma = v0.diagonal().map(f64::sqrt);
        let m = v0.nrows();
        let r0 = DMatrix::from_fn(m, m, |i, k| {
            if i == k {
                1.0
            } else {
                v0[(i, k)] / (sigma[i] * sigma[k])
            }
        });
        Ok(CovarianceSpec { v0, r0, sigma })
    }

    /// A correlation matrix taken as the covariance itself (unit variances).
    pub fn from_correlation(r0: DMatrix<f64>) -> Result<Self> {
        check_spd(&r0)?;
        if r0.diagonal().iter().any(|d| (d - 1.0).abs() > 1e-12) {
            return Err(Error::NotPositiveDefinite(
                "correlation matrix must have unit diagonal".into(),
            ));
        }
        Self::from_covariance(r0)
    }

    /// Identity covariance for `m` uncorrelated unit-variance responses.
    pub fn identity(m: usize) -> Self {
        CovarianceSpec {
            v0: DMatrix::identity(m, m),
            r0: DMatrix::identity(m, m),
            sigma: DVector::from_element(m, 1.0),
        }
    }

    pub fn m(&self) -> usize {
        self.v0.nrows()
    }

    pub fn v0(&self) -> &DMatrix<f64> {
        &self.v0
    }

    pub fn r0(&self) -> &DMatrix<f64> {
        &self.r0
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }
}

/// Shorthand for [`CovarianceSpec::from_covariance`].
pub fn correlation_from_covariance(v0: DMatrix<f64>) -> Result<CovarianceSpec> {
    CovarianceSpec::from_covariance(v0)
}

/// Weights of an approximate design over the points of a design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignMeasure {
    weights: Vec<f64>,
}

impl DesignMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL * weights.len().max(1) as f64 {
            return Err(Error::InvalidWeights(format!("weights sum to {s}, not 1")));
        }
        Ok(DesignMeasure { weights })
    }

    /// Rescales nonnegative weights onto the simplex.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(DesignMeasure { weights })
    }

    pub fn uniform(n: usize) -> Self {
        DesignMeasure {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, j: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[j] = 1.0;
        DesignMeasure { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
