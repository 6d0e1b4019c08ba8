//! Problem configuration files.
//!
//! A config is TOML:
//!
//! ```toml
//! schema_version = 1
//! algorithm = "interior"          # or "multiplicative"
//!
//! [[factors]]
//! name = "x1"
//! kind = "continuous"
//! lower = -1.0
//! upper = 1.0
//! levels = 15
//!
//! [[responses]]
//! terms = "1, x1, x1*x2, x1^2"
//!
//! [[responses]]
//! family = "emax"
//! ed50 = 5.0                      # emax defaults to 1, factor to the first one
//!
//! [covariance]
//! v0 = [[4.0, 3.0], [3.0, 9.0]]   # or r0 = ...
//!
//! [solver]                        # optional overrides
//! delta = 1e-8
//!
//! [symmetry]
//! axes = ["x1"]
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceSpec, DesignSpace, FactorSpec, ModelSpec, ResponseBasis};
use crate::multiplicative::MultOptions;
use crate::solver::SolverOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Interior,
    Multiplicative,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interior" => Ok(Algorithm::Interior),
            "multiplicative" => Ok(Algorithm::Multiplicative),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (expected `interior` or `multiplicative`)"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    name: Option<String>,
    #[serde(default)]
    algorithm: Algorithm,
    #[serde(default = "yes")]
    use_correlation: bool,
    factors: Vec<FactorSpec>,
    responses: Vec<RawResponse>,
    covariance: RawCovariance,
    #[serde(default)]
    solver: SolverOptions,
    #[serde(default)]
    multiplicative: MultOptions,
    symmetry: Option<RawSymmetry>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    terms: Option<String>,
    family: Option<String>,
    ed50: Option<f64>,
    emax: Option<f64>,
    factor: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCovariance {
    v0: Option<Vec<Vec<f64>>>,
    r0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymmetry {
    axes: Vec<String>,
}

/// A validated problem.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub use_correlation: bool,
    pub space: DesignSpace,
    pub model: ModelSpec,
    pub covariance: CovarianceSpec,
    pub solver: SolverOptions,
    pub multiplicative: MultOptions,
    /// Reflection axes as factor indices.
    pub symmetry_axes: Vec<usize>,
}

pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
            raw.schema_version
        )));
    }
    if raw.factors.is_empty() {
        return Err(Error::Config("at least one factor is required".into()));
    }
    let names: Vec<&str> = raw.factors.iter().map(|f| f.name.as_str()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Config(format!("factor `{n}` declared twice")));
        }
    }
    let p = names.len();

    let mut responses = Vec::with_capacity(raw.responses.len());
    for (i, r) in raw.responses.iter().enumerate() {
        let basis = match (&r.terms, &r.family) {
            (Some(terms), None) => {
                if r.ed50.is_some() || r.emax.is_some() || r.factor.is_some() {
                    return Err(in_response(i, "`ed50`, `emax` and `factor` need `family`"));
                }
                ResponseBasis::monomial(parse_terms(terms, &names).map_err(|e| in_response(i, e))?)
            }
            (None, Some(family)) => {
                if family != "emax" {
                    return Err(in_response(i, format!("unknown family `{family}`")));
                }
                let ed50 = r.ed50.ok_or_else(|| in_response(i, "emax needs `ed50`"))?;
                let idx = match &r.factor {
                    None => 0,
                    Some(f) => lookup(f, &names).map_err(|e| in_response(i, e))?,
                };
                ResponseBasis::emax(idx, r.emax.unwrap_or(1.0), ed50)
            }
            _ => return Err(in_response(i, "give exactly one of `terms` and `family`")),
        };
        responses.push(basis);
    }
    if responses.is_empty() {
        return Err(Error::Config("at least one response is required".into()));
    }
    let model = ModelSpec::new(responses, p)?;

    let covariance = match (&raw.covariance.v0, &raw.covariance.r0) {
        (Some(v), None) => CovarianceSpec::from_covariance(matrix(v, "v0")?)?,
        (None, Some(r)) => CovarianceSpec::from_correlation(matrix(r, "r0")?)?,
        _ => {
            return Err(Error::Config(
                "[covariance] needs exactly one of `v0` and `r0`".into(),
            ))
        }
    };
    if covariance.m() != model.m() {
        return Err(Error::Config(format!(
            "{} responses but a {}x{} covariance matrix",
            model.m(),
            covariance.m(),
            covariance.m()
        )));
    }

    let space = DesignSpace::grid(raw.factors.clone())?;
    model.check_space(&space)?;
    raw.solver.validate()?;
    raw.multiplicative.validate()?;

    let symmetry_axes = match &raw.symmetry {
        None => Vec::new(),
        Some(s) => s
            .axes
            .iter()
            .map(|a| lookup(a, &names).map_err(|e| Error::Config(format!("[symmetry]: {e}"))))
            .collect::<Result<_>>()?,
    };

    Ok(ProblemConfig {
        name: raw.name,
        algorithm: raw.algorithm,
        use_correlation: raw.use_correlation,
        space,
        model,
        covariance,
        solver: raw.solver,
        multiplicative: raw.multiplicative,
        symmetry_axes,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ProblemConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn in_response(i: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("response {}: {msg}", i + 1))
}

fn lookup(name: &str, names: &[&str]) -> std::result::Result<usize, String> {
    names
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| format!("unknown variable `{name}`"))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("`{what}` must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(m, m, |i, k| rows[i][k]))
}

/// Parses `"1, x1, x2, x1*x2, x1^2"` into exponent vectors over `names`.
pub fn parse_terms(text: &str, names: &[&str]) -> std::result::Result<Vec<Vec<u32>>, String> {
    let mut terms: Vec<Vec<u32>> = Vec::new();
    for raw in text.split(',') {
        let term = raw.trim();
        if term.is_empty() {
            return Err(format!("empty term in `{text}`"));
        }
        let mut exps = vec![0u32; names.len()];
        if term != "1" {
            for factor in term.split('*') {
                let factor = factor.trim();
                let (name, power) = match factor.split_once('^') {
                    Some((n, e)) => {
                        let e: u32 = e
                            .trim()
                            .parse()
                            .map_err(|_| format!("bad exponent in `{factor}`"))?;
                        (n.trim(), e)
                    }
                    None => (factor, 1),
                };
                if name == "1" {
                    continue;
                }
                let idx = lookup(name, names)?;
                exps[idx] += power;
            }
        }
        if terms.contains(&exps) {
            return Err(format!("term `{term}` appears twice"));
        }
        terms.push(exps);
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
schema_version = 1

[[factors]]
name = "x"
kind = "continuous"
lower = -1.0
upper = 1.0
levels = 3

[[responses]]
terms = "1, x"

[covariance]
r0 = [[1.0]]
"#;

    #[test]
    fn terms() {
        let names = ["x1", "x2"];
        let t = parse_terms("1, x1, x2, x1*x2, x1^2, x2^2", &names).unwrap();
        assert_eq!(
            t,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![1, 1],
                vec![2, 0],
                vec![0, 2]
            ]
        );
        assert_eq!(parse_terms("x1 * x1 * x2", &names).unwrap(), vec![vec![2, 1]]);
        let err = parse_terms("x1^2", &["x2"]).unwrap_err();
        assert!(err.contains("x1"), "{err}");
        assert!(parse_terms("x1, x1", &names).is_err());
        assert!(parse_terms("x1^a", &names).is_err());
        assert!(parse_terms("1,,x1", &names).is_err());
    }

    #[test]
    fn small_config() {
        let c = parse_config(SMALL).unwrap();
        assert_eq!(c.space.len(), 3);
        assert_eq!(c.model.q(), 2);
        assert_eq!(c.algorithm, Algorithm::Interior);
        assert!(c.use_correlation);
        assert_eq!(c.solver, SolverOptions::default());
    }

    #[test]
    fn rejects() {
        let unknown = SMALL.replace("terms = \"1, x\"", "terms = \"1, x, z^2\"");
        let err = parse_config(&unknown).unwrap_err().to_string();
        assert!(err.contains("`z`"), "{err}");

        let both = SMALL.replace("r0 = [[1.0]]", "r0 = [[1.0]]\nv0 = [[2.0]]");
        assert!(parse_config(&both).is_err());

        let typo = SMALL.replace("[covariance]", "[solver]\ndelta_x = 1.0\n\n[covariance]");
        assert!(parse_config(&typo).is_err());

        let version = SMALL.replace("schema_version = 1", "schema_version = 7");
        assert!(parse_config(&version).unwrap_err().to_string().contains("schema_version"));

        let dims = SMALL.replace("r0 = [[1.0]]", "r0 = [[1.0, 0.1], [0.1, 1.0]]");
        assert!(parse_config(&dims).is_err());

        let not_spd = SMALL.replace("r0 = [[1.0]]", "v0 = [[-1.0]]");
        assert!(parse_config(&not_spd).is_err());
    }

    #[test]
    fn emax_response() {
        let text = r#"
schema_version = 1
[[factors]]
name = "dose"
kind = "continuous"
lower = 0.0
upper = 100.0
levels = 101

[[responses]]
family = "emax"
ed50 = 1.0

[[responses]]
family = "emax"
ed50 = 5.0
factor = "dose"

[covariance]
r0 = [[1.0, 0.5], [0.5, 1.0]]
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.model.q(), 4);
        assert_eq!(c.model.responses()[1], ResponseBasis::emax(0, 1.0, 5.0));
        let bad = text.replace("factor = \"dose\"", "factor = \"x\"");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("`x`"));
        let typo = text.replace("ed50 = 1.0", "ed5 = 1.0");
        assert!(parse_config(&typo).is_err());
    }
}
