//! Design tables, exact designs and serialized reports.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ProblemConfig};
use crate::equivalence::{fmt_g17, SupportPoint};
use crate::error::{Error, Result};
use crate::information::WorkingMatrix;
use crate::model::{DesignMeasure, DesignSpace};
use crate::multiplicative::MultOptions;
use crate::problem::{RunOptions, Solution};
use crate::solver::{SolverOptions, StageTrace};

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;

/// Run counts per candidate point summing to `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDesign {
    pub n: usize,
    pub counts: Vec<usize>,
}

impl ExactDesign {
    /// `(point index, count)` for every point with a positive count.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect()
    }

    /// The empirical measure `counts / n`.
    pub fn measure(&self) -> DesignMeasure {
        let n = self.n as f64;
        DesignMeasure::normalized(self.counts.iter().map(|&c| c as f64 / n).collect())
            .expect("counts sum to n > 0")
    }
}

/// Largest-remainder rounding of `n w_j` over the points with `w_j > threshold`.
///
/// Support weights are renormalized first; ties in the remainder go to the
/// lower index.
pub fn round_design(w: &DesignMeasure, n: usize, threshold: f64) -> Result<ExactDesign> {
    let w = w.weights();
    let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] > threshold).collect();
    if n < support.len() || n == 0 {
        return Err(Error::TooFewRuns {
            runs: n,
            support: support.len(),
        });
    }
    let mass: f64 = support.iter().map(|&j| w[j]).sum();
    let mut counts = vec![0usize; w.len()];
    let mut rema = Vec::with_capacity(support.len());
    let mut used = 0;
    for &j in &support {
        let exact = n as f64 * w[j] / mass;
        let fl = exact.floor();
        counts[j] = fl as usize;
        used += counts[j];
        rema.push((exact - fl, j));
    }
    // Stable sort keeps lower indices first among equal remainders.
    rema.sort_by(|a, b| b.0.total_cmp(&a.0));
    let extra = n.saturating_sub(used);
    for &(_, j) in rema.iter().cycle().take(extra) {
        counts[j] += 1;
    }
    Ok(ExactDesign { n, counts })
}

/// One support row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRow {
    pub point: Vec<f64>,
    pub weight: f64,
    pub d: f64,
}

impl SupportRow {
    pub fn from_support(points: &[SupportPoint], d: &[f64]) -> Vec<SupportRow> {
        points
            .iter()
            .map(|s| SupportRow {
                point: s.point.clone(),
                weight: s.weight,
                d: d[s.index],
            })
            .collect()
    }
}

/// Orbit reduction summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionInfo {
    pub axes: Vec<String>,
    pub orbits: usize,
    pub points: usize,
}

/// Serialized result of a solve. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub working_matrix: WorkingMatrix,
    pub factors: Vec<String>,
    pub num_points: usize,
    pub num_params: usize,
    pub num_responses: usize,
    pub reduction: Option<ReductionInfo>,
    /// Options of the algorithm that ran.
    pub solver: Option<SolverOptions>,
    pub multiplicative: Option<MultOptions>,
    pub support_threshold: f64,
    pub converged: bool,
    pub delta: f64,
    pub loss: f64,
    pub max_d: f64,
    pub argmax: usize,
    pub min_d: f64,
    pub support_max_abs_d: f64,
    pub weighted_sum_d: f64,
    pub iterations: usize,
    pub loss_increases: usize,
    pub stages: Vec<StageTrace>,
    pub support: Vec<SupportRow>,
    /// Weights of every candidate point, in enumeration order.
    pub weights: Vec<f64>,
}

impl Report {
    pub fn new(cfg: &ProblemConfig, run: &RunOptions, sol: &Solution) -> Report {
        let names: Vec<String> = cfg.space.factors().iter().map(|f| f.name.clone()).collect();
        let eq = &sol.equivalence;
        Report {
            report_version: REPORT_VERSION,
            name: cfg.name.clone(),
            algorithm: sol.algorithm,
            working_matrix: sol.working,
            factors: names.clone(),
            num_points: cfg.space.len(),
            num_params: cfg.model.q(),
            num_responses: cfg.model.m(),
            reduction: sol.reduction.as_ref().map(|r| ReductionInfo {
                axes: r.axes.iter().map(|&a| names[a].clone()).collect(),
                orbits: r.len(),
                points: r.num_points(),
            }),
            solver: (sol.algorithm == Algorithm::Interior).then(|| run.solver.clone()),
            multiplicative: (sol.algorithm == Algorithm::Multiplicative)
                .then(|| run.multiplicative.clone()),
            support_threshold: run.support_threshold,
            converged: sol.converged(),
            delta: eq.delta_used,
            loss: sol.loss,
            max_d: eq.max_d,
            argmax: eq.argmax,
            min_d: eq.min_d,
            support_max_abs_d: eq.support_max_abs_d,
            weighted_sum_d: eq.weighted_sum,
            iterations: sol.raw.iterations,
            loss_increases: sol.raw.loss_increases,
            stages: sol.raw.outer_trace.clone(),
            support: SupportRow::from_support(&sol.support, &eq.d_values),
            weights: sol.weights.weights().to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Report> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn support_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_support_csv(&mut buf, &self.factors, &self.support)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Writes `report.json`, `support.csv` and `weights.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, space: &DesignSpace) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(dir.join("report.json"), self.to_json()?.as_bytes())?;
        write_file(dir.join("support.csv"), self.support_csv()?.as_bytes())?;
        let mut buf = Vec::new();
        write_weights_csv(&mut buf, space, &self.weights)?;
        write_file(dir.join("weights.csv"), &buf)
    }
}

/// Writes the support table: coordinates, then the weight at 4 decimals.
pub fn write_support_csv<W: Write>(out: W, factors: &[String], rows: &[SupportRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = factors.to_vec();
    header.push("weight".into());
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.point.iter().map(|v| fmt_g17(*v)).collect();
        rec.push(format!("{:.4}", r.weight));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<support table>", e))?;
    Ok(())
}

/// Writes every candidate point with its full-precision weight.
pub fn write_weights_csv<W: Write>(out: W, space: &DesignSpace, w: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = space.factors().iter().map(|f| f.name.clone()).collect();
    header.push("weight".into());
    wtr.write_record(&header)?;
    for (x, wj) in space.points().zip(w) {
        let mut rec: Vec<String> = x.iter().map(|v| fmt_g17(*v)).collect();
        rec.push(fmt_g17(*wj));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<weights table>", e))?;
    Ok(())
}

/// Writes an exact design: coordinates and run counts of the points used.
pub fn write_exact_csv<W: Write>(out: W, space: &DesignSpace, design: &ExactDesign) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = space.factors().iter().map(|f| f.name.clone()).collect();
    header.push("runs".into());
    wtr.write_record(&header)?;
    for (j, c) in design.runs() {
        let mut rec: Vec<String> = space.point(j).iter().map(|v| fmt_g17(*v)).collect();
        rec.push(c.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<exact design>", e))?;
    Ok(())
}

/// Reads a weights table (factor columns plus `weight`; other columns are
/// ignored). Points not listed get weight zero. Weights already on the
/// simplex are kept bit-for-bit; anything else is renormalized.
pub fn read_weights_csv<R: Read>(input: R, space: &DesignSpace) -> Result<DesignMeasure> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidWeights(format!("missing column `{name}`")))
    };
    let coords: Vec<usize> = space
        .factors()
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<_>>()?;
    let wcol = col("weight")?;
    let mut w = vec![0.0; space.len()];
    let mut seen = vec![false; space.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("").trim();
            raw.parse().map_err(|_| {
                Error::InvalidWeights(format!("row {}: `{raw}` is not a number", line + 1))
            })
        };
        let x: Vec<f64> = coords.iter().map(|&c| field(c)).collect::<Result<_>>()?;
        let j = space
            .index_of(&x)
            .ok_or_else(|| Error::InvalidWeights(format!("{x:?} is not a candidate point")))?;
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidWeights(format!("{x:?} listed twice")));
        }
        let v = field(wcol)?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidWeights(format!("negative or invalid weight at {x:?}")));
        }
        w[j] = v;
    }
    DesignMeasure::new(w.clone()).or_else(|_| DesignMeasure::normalized(w))
}

pub fn load_weights(path: impl AsRef<Path>, space: &DesignSpace) -> Result<DesignMeasure> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights_csv(std::io::BufReader::new(file), space)
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorSpec;

    fn m(w: &[f64]) -> DesignMeasure {
        DesignMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_design(&m(&[0.5, 0.0, 0.5]), 10, 1e-5).unwrap().counts, vec![5, 0, 5]);
        let r = round_design(&m(&[0.2532, 0.2138, 0.5330]), 20, 1e-5).unwrap();
        assert_eq!(r.counts, vec![5, 4, 11]);
        let r = round_design(&m(&[0.3, 0.3, 0.4]), 3, 1e-5).unwrap();
        assert_eq!(r.counts, vec![1, 1, 1]);
        assert!(matches!(
            round_design(&m(&[0.3, 0.3, 0.4]), 2, 1e-5),
            Err(Error::TooFewRuns { runs: 2, support: 3 })
        ));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let r = round_design(&m(&[0.25, 0.25, 0.25, 0.25]), 6, 1e-5).unwrap();
        assert_eq!(r.counts, vec![2, 2, 1, 1]);
    }

    #[test]
    fn rounding_is_idempotent() {
        let r = round_design(&m(&[0.13, 0.07, 0.41, 0.39]), 17, 1e-5).unwrap();
        assert_eq!(r.counts.iter().sum::<usize>(), 17);
        let again = round_design(&r.measure(), 17, 1e-5).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn weights_round_trip() {
        let space = DesignSpace::grid(vec![
            FactorSpec::continuous("a", -1.0, 1.0, 3),
            FactorSpec::categorical("b", vec![0.0, 1.0]),
        ])
        .unwrap();
        let w: Vec<f64> = (1..=6).map(|k| k as f64 / 21.0).collect();
        let mut buf = Vec::new();
        write_weights_csv(&mut buf, &space, &w).unwrap();
        let back = read_weights_csv(buf.as_slice(), &space).unwrap();
        assert_eq!(back.weights(), w.as_slice());

        let partial = "b,a,weight,d\n1,1,3,0\n0,-1,1,0\n";
        let got = read_weights_csv(partial.as_bytes(), &space).unwrap();
        assert_eq!(got.weights(), &[0.25, 0.0, 0.0, 0.0, 0.0, 0.75]);

        assert!(read_weights_csv("a,b,weight\n0.5,0,1\n".as_bytes(), &space).is_err());
        assert!(read_weights_csv("a,weight\n0,1\n".as_bytes(), &space).is_err());
        assert!(read_weights_csv("a,b,weight\n0,0,1\n0,0,1\n".as_bytes(), &space).is_err());
    }

    #[test]
    fn support_table_layout() {
        let rows = vec![
            SupportRow {
                point: vec![-1.0, 0.5],
                weight: 0.130441,
                d: 0.0,
            },
            SupportRow {
                point: vec![0.0, 0.0],
                weight: 0.14928,
                d: 0.0,
            },
        ];
        let mut buf = Vec::new();
        write_support_csv(&mut buf, &["x1".into(), "x2".into()], &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,weight\n-1,0.5,0.1304\n0,0,0.1493\n");
    }
}
