//! The `roptd` command line.
//!
//! Exit codes: 0 converged / verified, 2 not converged / not optimal,
//! 1 input or I/O error. Summaries go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, Algorithm, ProblemConfig};
use crate::equivalence::{fmt_g17, write_d_surface, EquivalenceReport};
use crate::error::{Error, Result};
use crate::model::DesignMeasure;
use crate::problem::{build_context, reduction, solve_problem, verify_design, RunOptions, Solution};
use crate::reporting::{load_weights, round_design, to_json, write_exact_csv, write_file, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_OPTIMAL: i32 = 2;

/// Environment variable capping threads used for `d` evaluation.
pub const THREADS_ENV: &str = "ROPTD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "roptd", version, about = "Approximate R-optimal designs on discrete design spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute an optimal design and check it.
    Solve(Common),
    /// Check a design given in a weights file.
    Verify(Common),
    /// Show the orbit structure of a symmetry reduction.
    ReduceInfo(Common),
    /// Round a design to an exact design with `--runs` runs.
    Round(Common),
    /// Write the sensitivity function over all candidate points.
    ExportD(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// `interior` or `multiplicative`.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Comma-separated reflection axes, or `none`.
    #[arg(long)]
    symmetry: Option<String>,
    /// Tolerance on max d.
    #[arg(long)]
    delta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weights CSV (factor columns plus `weight`).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use the covariance V0 in place of the correlation R0.
    #[arg(long)]
    use_v0_raw: bool,
    /// Number of runs for `round`.
    #[arg(long)]
    runs: Option<usize>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Solve(c) => {
            let (cfg, run) = prepare(&c)?;
            let sol = solve_problem(&cfg, &run)?;
            let report = Report::new(&cfg, &run, &sol);
            print_solution(out, &cfg, &report, &sol).map_err(stdout_err)?;
            if let Some(dir) = &c.out {
                report.write_dir(dir, &cfg.space)?;
                let _ = writeln!(err, "wrote {}", dir.display());
            }
            Ok(status(sol.converged()))
        }
        Command::Verify(c) => {
            let (cfg, run) = prepare(&c)?;
            let w = weights_arg(&c, &cfg)?;
            let eq = verify_design(&cfg, &w, &run)?;
            print_equivalence(out, &eq).map_err(stdout_err)?;
            if let Some(dir) = &c.out {
                create_dir(dir)?;
                write_file(dir.join("verify.json"), to_json(&eq)?.as_bytes())?;
            }
            Ok(status(eq.optimal))
        }
        Command::ReduceInfo(c) => {
            let (cfg, run) = prepare(&c)?;
            if run.axes.is_empty() {
                return Err(Error::Config("no symmetry axes given (config or --symmetry)".into()));
            }
            let red = reduction(&cfg, &run.axes)?;
            let names: Vec<&str> = run.axes.iter().map(|&a| cfg.space.factors()[a].name.as_str()).collect();
            let mut sizes = std::collections::BTreeMap::new();
            for m in red.multiplicities() {
                *sizes.entry(m).or_insert(0usize) += 1;
            }
            let o = &mut *out;
            (|| -> std::io::Result<()> {
                writeln!(o, "axes: {}", names.join(","))?;
                writeln!(o, "points: {}", red.num_points())?;
                writeln!(o, "orbits: {}", red.len())?;
                for (size, count) in &sizes {
                    writeln!(o, "  size {size}: {count}")?;
                }
                Ok(())
            })()
            .map_err(stdout_err)?;
            if let Some(dir) = &c.out {
                create_dir(dir)?;
                write_file(dir.join("reduction.json"), to_json(&red)?.as_bytes())?;
            }
            Ok(EXIT_OK)
        }
        Command::Round(c) => {
            let (cfg, run) = prepare(&c)?;
            let w = weights_arg(&c, &cfg)?;
            let n = c
                .runs
                .ok_or_else(|| Error::InvalidOptions("`round` needs --runs".into()))?;
            let exact = round_design(&w, n, run.support_threshold)?;
            let mut buf = Vec::new();
            write_exact_csv(&mut buf, &cfg.space, &exact)?;
            match &c.out {
                Some(dir) => {
                    create_dir(dir)?;
                    write_file(dir.join("exact.csv"), &buf)?;
                    let _ = writeln!(err, "wrote {}", dir.join("exact.csv").display());
                }
                None => out.write_all(&buf).map_err(stdout_err)?,
            }
            Ok(EXIT_OK)
        }
        Command::ExportD(c) => {
            let (cfg, run) = prepare(&c)?;
            let w = match &c.weights {
                Some(_) => weights_arg(&c, &cfg)?,
                None => {
                    let sol = solve_problem(&cfg, &run)?;
                    if !sol.converged() {
                        let _ = writeln!(err, "warning: solver did not converge");
                    }
                    sol.weights
                }
            };
            let ctx = build_context(&cfg, run.use_correlation, run.threads)?;
            let mut buf = Vec::new();
            write_d_surface(&mut buf, &cfg.space, &ctx, &w)?;
            match &c.out {
                Some(dir) => {
                    create_dir(dir)?;
                    write_file(dir.join("d_surface.csv"), &buf)?;
                    let _ = writeln!(err, "wrote {}", dir.join("d_surface.csv").display());
                }
                None => out.write_all(&buf).map_err(stdout_err)?,
            }
            Ok(EXIT_OK)
        }
    }
}

fn status(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_NOT_OPTIMAL
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare(c: &Common) -> Result<(ProblemConfig, RunOptions)> {
    let cfg = load_config(&c.config)?;
    let mut run = RunOptions::from_config(&cfg);
    if let Some(a) = c.algorithm {
        run.algorithm = a;
    }
    if let Some(d) = c.delta {
        if !(d > 0.0) {
            return Err(Error::InvalidOptions("--delta must be positive".into()));
        }
        run.set_delta(d);
    }
    if c.use_v0_raw {
        run.use_correlation = false;
    }
    if let Some(s) = &c.symmetry {
        run.axes = parse_axes(s, &cfg)?;
    }
    run.threads = threads_from_env()?;
    Ok((cfg, run))
}

fn parse_axes(s: &str, cfg: &ProblemConfig) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|name| {
            let name = name.trim();
            cfg.space
                .factor_index(name)
                .ok_or_else(|| Error::Config(format!("--symmetry: unknown factor `{name}`")))
        })
        .collect()
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidOptions(format!("{THREADS_ENV}=`{v}` is not a positive integer"))),
        },
    }
}

fn weights_arg(c: &Common, cfg: &ProblemConfig) -> Result<DesignMeasure> {
    let path = c
        .weights
        .as_ref()
        .ok_or_else(|| Error::InvalidOptions("this command needs --weights FILE".into()))?;
    load_weights(path, &cfg.space)
}

fn print_solution(
    out: &mut dyn Write,
    cfg: &ProblemConfig,
    report: &Report,
    sol: &Solution,
) -> std::io::Result<()> {
    if let Some(name) = &report.name {
        writeln!(out, "problem: {name}")?;
    }
    let alg = match report.algorithm {
        Algorithm::Interior => "interior",
        Algorithm::Multiplicative => "multiplicative",
    };
    writeln!(out, "algorithm: {alg}")?;
    writeln!(out, "points: {}  parameters: {}", report.num_points, report.num_params)?;
    if let Some(r) = &report.reduction {
        writeln!(out, "reduction: axes {}  orbits {}", r.axes.join(","), r.orbits)?;
    }
    for s in &report.stages {
        writeln!(
            out,
            "  t={:<12} iters={:<5} phi1={:<22} max_d={:.3e}",
            fmt_g17(s.t),
            s.inner_iters,
            fmt_g17(s.phi1),
            s.max_d
        )?;
    }
    writeln!(out, "converged: {}", report.converged)?;
    writeln!(out, "iterations: {}", report.iterations)?;
    writeln!(out, "loss: {}", fmt_g17(report.loss))?;
    writeln!(out, "max_d: {:.3e}", report.max_d)?;
    writeln!(out, "support points: {}", sol.support.len())?;
    let names: Vec<&str> = cfg.space.factors().iter().map(|f| f.name.as_str()).collect();
    writeln!(out, "  {}  weight", names.join("  "))?;
    for row in &report.support {
        let coords: Vec<String> = row.point.iter().map(|v| fmt_g17(*v)).collect();
        writeln!(out, "  {}  {:.4}", coords.join("  "), row.weight)?;
    }
    Ok(())
}

fn print_equivalence(out: &mut dyn Write, eq: &EquivalenceReport) -> std::io::Result<()> {
    writeln!(out, "optimal: {}", eq.optimal)?;
    writeln!(out, "max_d: {:.3e} (point {})", eq.max_d, eq.argmax)?;
    writeln!(out, "min_d: {:.3e}", eq.min_d)?;
    writeln!(out, "support points: {}", eq.support_indices.len())?;
    writeln!(out, "support max |d|: {:.3e}", eq.support_max_abs_d)?;
    writeln!(out, "sum w d: {:.3e}", eq.weighted_sum)?;
    writeln!(out, "delta: {:e}", eq.delta_used)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let code = run(args.iter().copied(), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["roptd"]).0, EXIT_INPUT);
        assert_eq!(run_args(&["roptd", "bogus", "x.cfg"]).0, EXIT_INPUT);
        let (code, _, err) = run_args(&["roptd", "solve", "/nonexistent/x.cfg"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("/nonexistent/x.cfg"), "{err}");
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_args(&["roptd", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("solve"));
    }
}
