#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roptd::config::{load_config, parse_config, ProblemConfig};
use roptd::information::{grad_phi1, phi1, InfoContext};
use roptd::model::{DesignMeasure, DesignSpace};
use roptd::problem::{solve_problem, RunOptions, Solution};

pub const BUNDLED: [&str; 8] = [
    "example1",
    "example1_v02",
    "example1_sn1",
    "example1_sn1_v02",
    "example2",
    "example2_n8",
    "example3",
    "example3_b150",
];

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.cfg"))
}

pub fn bundled(name: &str) -> ProblemConfig {
    load_config(config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn solve_default(cfg: &ProblemConfig) -> Solution {
    solve_problem(cfg, &RunOptions::from_config(cfg)).unwrap()
}

pub fn weight_at(space: &DesignSpace, w: &DesignMeasure, x: &[f64]) -> f64 {
    let j = space
        .index_of(x)
        .unwrap_or_else(|| panic!("{x:?} is not a candidate point"));
    w.weights()[j]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Strictly positive weights, uniform on the simplex.
pub fn random_interior(rng: &mut impl RngExt, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// One response, f = (1, x) on {-1, 0, 1}.
pub const TOY_LINEAR: &str = r#"
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
v0 = [[1.0]]
"#;

/// Two responses, f1 = (1, x) and f2 = (1, x, x^2) on five points of [-1, 1].
pub const TOY_TWO: &str = r#"
schema_version = 1
[[factors]]
name = "x"
kind = "continuous"
lower = -1.0
upper = 1.0
levels = 5
[[responses]]
terms = "1, x"
[[responses]]
terms = "1, x, x^2"
[covariance]
r0 = [[1.0, 0.5], [0.5, 1.0]]
"#;

pub fn toy(text: &str) -> ProblemConfig {
    parse_config(text).unwrap()
}

// ---------------------------------------------------------------------------
// Problem builders and published tables.

pub fn quadratic_config(m: usize, v0: &DMatrix<f64>) -> ProblemConfig {
    let mut text = String::from(
        "schema_version = 1\n[[factors]]\nname = \"x\"\nkind = \"continuous\"\nlower = -1.0\nupper = 1.0\nlevels = 21\n",
    );
    for _ in 0..m {
        text.push_str("[[responses]]\nterms = \"1, x, x^2\"\n");
    }
    let rows: Vec<String> = (0..m)
        .map(|i| {
            let r: Vec<String> = (0..m).map(|k| format!("{:?}", v0[(i, k)])).collect();
            format!("[{}]", r.join(", "))
        })
        .collect();
    text.push_str(&format!("[covariance]\nv0 = [{}]\n", rows.join(", ")));
    parse_config(&text).unwrap()
}

pub fn emax_config(b: f64, levels: usize, ed50: (f64, f64), rho: f64) -> ProblemConfig {
    parse_config(&format!(
        r#"
schema_version = 1
[[factors]]
name = "dose"
kind = "continuous"
lower = 0.0
upper = {b:?}
levels = {levels}
[[responses]]
family = "emax"
emax = 1.0
ed50 = {:?}
[[responses]]
family = "emax"
emax = 1.0
ed50 = {:?}
[covariance]
r0 = [[1.0, {rho:?}], [{rho:?}, 1.0]]
"#,
        ed50.0, ed50.1
    ))
    .unwrap()
}

pub fn square_table(a: f64, b: f64, w: [f64; 6]) -> Vec<(Vec<f64>, f64)> {
    let h = a / 2.0;
    let k = b / 2.0;
    vec![
        (vec![0.0, 0.0], w[0]),
        (vec![0.0, k], w[1]),
        (vec![h, 0.0], w[1]),
        (vec![0.0, b], w[2]),
        (vec![a, 0.0], w[2]),
        (vec![h, k], w[3]),
        (vec![h, b], w[4]),
        (vec![a, k], w[4]),
        (vec![a, b], w[5]),
    ]
}

pub fn symmetric_table(center: f64, corner: f64, edge: f64) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for x1 in [-1.0, 0.0, 1.0] {
        for x2 in [-5.0, 0.0, 5.0] {
            let w = match (x1 == 0.0, x2 == 0.0) {
                (true, true) => center,
                (false, false) => corner,
                _ => edge,
            };
            out.push((vec![x1, x2], w));
        }
    }
    out
}

pub fn as_refs(v: &[(Vec<f64>, f64)]) -> Vec<(&[f64], f64)> {
    v.iter().map(|(x, w)| (x.as_slice(), *w)).collect()
}

// ---------------------------------------------------------------------------
// Derivative and convexity probes.

pub const FD_STEP: f64 = 1e-6;

/// Weights bounded away from zero so the barrier stays smooth at the FD step.
pub fn spread(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w.pop();
    w
}

pub fn central_difference(ctx: &InfoContext, x: &[f64], t: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + FD_STEP;
            let fp = phi1(ctx, &xp, t).unwrap();
            xp[i] = x[i] - FD_STEP;
            let fm = phi1(ctx, &xp, t).unwrap();
            xp[i] = x[i];
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖fd - g‖∞ / ‖g‖∞` over 10 random interior points.
pub fn worst_gradient_error(ctx: &InfoContext, t: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = spread(&mut rng, ctx.len());
        let g = grad_phi1(ctx, &x, t).unwrap();
        let fd = central_difference(ctx, &x, t);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_abs_diff(&g, &fd) / scale);
    }
    worst
}

pub fn convexity_violations(ctx: &InfoContext, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..100 {
        let a = random_interior(&mut rng, ctx.len());
        let b = random_interior(&mut rng, ctx.len());
        let fa = ctx.info_matrix(&a).unwrap().log_loss();
        let fb = ctx.info_matrix(&b).unwrap().log_loss();
        for alpha in [0.25, 0.5, 0.75] {
            let w: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect();
            let f = ctx.info_matrix(&w).unwrap().log_loss();
            if f > (1.0 - alpha) * fa + alpha * fb + 1e-9 {
                bad += 1;
            }
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Brute-force oracle. Written against plain Vec arithmetic so that it shares
// nothing with the library beyond the problem definition.

pub struct Oracle {
    /// Per point, `Z^T W^{-1} Z` as a dense q×q matrix.
    blocks: Vec<Vec<Vec<f64>>>,
}

pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|k| if k == i { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &k| m[i][c].abs().total_cmp(&m[k][c].abs()))?;
        if m[p][c].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(c, p);
        let piv = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= piv);
        let pivot_row = m[c].clone();
        for (i, row) in m.iter_mut().enumerate() {
            let f = row[c];
            if i != c && f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

impl Oracle {
    /// `bases[i](x)` is the regressor vector of response `i`; `cov` the error covariance.
    pub fn new(points: &[f64], bases: &[fn(f64) -> Vec<f64>], cov: &[Vec<f64>]) -> Oracle {
        let w_inv = invert(cov).expect("invertible covariance");
        let blocks = points
            .iter()
            .map(|&x| {
                let f: Vec<Vec<f64>> = bases.iter().map(|b| b(x)).collect();
                let q: usize = f.iter().map(Vec::len).sum();
                // Z is m×q block diagonal; expand row i to length q.
                let mut z = vec![vec![0.0; q]; f.len()];
                let mut off = 0;
                for (i, fi) in f.iter().enumerate() {
                    z[i][off..off + fi.len()].copy_from_slice(fi);
                    off += fi.len();
                }
                let mut b = vec![vec![0.0; q]; q];
                for r in 0..q {
                    for c in 0..q {
                        let mut s = 0.0;
                        for i in 0..f.len() {
                            for k in 0..f.len() {
                                s += z[i][r] * w_inv[i][k] * z[k][c];
                            }
                        }
                        b[r][c] = s;
                    }
                }
                b
            })
            .collect();
        Oracle { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// `Φ_R(w) = Π_r (I(w)^{-1})_rr`, or `None` when `I(w)` is singular.
    pub fn criterion(&self, w: &[f64]) -> Option<f64> {
        let q = self.blocks[0].len();
        let mut info = vec![vec![0.0; q]; q];
        for (b, &wj) in self.blocks.iter().zip(w) {
            if wj != 0.0 {
                for r in 0..q {
                    for c in 0..q {
                        info[r][c] += wj * b[r][c];
                    }
                }
            }
        }
        let a = invert(&info)?;
        let mut p = 1.0;
        for (r, row) in a.iter().enumerate() {
            if !(row[r] > 0.0) {
                return None;
            }
            p *= row[r];
        }
        Some(p)
    }

    fn eval_counts(&self, counts: &[usize], total: usize) -> Option<f64> {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        self.criterion(&w)
    }

    /// Best point of the grid `{k / total}` on the simplex, optionally within
    /// `radius` grid steps of `center` in every free coordinate.
    fn grid(&self, total: usize, center: Option<(&[usize], usize)>) -> (Vec<usize>, f64) {
        let n = self.len();
        let mut best = (vec![0; n], f64::INFINITY);
        let mut counts = vec![0usize; n];
        fn rec(
            o: &Oracle,
            i: usize,
            left: usize,
            total: usize,
            center: Option<(&[usize], usize)>,
            counts: &mut Vec<usize>,
            best: &mut (Vec<usize>, f64),
        ) {
            let n = counts.len();
            if i + 1 == n {
                if let Some((c, r)) = center {
                    if left.abs_diff(c[i]) > r * (n - 1) {
                        return;
                    }
                }
                counts[i] = left;
                if let Some(v) = o.eval_counts(counts, total) {
                    if v < best.1 {
                        *best = (counts.clone(), v);
                    }
                }
                return;
            }
            let (lo, hi) = match center {
                Some((c, r)) => (c[i].saturating_sub(r), (c[i] + r).min(left)),
                None => (0, left),
            };
            for k in lo..=hi {
                counts[i] = k;
                rec(o, i + 1, left - k, total, center, counts, best);
            }
        }
        rec(self, 0, total, total, center, &mut counts, &mut best);
        best
    }

    /// Exhaustive simplex-grid search followed by pairwise mass-transfer
    /// refinement down to `refine` step.
    ///
    /// With `coarse` set, the `1/fine` grid is only searched within one coarse
    /// cell of the best coarse point.
    pub fn minimize(&self, coarse: Option<usize>, fine: usize, refine: f64) -> (Vec<f64>, f64) {
        let (counts, _) = match coarse {
            None => self.grid(fine, None),
            Some(k) => {
                assert_eq!(fine % k, 0);
                let (c, _) = self.grid(k, None);
                let scale = fine / k;
                let c: Vec<usize> = c.iter().map(|v| v * scale).collect();
                self.grid(fine, Some((&c, scale)))
            }
        };
        let mut w: Vec<f64> = counts.iter().map(|&c| c as f64 / fine as f64).collect();
        let mut f = self.criterion(&w).expect("grid optimum is nonsingular");
        let mut h = 0.5 / fine as f64;
        loop {
            loop {
                let mut improved = false;
                for i in 0..w.len() {
                    for k in 0..w.len() {
                        if i == k || w[i] < h {
                            continue;
                        }
                        let mut trial = w.clone();
                        trial[i] -= h;
                        trial[k] += h;
                        if let Some(v) = self.criterion(&trial) {
                            if v < f {
                                w = trial;
                                f = v;
                                improved = true;
                            }
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if h <= refine {
                break;
            }
            h = (h * 0.5).max(refine);
        }
        (w, f)
    }
}

pub fn toy_linear_oracle() -> Oracle {
    Oracle::new(&[-1.0, 0.0, 1.0], &[|x| vec![1.0, x]], &[vec![1.0]])
}

pub fn toy_two_oracle() -> Oracle {
    Oracle::new(
        &[-1.0, -0.5, 0.0, 0.5, 1.0],
        &[|x| vec![1.0, x], |x| vec![1.0, x, x * x]],
        &[vec![1.0, 0.5], vec![0.5, 1.0]],
    )
}
