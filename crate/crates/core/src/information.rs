//! Information matrix, log R-loss, log-barrier and the reduced-space gradient.
//!
//! With `B_j = U_j^T W^{-1} U_j` for `U_j = Z(u_j)`, the information matrix
//! of weights `w` is `I(w) = Σ_j w_j B_j` and `A(w) = I(w)^{-1}`. The loss is
//! `φ(w) = Σ_r log A_rr`. Everything the optimizers need reduces to the
//! sensitivities `s_j = trace(B_j M)` with `M = A diag(A)^{-1} A`:
//! `∂φ/∂w_j = -s_j` and the equivalence function is `d(w, j) = s_j - q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceSpec, DesignMeasure, DesignSpace, ModelSpec};

/// Condition estimate of `I(w)` above which it is treated as singular.
pub const MAX_CONDITION: f64 = 1e14;

/// Which error matrix `W` enters `B_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingMatrix {
    Correlation,
    Covariance,
    /// Matrices supplied directly (e.g. orbit-averaged).
    Custom,
}

/// Precomputed `B_j` for every candidate point; immutable once built.
#[derive(Debug, Clone)]
pub struct InfoContext {
    q: usize,
    n: usize,
    // row-major q×q blocks, one per point
    b: Vec<f64>,
    working: WorkingMatrix,
    threads: usize,
}

impl InfoContext {
    pub fn build(
        model: &ModelSpec,
        space: &DesignSpace,
        cov: &CovarianceSpec,
        use_correlation: bool,
    ) -> Result<Self> {
        model.check_space(space)?;
        if cov.m() != model.m() {
            return Err(Error::Dimension(format!(
                "{} responses but a {}x{} covariance",
                model.m(),
                cov.m(),
                cov.m()
            )));
        }
        let (w, working) = if use_correlation {
            (cov.r0(), WorkingMatrix::Correlation)
        } else {
            (cov.v0(), WorkingMatrix::Covariance)
        };
        let w_inv = w
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("working error matrix".into()))?
            .inverse();
        let q = model.q();
        let n = space.len();
        let mut b = Vec::with_capacity(n * q * q);
        for x in space.points() {
            let z = model.z_matrix(x)?;
            let bj = z.transpose() * &w_inv * &z;
            push_symmetric(&mut b, &bj);
        }
        Ok(InfoContext {
            q,
            n,
            b,
            working,
            threads: 1,
        })
    }

    /// Context from explicit symmetric PSD `q × q` matrices.
    pub fn from_matrices(mats: &[DMatrix<f64>]) -> Result<Self> {
        let q = mats
            .first()
            .ok_or_else(|| Error::InvalidSpace("no candidate points".into()))?
            .nrows();
        let mut b = Vec::with_capacity(mats.len() * q * q);
        for m in mats {
            if m.shape() != (q, q) {
                return Err(Error::Dimension(format!(
                    "matrix of shape {:?}, expected {q}x{q}",
                    m.shape()
                )));
            }
            push_symmetric(&mut b, m);
        }
        Ok(InfoContext {
            q,
            n: mats.len(),
            b,
            working: WorkingMatrix::Custom,
            threads: 1,
        })
    }

    /// Orbit-averaged context: `B̂_k = |O_k|^{-1} Σ_{j∈O_k} B_j`.
    pub fn averaged(&self, orbits: &[Vec<usize>]) -> Self {
        let qq = self.q * self.q;
        let mut b = vec![0.0; orbits.len() * qq];
        for (k, orbit) in orbits.iter().enumerate() {
            let dst = &mut b[k * qq..(k + 1) * qq];
            for &j in orbit {
                for (d, s) in dst.iter_mut().zip(self.block(j)) {
                    *d += s;
                }
            }
            let inv = 1.0 / orbit.len() as f64;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        InfoContext {
            q: self.q,
            n: orbits.len(),
            b,
            working: self.working,
            threads: self.threads,
        }
    }

    /// Worker threads for the per-point sensitivity sweep; results do not depend on it.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn working(&self) -> WorkingMatrix {
        self.working
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// `B_j` as a flat row-major slice.
    pub fn block(&self, j: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.b[j * qq..(j + 1) * qq]
    }

    /// Exchanges the matrices of points `a` and `b`.
    pub fn swap_points(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let qq = self.q * self.q;
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.b.split_at_mut(hi * qq);
        head[lo * qq..(lo + 1) * qq].swap_with_slice(&mut tail[..qq]);
    }

    pub fn b_matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.q, self.q, self.block(j))
    }

    /// `I(w)` and its inverse. Fails with `SingularInformation` when `I(w)` is
    /// not numerically positive definite.
    pub fn info_matrix(&self, w: &[f64]) -> Result<InfoState> {
        if w.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} weights for {} points",
                w.len(),
                self.n
            )));
        }
        let qq = self.q * self.q;
        let mut acc = vec![0.0; qq];
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            for (a, b) in acc.iter_mut().zip(&self.b[j * qq..(j + 1) * qq]) {
                *a += wj * b;
            }
        }
        InfoState::from_information(DMatrix::from_row_slice(self.q, self.q, &acc))
    }

    pub fn info(&self, w: &DesignMeasure) -> Result<InfoState> {
        self.info_matrix(w.weights())
    }

    /// `s_j = trace(B_j M)` for all points.
    pub fn sensitivities(&self, state: &InfoState) -> Vec<f64> {
        let m = state.sensitivity_kernel();
        let m = m.as_slice();
        let qq = self.q * self.q;
        let sweep = |range: std::ops::Range<usize>, out: &mut [f64]| {
            for (o, j) in out.iter_mut().zip(range) {
                *o = dot(&self.b[j * qq..(j + 1) * qq], m);
            }
        };
        let mut out = vec![0.0; self.n];
        if self.threads <= 1 || self.n < 2 * self.threads {
            sweep(0..self.n, &mut out);
        } else {
            let chunk = self.n.div_ceil(self.threads);
            std::thread::scope(|scope| {
                for (c, slot) in out.chunks_mut(chunk).enumerate() {
                    let start = c * chunk;
                    let sweep = &sweep;
                    scope.spawn(move || sweep(start..start + slot.len(), slot));
                }
            });
        }
        out
    }

    /// Per-point pieces of the Hessian of `φ`: `X = B A`, `Y = B M` (row-major)
    /// and `u_r = (A B A)_rr / A_rr`.
    fn hessian_terms(&self, state: &InfoState, m: &DMatrix<f64>, j: usize) -> HessTerms {
        let a = &state.inverse;
        let b = self.b_matrix(j);
        let x = &b * a;
        let y = &b * m;
        let axa = a * &x;
        let u = (0..self.q).map(|r| axa[(r, r)] / state.diag_inverse[r]).collect();
        // tr(X_i Y_j) = Σ X_i[a,b] Y_j[b,a]: store X row-major and Y column-major.
        HessTerms {
            x: x.transpose().as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            u,
        }
    }

    /// Diagonal of the Hessian of `φ1` in reduced coordinates at `w` (full weights).
    ///
    /// Uses `∂²φ/∂w_i∂w_j = 2 tr(B_i A B_j M) - Σ_r u_ir u_jr` with
    /// `u_ir = (A B_i A)_rr / A_rr`.
    pub fn reduced_hessian_diagonal(&self, state: &InfoState, w: &[f64], t: f64) -> Vec<f64> {
        let m = state.sensitivity_kernel();
        let last = self.n - 1;
        let tn = self.hessian_terms(state, &m, last);
        let h_nn = tn.h(&tn);
        let bar_n = 1.0 / (t * w[last] * w[last]);
        (0..last)
            .map(|j| {
                let tj = self.hessian_terms(state, &m, j);
                tj.h(&tj) - 2.0 * tj.h(&tn) + h_nn + 1.0 / (t * w[j] * w[j]) + bar_n
            })
            .collect()
    }

    /// Hessian of `φ1` in reduced coordinates restricted to the coordinates `idx`
    /// (each below `N - 1`).
    pub fn reduced_hessian_block(
        &self,
        state: &InfoState,
        w: &[f64],
        t: f64,
        idx: &[usize],
    ) -> DMatrix<f64> {
        let m = state.sensitivity_kernel();
        let last = self.n - 1;
        let tn = self.hessian_terms(state, &m, last);
        let h_nn = tn.h(&tn);
        let bar_n = 1.0 / (t * w[last] * w[last]);
        let terms: Vec<HessTerms> = idx.iter().map(|&j| self.hessian_terms(state, &m, j)).collect();
        let h_n: Vec<f64> = terms.iter().map(|ti| ti.h(&tn)).collect();
        let k = idx.len();
        let qq = self.q * self.q;
        let xs = DMatrix::from_fn(k, qq, |a, c| terms[a].x[c]);
        let ys = DMatrix::from_fn(k, qq, |a, c| terms[a].y[c]);
        let us = DMatrix::from_fn(k, self.q, |a, c| terms[a].u[c]);
        let phi = &xs * ys.transpose() * 2.0 - &us * us.transpose();
        let mut out = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let mut v = 0.5 * (phi[(a, b)] + phi[(b, a)]) - h_n[a] - h_n[b] + h_nn + bar_n;
                if a == b {
                    v += 1.0 / (t * w[idx[a]] * w[idx[a]]);
                }
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        out
    }
}

struct HessTerms {
    x: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
}

impl HessTerms {
    /// `∂²φ/∂w_i∂w_j` for `self = i`, `other = j`.
    fn h(&self, other: &HessTerms) -> f64 {
        2.0 * dot(&self.x, &other.y) - dot(&self.u, &other.u)
    }
}

fn push_symmetric(b: &mut Vec<f64>, m: &DMatrix<f64>) {
    let q = m.nrows();
    for r in 0..q {
        for c in 0..q {
            b.push(0.5 * (m[(r, c)] + m[(c, r)]));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `I(w)`, `A(w) = I(w)^{-1}` and the diagonal of `A`.
#[derive(Debug, Clone)]
pub struct InfoState {
    pub information: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub diag_inverse: DVector<f64>,
}

impl InfoState {
    pub fn from_information(information: DMatrix<f64>) -> Result<Self> {
        if information.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularInformation);
        }
        let chol = information
            .clone()
            .cholesky()
            .ok_or(Error::SingularInformation)?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if !(lo > 0.0) || (hi / lo).powi(2) > MAX_CONDITION {
            return Err(Error::SingularInformation);
        }
        let mut inverse = chol.inverse();
        inverse = (&inverse + inverse.transpose()) * 0.5;
        let diag_inverse = inverse.diagonal();
        if diag_inverse.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::SingularInformation);
        }
        Ok(InfoState {
            information,
            inverse,
            diag_inverse,
        })
    }

    /// `φ = Σ_r log A_rr`.
    pub fn log_loss(&self) -> f64 {
        self.diag_inverse.iter().map(|d| d.ln()).sum()
    }

    /// `Φ_R = Π_r A_rr`.
    pub fn product_loss(&self) -> f64 {
        self.diag_inverse.iter().product()
    }

    /// `M = A diag(A)^{-1} A`, row-major.
    pub fn sensitivity_kernel(&self) -> DMatrix<f64> {
        let a = &self.inverse;
        let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] / self.diag_inverse[c]);
        let m = &scaled * a;
        (&m + m.transpose()) * 0.5
    }
}

/// `h(w, t) = -(1/t) Σ_j log w_j`.
pub fn barrier(w: &[f64], t: f64) -> Result<f64> {
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Infeasible);
    }
    Ok(-w.iter().map(|x| x.ln()).sum::<f64>() / t)
}

/// Full weight vector from the reduced parameterization (last weight implicit).
pub fn expand_reduced(w_reduced: &[f64]) -> Vec<f64> {
    let mut w = w_reduced.to_vec();
    w.push(1.0 - w_reduced.iter().sum::<f64>());
    w
}

/// `φ1(w̃, t) = φ(w̃) + h(w̃, t)` with `w_N = 1 - Σ_{j<N} w_j`.
pub fn phi1(ctx: &InfoContext, w_reduced: &[f64], t: f64) -> Result<f64> {
    let w = expand_reduced(w_reduced);
    let h = barrier(&w, t)?;
    Ok(ctx.info_matrix(&w)?.log_loss() + h)
}

/// Gradient of `φ1` with respect to `w_1..w_{N-1}`.
pub fn grad_phi1(ctx: &InfoContext, w_reduced: &[f64], t: f64) -> Result<Vec<f64>> {
    if w_reduced.len() + 1 != ctx.len() {
        return Err(Error::Dimension(format!(
            "{} reduced weights for {} points",
            w_reduced.len(),
            ctx.len()
        )));
    }
    let w = expand_reduced(w_reduced);
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Infeasible);
    }
    let state = ctx.info_matrix(&w)?;
    let s = ctx.sensitivities(&state);
    Ok(reduced_gradient(&w, &s, t))
}

/// `g_j = s_N - s_j + (1/t)(1/w_N - 1/w_j)`.
pub(crate) fn reduced_gradient(w: &[f64], s: &[f64], t: f64) -> Vec<f64> {
    let last = w.len() - 1;
    let (s_last, inv_last) = (s[last], 1.0 / w[last]);
    (0..last)
        .map(|j| (s_last - s[j]) + (inv_last - 1.0 / w[j]) / t)
        .collect()
}
