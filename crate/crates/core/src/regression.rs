//! Ordinary least squares, Lasso / Elastic Net by coordinate descent, λ
//! paths and k-fold cross-validation.
//!
//! The Lasso objective is
//! `(1/2n)·RSS + λ·Σ|b_j| + λ₂·Σ b_j²`, where `b` are the coefficients of
//! the internally standardized features (zero mean, unit population
//! variance) and the intercept is unpenalised. Coefficients are reported on
//! the original feature scale. With `standardize = false` features are only
//! centred and `b` is the original-scale coefficient vector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::cell::RefCell;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    /// RSS / n.
    pub mse: f64,
    pub rss: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Diagonal of the hat matrix of `[1, X]`.
    pub leverages: Vec<f64>,
}

fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

pub fn ols_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    ols_fit_named(x, y, &default_names(x.ncols()))
}

/// OLS with intercept via Householder QR of the column-normalised design.
/// Columns whose pivot falls below 1e-10 (after normalisation) are reported
/// as linearly dependent.
pub fn ols_fit_named(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Contract(format!("response has {} rows, design has {n}", y.len())));
    }
    if n <= p {
        return Err(Error::Contract(format!("OLS needs n > p (n = {n}, p = {p})")));
    }
    let mut a = DMatrix::<f64>::zeros(n, p + 1);
    a.column_mut(0).fill(1.0);
    a.columns_mut(1, p).copy_from(x);
    let mut norms = vec![0.0; p + 1];
    for (j, nj) in norms.iter_mut().enumerate() {
        *nj = a.column(j).norm();
        if *nj > 0.0 {
            a.column_mut(j).unscale_mut(*nj);
        }
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..=p)
        .filter(|&k| !(r[(k, k)].abs() >= 1e-10))
        .map(|k| if k == 0 { "intercept".to_string() } else { names[k - 1].clone() })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::SingularDesign { columns: dependent });
    }
    let q = qr.q();
    let yv = nalgebra::DVector::from_column_slice(y);
    let qty = q.tr_mul(&yv);
    let sol = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let beta: Vec<f64> = (0..=p).map(|j| sol[j] / norms[j]).collect();
    let mut fitted = vec![beta[0]; n];
    for j in 0..p {
        let bj = beta[j + 1];
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += x[(i, j)] * bj;
        }
    }
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    let leverages = (0..n).map(|i| q.row(i).norm_squared()).collect();
    Ok(OlsFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        r_squared,
        mse: rss / n as f64,
        rss,
        fitted,
        residuals,
        leverages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Elastic-net ridge weight λ₂.
    pub lambda2: f64,
    pub standardize: bool,
    /// Convergence: largest coefficient change in a sweep (standardized scale).
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { lambda2: 0.0, standardize: true, tol: 1e-7, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    /// Original feature scale.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub lambda2: f64,
    pub objective: f64,
    pub n_iterations: usize,
}

impl LassoFit {
    pub fn nnz(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.intercept + self.coefficients.iter().enumerate().map(|(j, b)| if *b != 0.0 { b * x[(i, j)] } else { 0.0 }).sum::<f64>()
    }
}

/// Centred/scaled sufficient statistics of a row subset: the Gram matrix
/// `G = X̃ᵀX̃/n` and `c = X̃ᵀ(y − ȳ)/n` in standardized coordinates.
pub(crate) struct Problem {
    p: usize,
    n: usize,
    pub(crate) x_mean: Vec<f64>,
    /// Population standard deviation of each column over the rows.
    pub(crate) sd: Vec<f64>,
    scale: Vec<f64>,
    usable: Vec<bool>,
    gram: Vec<f64>,
    c: Vec<f64>,
    y_mean: f64,
    y_var: f64,
    /// Cholesky factor of the active block, keyed by active set.
    active: RefCell<Option<(Vec<usize>, f64, Cholesky<f64, Dyn>)>>,
}

/// Raw cross-products of data pre-centred at `shift`.
struct Stats {
    n: usize,
    sum_z: Vec<f64>,
    szz: Vec<f64>,
    sum_y: f64,
    szy: Vec<f64>,
    syy: f64,
}

impl Stats {
    fn of(z: &DMatrix<f64>, yc: &[f64]) -> Stats {
        let (n, p) = z.shape();
        let szz = z.tr_mul(z);
        let yv = nalgebra::DVector::from_column_slice(yc);
        let szy = z.tr_mul(&yv);
        Stats {
            n,
            sum_z: (0..p).map(|j| z.column(j).sum()).collect(),
            szz: szz.as_slice().to_vec(),
            sum_y: yc.iter().sum(),
            szy: szy.as_slice().to_vec(),
            syy: yc.iter().map(|v| v * v).sum(),
        }
    }

    fn minus(&self, o: &Stats) -> Stats {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        Stats {
            n: self.n - o.n,
            sum_z: sub(&self.sum_z, &o.sum_z),
            szz: sub(&self.szz, &o.szz),
            sum_y: self.sum_y - o.sum_y,
            szy: sub(&self.szy, &o.szy),
            syy: self.syy - o.syy,
        }
    }
}

impl Problem {
    fn from_stats(s: &Stats, shift_x: &[f64], shift_y: f64, standardize: bool) -> Problem {
        let p = shift_x.len();
        let nf = s.n as f64;
        let mz: Vec<f64> = s.sum_z.iter().map(|v| v / nf).collect();
        let my = s.sum_y / nf;
        let mut cov = vec![0.0; p * p];
        for k in 0..p {
            for j in 0..p {
                cov[k * p + j] = s.szz[k * p + j] / nf - mz[j] * mz[k];
            }
        }
        let cy: Vec<f64> = (0..p).map(|j| s.szy[j] / nf - mz[j] * my).collect();
        let x_mean: Vec<f64> = (0..p).map(|j| shift_x[j] + mz[j]).collect();
        let sd: Vec<f64> = (0..p).map(|j| cov[j * p + j].max(0.0).sqrt()).collect();
        let usable: Vec<bool> = (0..p).map(|j| sd[j] > 1e-12 * x_mean[j].abs().max(1e-300)).collect();
        let scale: Vec<f64> = (0..p).map(|j| if standardize && usable[j] { sd[j] } else { 1.0 }).collect();
        let mut gram = vec![0.0; p * p];
        for k in 0..p {
            for j in 0..p {
                if usable[j] && usable[k] {
                    gram[k * p + j] = cov[k * p + j] / (scale[j] * scale[k]);
                }
            }
        }
        let c = (0..p).map(|j| if usable[j] { cy[j] / scale[j] } else { 0.0 }).collect();
        Problem {
            p,
            n: s.n,
            x_mean,
            sd,
            scale,
            usable,
            gram,
            c,
            y_mean: shift_y + my,
            y_var: (s.syy / nf - my * my).max(0.0),
            active: RefCell::new(None),
        }
    }

    /// Exact two-pass construction over `rows` of `x`.
    pub(crate) fn from_rows(x: &DMatrix<f64>, y: &[f64], rows: &[usize], standardize: bool) -> Problem {
        let (z, yc, sx, sy) = centered(x, y, rows);
        Problem::from_stats(&Stats::of(&z, &yc), &sx, sy, standardize)
    }

    fn lambda_max(&self) -> f64 {
        (0..self.p).filter(|&j| self.usable[j]).map(|j| self.c[j].abs()).fold(0.0, f64::max)
    }

    fn g(&self, j: usize, k: usize) -> f64 {
        self.gram[k * self.p + j]
    }

    /// Objective in Gram form: ½(var y − cᵀb − qᵀb) + penalty, with q = c − Gb.
    fn objective_gram(&self, b: &[f64], q: &[f64], lambda: f64, lambda2: f64) -> f64 {
        let mut fit = self.y_var;
        let mut pen = 0.0;
        for j in 0..self.p {
            fit -= (self.c[j] + q[j]) * b[j];
            pen += lambda * b[j].abs() + lambda2 * b[j] * b[j];
        }
        0.5 * fit + pen
    }

    fn refresh_q(&self, b: &[f64], q: &mut [f64]) {
        q.copy_from_slice(&self.c);
        for (k, &bk) in b.iter().enumerate() {
            if bk != 0.0 {
                let col = &self.gram[k * self.p..(k + 1) * self.p];
                for (qj, gjk) in q.iter_mut().zip(col) {
                    *qj -= gjk * bk;
                }
            }
        }
    }

    /// One coordinate pass; returns the largest change and whether any
    /// coordinate entered or left the support.
    fn sweep(&self, b: &mut [f64], q: &mut [f64], lambda: f64, lambda2: f64, active_only: bool) -> (f64, bool) {
        let mut max_change: f64 = 0.0;
        let mut moved = false;
        for j in 0..self.p {
            if !self.usable[j] || (active_only && b[j] == 0.0) {
                continue;
            }
            let gjj = self.g(j, j);
            let u = q[j] + gjj * b[j];
            let nb = soft_threshold(u, lambda) / (gjj + 2.0 * lambda2);
            let d = nb - b[j];
            if d != 0.0 {
                moved |= (nb == 0.0) != (b[j] == 0.0);
                b[j] = nb;
                let col = &self.gram[j * self.p..(j + 1) * self.p];
                for (qk, gkj) in q.iter_mut().zip(col) {
                    *qk -= gkj * d;
                }
                max_change = max_change.max(d.abs());
            }
        }
        (max_change, moved)
    }

    /// Closed-form candidate from the warm start's active set and signs:
    /// (G_AA + 2λ₂I) b_A = c_A − λ s_A. Coordinates whose sign breaks are
    /// dropped and KKT violators (|q_j| > λ) enter with the sign of q_j, for
    /// a few rounds. A candidate is accepted only once it satisfies the
    /// optimality conditions, so a miss just falls back to coordinate descent.
    fn try_exact(&self, lambda: f64, lambda2: f64, b: &mut [f64], q: &mut [f64]) -> bool {
        let mut act: Vec<(usize, f64)> = (0..self.p).filter(|&j| b[j] != 0.0).map(|j| (j, b[j].signum())).collect();
        if act.is_empty() {
            return false;
        }
        let mut qc = vec![0.0; self.p];
        for _ in 0..10 {
            let Some(sol) = self.active_solve(&act, lambda, lambda2) else { return false };
            let before = act.len();
            let kept: Vec<(usize, f64)> = act.iter().zip(&sol).filter(|((_, s), v)| v.signum() == *s && **v != 0.0).map(|(a, _)| *a).collect();
            if kept.len() < before {
                if kept.is_empty() {
                    return false;
                }
                act = kept;
                continue;
            }
            let mut cand = vec![0.0; self.p];
            for (&(j, _), v) in act.iter().zip(&sol) {
                cand[j] = *v;
            }
            self.refresh_q(&cand, &mut qc);
            let enter: Vec<(usize, f64)> =
                (0..self.p).filter(|&j| cand[j] == 0.0 && self.usable[j] && qc[j].abs() > lambda).map(|j| (j, qc[j].signum())).collect();
            if enter.is_empty() {
                b.copy_from_slice(&cand);
                q.copy_from_slice(&qc);
                return true;
            }
            act.extend(enter);
            act.sort_unstable_by_key(|a| a.0);
        }
        false
    }

    /// Solves the active block, reusing the cached factor when the set is unchanged.
    fn active_solve(&self, act: &[(usize, f64)], lambda: f64, lambda2: f64) -> Option<Vec<f64>> {
        let idx: Vec<usize> = act.iter().map(|a| a.0).collect();
        let mut cache = self.active.borrow_mut();
        let stale = !matches!(&*cache, Some((a, l2, _)) if *a == idx && *l2 == lambda2);
        if stale {
            let m = idx.len();
            let g = DMatrix::from_fn(m, m, |r, c| self.g(idx[r], idx[c]) + if r == c { 2.0 * lambda2 } else { 0.0 });
            *cache = Some((idx.clone(), lambda2, g.cholesky()?));
        }
        let ch = &cache.as_ref().expect("factor cached").2;
        let rhs = DVector::from_iterator(act.len(), act.iter().map(|&(j, s)| self.c[j] - lambda * s));
        Some(ch.solve(&rhs).iter().copied().collect())
    }

    /// Coordinate descent from the warm start `b` with active-set cycling,
    /// preceded by an exact active-set step when the warm start's support
    /// is still optimal. Returns the number of sweeps.
    fn solve(&self, lambda: f64, opts: &LassoOptions, b: &mut [f64], q: &mut [f64]) -> Result<usize> {
        if self.try_exact(lambda, opts.lambda2, b, q) {
            return Ok(1);
        }
        let mut sweeps = 0;
        let mut last = f64::INFINITY;
        let check = |b: &[f64], q: &[f64], last: &mut f64| {
            if cfg!(debug_assertions) {
                let f = self.objective_gram(b, q, lambda, opts.lambda2);
                debug_assert!(f <= *last + 1e-10 * (1.0 + f.abs()), "objective increased: {last} -> {f}");
                *last = f;
            }
        };
        loop {
            self.refresh_q(b, q);
            let (mc, moved) = self.sweep(b, q, lambda, opts.lambda2, false);
            sweeps += 1;
            check(b, q, &mut last);
            if mc < opts.tol || (!moved && self.try_exact(lambda, opts.lambda2, b, q)) {
                return Ok(sweeps);
            }
            let mut settled = 0;
            loop {
                if sweeps >= opts.max_sweeps {
                    return Err(self.nonconvergence(b, sweeps, mc));
                }
                let (mc, moved) = self.sweep(b, q, lambda, opts.lambda2, true);
                sweeps += 1;
                check(b, q, &mut last);
                if mc < opts.tol {
                    break;
                }
                settled = if moved { 0 } else { settled + 1 };
                if settled == 2 && self.try_exact(lambda, opts.lambda2, b, q) {
                    return Ok(sweeps);
                }
            }
            if sweeps >= opts.max_sweeps {
                return Err(self.nonconvergence(b, sweeps, mc));
            }
        }
    }

    fn nonconvergence(&self, b: &[f64], sweeps: usize, mc: f64) -> Error {
        let (_, coef) = self.unstandardize(b);
        Error::NonConvergence { iterations: sweeps, max_change: mc, last_iterate: coef }
    }

    fn unstandardize(&self, b: &[f64]) -> (f64, Vec<f64>) {
        let coef: Vec<f64> = (0..self.p).map(|j| if b[j] != 0.0 { b[j] / self.scale[j] } else { 0.0 }).collect();
        let intercept = self.y_mean - coef.iter().zip(&self.x_mean).map(|(c, m)| c * m).sum::<f64>();
        (intercept, coef)
    }

    /// Prediction from standardized coefficients, centred at the training means.
    fn predict(&self, x: &DMatrix<f64>, i: usize, b: &[f64]) -> f64 {
        let mut v = self.y_mean;
        for j in 0..self.p {
            if b[j] != 0.0 {
                v += b[j] * (x[(i, j)] - self.x_mean[j]) / self.scale[j];
            }
        }
        v
    }

    fn make_fit(&self, x: &DMatrix<f64>, y: &[f64], rows: &[usize], b: &[f64], lambda: f64, opts: &LassoOptions, iters: usize) -> LassoFit {
        let rss: f64 = rows.iter().map(|&i| (y[i] - self.predict(x, i, b)).powi(2)).sum();
        let pen: f64 = b.iter().map(|v| lambda * v.abs() + opts.lambda2 * v * v).sum();
        let (intercept, coefficients) = self.unstandardize(b);
        LassoFit {
            intercept,
            coefficients,
            lambda,
            lambda2: opts.lambda2,
            objective: 0.5 * rss / self.n as f64 + pen,
            n_iterations: iters,
        }
    }
}

fn centered(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, f64) {
    let p = x.ncols();
    let m = rows.len() as f64;
    let sx: Vec<f64> = (0..p).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / m).collect();
    let sy = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
    let z = DMatrix::from_fn(rows.len(), p, |r, j| x[(rows[r], j)] - sx[j]);
    let yc = rows.iter().map(|&i| y[i] - sy).collect();
    (z, yc, sx, sy)
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::Contract(format!("response has {} rows, design has {}", y.len(), x.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::EmptyInput("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in design or response".into()));
    }
    Ok(())
}

fn check_lambda(lambda: f64, opts: &LassoOptions) -> Result<()> {
    if !(lambda >= 0.0) || !(opts.lambda2 >= 0.0) {
        return Err(Error::Contract(format!("penalties must be non-negative (λ = {lambda}, λ₂ = {})", opts.lambda2)));
    }
    Ok(())
}

/// Smallest λ at which every coefficient is zero: max_j |⟨x̃_j, y − ȳ⟩|/n.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], standardize: bool) -> f64 {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    Problem::from_rows(x, y, &rows, standardize).lambda_max()
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    check_inputs(x, y)?;
    check_lambda(lambda, opts)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let prob = Problem::from_rows(x, y, &rows, opts.standardize);
    let mut b = vec![0.0; prob.p];
    let mut q = prob.c.clone();
    let iters = prob.solve(lambda, opts, &mut b, &mut q)?;
    Ok(prob.make_fit(x, y, &rows, &b, lambda, opts, iters))
}

fn descending_order(grid: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
    order
}

/// Fits along a λ grid (returned in grid order), solved from the largest λ
/// down with warm starts.
pub fn lasso_path(x: &DMatrix<f64>, y: &[f64], grid: &[f64], opts: &LassoOptions) -> Result<Vec<LassoFit>> {
    check_inputs(x, y)?;
    for &l in grid {
        check_lambda(l, opts)?;
    }
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let prob = Problem::from_rows(x, y, &rows, opts.standardize);
    let mut b = vec![0.0; prob.p];
    let mut q = prob.c.clone();
    let mut out: Vec<Option<LassoFit>> = vec![None; grid.len()];
    for i in descending_order(grid) {
        let iters = prob.solve(grid[i], opts, &mut b, &mut q)?;
        out[i] = Some(prob.make_fit(x, y, &rows, &b, grid[i], opts, iters));
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// `10^e` for e from `lo` to `hi` in `step` (inclusive), ascending.
pub fn log_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let m = ((hi - lo) / step).round() as i64;
    (0..=m).map(|i| 10f64.powf(lo + i as f64 * step)).collect()
}

/// 10^i for i = −4, −3.98, …, 0: 201 values.
pub fn default_grid() -> Vec<f64> {
    log_grid(-4.0, 0.0, 0.02)
}

/// Seeded random partition of `0..n` into `k` near-equal folds;
/// returns the positions of each fold.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = perm[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    folds
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    pub mse_mean: Vec<f64>,
    pub mse_std: Vec<f64>,
    /// Fold MSE after mapping observations and predictions back through
    /// the inverse response transform, when one was supplied.
    pub mse_original_mean: Option<Vec<f64>>,
    pub mse_original_std: Option<Vec<f64>>,
    /// Nonzero count of the full-data fit at each λ.
    pub nnz: Vec<usize>,
    pub lambda_cv: f64,
    pub index_cv: usize,
    pub folds_used: usize,
    pub fit_cv: LassoFit,
}

pub type Inverse<'a> = Option<&'a (dyn Fn(f64) -> f64 + Sync)>;

pub(crate) struct CvCore {
    pub mse_mean: Vec<f64>,
    pub mse_std: Vec<f64>,
    pub mse_orig: Option<(Vec<f64>, Vec<f64>)>,
    pub index_cv: usize,
    pub folds_used: usize,
    pub fit: LassoFit,
    pub nnz: Option<Vec<usize>>,
    /// Population sd of each column over the rows used.
    pub sd: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, s)
}

/// Folds over positions of `rows` such that repeated copies of one
/// original row always share a fold. With distinct rows this is exactly
/// `fold_partition(rows.len(), k, seed)`.
fn grouped_folds(rows: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut first: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut group = Vec::with_capacity(rows.len());
    for &r in rows {
        let next = first.len();
        group.push(*first.entry(r).or_insert(next));
    }
    let distinct = first.len();
    if distinct < k {
        return Err(Error::Degenerate(format!("{distinct} distinct rows cannot fill {k} folds")));
    }
    let gfolds = fold_partition(distinct, k, seed);
    let mut fold_of = vec![0; distinct];
    for (f, members) in gfolds.iter().enumerate() {
        for &g in members {
            fold_of[g] = f;
        }
    }
    let mut folds = vec![Vec::new(); k];
    for (pos, g) in group.iter().enumerate() {
        folds[fold_of[*g]].push(pos);
    }
    Ok(folds)
}

/// k-fold CV over the row multiset `rows` (bootstrap resamples repeat
/// rows). With `full_path` the full-data path is solved over the whole
/// grid; otherwise it stops at λ^CV, which yields the same fit there.
pub(crate) fn cv_core(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    grid: &[f64],
    k: usize,
    fold_seed: u64,
    opts: &LassoOptions,
    inverse: Inverse,
    full_path: bool,
) -> Result<CvCore> {
    let m = rows.len();
    if k < 2 || m < k {
        return Err(Error::Contract(format!("cross-validation needs n ≥ k ≥ 2 (n = {m}, k = {k})")));
    }
    if grid.is_empty() {
        return Err(Error::Contract("empty λ grid".into()));
    }
    for &l in grid {
        check_lambda(l, opts)?;
    }
    let p = x.ncols();
    let (z, yc, sx, sy) = centered(x, y, rows);
    let all = Stats::of(&z, &yc);
    let order = descending_order(grid);
    let folds = grouped_folds(rows, k, fold_seed)?;
    let mut fold_mse: Vec<Vec<f64>> = vec![Vec::with_capacity(k); grid.len()];
    let mut fold_orig: Vec<Vec<f64>> = vec![Vec::with_capacity(k); grid.len()];
    let mut folds_used = 0;
    for (f, test) in folds.iter().enumerate() {
        let zt = DMatrix::from_fn(test.len(), p, |r, j| z[(test[r], j)]);
        let yt: Vec<f64> = test.iter().map(|&t| yc[t]).collect();
        let train = all.minus(&Stats::of(&zt, &yt));
        let prob = Problem::from_stats(&train, &sx, sy, opts.standardize);
        if !(prob.y_var > 1e-14 * (1.0 + prob.y_mean * prob.y_mean)) {
            log::warn!("fold {f}: training response has zero variance, skipped");
            continue;
        }
        folds_used += 1;
        let w: Vec<f64> = test
            .iter()
            .flat_map(|&t| (0..p).map(move |j| (t, j)))
            .map(|(t, j)| (x[(rows[t], j)] - prob.x_mean[j]) / prob.scale[j])
            .collect();
        let mut b = vec![0.0; p];
        let mut q = prob.c.clone();
        for &gi in &order {
            prob.solve(grid[gi], opts, &mut b, &mut q)?;
            let nz: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
            let mut se = 0.0;
            let mut se_orig = 0.0;
            for (r, &t) in test.iter().enumerate() {
                let i = rows[t];
                let wr = &w[r * p..(r + 1) * p];
                let pred = prob.y_mean + nz.iter().map(|&j| b[j] * wr[j]).sum::<f64>();
                se += (y[i] - pred).powi(2);
                if let Some(inv) = inverse {
                    se_orig += (inv(y[i]) - inv(pred)).powi(2);
                }
            }
            fold_mse[gi].push(se / test.len() as f64);
            fold_orig[gi].push(se_orig / test.len() as f64);
        }
    }
    if folds_used == 0 {
        return Err(Error::Degenerate("every cross-validation fold has a constant training response".into()));
    }
    let (mse_mean, mse_std): (Vec<f64>, Vec<f64>) = fold_mse.iter().map(|v| mean_std(v)).unzip();
    let mse_orig = inverse.map(|_| fold_orig.iter().map(|v| mean_std(v)).unzip());
    let mut index_cv = 0;
    for i in 1..grid.len() {
        let better = mse_mean[i] < mse_mean[index_cv] || (mse_mean[i] == mse_mean[index_cv] && grid[i] > grid[index_cv]);
        if better {
            index_cv = i;
        }
    }
    let prob = Problem::from_stats(&all, &sx, sy, opts.standardize);
    let mut b = vec![0.0; p];
    let mut q = prob.c.clone();
    let mut nnz = vec![0; grid.len()];
    let mut fit = None;
    for &gi in &order {
        let iters = prob.solve(grid[gi], opts, &mut b, &mut q)?;
        nnz[gi] = b.iter().filter(|v| **v != 0.0).count();
        if gi == index_cv {
            fit = Some(prob.make_fit(x, y, rows, &b, grid[gi], opts, iters));
            if !full_path {
                break;
            }
        }
    }
    Ok(CvCore {
        mse_mean,
        mse_std,
        mse_orig,
        index_cv,
        folds_used,
        fit: fit.expect("λ^CV lies on the grid"),
        nnz: full_path.then_some(nnz),
        sd: prob.sd,
    })
}

/// k-fold cross-validated λ selection; the final fit uses all rows.
pub fn cv_select(x: &DMatrix<f64>, y: &[f64], grid: &[f64], k: usize, seed: u64, opts: &LassoOptions) -> Result<CvResult> {
    cv_select_with_inverse(x, y, grid, k, seed, opts, None)
}

pub fn cv_select_with_inverse(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    k: usize,
    seed: u64,
    opts: &LassoOptions,
    inverse: Inverse,
) -> Result<CvResult> {
    check_inputs(x, y)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let core = cv_core(x, y, &rows, grid, k, seed, opts, inverse, true)?;
    let (mo, so) = match core.mse_orig {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    Ok(CvResult {
        lambda_grid: grid.to_vec(),
        mse_mean: core.mse_mean,
        mse_std: core.mse_std,
        mse_original_mean: mo,
        mse_original_std: so,
        nnz: core.nnz.unwrap_or_default(),
        lambda_cv: grid[core.index_cv],
        index_cv: core.index_cv,
        folds_used: core.folds_used,
        fit_cv: core.fit,
    })
}

/// λ-path / CV curve as CSV: lambda, mse_mean, mse_std, nnz
/// (plus original-scale columns when available).
pub fn write_cv_csv(path: impl AsRef<Path>, cv: &CvResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let orig = cv.mse_original_mean.as_ref().zip(cv.mse_original_std.as_ref());
    let mut header = vec!["lambda", "mse_mean", "mse_std", "nnz"];
    if orig.is_some() {
        header.extend(["mse_original_mean", "mse_original_std"]);
    }
    w.write_record(&header)?;
    for i in 0..cv.lambda_grid.len() {
        let mut rec = vec![
            cv.lambda_grid[i].to_string(),
            cv.mse_mean[i].to_string(),
            cv.mse_std[i].to_string(),
            cv.nnz.get(i).map(|v| v.to_string()).unwrap_or_default(),
        ];
        if let Some((m, s)) = orig {
            rec.push(m[i].to_string());
            rec.push(s[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
