//! Data hygiene on the feature matrix: uninformative and collinear feature
//! removal, the VIF loop, response transforms and influential-point
//! filtering.

pub mod rules;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::regression::{fold_partition, ols_fit, ols_fit_named};

pub use rules::{apply_missing_rules, RuleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGroup {
    pub representative: String,
    /// Dropped members, excluding the representative.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenDiagnostics {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub sum_eigenvalues: f64,
    pub p: usize,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifStep {
    pub name: String,
    pub vif: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub dropped_uninformative: Vec<String>,
    pub dropped_constant: Vec<String>,
    pub correlation_groups: Vec<CorrelationGroup>,
    pub vif_elimination_order: Vec<VifStep>,
    pub eigen_before_vif: Option<EigenDiagnostics>,
    pub eigen_diagnostics: Option<EigenDiagnostics>,
    pub cooks_removed: Vec<String>,
    pub cooks_threshold: Option<f64>,
    pub mse_before_cooks: Option<f64>,
    pub mse_after_cooks: Option<f64>,
}

impl PruneReport {
    /// Every dropped feature, in stage order.
    pub fn dropped(&self) -> Vec<String> {
        let mut v = self.dropped_constant.clone();
        v.extend(self.dropped_uninformative.iter().cloned());
        for g in &self.correlation_groups {
            v.extend(g.members.iter().cloned());
        }
        v.extend(self.vif_elimination_order.iter().map(|s| s.name.clone()));
        v
    }
}

fn require_complete(x: &FeatureMatrix) -> Result<()> {
    if let Some(j) = (0..x.n_cols()).find(|&j| x.missing_count(j) > 0) {
        return Err(Error::Data(format!("feature {} still has missing values", x.names()[j])));
    }
    Ok(())
}

fn is_constant(col: &[f64]) -> bool {
    col.iter().all(|v| *v == col[0])
}

/// Drops features with strictly more than `zero_frac` zero values, and
/// constant columns (whose correlations are undefined).
pub fn drop_uninformative(x: &FeatureMatrix, zero_frac: f64) -> Result<(FeatureMatrix, Vec<String>, Vec<String>)> {
    if !(zero_frac > 0.0 && zero_frac < 1.0) {
        return Err(Error::Contract(format!("zero fraction must lie in (0, 1), got {zero_frac}")));
    }
    require_complete(x)?;
    let n = x.n_rows() as f64;
    let mut keep = Vec::new();
    let mut zeros = Vec::new();
    let mut constant = Vec::new();
    for j in 0..x.n_cols() {
        let col = x.column(j);
        let z = col.iter().filter(|v| **v == 0.0).count() as f64;
        if z / n > zero_frac {
            zeros.push(x.names()[j].clone());
        } else if is_constant(col) {
            constant.push(x.names()[j].clone());
        } else {
            keep.push(j);
        }
    }
    Ok((x.select_columns(&keep), zeros, constant))
}

/// Pearson correlation matrix with population denominators; entries
/// involving a constant column are 0 (1 on the diagonal).
pub fn correlation_matrix(x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    require_complete(x)?;
    let (n, p) = (x.n_rows(), x.n_cols());
    let nf = n as f64;
    let mut z = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / nf;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
        if sd > 0.0 {
            for i in 0..n {
                z[(i, j)] = (col[i] - m) / sd;
            }
        }
    }
    let mut r = z.tr_mul(&z) / nf;
    for j in 0..p {
        r[(j, j)] = 1.0;
    }
    Ok(r)
}

/// Greedy correlation cliques. Features are visited in priority order
/// (listed names first, then column index); each unassigned feature opens a
/// group and absorbs every later unassigned feature whose |r| with all
/// current members exceeds the threshold. Repeated on the survivors until
/// no surviving pair exceeds the threshold.
pub fn prune_correlated(x: &FeatureMatrix, threshold: f64, priority: &[String]) -> Result<(FeatureMatrix, Vec<CorrelationGroup>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("correlation threshold must lie in (0, 1), got {threshold}")));
    }
    let r = correlation_matrix(x)?;
    let p = x.n_cols();
    let mut order: Vec<usize> = priority.iter().filter_map(|nm| x.column_index(nm)).collect();
    order.dedup();
    for j in 0..p {
        if !order.contains(&j) {
            order.push(j);
        }
    }
    let mut groups = Vec::new();
    let mut alive = order;
    loop {
        let mut assigned = vec![false; p];
        let mut survivors = Vec::new();
        let mut merged = false;
        for (a, &f) in alive.iter().enumerate() {
            if assigned[f] {
                continue;
            }
            assigned[f] = true;
            survivors.push(f);
            let mut members = vec![f];
            for &g in &alive[a + 1..] {
                if !assigned[g] && members.iter().all(|&h| r[(g, h)].abs() > threshold) {
                    assigned[g] = true;
                    members.push(g);
                }
            }
            if members.len() > 1 {
                merged = true;
                groups.push(CorrelationGroup {
                    representative: x.names()[f].clone(),
                    members: members[1..].iter().map(|&m| x.names()[m].clone()).collect(),
                });
            }
        }
        alive = survivors;
        if !merged {
            break;
        }
    }
    let mut keep = alive;
    keep.sort_unstable();
    Ok((x.select_columns(&keep), groups))
}

pub fn eigen_diagnostics(corr: &DMatrix<f64>) -> EigenDiagnostics {
    let p = corr.nrows();
    if p == 0 {
        return EigenDiagnostics { min_eigenvalue: 0.0, max_eigenvalue: 0.0, sum_eigenvalues: 0.0, p, condition_number: f64::NAN };
    }
    let ev = SymmetricEigen::new(corr.clone()).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    EigenDiagnostics {
        min_eigenvalue: min,
        max_eigenvalue: max,
        sum_eigenvalues: ev.iter().sum(),
        p,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
    }
}

/// VIF_j = 1/(1 − R²_j) for every column, read off the diagonal of the
/// inverse correlation matrix. Columns lying in the span of the others
/// (R²_j = 1) get +∞.
pub fn vif(x: &FeatureMatrix) -> Result<Vec<f64>> {
    let r = correlation_matrix(x)?;
    Ok(vif_from_corr(&r))
}

fn vif_from_corr(r: &DMatrix<f64>) -> Vec<f64> {
    let p = r.nrows();
    if p == 1 {
        return vec![1.0];
    }
    if let Some(ch) = r.clone().cholesky() {
        let inv = ch.inverse();
        let v: Vec<f64> = (0..p).map(|j| inv[(j, j)]).collect();
        if v.iter().all(|x| x.is_finite() && *x >= 1.0 - 1e-9) {
            return v;
        }
    }
    // Singular: features with weight in the numerical null space are exact
    // combinations of the others.
    let eig = SymmetricEigen::new(r.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * max.max(1.0) * p as f64;
    (0..p)
        .map(|j| {
            let mut null_weight = 0.0;
            let mut pinv = 0.0;
            for k in 0..p {
                let lam = eig.eigenvalues[k];
                let w = eig.eigenvectors[(j, k)].powi(2);
                if lam <= tol {
                    null_weight += w;
                } else {
                    pinv += w / lam;
                }
            }
            if null_weight > 1e-8 {
                f64::INFINITY
            } else {
                pinv
            }
        })
        .collect()
}

/// Repeatedly removes the feature with the largest VIF (ties: lowest
/// column index) while the maximum VIF is ≥ `threshold`.
pub fn vif_eliminate(x: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<VifStep>, EigenDiagnostics, EigenDiagnostics)> {
    if !(threshold > 1.0) {
        return Err(Error::Contract(format!("VIF threshold must exceed 1, got {threshold}")));
    }
    let mut cur = x.clone();
    let mut steps = Vec::new();
    let before = eigen_diagnostics(&correlation_matrix(&cur)?);
    loop {
        if cur.n_cols() == 0 {
            break;
        }
        if cur.n_rows() <= cur.n_cols() {
            return Err(Error::Contract(format!(
                "VIF needs n > p (n = {}, p = {})",
                cur.n_rows(),
                cur.n_cols()
            )));
        }
        let v = vif(&cur)?;
        let mut jmax = 0;
        for j in 1..v.len() {
            if v[j] > v[jmax] {
                jmax = j;
            }
        }
        if v[jmax] < threshold {
            break;
        }
        steps.push(VifStep { name: cur.names()[jmax].clone(), vif: v[jmax] });
        let keep: Vec<usize> = (0..cur.n_cols()).filter(|&j| j != jmax).collect();
        cur = cur.select_columns(&keep);
    }
    let after = eigen_diagnostics(&correlation_matrix(&cur)?);
    Ok((cur, steps, before, after))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseTransform {
    Identity,
    Sqrt,
    Square,
    Log,
    BoxCox(f64),
}

impl ResponseTransform {
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let needs_positive = matches!(self, ResponseTransform::Sqrt | ResponseTransform::Log | ResponseTransform::BoxCox(_));
        if needs_positive {
            if let Some(v) = y.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Data(format!("{self} transform needs positive responses, found {v}")));
            }
        }
        Ok(y.iter().map(|&v| self.forward(v)).collect())
    }

    pub fn forward(&self, v: f64) -> f64 {
        match *self {
            ResponseTransform::Identity => v,
            ResponseTransform::Sqrt => v.sqrt(),
            ResponseTransform::Square => v * v,
            ResponseTransform::Log => v.ln(),
            ResponseTransform::BoxCox(l) if l == 0.0 => v.ln(),
            ResponseTransform::BoxCox(l) => (v.powf(l) - 1.0) / l,
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match *self {
            ResponseTransform::Identity => v,
            ResponseTransform::Sqrt => v * v,
            ResponseTransform::Square => v.max(0.0).sqrt(),
            ResponseTransform::Log => v.exp(),
            ResponseTransform::BoxCox(l) if l == 0.0 => v.exp(),
            ResponseTransform::BoxCox(l) => (l * v + 1.0).max(0.0).powf(1.0 / l),
        }
    }
}

impl fmt::Display for ResponseTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseTransform::Identity => write!(f, "identity"),
            ResponseTransform::Sqrt => write!(f, "sqrt"),
            ResponseTransform::Square => write!(f, "square"),
            ResponseTransform::Log => write!(f, "log"),
            ResponseTransform::BoxCox(l) => write!(f, "box-cox({l})"),
        }
    }
}

impl FromStr for ResponseTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "identity" | "none" => ResponseTransform::Identity,
            "sqrt" => ResponseTransform::Sqrt,
            "square" => ResponseTransform::Square,
            "log" => ResponseTransform::Log,
            _ => {
                let inner = t
                    .strip_prefix("box-cox(")
                    .or_else(|| t.strip_prefix("boxcox("))
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown response transform {s:?}")))?;
                ResponseTransform::BoxCox(
                    inner.trim().parse().map_err(|_| Error::Config(format!("bad Box-Cox parameter in {s:?}")))?,
                )
            }
        })
    }
}

impl Serialize for ResponseTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ResponseTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualData {
    pub transform: ResponseTransform,
    pub r_squared: f64,
    pub mse: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// OLS of the transformed response on X: fitted-vs-residual pairs for
/// residual plots.
pub fn residual_diagnostics(x: &FeatureMatrix, y: &[f64], transform: ResponseTransform) -> Result<ResidualData> {
    let yt = transform.apply(y)?;
    let fit = ols_fit_named(&x.to_dmatrix()?, &yt, x.names())?;
    Ok(ResidualData { transform, r_squared: fit.r_squared, mse: fit.mse, fitted: fit.fitted, residuals: fit.residuals })
}

/// Mean k-fold test MSE of OLS.
pub fn ols_cv_mse(x: &DMatrix<f64>, y: &[f64], k: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if k < 2 || n < k {
        return Err(Error::Contract(format!("cross-validation needs n ≥ k ≥ 2 (n = {n}, k = {k})")));
    }
    let mut total = 0.0;
    for test in fold_partition(n, k, seed) {
        let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fit = ols_fit(&xt, &yt)?;
        let mut se = 0.0;
        for &i in &test {
            let pred = fit.intercept + (0..x.ncols()).map(|j| fit.coefficients[j] * x[(i, j)]).sum::<f64>();
            se += (y[i] - pred).powi(2);
        }
        total += se / test.len() as f64;
    }
    Ok(total / k as f64)
}

/// Appends √x, x² and log(x + 1) of every column where defined (x ≥ 0).
pub fn expand_features(x: &FeatureMatrix) -> Result<FeatureMatrix> {
    require_complete(x)?;
    let mut out = x.clone();
    for j in 0..x.n_cols() {
        let col = x.column(j).to_vec();
        let name = &x.names()[j];
        let prov = x.provenance()[j].clone();
        let mut add = |suffix: &str, f: &dyn Fn(f64) -> f64| -> Result<()> {
            let mut pv = prov.clone();
            pv.kind = format!("{} ({suffix})", prov.kind);
            out.push_column(format!("{name}__{suffix}"), col.iter().map(|&v| Some(f(v))).collect(), pv)
        };
        add("sq", &|v| v * v)?;
        if col.iter().all(|v| *v >= 0.0) {
            add("sqrt", &|v| v.sqrt())?;
            add("log1p", &|v| v.ln_1p())?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionDiagnostic {
    pub p_base: usize,
    pub p_expanded: usize,
    pub cv_mse_base: Option<f64>,
    pub cv_mse_expanded: Option<f64>,
    /// Per-variant failure (e.g. singular or p ≥ n after expansion).
    pub errors: Vec<String>,
}

/// CV-MSE of OLS with and without the nonlinear feature expansion, on the
/// transformed response.
pub fn feature_expansion_diagnostic(x: &FeatureMatrix, y: &[f64], k: usize, seed: u64) -> Result<ExpansionDiagnostic> {
    let ex = expand_features(x)?;
    let mut errors = Vec::new();
    let mut run = |m: &FeatureMatrix, label: &str| match m.to_dmatrix().and_then(|d| ols_cv_mse(&d, y, k, seed)) {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{label}: {e}"));
            None
        }
    };
    let base = run(x, "base");
    let expanded = run(&ex, "expanded");
    Ok(ExpansionDiagnostic { p_base: x.n_cols(), p_expanded: ex.n_cols(), cv_mse_base: base, cv_mse_expanded: expanded, errors })
}

#[derive(Debug, Clone, Serialize)]
pub struct CooksResult {
    pub distances: Vec<f64>,
    pub removed: Vec<usize>,
    pub mse_before: f64,
    /// OLS MSE refitted on the kept rows.
    pub mse_after: Option<f64>,
}

/// Cook's distance D_i = r_i²·h_ii / (p′·s²·(1 − h_ii)²), with p′ the
/// number of fitted parameters including the intercept and
/// s² = RSS/(n − p′). Leverage 1 gives +∞.
pub fn cooks_distances(x: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (n, p) = x.shape();
    let pp = p + 1;
    if n <= pp {
        return Err(Error::Contract(format!("Cook's distance needs n > p + 1 (n = {n}, p = {p})")));
    }
    let fit = ols_fit(x, y)?;
    let s2 = fit.rss / (n - pp) as f64;
    let d = fit
        .residuals
        .iter()
        .zip(&fit.leverages)
        .map(|(&r, &h)| {
            let om = 1.0 - h;
            if om <= 1e-12 {
                f64::INFINITY
            } else if r == 0.0 {
                0.0
            } else if s2 == 0.0 {
                f64::INFINITY
            } else {
                r * r * h / (pp as f64 * s2 * om * om)
            }
        })
        .collect();
    Ok((d, fit.mse))
}

pub fn cooks_filter(x: &DMatrix<f64>, y: &[f64], threshold: f64) -> Result<CooksResult> {
    if !(threshold > 0.0) {
        return Err(Error::Contract(format!("Cook's threshold must be positive, got {threshold}")));
    }
    let (distances, mse_before) = cooks_distances(x, y)?;
    let removed: Vec<usize> = (0..distances.len()).filter(|&i| distances[i] > threshold).collect();
    let kept: Vec<usize> = (0..distances.len()).filter(|&i| distances[i] <= threshold).collect();
    let mse_after = if removed.is_empty() {
        Some(mse_before)
    } else {
        let yk: Vec<f64> = kept.iter().map(|&i| y[i]).collect();
        ols_fit(&x.select_rows(&kept), &yk).ok().map(|f| f.mse)
    };
    Ok(CooksResult { distances, removed, mse_before, mse_after })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PreprocessConfig {
    pub zero_fraction: f64,
    pub correlation_threshold: f64,
    pub correlation_priority: Vec<String>,
    pub vif_threshold: f64,
    pub cooks_threshold: f64,
    pub apply_cooks: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            zero_fraction: 0.95,
            correlation_threshold: 0.95,
            correlation_priority: Vec::new(),
            vif_threshold: 10.0,
            cooks_threshold: 0.015,
            apply_cooks: true,
        }
    }
}

/// Feature-side stages in order: uninformative, correlation groups, VIF.
pub fn prune_features(x: &FeatureMatrix, cfg: &PreprocessConfig) -> Result<(FeatureMatrix, PruneReport)> {
    let mut report = PruneReport::default();
    let (x1, zeros, constant) = drop_uninformative(x, cfg.zero_fraction)?;
    report.dropped_uninformative = zeros;
    report.dropped_constant = constant;
    let (x2, groups) = prune_correlated(&x1, cfg.correlation_threshold, &cfg.correlation_priority)?;
    report.correlation_groups = groups;
    let (x3, steps, before, after) = vif_eliminate(&x2, cfg.vif_threshold)?;
    report.vif_elimination_order = steps;
    report.eigen_before_vif = Some(before);
    report.eigen_diagnostics = Some(after);
    Ok((x3, report))
}

/// Removes Cook's-influential rows from an already transformed response.
pub fn apply_cooks(x: &FeatureMatrix, yt: &[f64], threshold: f64, report: &mut PruneReport) -> Result<(FeatureMatrix, Vec<f64>, CooksResult)> {
    let res = cooks_filter(&x.to_dmatrix()?, yt, threshold)?;
    let kept: Vec<usize> = (0..x.n_rows()).filter(|i| !res.removed.contains(i)).collect();
    report.cooks_removed = res.removed.iter().map(|&i| x.ids()[i].clone()).collect();
    report.cooks_threshold = Some(threshold);
    report.mse_before_cooks = Some(res.mse_before);
    report.mse_after_cooks = res.mse_after;
    Ok((x.select_rows(&kept), kept.iter().map(|&i| yt[i]).collect(), res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut impl rand::Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn matrix(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        FeatureMatrix::from_columns((0..n).map(|i| i.to_string()).collect(), names, cols).unwrap()
    }

    #[test]
    fn zero_fraction_boundary() {
        let n = 100;
        let all_zero = vec![0.0; n];
        let mostly: Vec<f64> = (0..n).map(|i| if i < 94 { 0.0 } else { i as f64 }).collect();
        let many: Vec<f64> = (0..n).map(|i| if i < 96 { 0.0 } else { i as f64 }).collect();
        let constant = vec![3.0; n];
        let (x, zeros, cons) = drop_uninformative(&matrix(vec![all_zero, mostly, many, constant]), 0.95).unwrap();
        assert_eq!(x.names(), &["x1".to_string()]);
        assert_eq!(zeros, vec!["x0".to_string(), "x2".to_string()]);
        assert_eq!(cons, vec!["x3".to_string()]);
    }

    #[test]
    fn correlation_groups() {
        let mut rng = rng_from(1);
        let n = 400;
        let a: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let c: Vec<f64> = a.iter().map(|v| v + 1.7 * gauss(&mut rng)).collect();
        let (x, groups) = prune_correlated(&matrix(vec![a, b, c]), 0.95, &[]).unwrap();
        assert_eq!(x.names(), &["x0".to_string(), "x2".to_string()]);
        assert_eq!(groups, vec![CorrelationGroup { representative: "x0".into(), members: vec!["x1".into()] }]);
    }

    #[test]
    fn three_way_group_and_priority() {
        let mut rng = rng_from(2);
        let n = 500;
        let f: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let cols: Vec<Vec<f64>> = (0..3).map(|_| f.iter().map(|v| v + 0.07 * gauss(&mut rng)).collect()).collect();
        let m = matrix(cols);
        let r = correlation_matrix(&m).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(r[(i, j)] > 0.99);
        }
        let (x, groups) = prune_correlated(&m, 0.95, &["x2".to_string()]).unwrap();
        assert_eq!(x.names(), &["x2".to_string()]);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec!["x0".to_string(), "x1".to_string()]);
    }

    #[test]
    fn vif_orthogonal_is_one() {
        // Columns of a 2-level full factorial are exactly orthogonal.
        let n = 16;
        let cols: Vec<Vec<f64>> = (0..4).map(|j| (0..n).map(|i| if (i >> j) & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect();
        let m = matrix(cols);
        for v in vif(&m).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let (_, steps, _, _) = vif_eliminate(&m, 10.0).unwrap();
        assert!(steps.is_empty());
    }

    #[test]
    fn exact_dependency_is_infinite() {
        let mut rng = rng_from(3);
        let n = 50;
        let a: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let d: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let v = vif(&matrix(vec![a, b, c, d])).unwrap();
        assert!(v[0].is_infinite() && v[1].is_infinite() && v[2].is_infinite());
        assert!(v[3].is_finite());
        let (x, steps, _, _) = vif_eliminate(&matrix(vec![vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 4.0, 6.0, 10.0], vec![1.0, 0.0, 1.0, 0.0]]), 10.0).unwrap();
        assert_eq!(steps[0].name, "x0");
        assert_eq!(x.n_cols(), 2);
    }

    #[test]
    fn box_cox_tends_to_log() {
        // BC_λ(y) − log y = λ·(log y)²/2 + O(λ²): the gap shrinks linearly in λ.
        for &y in &[1.0f64, 3.0, 10.0, 100.0, 1e3, 1e4] {
            let l = y.ln();
            let d = ResponseTransform::BoxCox(0.001).forward(y) - l;
            assert!((d - 0.001 * l * l / 2.0).abs() <= 1e-6 * (1.0 + l.powi(3)));
            assert!((ResponseTransform::BoxCox(1e-4).forward(y) - l).abs() < 1e-2);
        }
        assert!((ResponseTransform::BoxCox(0.001).forward(50.0) - 50f64.ln()).abs() < 1e-2);
        for t in [ResponseTransform::Identity, ResponseTransform::Sqrt, ResponseTransform::Square, ResponseTransform::Log, ResponseTransform::BoxCox(0.1)] {
            let s = t.to_string();
            assert_eq!(s.parse::<ResponseTransform>().unwrap(), t);
            assert!((t.inverse(t.forward(7.5)) - 7.5).abs() < 1e-12);
        }
        assert!(ResponseTransform::Log.apply(&[1.0, 0.0]).is_err());
        assert_eq!(ResponseTransform::Identity.apply(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn balanced_duplicated_design_has_equal_cooks() {
        // 2² factorial replicated four times, with a symmetric response pattern.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rep in 0..4 {
            for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                xs.push((a, b));
                let e = if (rep + (a > 0.0) as i32 + (b > 0.0) as i32) % 2 == 0 { 1.0 } else { -1.0 };
                ys.push(2.0 * a - b + e);
            }
        }
        let x = DMatrix::from_fn(16, 2, |i, j| if j == 0 { xs[i].0 } else { xs[i].1 });
        let (d, _) = cooks_distances(&x, &ys).unwrap();
        for v in &d {
            assert!((v - d[0]).abs() < 1e-12);
        }
        assert!(cooks_filter(&x, &ys, 0.5).unwrap().removed.is_empty());
    }

    #[test]
    fn expansion_diagnostic_runs() {
        let mut rng = rng_from(4);
        let n = 80;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let y: Vec<f64> = a.iter().map(|v| v + 0.1 * gauss(&mut rng)).collect();
        let d = feature_expansion_diagnostic(&matrix(vec![a]), &y, 10, 1).unwrap();
        assert_eq!(d.p_expanded, 4);
        assert!(d.cv_mse_base.unwrap() < 0.02);
        assert!(d.cv_mse_expanded.is_some());
    }
}
