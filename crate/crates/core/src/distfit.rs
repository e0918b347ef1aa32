//! Fitting of Weibull, beta and gamma laws to transformed energy values,
//! Kolmogorov–Smirnov goodness of fit and P-P / Q-Q data.
//!
//! A fit describes `Z = g(Y)` for a monotone transform `g`; beta laws are
//! placed on `[min g(y), max g(y)]` of the sample. The density of `Y` is
//! `f_Z(g(y))·g'(y)`; for the cube root this is the `1/(3·y^{2/3})` Jacobian.

use rand::Rng;
use rand::RngExt;
use rand_distr::{Beta, Gamma, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Clamp for beta evaluations at the sample endpoints.
pub const BETA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull,
    Beta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Square,
    Cube,
    Sqrt,
    Cbrt,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Moments,
    Mle,
}

pub const FAMILIES: [Family; 3] = [Family::Weibull, Family::Beta, Family::Gamma];
pub const TRANSFORMS: [Transform; 6] =
    [Transform::Identity, Transform::Square, Transform::Cube, Transform::Sqrt, Transform::Cbrt, Transform::Log];

impl Family {
    /// Moments for beta and gamma, maximum likelihood for Weibull.
    pub fn default_method(self) -> Method {
        match self {
            Family::Weibull => Method::Mle,
            Family::Beta | Family::Gamma => Method::Moments,
        }
    }
}

impl Transform {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Square => y * y,
            Transform::Cube => y * y * y,
            Transform::Sqrt => y.sqrt(),
            Transform::Cbrt => y.cbrt(),
            Transform::Log => y.ln(),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Square => z.sqrt(),
            Transform::Cube => z.cbrt(),
            Transform::Sqrt => z * z,
            Transform::Cbrt => z * z * z,
            Transform::Log => z.exp(),
        }
    }

    /// g'(y).
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Square => 2.0 * y,
            Transform::Cube => 3.0 * y * y,
            Transform::Sqrt => 0.5 / y.sqrt(),
            Transform::Cbrt => 1.0 / (3.0 * y.cbrt().powi(2)),
            Transform::Log => 1.0 / y,
        }
    }

    /// Values of y on which the transform is defined and increasing.
    pub fn in_domain(self, y: f64) -> bool {
        match self {
            Transform::Identity | Transform::Cube | Transform::Cbrt => y.is_finite(),
            Transform::Square | Transform::Sqrt => y >= 0.0 && y.is_finite(),
            Transform::Log => y > 0.0 && y.is_finite(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Weibull => "weibull",
            Family::Beta => "beta",
            Family::Gamma => "gamma",
        })
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Identity => "identity",
            Transform::Square => "square",
            Transform::Cube => "cube",
            Transform::Sqrt => "sqrt",
            Transform::Cbrt => "cbrt",
            Transform::Log => "log",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FAMILIES.into_iter().find(|f| f.to_string() == s).ok_or_else(|| Error::Config(format!("unknown family {s}")))
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TRANSFORMS.into_iter().find(|t| t.to_string() == s).ok_or_else(|| Error::Config(format!("unknown transform {s}")))
    }
}

/// Beta support, in transformed units and mapped back to raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub transformed: (f64, f64),
    pub raw: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    pub family: Family,
    pub transform: Transform,
    pub method: Method,
    /// (α, β) for beta, (shape, scale) otherwise.
    pub params: (f64, f64),
    pub bounds: Option<Bounds>,
    pub n: usize,
    pub ks: Option<KsResult>,
}

fn mean_var(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

fn beta_moments(u: &[f64]) -> Result<(f64, f64)> {
    let (m, v) = mean_var(u);
    let c = m * (1.0 - m) / v - 1.0;
    if !(c > 0.0) {
        return Err(Error::Numerical(format!("beta moments infeasible (mean {m}, variance {v})")));
    }
    Ok((m * c, (1.0 - m) * c))
}

/// Weibull MLE on positive data: safeguarded Newton for the shape on
/// max-normalised values, then the closed-form scale.
pub fn weibull_mle(x: &[f64]) -> Result<(f64, f64)> {
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Data("Weibull fit needs positive values".into()));
    }
    let mx = x.iter().cloned().fold(0.0, f64::max);
    let ls: Vec<f64> = x.iter().map(|v| (v / mx).ln()).collect();
    let n = x.len() as f64;
    let mean_ls = ls.iter().sum::<f64>() / n;
    let h = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &ls {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let r = s1 / s0;
        (r - 1.0 / k - mean_ls, s2 / s0 - r * r + 1.0 / (k * k))
    };
    let sd_ls = (ls.iter().map(|l| (l - mean_ls).powi(2)).sum::<f64>() / n).sqrt();
    let mut k = (std::f64::consts::PI / (6f64.sqrt() * sd_ls)).clamp(1e-3, 1e3);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut trace = Vec::new();
    for it in 0..200 {
        let (f, df) = h(k);
        trace.push(k);
        if f > 0.0 {
            hi = hi.min(k);
        } else {
            lo = lo.max(k);
        }
        let mut next = k - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * k };
        }
        let change = (next - k).abs();
        k = next;
        if change <= 1e-10 * k.max(1.0) {
            let mean_pow = ls.iter().map(|l| (k * l).exp()).sum::<f64>() / n;
            return Ok((k, mx * mean_pow.powf(1.0 / k)));
        }
        if it == 199 {
            log::debug!("Weibull Newton trace: {trace:?}");
            return Err(Error::NonConvergence { iterations: 200, max_change: change, last_iterate: vec![k] });
        }
    }
    unreachable!()
}

/// Fits a family to `g(y)`. Beta uses the transformed sample range as
/// support with no slack.
pub fn fit_distribution(y: &[f64], family: Family, transform: Transform, method: Method) -> Result<DistributionFit> {
    if y.len() < 10 {
        return Err(Error::Contract(format!("distribution fit needs n ≥ 10 (got {})", y.len())));
    }
    if let Some(bad) = y.iter().find(|v| !transform.in_domain(**v)) {
        return Err(Error::Data(format!("value {bad} outside the domain of the {transform} transform")));
    }
    let z: Vec<f64> = y.iter().map(|v| transform.apply(*v)).collect();
    let (m, var) = mean_var(&z);
    if !(var > (1e-12 * m).powi(2)) {
        return Err(Error::Degenerate("transformed sample has zero variance".into()));
    }
    let (params, bounds) = match (family, method) {
        (Family::Beta, Method::Moments) => {
            let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let u: Vec<f64> = z.iter().map(|v| (v - lo) / (hi - lo)).collect();
            let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (beta_moments(&u)?, Some(Bounds { transformed: (lo, hi), raw: (ymin, ymax) }))
        }
        (Family::Gamma, Method::Moments) => {
            if z.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Data(format!("gamma fit needs positive {transform}-transformed values")));
            }
            let (m, v) = mean_var(&z);
            ((m * m / v, v / m), None)
        }
        (Family::Weibull, Method::Mle) => {
            if z.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Data(format!("Weibull fit needs positive {transform}-transformed values")));
            }
            (weibull_mle(&z)?, None)
        }
        (Family::Weibull, Method::Moments) => {
            return Err(Error::Config("Weibull is fitted by maximum likelihood only".into()));
        }
        (_, Method::Mle) => return Err(Error::Config(format!("{family} is fitted by moments only"))),
    };
    let mut fit = DistributionFit { family, transform, method, params, bounds, n: y.len(), ks: None };
    fit.ks = Some(ks_test(y, &fit));
    Ok(fit)
}

fn beta_pdf(u: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    let u = u.clamp(BETA_EPS, 1.0 - BETA_EPS);
    ((a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - ln_beta(a, b)).exp()
}

impl DistributionFit {
    /// Builds a fit record from known parameters (no data).
    pub fn planted(family: Family, transform: Transform, params: (f64, f64), transformed_bounds: Option<(f64, f64)>) -> Self {
        let bounds = transformed_bounds.map(|(lo, hi)| Bounds { transformed: (lo, hi), raw: (transform.inverse(lo), transform.inverse(hi)) });
        DistributionFit { family, transform, method: family.default_method(), params, bounds, n: 0, ks: None }
    }

    fn beta_support(&self) -> (f64, f64) {
        self.bounds.map(|b| b.transformed).unwrap_or((0.0, 1.0))
    }

    /// CDF of Z = g(Y).
    pub fn cdf_transformed(&self, z: f64) -> f64 {
        let (a, b) = self.params;
        match self.family {
            Family::Beta => {
                let (lo, hi) = self.beta_support();
                let u = (z - lo) / (hi - lo);
                if u <= 0.0 {
                    0.0
                } else if u >= 1.0 {
                    1.0
                } else {
                    beta_reg(a, b, u.clamp(BETA_EPS, 1.0 - BETA_EPS))
                }
            }
            Family::Gamma => {
                if z <= 0.0 {
                    0.0
                } else {
                    gamma_lr(a, z / b)
                }
            }
            Family::Weibull => {
                if z <= 0.0 {
                    0.0
                } else {
                    -(-(z / b).powf(a)).exp_m1()
                }
            }
        }
    }

    pub fn pdf_transformed(&self, z: f64) -> f64 {
        let (a, b) = self.params;
        match self.family {
            Family::Beta => {
                let (lo, hi) = self.beta_support();
                beta_pdf((z - lo) / (hi - lo), a, b) / (hi - lo)
            }
            Family::Gamma => {
                if z <= 0.0 {
                    0.0
                } else {
                    ((a - 1.0) * z.ln() - z / b - ln_gamma(a) - a * b.ln()).exp()
                }
            }
            Family::Weibull => {
                if z <= 0.0 {
                    0.0
                } else {
                    let t = z / b;
                    a / b * t.powf(a - 1.0) * (-t.powf(a)).exp()
                }
            }
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if !self.transform.in_domain(y) {
            return if y > 0.0 { 1.0 } else { 0.0 };
        }
        self.cdf_transformed(self.transform.apply(y))
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if !self.transform.in_domain(y) {
            return 0.0;
        }
        let d = self.transform.derivative(y);
        if !d.is_finite() {
            return 0.0;
        }
        self.pdf_transformed(self.transform.apply(y)) * d
    }

    /// Bracket of Z containing all but a negligible tail.
    fn z_bracket(&self) -> (f64, f64) {
        match self.family {
            Family::Beta => self.beta_support(),
            Family::Gamma | Family::Weibull => {
                let mut hi = self.params.1.max(1e-300);
                while self.cdf_transformed(hi) < 1.0 - 1e-15 && hi < 1e300 {
                    hi *= 2.0;
                }
                (0.0, hi)
            }
        }
    }

    /// Inverse CDF by bisection in transformed space, run to machine
    /// resolution.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = self.z_bracket();
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf_transformed(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.transform.inverse(0.5 * (lo + hi))
    }

    /// Draws `n` values of Y.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        let (a, b) = self.params;
        let err = |e: String| Error::Contract(format!("invalid {} parameters: {e}", self.family));
        let z: Vec<f64> = match self.family {
            Family::Beta => {
                let d = Beta::new(a, b).map_err(|e| err(e.to_string()))?;
                let (lo, hi) = self.beta_support();
                (0..n).map(|_| lo + (hi - lo) * rng.sample(d)).collect()
            }
            Family::Gamma => {
                let d = Gamma::new(a, b).map_err(|e| err(e.to_string()))?;
                (0..n).map(|_| rng.sample(d)).collect()
            }
            Family::Weibull => {
                let d = Weibull::new(b, a).map_err(|e| err(e.to_string()))?;
                (0..n).map(|_| rng.sample(d)).collect()
            }
        };
        Ok(z.into_iter().map(|v| self.transform.inverse(v)).collect())
    }
}

/// Appendix-form density of Y when Z = (∛Y − lo)/(hi − lo) ~ beta(α, β),
/// with `lo`, `hi` in cube-root units: f_Z(z) / (3 (hi − lo) y^{2/3}).
pub fn transformed_beta_pdf(y: f64, alpha: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    if !(y > 0.0) {
        return 0.0;
    }
    let c = y.cbrt();
    let z = (c - lo) / (hi - lo);
    if !(0.0..=1.0).contains(&z) {
        return 0.0;
    }
    beta_pdf(z, alpha, beta) / (3.0 * (hi - lo) * c * c)
}

/// Same density with the bounds read as kWh (raw-space) values.
pub fn transformed_beta_pdf_raw_bounds(y: f64, alpha: f64, beta: f64, y_min: f64, y_max: f64) -> f64 {
    transformed_beta_pdf(y, alpha, beta, y_min.cbrt(), y_max.cbrt())
}

/// Q(t) = 2 Σ (−1)^{k−1} exp(−2k²t²), the limiting P(√n·D > t); terms are
/// summed until they drop below 1e-12.
pub fn kolmogorov_p(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    // The alternating series needs many terms for small t where Q ≈ 1;
    // below 0.2, 1 − Q < 1e-12 at double precision anyway.
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..10_000 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// sup |F_n − F| from the order statistics.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

pub fn ks_test(y: &[f64], fit: &DistributionFit) -> KsResult {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let d = ks_statistic(&s, |v| fit.cdf(v));
    KsResult { statistic: d, p_value: kolmogorov_p((y.len() as f64).sqrt() * d) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpQq {
    /// Hazen levels (i − ½)/n.
    pub levels: Vec<f64>,
    pub fitted_cdf: Vec<f64>,
    pub sample_quantiles: Vec<f64>,
    pub fitted_quantiles: Vec<f64>,
}

pub fn pp_qq_data(y: &[f64], fit: &DistributionFit) -> PpQq {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let levels: Vec<f64> = (0..s.len()).map(|i| (i as f64 + 0.5) / n).collect();
    PpQq {
        fitted_cdf: s.iter().map(|v| fit.cdf(*v)).collect(),
        fitted_quantiles: levels.iter().map(|u| fit.quantile(*u)).collect(),
        levels,
        sample_quantiles: s,
    }
}

impl PpQq {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["level", "fitted_cdf", "sample_quantile", "fitted_quantile"])?;
        for i in 0..self.levels.len() {
            w.write_record([
                self.levels[i].to_string(),
                self.fitted_cdf[i].to_string(),
                self.sample_quantiles[i].to_string(),
                self.fitted_quantiles[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub family: Family,
    pub transform: Transform,
    pub method: Method,
    pub fit: Option<DistributionFit>,
    /// Why the cell is infeasible.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub cells: Vec<ScanCell>,
}

impl ScanTable {
    /// Cell with the largest KS p-value (first on ties).
    pub fn best(&self) -> Option<&ScanCell> {
        let mut best: Option<&ScanCell> = None;
        for c in &self.cells {
            let Some(p) = c.fit.as_ref().and_then(|f| f.ks).map(|k| k.p_value) else { continue };
            if best.is_none_or(|b| p > b.fit.as_ref().unwrap().ks.unwrap().p_value) {
                best = Some(c);
            }
        }
        best
    }

    pub fn cell(&self, family: Family, transform: Transform) -> Option<&ScanCell> {
        self.cells.iter().find(|c| c.family == family && c.transform == transform)
    }

    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.fit.is_none())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["family", "transform", "method", "param1", "param2", "bound_low", "bound_high", "ks_statistic", "p_value", "error"])?;
        for c in &self.cells {
            let f = c.fit.as_ref();
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                c.family.to_string(),
                c.transform.to_string(),
                format!("{:?}", c.method).to_lowercase(),
                opt(f.map(|f| f.params.0)),
                opt(f.map(|f| f.params.1)),
                opt(f.and_then(|f| f.bounds).map(|b| b.transformed.0)),
                opt(f.and_then(|f| f.bounds).map(|b| b.transformed.1)),
                opt(f.and_then(|f| f.ks).map(|k| k.statistic)),
                opt(f.and_then(|f| f.ks).map(|k| k.p_value)),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All 3 × 6 family / transform cells with each family's default method.
pub fn model_scan(y: &[f64]) -> ScanTable {
    let mut cells = Vec::with_capacity(18);
    for family in FAMILIES {
        for transform in TRANSFORMS {
            let method = family.default_method();
            let (fit, error) = match fit_distribution(y, family, transform, method) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(ScanCell { family, transform, method, fit, error });
        }
    }
    ScanTable { cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn gamma_moments_recovery() {
        let truth = DistributionFit::planted(Family::Gamma, Transform::Identity, (4.0, 2.0), None);
        let y = truth.sample(&mut rng_from(1), 100_000).unwrap();
        let f = fit_distribution(&y, Family::Gamma, Transform::Identity, Method::Moments).unwrap();
        assert!((f.params.0 - 4.0).abs() < 0.1, "{:?}", f.params);
    }

    #[test]
    fn symmetric_beta() {
        let truth = DistributionFit::planted(Family::Beta, Transform::Identity, (2.0, 2.0), Some((10.0, 20.0)));
        let y = truth.sample(&mut rng_from(2), 100_000).unwrap();
        let f = fit_distribution(&y, Family::Beta, Transform::Identity, Method::Moments).unwrap();
        assert!((f.params.0 - f.params.1).abs() < 0.1, "{:?}", f.params);
        let b = f.bounds.unwrap();
        assert_eq!(b.transformed, b.raw);
    }

    #[test]
    fn uniform_base_case() {
        let (lo, hi) = (2.0, 5.0);
        for y in [9.0f64, 30.0, 100.0] {
            let expected = 1.0 / (3.0 * (hi - lo) * y.powf(2.0 / 3.0));
            assert!((transformed_beta_pdf(y, 1.0, 1.0, lo, hi) - expected).abs() < 1e-14 * expected);
        }
        assert_eq!(transformed_beta_pdf(1.0, 1.0, 1.0, lo, hi), 0.0);
        assert_eq!(transformed_beta_pdf(200.0, 1.0, 1.0, lo, hi), 0.0);
    }

    #[test]
    fn fitted_pdf_matches_appendix_form() {
        let fit = DistributionFit::planted(Family::Beta, Transform::Cbrt, (2.58, 4.53), Some((4.5, 25.5)));
        for y in [100.0, 1000.0, 5000.0, 15000.0] {
            let a = fit.pdf(y);
            let b = transformed_beta_pdf(y, 2.58, 4.53, 4.5, 25.5);
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn ks_against_double_loop() {
        let fit = DistributionFit::planted(Family::Gamma, Transform::Identity, (2.0, 1.0), None);
        let y = fit.sample(&mut rng_from(3), 500).unwrap();
        let r = ks_test(&y, &fit);
        let mut brute: f64 = 0.0;
        for &x in &y {
            let le = y.iter().filter(|v| **v <= x).count() as f64 / 500.0;
            let lt = y.iter().filter(|v| **v < x).count() as f64 / 500.0;
            let f = fit.cdf(x);
            brute = brute.max((le - f).abs()).max((f - lt).abs());
        }
        assert_eq!(r.statistic, brute);
    }

    #[test]
    fn kolmogorov_table() {
        assert!((kolmogorov_p(1.0) - 0.269_999_671_9).abs() < 1e-9);
        assert!((kolmogorov_p(0.5) - 0.963_945).abs() < 1e-6);
        assert!((kolmogorov_p(1.5) - 0.022_218).abs() < 1e-6);
        assert_eq!(kolmogorov_p(0.0), 1.0);
    }

    #[test]
    fn wrong_family_rejected() {
        let mut rng = rng_from(4);
        let y: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let bad = DistributionFit::planted(Family::Beta, Transform::Identity, (5.0, 1.0), Some((0.0, 1.0)));
        assert!(ks_test(&y, &bad).p_value < 0.001);
    }

    #[test]
    fn quantile_roundtrip_and_perfect_qq() {
        for fit in [
            DistributionFit::planted(Family::Beta, Transform::Cbrt, (2.58, 4.53), Some((4.5, 25.5))),
            DistributionFit::planted(Family::Gamma, Transform::Log, (3.0, 1.5), None),
            DistributionFit::planted(Family::Weibull, Transform::Sqrt, (1.7, 40.0), None),
        ] {
            for i in 1..100 {
                let u = i as f64 / 100.0;
                assert!((fit.cdf(fit.quantile(u)) - u).abs() < 1e-8);
            }
            let n = 200;
            let y: Vec<f64> = (0..n).map(|i| fit.quantile((i as f64 + 0.5) / n as f64)).collect();
            let d = pp_qq_data(&y, &fit);
            for i in 0..n {
                assert!((d.fitted_cdf[i] - d.levels[i]).abs() < 1e-8);
                assert!((d.fitted_quantiles[i] - d.sample_quantiles[i]).abs() < 1e-8 * d.sample_quantiles[i].abs().max(1.0));
            }
            assert!(d.fitted_cdf.windows(2).all(|w| w[0] <= w[1]));
            assert!(d.fitted_quantiles.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn weibull_mle_recovery() {
        let truth = DistributionFit::planted(Family::Weibull, Transform::Identity, (2.5, 300.0), None);
        let y = truth.sample(&mut rng_from(5), 100_000).unwrap();
        let f = fit_distribution(&y, Family::Weibull, Transform::Identity, Method::Mle).unwrap();
        assert!((f.params.0 / 2.5 - 1.0).abs() < 0.02);
        assert!((f.params.1 / 300.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn errors_and_scan_layout() {
        let c = vec![3.0; 50];
        assert!(matches!(fit_distribution(&c, Family::Beta, Transform::Identity, Method::Moments), Err(Error::Degenerate(_))));
        let t = model_scan(&c);
        assert_eq!(t.cells.len(), 18);
        assert!(t.all_failed());
        assert!(t.best().is_none());
        assert!(matches!(fit_distribution(&[1.0; 5], Family::Beta, Transform::Identity, Method::Moments), Err(Error::Contract(_))));
        let neg: Vec<f64> = (0..20).map(|i| i as f64 - 5.0).collect();
        assert!(matches!(fit_distribution(&neg, Family::Gamma, Transform::Log, Method::Moments), Err(Error::Data(_))));
        assert!(matches!(fit_distribution(&neg, Family::Gamma, Transform::Identity, Method::Moments), Err(Error::Data(_))));
    }

    #[test]
    fn names_roundtrip() {
        for f in FAMILIES {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        for t in TRANSFORMS {
            assert_eq!(t.to_string().parse::<Transform>().unwrap(), t);
        }
    }
}
