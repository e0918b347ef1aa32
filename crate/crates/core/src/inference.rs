//! Bootstrap stability of cross-validated Lasso selections.
//!
//! Each replicate resamples rows with replacement, reruns k-fold λ selection
//! on the resample and records the coefficients at λ^CV multiplied by the
//! predictor spread. All replicate samples are kept so the box statistics
//! are exact quantiles.

use nalgebra::DMatrix;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::regression::{cv_core, default_grid, LassoOptions};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SdSource {
    /// Population sd over the replicate's resampled rows.
    #[default]
    Replicate,
    /// Population sd over the full sample (sensitivity analysis).
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub sd_source: SdSource,
    /// Significant requires zero_fraction below this.
    pub zero_threshold: f64,
    /// Significant requires flip_fraction at most this.
    pub flip_threshold: f64,
    /// Larger shares of failed replicates abort the run.
    pub max_failure_fraction: f64,
    pub lasso: LassoOptions,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 10_000,
            folds: 10,
            lambda_grid: default_grid(),
            seed: 0,
            workers: 0,
            sd_source: SdSource::Replicate,
            zero_threshold: 0.05,
            flip_threshold: 0.01,
            max_failure_fraction: 0.01,
            lasso: LassoOptions::default(),
        }
    }
}

/// Tukey box (type-7 quartiles, whiskers at the most extreme samples within
/// 1.5·IQR of the box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TukeyBox {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: usize,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl TukeyBox {
    pub fn of(samples: &[f64]) -> TukeyBox {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
        TukeyBox {
            median: quantile_sorted(&s, 0.5),
            q1,
            q3,
            // Clamped to the box: with interpolated quartiles every sample
            // beyond a quartile can be an outlier.
            whisker_low: inside.first().map_or(q1, |v| v.min(q1)),
            whisker_high: inside.last().map_or(q3, |v| v.max(q3)),
            n_outliers: s.len() - inside.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStability {
    pub name: String,
    #[serde(flatten)]
    pub tukey: TukeyBox,
    pub mean: f64,
    pub zero_fraction: f64,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
    /// Share of replicates whose sign opposes the reference sign (the sign of
    /// the median, or of the nonzero majority when the median is 0).
    pub flip_fraction: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub features: Vec<FeatureStability>,
    pub replicates: usize,
    pub completed: usize,
    pub failures: Vec<ReplicateFailure>,
    pub seed: u64,
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub zero_threshold: f64,
    pub flip_threshold: f64,
    pub sd_source: SdSource,
    /// λ^CV of each completed replicate.
    pub lambda_cv: Vec<f64>,
    /// Standardized coefficients, one row per completed replicate.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl BootstrapReport {
    pub fn significant(&self) -> Vec<&str> {
        self.features.iter().filter(|f| f.significant).map(|f| f.name.as_str()).collect()
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureStability> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Samples of feature `j` over completed replicates.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// One row per feature with box statistics and the zero / flip shares.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows_csv(path, &self.features)
    }

    /// Columnar little-endian dump: magic, replicate and feature counts,
    /// names, then each feature's samples.
    pub fn write_samples(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(SAMPLES_MAGIC)?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        w.write_all(&(self.features.len() as u64).to_le_bytes())?;
        for f in &self.features {
            w.write_all(&(f.name.len() as u32).to_le_bytes())?;
            w.write_all(f.name.as_bytes())?;
        }
        for j in 0..self.features.len() {
            for r in &self.samples {
                w.write_all(&r[j].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

const SAMPLES_MAGIC: &[u8; 8] = b"EVBSAMP1";

/// Reads a sample dump back as (names, per-feature columns).
pub fn read_samples(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = || Error::Data("malformed bootstrap sample file".into());
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + len).ok_or_else(bad)?;
        pos += len;
        Ok(s)
    };
    if take(8)? != SAMPLES_MAGIC {
        return Err(bad());
    }
    let b = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let p = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut names = Vec::with_capacity(p);
    for _ in 0..p {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        names.push(String::from_utf8(take(len)?.to_vec()).map_err(|_| bad())?);
    }
    let mut cols = Vec::with_capacity(p);
    for _ in 0..p {
        let mut c = Vec::with_capacity(b);
        for _ in 0..b {
            c.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        cols.push(c);
    }
    Ok((names, cols))
}

fn write_rows_csv(path: impl AsRef<Path>, rows: &[FeatureStability]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "feature", "median", "q1", "q3", "whisker_low", "whisker_high", "n_outliers", "mean", "zero_fraction",
        "positive_fraction", "negative_fraction", "flip_fraction", "significant",
    ])?;
    for f in rows {
        let t = &f.tukey;
        w.write_record([
            f.name.clone(),
            t.median.to_string(),
            t.q1.to_string(),
            t.q3.to_string(),
            t.whisker_low.to_string(),
            t.whisker_high.to_string(),
            t.n_outliers.to_string(),
            f.mean.to_string(),
            f.zero_fraction.to_string(),
            f.positive_fraction.to_string(),
            f.negative_fraction.to_string(),
            f.flip_fraction.to_string(),
            f.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows drawn for replicate `b` and the fold seed its cross-validation uses.
pub fn replicate_draw(n: usize, seed: u64, b: usize) -> (Vec<usize>, u64) {
    let mut rng = stream_rng(seed, b as u64);
    let rows = (0..n).map(|_| rng.random_range(0..n)).collect();
    let fold_seed = rng.random();
    (rows, fold_seed)
}

fn population_sd(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| {
            let c = x.column(j);
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

pub fn summarize_feature(name: &str, samples: &[f64], zero_threshold: f64, flip_threshold: f64) -> FeatureStability {
    let b = samples.len() as f64;
    let tukey = TukeyBox::of(samples);
    let pos = samples.iter().filter(|v| **v > 0.0).count();
    let neg = samples.iter().filter(|v| **v < 0.0).count();
    let zeros = samples.len() - pos - neg;
    let reference_positive = if tukey.median != 0.0 { tukey.median > 0.0 } else { pos >= neg };
    let flips = if reference_positive { neg } else { pos };
    let zero_fraction = zeros as f64 / b;
    let flip_fraction = flips as f64 / b;
    FeatureStability {
        name: name.to_string(),
        tukey,
        mean: samples.iter().sum::<f64>() / b,
        zero_fraction,
        positive_fraction: pos as f64 / b,
        negative_fraction: neg as f64 / b,
        flip_fraction,
        significant: zero_fraction < zero_threshold && flip_fraction <= flip_threshold,
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::NonConvergence { .. } | Error::Numerical(_))
}

/// Bootstrap of the cross-validated Lasso. Results are identical for any
/// worker count: replicate `b` draws from its own stream of `seed`.
pub fn bootstrap_lasso(x: &DMatrix<f64>, y: &[f64], names: &[String], cfg: &BootstrapConfig) -> Result<BootstrapReport> {
    let (n, p) = x.shape();
    if cfg.replicates == 0 {
        return Err(Error::Contract("bootstrap needs at least one replicate".into()));
    }
    if y.len() != n || names.len() != p {
        return Err(Error::Contract(format!("design {n}×{p}, {} responses, {} names", y.len(), names.len())));
    }
    let full_sd = population_sd(x);
    let run = |b: usize| -> Result<std::result::Result<(Vec<f64>, f64), String>> {
        let (rows, fold_seed) = replicate_draw(n, cfg.seed, b);
        match cv_core(x, y, &rows, &cfg.lambda_grid, cfg.folds, fold_seed, &cfg.lasso, None, false) {
            Ok(core) => {
                let sd = match cfg.sd_source {
                    SdSource::Replicate => &core.sd,
                    SdSource::FullSample => &full_sd,
                };
                let std: Vec<f64> = core.fit.coefficients.iter().zip(sd).map(|(c, s)| c * s).collect();
                Ok(Ok((std, core.fit.lambda)))
            }
            Err(e) if recoverable(&e) => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        }
    };
    let results: Vec<_> = if cfg.workers == 0 {
        (0..cfg.replicates).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.replicates).into_par_iter().map(run).collect::<Result<_>>())?
    };
    let mut samples = Vec::new();
    let mut lambda_cv = Vec::new();
    let mut failures = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok((s, l)) => {
                samples.push(s);
                lambda_cv.push(l);
            }
            Err(error) => {
                log::warn!("bootstrap replicate {b} failed: {error}");
                failures.push(ReplicateFailure { replicate: b, error });
            }
        }
    }
    let failed = failures.len() as f64 / cfg.replicates as f64;
    if failed > cfg.max_failure_fraction || samples.is_empty() {
        return Err(Error::Degenerate(format!(
            "{} of {} bootstrap replicates failed (limit {:.1}%)",
            failures.len(),
            cfg.replicates,
            100.0 * cfg.max_failure_fraction
        )));
    }
    let features = (0..p)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|r| r[j]).collect();
            summarize_feature(&names[j], &col, cfg.zero_threshold, cfg.flip_threshold)
        })
        .collect();
    Ok(BootstrapReport {
        features,
        replicates: cfg.replicates,
        completed: samples.len(),
        failures,
        seed: cfg.seed,
        folds: cfg.folds,
        lambda_grid: cfg.lambda_grid.clone(),
        zero_threshold: cfg.zero_threshold,
        flip_threshold: cfg.flip_threshold,
        sd_source: cfg.sd_source,
        lambda_cv,
        samples,
    })
}

/// Features set to zero in fewer than `display_threshold` of the
/// replicates, by descending median standardized coefficient.
pub fn stability_report(report: &BootstrapReport, display_threshold: f64) -> Vec<FeatureStability> {
    let mut rows: Vec<FeatureStability> =
        report.features.iter().filter(|f| f.zero_fraction < display_threshold).cloned().collect();
    rows.sort_by(|a, b| b.tukey.median.total_cmp(&a.tukey.median).then_with(|| a.name.cmp(&b.name)));
    rows
}

pub fn write_stability_csv(path: impl AsRef<Path>, rows: &[FeatureStability]) -> Result<()> {
    write_rows_csv(path, rows)
}

/// Seed used for one stratum.
pub fn stratum_seed(master: u64, label: &str) -> u64 {
    derive_seed(master, &format!("stratum:{label}"))
}

/// Independent bootstrap per stratum label; each stratum needs at least
/// 10·k rows.
pub fn stratified_run(
    x: &DMatrix<f64>,
    y: &[f64],
    names: &[String],
    strata: &[String],
    cfg: &BootstrapConfig,
) -> Result<BTreeMap<String, BootstrapReport>> {
    if strata.len() != x.nrows() {
        return Err(Error::Contract(format!("{} stratum labels for {} rows", strata.len(), x.nrows())));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (label, rows) in groups {
        if rows.len() < 10 * cfg.folds {
            return Err(Error::Contract(format!(
                "stratum {label} has {} rows, needs at least {}",
                rows.len(),
                10 * cfg.folds
            )));
        }
        let xs = x.select_rows(&rows);
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let c = BootstrapConfig { seed: stratum_seed(cfg.seed, label), ..cfg.clone() };
        out.insert(label.to_string(), bootstrap_lasso(&xs, &ys, names, &c)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn planted(n: usize, p: usize, beta: &[f64], noise: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| 1.0 + beta.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    fn small_cfg(b: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig { replicates: b, lambda_grid: crate::regression::log_grid(-3.0, 0.0, 0.05), seed, ..Default::default() }
    }

    #[test]
    fn single_replicate_is_a_cv_run() {
        let (x, y) = planted(80, 6, &[1.0, -0.5], 0.5, 1);
        let cfg = small_cfg(1, 9);
        let r = bootstrap_lasso(&x, &y, &names(6), &cfg).unwrap();
        let (rows, fold_seed) = replicate_draw(80, 9, 0);
        let xs = x.select_rows(&rows);
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let cv = crate::regression::cv_core(&x, &y, &rows, &cfg.lambda_grid, 10, fold_seed, &cfg.lasso, None, true).unwrap();
        let sd = population_sd(&xs);
        for j in 0..6 {
            let expected = cv.fit.coefficients[j] * sd[j];
            assert!((r.samples[0][j] - expected).abs() <= 1e-12 * expected.abs());
            assert_eq!(r.features[j].tukey.median, r.samples[0][j]);
        }
        assert_eq!(r.lambda_cv[0], cfg.lambda_grid[cv.index_cv]);
        let _ = ys;
    }

    #[test]
    fn tukey_matches_bruteforce() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..101).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = TukeyBox::of(&v);
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        // n = 101: type-7 quartiles land on order statistics 25, 50, 75
        assert_eq!(t.q1, s[25]);
        assert_eq!(t.median, s[50]);
        assert_eq!(t.q3, s[75]);
        let iqr = t.q3 - t.q1;
        let lo = s.iter().copied().filter(|x| *x >= t.q1 - 1.5 * iqr).fold(f64::INFINITY, f64::min);
        assert_eq!(t.whisker_low, lo);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn flip_reference_and_significance() {
        let mut v = vec![1.0; 100];
        v[0] = -1.0;
        let f = summarize_feature("a", &v, 0.05, 0.01);
        assert_eq!(f.flip_fraction, 0.01);
        assert!(f.significant);
        v[1] = -2.0;
        assert!(!summarize_feature("a", &v, 0.05, 0.01).significant);
        let mut z = vec![0.0; 100];
        z[0] = -1.0;
        z[1] = -1.0;
        z[2] = 1.0;
        let f = summarize_feature("z", &z, 0.05, 0.01);
        assert_eq!(f.flip_fraction, 0.01);
        assert!(!f.significant);
        assert!(f.zero_fraction + f.flip_fraction <= 1.0);
    }

    #[test]
    fn workers_do_not_change_results() {
        let (x, y) = planted(60, 5, &[1.0], 0.5, 4);
        let mut a = small_cfg(12, 5);
        a.workers = 1;
        let mut b = a.clone();
        b.workers = 3;
        let ra = bootstrap_lasso(&x, &y, &names(5), &a).unwrap();
        let rb = bootstrap_lasso(&x, &y, &names(5), &b).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.samples, rb.samples);
    }

    #[test]
    fn strong_signal_is_significant() {
        let (x, y) = planted(150, 8, &[2.0, -1.5, 0.0, 1.0], 0.5, 6);
        let r = bootstrap_lasso(&x, &y, &names(8), &small_cfg(60, 1)).unwrap();
        let sig = r.significant();
        assert!(sig.contains(&"f0") && sig.contains(&"f1") && sig.contains(&"f3"));
        assert!(r.feature("f1").unwrap().tukey.median < 0.0);
        let table = stability_report(&r, 0.10);
        assert_eq!(table[0].name, "f0");
        assert_eq!(table.last().unwrap().name, "f1");
        assert!(stability_report(&r, 0.0).is_empty());
    }

    #[test]
    fn constant_response_fails_hard() {
        let (x, _) = planted(40, 3, &[], 1.0, 7);
        let y = vec![2.0; 40];
        assert!(matches!(bootstrap_lasso(&x, &y, &names(3), &small_cfg(5, 1)), Err(Error::Degenerate(_))));
        let e = bootstrap_lasso(&x, &y, &names(3), &small_cfg(0, 1));
        assert!(matches!(e, Err(Error::Contract(_))));
    }

    #[test]
    fn samples_roundtrip() {
        let (x, y) = planted(50, 4, &[1.0], 0.5, 8);
        let r = bootstrap_lasso(&x, &y, &names(4), &small_cfg(7, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        r.write_samples(&path).unwrap();
        let (nm, cols) = read_samples(&path).unwrap();
        assert_eq!(nm, names(4));
        for j in 0..4 {
            assert_eq!(cols[j], r.column(j));
        }
        r.write_json(dir.path().join("r.json")).unwrap();
        r.write_csv(dir.path().join("r.csv")).unwrap();
    }

    #[test]
    fn strata_sizes_enforced() {
        let (x, y) = planted(150, 3, &[1.0], 0.5, 9);
        let strata: Vec<String> = (0..150).map(|i| if i < 100 { "a".into() } else { "b".into() }).collect();
        assert!(matches!(stratified_run(&x, &y, &names(3), &strata, &small_cfg(3, 1)), Err(Error::Contract(_))));
        let one = vec!["all".to_string(); 150];
        let cfg = small_cfg(4, 1);
        let m = stratified_run(&x, &y, &names(3), &one, &cfg).unwrap();
        let direct = bootstrap_lasso(&x, &y, &names(3), &BootstrapConfig { seed: stratum_seed(1, "all"), ..cfg }).unwrap();
        assert_eq!(m["all"], direct);
    }
}
