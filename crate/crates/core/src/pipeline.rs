//! Config-driven pipeline. Each stage reads its inputs from the output
//! directory written by the stages before it, so running the stages one by
//! one produces the same files as a full run.
//!
//! Stage order: extract (missing rules, buffer features), decompose (usage
//! metrics and response), preprocess (uninformative, correlation, VIF,
//! transform, Cook's), fit (CV Lasso), bootstrap, distfit, report.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::decomposition::{
    pool_metrics, read_events, response_metric_comparison, simple_models, write_models_csv, write_usage_csv, Metric, R2Convention,
};
use crate::distfit::{fit_distribution, model_scan, pp_qq_data, Family, Transform};
use crate::error::{Error, Result};
use crate::features::{assemble_matrix, radius_sweep, FeatureConfig};
use crate::geometry::Point;
use crate::inference::{bootstrap_lasso, stability_report, stratified_run, write_stability_csv, BootstrapConfig, SdSource};
use crate::layer::SpatialLayer;
use crate::matrix::{read_vector, write_vector, FeatureMatrix};
use crate::preprocess::{apply_cooks, apply_missing_rules, prune_features, PreprocessConfig, PruneReport, ResponseTransform, RuleSet};
use crate::regression::{cv_select_with_inverse, log_grid, write_cv_csv, LassoOptions};
use crate::rng::derive_seed;

pub const STAGES: [&str; 7] = ["extract", "decompose", "preprocess", "fit", "bootstrap", "distfit", "report"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInput {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolInput {
    /// GeoJSON point layer or CSV with coordinate columns.
    pub path: PathBuf,
    pub id: String,
    pub x: String,
    pub y: String,
    /// Attribute (kW) used for energy per unit capacity.
    pub capacity: Option<String>,
}

impl Default for PoolInput {
    fn default() -> Self {
        PoolInput { path: PathBuf::new(), id: "pool_id".into(), x: "x".into(), y: "y".into(), capacity: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Inputs {
    pub pools: PoolInput,
    pub layers: Vec<LayerInput>,
    pub events: Option<PathBuf>,
    /// Pre-built feature matrix CSV; replaces extraction.
    pub matrix: Option<PathBuf>,
    /// Response vector CSV (`id,value`); replaces the event log.
    pub response: Option<PathBuf>,
    /// "none", "reference" or a path to a rules TOML file.
    pub rules: String,
    /// Pool attribute holding stratum labels for separate bootstraps.
    pub strata: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// log10 of the smallest λ.
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lo: -4.0, hi: 0.0, step: 0.02 }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        log_grid(self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoStage {
    pub folds: usize,
    pub grid: GridSpec,
    pub options: LassoOptions,
}

impl Default for LassoStage {
    fn default() -> Self {
        LassoStage { folds: 10, grid: GridSpec::default(), options: LassoOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapStage {
    pub replicates: usize,
    pub zero_threshold: f64,
    pub flip_threshold: f64,
    pub display_threshold: f64,
    pub max_failure_fraction: f64,
    pub sd_source: SdSource,
    pub save_samples: bool,
}

impl Default for BootstrapStage {
    fn default() -> Self {
        BootstrapStage {
            replicates: 10_000,
            zero_threshold: 0.05,
            flip_threshold: 0.01,
            display_threshold: 0.10,
            max_failure_fraction: 0.01,
            sd_source: SdSource::Replicate,
            save_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistfitStage {
    pub enabled: bool,
    pub family: Family,
    pub transform: Transform,
}

impl Default for DistfitStage {
    fn default() -> Self {
        DistfitStage { enabled: true, family: Family::Beta, transform: Transform::Cbrt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for parallel stages (0: all cores). Results do not
    /// depend on it, so it is not recorded in the manifest.
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub buffer_radius_m: f64,
    /// Radii for the OLS radius sweep; empty disables it.
    pub sweep_radii: Vec<f64>,
    pub response_metric: Metric,
    pub response_transform: ResponseTransform,
    pub r2_convention: R2Convention,
    pub inputs: Inputs,
    pub features: FeatureConfig,
    pub preprocess: PreprocessConfig,
    pub lasso: LassoStage,
    pub bootstrap: BootstrapStage,
    pub distfit: DistfitStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            workers: 0,
            output_dir: PathBuf::from("out"),
            buffer_radius_m: 350.0,
            sweep_radii: Vec::new(),
            response_metric: Metric::Energy,
            response_transform: ResponseTransform::Log,
            r2_convention: R2Convention::Uncentered,
            inputs: Inputs { rules: "none".into(), ..Default::default() },
            features: FeatureConfig::default(),
            preprocess: PreprocessConfig::default(),
            lasso: LassoStage::default(),
            bootstrap: BootstrapStage::default(),
            distfit: DistfitStage::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the config embedded in a manifest (JSON),
    /// and makes input paths absolute relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            // A manifest holds resolved paths; by default it reruns in place.
            let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
            let mut cfg = m.config;
            cfg.resolve_paths(&base);
            cfg.output_dir = base;
            cfg
        } else {
            let mut cfg = Self::from_toml(&text)?;
            cfg.resolve_paths(&base);
            cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let i = &mut self.inputs;
        i.pools.path = resolve(base, &i.pools.path);
        for l in &mut i.layers {
            l.path = resolve(base, &l.path);
        }
        for p in [&mut i.events, &mut i.matrix, &mut i.response].into_iter().flatten() {
            *p = resolve(base, p);
        }
        if !matches!(i.rules.as_str(), "none" | "reference") {
            i.rules = resolve(base, Path::new(&i.rules)).to_string_lossy().into_owned();
        }
        self.output_dir = resolve(base, &self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.buffer_radius_m > 0.0) {
            return bad("buffer_radius_m must be positive");
        }
        let p = &self.preprocess;
        if !unit(p.zero_fraction) || !unit(p.correlation_threshold) || !(p.vif_threshold >= 1.0) || !(p.cooks_threshold > 0.0) {
            return bad("preprocess thresholds out of range");
        }
        if !unit(self.features.coverage_threshold) || !unit(self.features.imputation_threshold) {
            return bad("coverage and imputation thresholds must lie in [0, 1]");
        }
        if self.lasso.folds < 2 || !(self.lasso.grid.step > 0.0) || self.lasso.grid.hi < self.lasso.grid.lo {
            return bad("lasso needs k ≥ 2 and an increasing grid");
        }
        let b = &self.bootstrap;
        if b.replicates == 0 || !unit(b.zero_threshold) || !unit(b.flip_threshold) || !unit(b.display_threshold) {
            return bad("bootstrap needs B ≥ 1 and fractions in [0, 1]");
        }
        if self.sweep_radii.iter().any(|r| !(*r > 0.0)) {
            return bad("sweep radii must be positive");
        }
        Ok(())
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap.replicates,
            folds: self.lasso.folds,
            lambda_grid: self.lasso.grid.values(),
            seed: derive_seed(self.seed, "bootstrap"),
            workers: self.workers,
            sd_source: self.bootstrap.sd_source,
            zero_threshold: self.bootstrap.zero_threshold,
            flip_threshold: self.bootstrap.flip_threshold,
            max_failure_fraction: self.bootstrap.max_failure_fraction,
            lasso: self.lasso.options,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: Vec<String>,
    /// Derived seeds by stream label.
    pub seeds: BTreeMap<String, u64>,
    pub config: PipelineConfig,
}

impl Manifest {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let seeds = ["cv", "bootstrap"].iter().map(|l| (l.to_string(), derive_seed(cfg.seed, l))).collect();
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stages: STAGES.iter().map(|s| s.to_string()).collect(),
            seeds,
            config: cfg.clone(),
        }
    }
}

/// Machine-readable failure record written next to partial artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: String,
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e} (run the earlier stages first)", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const ERROR: &str = "error.json";
    pub const RULES: &str = "01_missing_rules.json";
    pub const FEATURES: &str = "02_features.csv";
    pub const EXTRACTION: &str = "02_extraction.json";
    pub const SWEEP: &str = "02_radius_sweep.csv";
    pub const STRATA: &str = "02_strata.csv";
    pub const USAGE: &str = "03_usage.csv";
    pub const RESPONSE: &str = "03_response.csv";
    pub const SIMPLE_MODELS: &str = "03_simple_models.csv";
    pub const METRICS: &str = "03_metric_comparison.json";
    pub const PRUNED: &str = "04_pruned_features.csv";
    pub const TRANSFORMED: &str = "04_response_transformed.csv";
    pub const COOKS: &str = "04_cooks.csv";
    pub const FINAL_X: &str = "04_final_features.csv";
    pub const FINAL_Y: &str = "04_final_response.csv";
    pub const PREPROCESS: &str = "04_preprocess.json";
    pub const CV_PATH: &str = "05_cv_path.csv";
    pub const FIT: &str = "05_fit.json";
    pub const BOOTSTRAP: &str = "06_bootstrap.json";
    pub const BOOTSTRAP_CSV: &str = "06_bootstrap.csv";
    pub const STABILITY: &str = "06_stability.csv";
    pub const SAMPLES: &str = "06_samples.bin";
    pub const SCAN: &str = "07_distfit_scan.csv";
    pub const DISTFIT: &str = "07_distfit.json";
    pub const PPQQ: &str = "07_pp_qq.csv";
    pub const SUMMARY: &str = "08_summary.json";
}

fn read_pools(input: &PoolInput) -> Result<SpatialLayer> {
    if input.path.as_os_str().is_empty() {
        return Err(Error::Config("inputs.pools.path is not set".into()));
    }
    let is_csv = input.path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        SpatialLayer::read_points_csv(&input.path, "pools", &input.x, &input.y)
    } else {
        SpatialLayer::read_geojson(&input.path, "pools")
    }
}

fn pool_sites(pools: &SpatialLayer, id: &str) -> Result<Vec<(String, Point)>> {
    let pts = pools.points()?;
    let mut out = Vec::with_capacity(pts.len());
    for (i, p) in pts.into_iter().enumerate() {
        let label = pools.attributes.label(id, i)?.ok_or_else(|| Error::Data(format!("pool {i} has no {id}")))?;
        out.push((label, p));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (l, _) in &out {
        if !seen.insert(l) {
            return Err(Error::Data(format!("duplicate pool id {l}")));
        }
    }
    Ok(out)
}

fn load_rules(spec: &str) -> Result<Option<RuleSet>> {
    match spec {
        "none" | "" => Ok(None),
        "reference" => Ok(Some(RuleSet::reference())),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("rules {path}: {e}")))?;
            Ok(Some(RuleSet::from_toml(&text)?))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RulesRecord {
    rules: String,
    applied: Vec<(String, String, usize)>,
}

pub fn stage_extract(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    // A supplied matrix only needs the pool layer for stratum labels.
    if let (Some(m), None) = (&cfg.inputs.matrix, &cfg.inputs.strata) {
        return FeatureMatrix::read_csv(m)?.write_csv(out.join(files::FEATURES));
    }
    let pools = read_pools(&cfg.inputs.pools)?;
    let sites = pool_sites(&pools, &cfg.inputs.pools.id)?;
    if let Some(col) = &cfg.inputs.strata {
        let ids: Vec<String> = sites.iter().map(|s| s.0.clone()).collect();
        let mut w = csv::Writer::from_path(out.join(files::STRATA))?;
        w.write_record(["id", "stratum"])?;
        for (i, id) in ids.iter().enumerate() {
            let s = pools.attributes.label(col, i)?.ok_or_else(|| Error::Data(format!("pool {id} has no {col}")))?;
            w.write_record([id.as_str(), s.as_str()])?;
        }
        w.flush()?;
    }
    if let Some(m) = &cfg.inputs.matrix {
        let x = FeatureMatrix::read_csv(m)?;
        x.write_csv(out.join(files::FEATURES))?;
        return Ok(());
    }
    let mut layers = Vec::new();
    for l in &cfg.inputs.layers {
        layers.push(SpatialLayer::read_geojson(&l.path, l.name.clone())?);
    }
    let mut record = RulesRecord { rules: cfg.inputs.rules.clone(), applied: Vec::new() };
    if let Some(rules) = load_rules(&cfg.inputs.rules)? {
        record.applied = apply_missing_rules(&mut layers, &rules)?.applied;
    }
    write_json(out.join(files::RULES), &record)?;
    with_workers(cfg.workers, || -> Result<()> {
        let (x, report) = assemble_matrix(&sites, &layers, &cfg.features, cfg.buffer_radius_m)?;
        x.write_csv(out.join(files::FEATURES))?;
        write_json(out.join(files::EXTRACTION), &report)?;
        if !cfg.sweep_radii.is_empty() {
            let response = cfg.inputs.events.as_ref().map(|e| read_events(e)).transpose()?;
            if let Some(ev) = response {
                let usage = pool_metrics(&ev, None)?;
                let by_id: BTreeMap<&str, f64> = usage.iter().map(|u| (u.pool_id.as_str(), u.energy)).collect();
                let keep: Vec<usize> = (0..sites.len()).filter(|&i| by_id.get(sites[i].0.as_str()).is_some_and(|e| *e > 0.0)).collect();
                let s: Vec<(String, Point)> = keep.iter().map(|&i| sites[i].clone()).collect();
                let y: Vec<f64> = s.iter().map(|(id, _)| by_id[id.as_str()]).collect();
                let yt = cfg.response_transform.apply(&y)?;
                let rows = radius_sweep(&s, &layers, &cfg.features, &yt, &cfg.sweep_radii)?;
                let mut w = csv::Writer::from_path(out.join(files::SWEEP))?;
                w.write_record(["radius_m", "n_features", "mse", "error"])?;
                for r in rows {
                    w.write_record([
                        r.radius_m.to_string(),
                        r.n_features.to_string(),
                        r.mse.map(|v| v.to_string()).unwrap_or_default(),
                        r.error.unwrap_or_default(),
                    ])?;
                }
                w.flush()?;
            }
        }
        Ok(())
    })?
}

fn capacities(cfg: &PipelineConfig) -> Result<Option<BTreeMap<String, f64>>> {
    let Some(col) = &cfg.inputs.pools.capacity else { return Ok(None) };
    let pools = read_pools(&cfg.inputs.pools)?;
    let sites = pool_sites(&pools, &cfg.inputs.pools.id)?;
    let vals = pools.attributes.numeric(col)?;
    Ok(Some(sites.into_iter().zip(vals).filter_map(|((id, _), v)| v.map(|v| (id, v))).collect()))
}

pub fn stage_decompose(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    if let Some(r) = &cfg.inputs.response {
        let (ids, y) = read_vector(r)?;
        write_vector(out.join(files::RESPONSE), &ids, cfg.response_metric.name(), &y)?;
        return Ok(());
    }
    let events = cfg.inputs.events.as_ref().ok_or_else(|| Error::Config("either inputs.events or inputs.response is required".into()))?;
    let events = read_events(events)?;
    let usage = pool_metrics(&events, capacities(cfg)?.as_ref())?;
    write_usage_csv(out.join(files::USAGE), &usage)?;
    write_models_csv(out.join(files::SIMPLE_MODELS), &simple_models(&usage, cfg.r2_convention)?)?;
    let x = FeatureMatrix::read_csv(out.join(files::FEATURES))?;
    let by_id: BTreeMap<&str, usize> = usage.iter().enumerate().map(|(i, u)| (u.pool_id.as_str(), i)).collect();
    let rows: Vec<usize> = (0..x.n_rows()).filter(|&i| by_id.contains_key(x.ids()[i].as_str())).collect();
    if rows.len() < x.n_rows() {
        log::warn!("{} pools have no events and are left out", x.n_rows() - rows.len());
    }
    let aligned: Vec<_> = rows.iter().map(|&i| usage[by_id[x.ids()[i].as_str()]].clone()).collect();
    let xr = x.select_rows(&rows);
    if let Ok(xd) = xr.to_dmatrix() {
        write_json(out.join(files::METRICS), &response_metric_comparison(&aligned, &xd)?)?;
    }
    let ids: Vec<String> = aligned.iter().map(|u| u.pool_id.clone()).collect();
    let metric = cfg.response_metric;
    let y: Vec<f64> = aligned
        .iter()
        .map(|u| metric.value(u).ok_or_else(|| Error::Data(format!("{} unavailable for pool {}", metric.name(), u.pool_id))))
        .collect::<Result<_>>()?;
    write_vector(out.join(files::RESPONSE), &ids, metric.name(), &y)
}

/// Rows of `x` whose ids appear in `ids`, in `ids` order.
fn align(x: &FeatureMatrix, ids: &[String]) -> Result<FeatureMatrix> {
    let pos: BTreeMap<&str, usize> = x.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows: Vec<usize> = ids
        .iter()
        .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("response id {id} has no feature row"))))
        .collect::<Result<_>>()?;
    Ok(x.select_rows(&rows))
}

pub fn stage_preprocess(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let x = FeatureMatrix::read_csv(out.join(files::FEATURES))?;
    let (ids, y) = read_vector(out.join(files::RESPONSE))?;
    let x = align(&x, &ids)?;
    let (pruned, mut report) = prune_features(&x, &cfg.preprocess)?;
    pruned.write_csv(out.join(files::PRUNED))?;
    let yt = cfg.response_transform.apply(&y)?;
    write_vector(out.join(files::TRANSFORMED), &ids, "response", &yt)?;
    let (fx, fy) = if cfg.preprocess.apply_cooks {
        let (fx, fy, res) = apply_cooks(&pruned, &yt, cfg.preprocess.cooks_threshold, &mut report)?;
        write_vector(out.join(files::COOKS), pruned.ids(), "cooks_distance", &res.distances)?;
        (fx, fy)
    } else {
        (pruned, yt)
    };
    fx.write_csv(out.join(files::FINAL_X))?;
    write_vector(out.join(files::FINAL_Y), fx.ids(), "response", &fy)?;
    #[derive(Serialize)]
    struct Record<'a> {
        transform: String,
        n_rows_in: usize,
        n_rows_out: usize,
        n_features_in: usize,
        n_features_out: usize,
        #[serde(flatten)]
        report: &'a PruneReport,
    }
    write_json(
        out.join(files::PREPROCESS),
        &Record {
            transform: cfg.response_transform.to_string(),
            n_rows_in: x.n_rows(),
            n_rows_out: fx.n_rows(),
            n_features_in: x.n_cols(),
            n_features_out: fx.n_cols(),
            report: &report,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub lambda_cv: f64,
    pub index_cv: usize,
    pub folds_used: usize,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub nonzero: Vec<String>,
}

pub fn stage_fit(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let x = FeatureMatrix::read_csv(out.join(files::FINAL_X))?;
    let (_, y) = read_vector(out.join(files::FINAL_Y))?;
    let t = cfg.response_transform;
    let inv = move |v: f64| t.inverse(v);
    let grid = cfg.lasso.grid.values();
    let cv = cv_select_with_inverse(&x.to_dmatrix()?, &y, &grid, cfg.lasso.folds, derive_seed(cfg.seed, "cv"), &cfg.lasso.options, Some(&inv))?;
    write_cv_csv(out.join(files::CV_PATH), &cv)?;
    let coefficients: BTreeMap<String, f64> = x.names().iter().cloned().zip(cv.fit_cv.coefficients.iter().copied()).collect();
    let nonzero = x.names().iter().zip(&cv.fit_cv.coefficients).filter(|(_, c)| **c != 0.0).map(|(n, _)| n.clone()).collect();
    write_json(
        out.join(files::FIT),
        &FitRecord {
            lambda_cv: cv.lambda_cv,
            index_cv: cv.index_cv,
            folds_used: cv.folds_used,
            intercept: cv.fit_cv.intercept,
            coefficients,
            nonzero,
        },
    )
}

fn read_strata(out: &Path, ids: &[String]) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(out.join(files::STRATA))?;
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    ids.iter().map(|id| map.get(id).cloned().ok_or_else(|| Error::Data(format!("pool {id} has no stratum")))).collect()
}

pub fn stage_bootstrap(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let x = FeatureMatrix::read_csv(out.join(files::FINAL_X))?;
    let (ids, y) = read_vector(out.join(files::FINAL_Y))?;
    let xd = x.to_dmatrix()?;
    let bc = cfg.bootstrap_config();
    let report = bootstrap_lasso(&xd, &y, x.names(), &bc)?;
    report.write_json(out.join(files::BOOTSTRAP))?;
    report.write_csv(out.join(files::BOOTSTRAP_CSV))?;
    write_stability_csv(out.join(files::STABILITY), &stability_report(&report, cfg.bootstrap.display_threshold))?;
    if cfg.bootstrap.save_samples {
        report.write_samples(out.join(files::SAMPLES))?;
    }
    if cfg.inputs.strata.is_some() {
        let strata = read_strata(out, &ids)?;
        for (label, r) in stratified_run(&xd, &y, x.names(), &strata, &bc)? {
            let safe: String = label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            r.write_json(out.join(format!("06_bootstrap_{safe}.json")))?;
            write_stability_csv(out.join(format!("06_stability_{safe}.csv")), &stability_report(&r, cfg.bootstrap.display_threshold))?;
        }
    }
    Ok(())
}

pub fn stage_distfit(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    if !cfg.distfit.enabled {
        return Ok(());
    }
    let (_, y) = read_vector(out.join(files::RESPONSE))?;
    let scan = model_scan(&y);
    scan.write_csv(out.join(files::SCAN))?;
    let d = &cfg.distfit;
    let fit = fit_distribution(&y, d.family, d.transform, d.family.default_method())?;
    write_json(out.join(files::DISTFIT), &fit)?;
    pp_qq_data(&y, &fit).write_csv(out.join(files::PPQQ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_pools: usize,
    pub n_features_extracted: usize,
    pub n_rows_final: usize,
    pub n_features_final: usize,
    pub lambda_cv: f64,
    pub lasso_nonzero: Vec<String>,
    pub significant: Vec<String>,
    /// Displayed features by descending median standardized coefficient.
    pub stability: Vec<(String, f64)>,
    pub best_distribution: Option<String>,
}

pub fn stage_report(cfg: &PipelineConfig, out: &Path) -> Result<Summary> {
    let x = FeatureMatrix::read_csv(out.join(files::FEATURES))?;
    let fx = FeatureMatrix::read_csv(out.join(files::FINAL_X))?;
    let fit: FitRecord = read_json(out.join(files::FIT))?;
    let boot: crate::inference::BootstrapReport = read_json(out.join(files::BOOTSTRAP))?;
    let table = stability_report(&boot, cfg.bootstrap.display_threshold);
    let best_distribution = if cfg.distfit.enabled {
        let (_, y) = read_vector(out.join(files::RESPONSE))?;
        model_scan(&y).best().map(|c| format!("{}+{}", c.family, c.transform))
    } else {
        None
    };
    let s = Summary {
        n_pools: x.n_rows(),
        n_features_extracted: x.n_cols(),
        n_rows_final: fx.n_rows(),
        n_features_final: fx.n_cols(),
        lambda_cv: fit.lambda_cv,
        lasso_nonzero: fit.nonzero,
        significant: boot.significant().iter().map(|s| s.to_string()).collect(),
        stability: table.iter().map(|r| (r.name.clone(), r.tukey.median)).collect(),
        best_distribution,
    };
    write_json(out.join(files::SUMMARY), &s)?;
    Ok(s)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one named stage; on failure writes `error.json` into the output
/// directory and returns the error.
pub fn run_stage(cfg: &PipelineConfig, stage: &str) -> Result<()> {
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    write_json(out.join(files::MANIFEST), &Manifest::new(cfg))?;
    let res = match stage {
        "extract" => stage_extract(cfg, out),
        "decompose" => stage_decompose(cfg, out),
        "preprocess" => stage_preprocess(cfg, out),
        "fit" => stage_fit(cfg, out),
        "bootstrap" => stage_bootstrap(cfg, out),
        "distfit" => stage_distfit(cfg, out),
        "report" => stage_report(cfg, out).map(|_| ()),
        other => Err(Error::Config(format!("unknown stage {other}"))),
    };
    if let Err(e) = &res {
        let rep = ErrorReport { stage: stage.into(), kind: e.kind().into(), exit_code: e.exit_code(), message: e.to_string() };
        write_json(out.join(files::ERROR), &rep)?;
    } else if out.join(files::ERROR).exists() {
        std::fs::remove_file(out.join(files::ERROR))?;
    }
    res
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Summary> {
    cfg.validate()?;
    for s in STAGES {
        log::info!("stage {s}");
        run_stage(cfg, s)?;
    }
    read_json(cfg.output_dir.join(files::SUMMARY))
}

/// Pipeline config for a world written by `synth::World::write` into `dir`.
pub fn synthetic_pipeline_config(world_dir: &Path, synth: &crate::synth::SynthConfig) -> PipelineConfig {
    PipelineConfig {
        seed: synth.seed,
        output_dir: world_dir.join("out"),
        buffer_radius_m: synth.buffer_radius_m,
        inputs: Inputs {
            pools: PoolInput { path: "pools.geojson".into(), capacity: Some("capacity_kw".into()), ..Default::default() },
            layers: vec![
                LayerInput { name: crate::synth::TILE_LAYER.into(), path: "tiles.geojson".into() },
                LayerInput { name: crate::synth::POI_LAYER.into(), path: "poi.geojson".into() },
                LayerInput { name: crate::synth::ROAD_LAYER.into(), path: "roads.geojson".into() },
            ],
            events: Some("events.csv".into()),
            rules: "none".into(),
            strata: Some("rollout".into()),
            ..Default::default()
        },
        features: synth.feature_config(),
        ..Default::default()
    }
}
