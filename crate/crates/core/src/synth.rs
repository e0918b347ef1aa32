//! Synthetic worlds with a known answer: a square tiling with correlated
//! count attributes, POIs, a road grid, pools and a charging-event log whose
//! per-pool energy follows a planted log-linear model in the buffer features.

use chrono::{Duration, NaiveDate};
use indexmap::IndexMap;
use rand::RngExt;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::decomposition::{write_events, Event};
use crate::error::{Error, Result};
use crate::features::{assemble_matrix, FeatureConfig, RoadSpec, SourceSpec};
use crate::geometry::{Point, Polygon, Polyline};
use crate::layer::{AttributeTable, SpatialLayer};
use crate::matrix::FeatureMatrix;
use crate::rng::{derive_seed, rng_from};

pub const TILE_LAYER: &str = "tiles";
pub const POI_LAYER: &str = "poi";
pub const ROAD_LAYER: &str = "roads";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_pools: usize,
    pub n_features: usize,
    /// Planted coefficients on the standardized buffer features; length
    /// `n_features`.
    pub support: Vec<f64>,
    pub intercept: f64,
    pub noise_sd: f64,
    /// When set, the noise sd is chosen so that var(signal)/σ² equals it.
    pub snr: Option<f64>,
    /// Side of the square study area, m.
    pub extent_m: f64,
    pub origin: (f64, f64),
    pub tile_size_m: f64,
    pub buffer_radius_m: f64,
    pub attribute_mean: f64,
    pub attribute_sd: f64,
    /// Equicorrelation of the tile attributes.
    pub attribute_correlation: f64,
    pub poi_per_km2: f64,
    pub poi_categories: Vec<String>,
    pub road_spacing_m: f64,
    pub mean_transactions: f64,
    pub point_power_kw: f64,
    pub max_points: usize,
    /// Fixed energy per session: every event then has the same energy and
    /// duration, so y = k·n holds exactly with k equal to it.
    pub session_energy_kwh: Option<f64>,
}

pub fn default_support(n_features: usize) -> Vec<f64> {
    let planted = [1.0, -0.8, 0.6, -0.45, 0.3];
    (0..n_features).map(|j| planted.get(j).copied().unwrap_or(0.0)).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_pools: 300,
            n_features: 50,
            support: default_support(50),
            intercept: 8.0,
            noise_sd: 0.3,
            snr: None,
            extent_m: 10_000.0,
            origin: (120_000.0, 480_000.0),
            tile_size_m: 400.0,
            buffer_radius_m: 350.0,
            attribute_mean: 100.0,
            attribute_sd: 20.0,
            attribute_correlation: 0.3,
            poi_per_km2: 4.0,
            poi_categories: vec!["shop".into(), "education".into(), "health".into()],
            road_spacing_m: 1000.0,
            mean_transactions: 150.0,
            point_power_kw: 11.0,
            max_points: 3,
            session_energy_kwh: None,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.support.len() != self.n_features {
            return bad(format!("support has {} entries for {} features", self.support.len(), self.n_features));
        }
        if self.n_pools < 2 || self.n_features == 0 {
            return bad("need at least 2 pools and 1 feature".into());
        }
        if !(self.noise_sd >= 0.0) || self.snr.is_some_and(|s| !(s > 0.0)) {
            return bad("noise_sd must be ≥ 0 and snr > 0".into());
        }
        if !(self.tile_size_m > 0.0 && self.buffer_radius_m > 0.0 && self.road_spacing_m > 0.0) {
            return bad("tile size, buffer radius and road spacing must be positive".into());
        }
        if !(self.extent_m > 2.0 * self.buffer_radius_m + 1.0) {
            return bad("study area too small for the buffer radius".into());
        }
        if !(0.0..1.0).contains(&self.attribute_correlation) {
            return bad("attribute_correlation must lie in [0, 1)".into());
        }
        if !(self.mean_transactions >= 1.0) || !(self.point_power_kw > 0.0) || self.max_points == 0 {
            return bad("event model needs mean_transactions ≥ 1, point power > 0 and max_points ≥ 1".into());
        }
        if self.session_energy_kwh.is_some_and(|e| !(e > 0.0)) {
            return bad("session_energy_kwh must be positive".into());
        }
        if !self.intercept.is_finite() || self.support.iter().any(|b| !b.is_finite()) {
            return bad("planted coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        let w = self.n_features.to_string().len().max(2);
        (1..=self.n_features).map(|j| format!("A{j:0w$}")).collect()
    }

    /// Extraction config whose columns are exactly the planted features.
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            sources: self
                .feature_names()
                .into_iter()
                .map(|a| SourceSpec::Count { layer: TILE_LAYER.into(), attribute: a, name: None })
                .collect(),
            ..Default::default()
        }
    }

    /// Extraction config adding the POI and road layers to the planted
    /// features.
    pub fn full_feature_config(&self) -> FeatureConfig {
        let mut cfg = self.feature_config();
        cfg.sources.push(SourceSpec::PointSet {
            layer: POI_LAYER.into(),
            attribute: Some("category".into()),
            prefix: None,
            mapping: Default::default(),
            categories: None,
        });
        let mut modes = IndexMap::new();
        modes.insert("cars".to_string(), vec!["TF1".to_string(), "TF2".to_string(), "TF3".to_string()]);
        cfg.sources.push(SourceSpec::Flow {
            layer: ROAD_LAYER.into(),
            prefix: None,
            road: RoadSpec {
                modes,
                type_attribute: Some("type".into()),
                types: vec!["primary".into(), "secondary".into(), "tertiary".into()],
            },
        });
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub feature_names: Vec<String>,
    /// Planted coefficients of the standardized features.
    pub support: Vec<f64>,
    /// The same model on the raw feature scale.
    pub raw_intercept: f64,
    pub raw_coefficients: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    pub noise_sd: f64,
    pub signal_variance: f64,
    pub pool_ids: Vec<String>,
    pub log_energy: Vec<f64>,
    /// Per-pool energy realized by the event log.
    pub energy: Vec<f64>,
}

impl GroundTruth {
    pub fn support_names(&self) -> Vec<&str> {
        self.feature_names.iter().zip(&self.support).filter(|(_, b)| **b != 0.0).map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: SynthConfig,
    pub tiles: SpatialLayer,
    pub poi: SpatialLayer,
    pub roads: SpatialLayer,
    /// Pool points with `n_points`, `capacity_kw` and `rollout` attributes.
    pub pools: SpatialLayer,
    pub pool_sites: Vec<(String, Point)>,
    pub events: Vec<Event>,
    /// Buffer feature matrix the planted model was built on.
    pub features: FeatureMatrix,
    pub truth: GroundTruth,
}

impl World {
    pub fn layers(&self) -> Vec<SpatialLayer> {
        vec![self.tiles.clone(), self.poi.clone(), self.roads.clone()]
    }

    /// Writes the layers as GeoJSON, events as CSV and the truth record and
    /// feature config next to them.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.tiles.write_geojson(dir.join("tiles.geojson"))?;
        self.poi.write_geojson(dir.join("poi.geojson"))?;
        self.roads.write_geojson(dir.join("roads.geojson"))?;
        self.pools.write_geojson(dir.join("pools.geojson"))?;
        write_events(dir.join("events.csv"), &self.events)?;
        let mut t = serde_json::to_string_pretty(&self.truth)?;
        t.push('\n');
        std::fs::write(dir.join("truth.json"), t)?;
        let fc = toml::to_string(&self.config.feature_config()).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("features.toml"), fc)?;
        Ok(())
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn tiling(cfg: &SynthConfig) -> Result<SpatialLayer> {
    let mut rng = rng_from(derive_seed(cfg.seed, "tiles"));
    let n_side = (cfg.extent_m / cfg.tile_size_m).ceil() as usize;
    let (ox, oy) = cfg.origin;
    let mut polys = Vec::with_capacity(n_side * n_side);
    let mut ids = Vec::new();
    for r in 0..n_side {
        for c in 0..n_side {
            let x0 = ox + c as f64 * cfg.tile_size_m;
            let y0 = oy + r as f64 * cfg.tile_size_m;
            polys.push(Polygon::rectangle(x0, y0, x0 + cfg.tile_size_m, y0 + cfg.tile_size_m)?);
            ids.push(Some(format!("T{r:03}_{c:03}")));
        }
    }
    let rho = cfg.attribute_correlation;
    let common: Vec<f64> = (0..polys.len()).map(|_| normal(&mut rng)).collect();
    let mut table = AttributeTable::new(polys.len());
    table.insert_text("tile_id", ids)?;
    for name in cfg.feature_names() {
        let col = common
            .iter()
            .map(|c| {
                let z = rho.sqrt() * c + (1.0 - rho).sqrt() * normal(&mut rng);
                Some((cfg.attribute_mean + cfg.attribute_sd * z).max(0.0))
            })
            .collect();
        table.insert_numeric(name, col)?;
    }
    SpatialLayer::from_polygons(TILE_LAYER, polys, table)
}

fn poi_layer(cfg: &SynthConfig) -> Result<SpatialLayer> {
    let mut rng = rng_from(derive_seed(cfg.seed, "poi"));
    let km2 = (cfg.extent_m / 1000.0).powi(2);
    let n = if cfg.poi_per_km2 > 0.0 {
        rng.sample(Poisson::new(cfg.poi_per_km2 * km2).map_err(|e| Error::Config(e.to_string()))?) as usize
    } else {
        0
    };
    let (ox, oy) = cfg.origin;
    let mut pts = Vec::with_capacity(n);
    let mut cats = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push(Point::new(ox + rng.random::<f64>() * cfg.extent_m, oy + rng.random::<f64>() * cfg.extent_m));
        let c = if cfg.poi_categories.is_empty() { None } else { Some(cfg.poi_categories[rng.random_range(0..cfg.poi_categories.len())].clone()) };
        cats.push(c);
    }
    let mut t = AttributeTable::new(n);
    t.insert_text("category", cats)?;
    SpatialLayer::from_points(POI_LAYER, pts, t)
}

fn road_layer(cfg: &SynthConfig) -> Result<SpatialLayer> {
    let mut rng = rng_from(derive_seed(cfg.seed, "roads"));
    let (ox, oy) = cfg.origin;
    let k = (cfg.extent_m / cfg.road_spacing_m).floor() as usize;
    let types = ["primary", "secondary", "tertiary", "residential"];
    let mut lines = Vec::new();
    let mut kinds = Vec::new();
    let mut flows: [Vec<Option<f64>>; 3] = Default::default();
    for i in 0..=k {
        let off = i as f64 * cfg.road_spacing_m;
        for horizontal in [true, false] {
            let (a, b) = if horizontal {
                (Point::new(ox, oy + off), Point::new(ox + cfg.extent_m, oy + off))
            } else {
                (Point::new(ox + off, oy), Point::new(ox + off, oy + cfg.extent_m))
            };
            lines.push(Polyline::new(vec![a, b])?);
            let t = rng.random_range(0..types.len());
            kinds.push(Some(types[t].to_string()));
            let base = 8000.0 / (t + 1) as f64;
            for f in flows.iter_mut() {
                f.push(Some((base * (0.5 + rng.random::<f64>())).round()));
            }
        }
    }
    let mut table = AttributeTable::new(lines.len());
    table.insert_text("type", kinds)?;
    for (i, f) in flows.into_iter().enumerate() {
        table.insert_numeric(format!("TF{}", i + 1), f)?;
    }
    SpatialLayer::from_lines(ROAD_LAYER, lines, table)
}

fn population_mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn timestamp(hours_since_2015: f64) -> String {
    let base = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (base + Duration::seconds((hours_since_2015 * 3600.0).round() as i64)).format("%Y-%m-%dT%H:%M:%S").to_string()
}

pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let tiles = tiling(cfg)?;
    let poi = poi_layer(cfg)?;
    let roads = road_layer(cfg)?;

    let mut rng = rng_from(derive_seed(cfg.seed, "pools"));
    let (ox, oy) = cfg.origin;
    let margin = cfg.buffer_radius_m + 1.0;
    let span = cfg.extent_m - 2.0 * margin;
    let width = cfg.n_pools.to_string().len().max(4);
    let mut sites = Vec::with_capacity(cfg.n_pools);
    let mut n_points = Vec::new();
    let mut capacity = Vec::new();
    let mut rollout = Vec::new();
    for i in 0..cfg.n_pools {
        let p = Point::new(ox + margin + rng.random::<f64>() * span, oy + margin + rng.random::<f64>() * span);
        sites.push((format!("P{:0width$}", i + 1), p));
        let k = rng.random_range(1..=cfg.max_points);
        n_points.push(Some(k as f64));
        capacity.push(Some(k as f64 * cfg.point_power_kw));
        rollout.push(Some(if rng.random::<bool>() { "strategic" } else { "demand" }.to_string()));
    }
    let mut pt = AttributeTable::new(cfg.n_pools);
    pt.insert_text("pool_id", sites.iter().map(|s| Some(s.0.clone())).collect())?;
    pt.insert_numeric("n_points", n_points.clone())?;
    pt.insert_numeric("capacity_kw", capacity)?;
    pt.insert_text("rollout", rollout)?;
    let pools = SpatialLayer::from_points("pools", sites.iter().map(|s| s.1).collect(), pt)?;

    let (features, report) = assemble_matrix(&sites, std::slice::from_ref(&tiles), &cfg.feature_config(), cfg.buffer_radius_m)?;
    if !report.dropped.is_empty() {
        return Err(Error::Config(format!("planted features dropped during extraction: {:?}", report.dropped)));
    }
    let p = cfg.n_features;
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let (m, s) = population_mean_sd(features.column(j));
        if !(s > 0.0) {
            return Err(Error::Config(format!("planted feature {} is constant across pools", features.names()[j])));
        }
        means.push(m);
        sds.push(s);
    }
    let signal: Vec<f64> = (0..cfg.n_pools)
        .map(|i| (0..p).map(|j| cfg.support[j] * (features.column(j)[i] - means[j]) / sds[j]).sum())
        .collect();
    let (_, sig_sd) = population_mean_sd(&signal);
    let signal_variance = sig_sd * sig_sd;
    let noise_sd = match cfg.snr {
        Some(snr) => {
            if !(signal_variance > 0.0) {
                return Err(Error::Config("snr given but the planted signal has zero variance".into()));
            }
            (signal_variance / snr).sqrt()
        }
        None => cfg.noise_sd,
    };
    let mut nrng = rng_from(derive_seed(cfg.seed, "noise"));
    let log_energy: Vec<f64> = signal.iter().map(|s| cfg.intercept + s + noise_sd * normal(&mut nrng)).collect();
    if log_energy.iter().any(|v| !v.is_finite() || v.exp() <= 0.0 || !v.exp().is_finite()) {
        return Err(Error::Config("planted energies are not positive finite values".into()));
    }

    let mut ergn = rng_from(derive_seed(cfg.seed, "events"));
    let poisson = Poisson::new(cfg.mean_transactions - 1.0 + 1e-9).map_err(|e| Error::Config(e.to_string()))?;
    let idle = Exp::new(1.0 / 1.5).unwrap();
    let mut events = Vec::new();
    let mut energy = Vec::with_capacity(cfg.n_pools);
    for (i, (id, _)) in sites.iter().enumerate() {
        let target = log_energy[i].exp();
        let k_points = n_points[i].unwrap() as usize;
        let (count, per_event): (usize, Vec<f64>) = match cfg.session_energy_kwh {
            Some(e) => {
                let c = ((target / e).round() as usize).max(1);
                (c, vec![e; c])
            }
            None => {
                let c = 1 + ergn.sample(poisson) as usize;
                let w: Vec<f64> = (0..c).map(|_| -(1.0 - ergn.random::<f64>()).ln()).collect();
                let sw: f64 = w.iter().sum();
                (c, w.iter().map(|x| target * x / sw).collect())
            }
        };
        let mut total = 0.0;
        for (k, e) in per_event.iter().enumerate().take(count) {
            let power = match cfg.session_energy_kwh {
                Some(_) => cfg.point_power_kw,
                None => cfg.point_power_kw * (0.4 + 0.6 * ergn.random::<f64>()),
            };
            let charging = e / power;
            let idle_h = match cfg.session_energy_kwh {
                Some(_) => 1.0,
                None => ergn.sample(idle),
            };
            let connection = charging + idle_h;
            let start = ergn.random::<f64>() * 364.0 * 24.0;
            events.push(Event {
                pool_id: id.clone(),
                point_id: format!("{id}-{}", 1 + (k % k_points)),
                start_time: timestamp(start),
                end_time: timestamp(start + connection),
                connection_h: connection,
                charging_h: charging,
                idle_h,
                energy_kwh: *e,
                rfid_count: 1 + ergn.random_range(0..3u32),
            });
            total += e;
        }
        energy.push(total);
    }

    let raw_coefficients: Vec<f64> = (0..p).map(|j| cfg.support[j] / sds[j]).collect();
    let raw_intercept = cfg.intercept - (0..p).map(|j| raw_coefficients[j] * means[j]).sum::<f64>();
    let truth = GroundTruth {
        seed: cfg.seed,
        feature_names: features.names().to_vec(),
        support: cfg.support.clone(),
        raw_intercept,
        raw_coefficients,
        feature_means: means,
        feature_sds: sds,
        noise_sd,
        signal_variance,
        pool_ids: sites.iter().map(|s| s.0.clone()).collect(),
        log_energy,
        energy,
    };
    Ok(World { config: cfg.clone(), tiles, poi, roads, pools, pool_sites: sites, events, features, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::pool_metrics;
    use crate::regression::ols_fit;

    fn small() -> SynthConfig {
        SynthConfig { n_pools: 60, n_features: 6, support: default_support(6), extent_m: 5000.0, mean_transactions: 20.0, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.tiles.to_geojson_string(), b.tiles.to_geojson_string());
        let c = generate_world(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.truth.log_energy, c.truth.log_energy);
    }

    #[test]
    fn events_reproduce_planted_energy() {
        let w = generate_world(&small()).unwrap();
        let u = pool_metrics(&w.events, None).unwrap();
        for (i, id) in w.truth.pool_ids.iter().enumerate() {
            let got = u.iter().find(|u| &u.pool_id == id).unwrap();
            let planted = w.truth.log_energy[i].exp();
            assert!((got.energy - planted).abs() <= 1e-6 * planted);
        }
    }

    #[test]
    fn noiseless_ols_recovers_truth() {
        let w = generate_world(&SynthConfig { noise_sd: 0.0, ..small() }).unwrap();
        let x = w.features.to_dmatrix().unwrap();
        let f = ols_fit(&x, &w.truth.log_energy).unwrap();
        for (b, t) in f.coefficients.iter().zip(&w.truth.raw_coefficients) {
            assert!((b - t).abs() <= 1e-3 * t.abs().max(1e-3), "{b} vs {t}");
        }
    }

    #[test]
    fn snr_sets_noise() {
        let w = generate_world(&SynthConfig { snr: Some(10.0), ..small() }).unwrap();
        assert!((w.truth.signal_variance / w.truth.noise_sd.powi(2) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig { support: vec![1.0], ..small() };
        assert!(matches!(generate_world(&bad), Err(Error::Config(_))));
        let bad = SynthConfig { noise_sd: -1.0, ..small() };
        assert!(matches!(generate_world(&bad), Err(Error::Config(_))));
        let bad = SynthConfig { extent_m: 500.0, ..small() };
        assert!(matches!(generate_world(&bad), Err(Error::Config(_))));
        let bad = SynthConfig { intercept: 1e6, ..small() };
        assert!(matches!(generate_world(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn written_world_reads_back() {
        let w = generate_world(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.write(dir.path()).unwrap();
        let tiles = SpatialLayer::read_geojson(dir.path().join("tiles.geojson"), "tiles").unwrap();
        assert_eq!(tiles.len(), w.tiles.len());
        let fc = FeatureConfig::from_toml(&std::fs::read_to_string(dir.path().join("features.toml")).unwrap()).unwrap();
        let (m, _) = assemble_matrix(&w.pool_sites, &[tiles], &fc, 350.0).unwrap();
        assert_eq!(m.names(), w.features.names());
        for j in 0..m.n_cols() {
            for i in 0..m.n_rows() {
                assert!((m.column(j)[i] - w.features.column(j)[i]).abs() <= 1e-9 * w.features.column(j)[i].abs());
            }
        }
    }
}
