//! Buffer statistics: turn spatial layers and pool locations into the
//! feature matrix.
//!
//! Densities divide by the exact 64-gon buffer area and are expressed per
//! km²; road lengths are in km, so road density is km/km² and traffic
//! density is vehicle·km per day per km².

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{intersection_area, min_distance, polyline_length_in, Buffer, Point, Polygon, Polyline};
use crate::layer::{GeometryKind, Shape, SpatialLayer};
use crate::matrix::{FeatureMatrix, Provenance};
use crate::regression::ols_fit;

const M2_PER_KM2: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Count,
    Average,
    Percentage,
    CategoryArea,
    PointSet,
    Flow,
}

impl AttributeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttributeKind::Count => "count",
            AttributeKind::Average => "average",
            AttributeKind::Percentage => "percentage",
            AttributeKind::CategoryArea => "category-area",
            AttributeKind::PointSet => "point-set",
            AttributeKind::Flow => "flow",
        }
    }
}

/// Apportioned value plus the share of the buffer not covered by polygons
/// carrying a value for the attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Apportioned {
    pub value: Option<f64>,
    pub coverage_gap: f64,
}

fn shape_polygons<'a>(layer: &'a SpatialLayer) -> Result<impl Iterator<Item = &'a [Polygon]>> {
    if layer.kind() != GeometryKind::Polygon {
        return Err(Error::Schema(format!("layer {} is not a polygon layer", layer.name)));
    }
    Ok(layer.shapes().iter().map(|s| match s {
        Shape::Polygons(p) => p.as_slice(),
        _ => &[],
    }))
}

fn shape_intersection(parts: &[Polygon], buffer: &Buffer) -> f64 {
    parts.iter().map(|p| intersection_area(p, buffer)).sum()
}

/// Per polygon: (intersection area, polygon area, value).
fn overlaps(buffer: &Buffer, layer: &SpatialLayer, attr: &str) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let values = layer.attributes.numeric(attr)?;
    let bb = buffer.bbox();
    let mut out = Vec::new();
    for (parts, v) in shape_polygons(layer)?.zip(values) {
        if !parts.iter().any(|p| p.bbox().intersects(&bb)) {
            continue;
        }
        let a = shape_intersection(parts, buffer);
        if a > 0.0 {
            out.push((a, parts.iter().map(Polygon::area).sum(), *v));
        }
    }
    Ok(out)
}

fn gap(buffer: &Buffer, covered: f64) -> f64 {
    (1.0 - covered / buffer.area()).clamp(0.0, 1.0)
}

/// Σ value_i · |P_i ∩ B| / |P_i| under a uniform-density assumption.
pub fn apportion_count(buffer: &Buffer, layer: &SpatialLayer, attr: &str) -> Result<Apportioned> {
    let ov = overlaps(buffer, layer, attr)?;
    let mut sum = 0.0;
    let mut covered = 0.0;
    for &(a, area, v) in &ov {
        if let Some(v) = v {
            sum += v * a / area;
            covered += a;
        }
    }
    let value = if covered == 0.0 && !ov.is_empty() { None } else { Some(sum) };
    Ok(Apportioned { value, coverage_gap: gap(buffer, covered) })
}

/// Intersection-area-weighted mean over polygons with a value.
pub fn areal_mean(buffer: &Buffer, layer: &SpatialLayer, attr: &str) -> Result<Apportioned> {
    let ov = overlaps(buffer, layer, attr)?;
    let mut sum = 0.0;
    let mut covered = 0.0;
    for &(a, _, v) in &ov {
        if let Some(v) = v {
            sum += v * a;
            covered += a;
        }
    }
    let value = (covered > 0.0).then(|| sum / covered);
    Ok(Apportioned { value, coverage_gap: gap(buffer, covered) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiFeatures {
    /// Missing when no point of the category exists anywhere.
    pub min_dist: Option<f64>,
    /// Points inside the buffer per km².
    pub density: f64,
}

pub fn poi_features(pool: &Point, buffer: &Buffer, points: &[Point]) -> PoiFeatures {
    let inside = points.iter().filter(|p| buffer.contains(p)).count();
    PoiFeatures {
        min_dist: min_distance(pool, points).ok(),
        density: inside as f64 / (buffer.area() / M2_PER_KM2),
    }
}

/// Area (m²) of each category of `attr` inside the buffer; categories with
/// no overlap are omitted.
pub fn land_use_areas(buffer: &Buffer, layer: &SpatialLayer, attr: &str) -> Result<BTreeMap<String, f64>> {
    let bb = buffer.bbox();
    let mut out = BTreeMap::new();
    for (i, parts) in shape_polygons(layer)?.enumerate() {
        if !parts.iter().any(|p| p.bbox().intersects(&bb)) {
            continue;
        }
        let Some(cat) = layer.attributes.label(attr, i)? else { continue };
        let a = shape_intersection(parts, buffer);
        if a > 0.0 {
            *out.entry(cat).or_insert(0.0) += a;
        }
    }
    Ok(out)
}

/// How a road layer encodes traffic: per-mode daily flows as sums of
/// attributes, and a segment-type attribute expanded to dummies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub modes: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub type_attribute: Option<String>,
    /// Types that get a dummy; any other type is the all-zero baseline.
    #[serde(default)]
    pub types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadFeatures {
    pub road_density: f64,
    pub traffic_density: f64,
    pub traffic_density_by_mode: Vec<(String, f64)>,
    pub nearest_flow: Vec<(String, Option<f64>)>,
    pub nearest_type_dummies: Vec<(String, Option<f64>)>,
}

struct Road {
    parts: Vec<Polyline>,
    flows: Vec<Option<f64>>,
    kind: Option<String>,
}

fn prepare_roads(layer: &SpatialLayer, spec: &RoadSpec) -> Result<Vec<Road>> {
    if layer.kind() != GeometryKind::Line && !layer.is_empty() {
        return Err(Error::Schema(format!("layer {} is not a polyline layer", layer.name)));
    }
    let mut cols = Vec::new();
    for attrs in spec.modes.values() {
        cols.push(attrs.iter().map(|a| layer.attributes.numeric(a)).collect::<Result<Vec<_>>>()?);
    }
    let mut roads = Vec::with_capacity(layer.len());
    for (i, s) in layer.shapes().iter().enumerate() {
        let Shape::Lines(parts) = s else { continue };
        let flows = cols.iter().map(|attrs| attrs.iter().map(|c| c[i]).sum::<Option<f64>>()).collect();
        let kind = match &spec.type_attribute {
            Some(t) => layer.attributes.label(t, i)?,
            None => None,
        };
        roads.push(Road { parts: parts.clone(), flows, kind });
    }
    Ok(roads)
}

fn road_features_prepared(pool: &Point, buffer: &Buffer, roads: &[Road], spec: &RoadSpec) -> RoadFeatures {
    let km2 = buffer.area() / M2_PER_KM2;
    let bb = buffer.bbox();
    let nm = spec.modes.len();
    let mut length = 0.0;
    let mut traffic = vec![0.0; nm];
    let mut nearest: Option<(f64, usize)> = None;
    for (r, road) in roads.iter().enumerate() {
        let mut inside = 0.0;
        for part in &road.parts {
            if part.bbox().intersects(&bb) {
                inside += polyline_length_in(part, buffer);
            }
            let d = part.distance_to(pool);
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, r));
            }
        }
        let km = inside / 1000.0;
        length += km;
        for (m, f) in road.flows.iter().enumerate() {
            if let Some(f) = f {
                traffic[m] += km * f;
            }
        }
    }
    let modes: Vec<&String> = spec.modes.keys().collect();
    let near = nearest.map(|(_, r)| &roads[r]);
    RoadFeatures {
        road_density: length / km2,
        traffic_density: traffic.iter().sum::<f64>() / km2,
        traffic_density_by_mode: modes.iter().zip(&traffic).map(|(m, t)| ((*m).clone(), t / km2)).collect(),
        nearest_flow: modes.iter().enumerate().map(|(m, name)| ((*name).clone(), near.and_then(|r| r.flows[m]))).collect(),
        nearest_type_dummies: spec
            .types
            .iter()
            .map(|t| {
                let v = near.and_then(|r| r.kind.as_ref()).map(|k| if k == t { 1.0 } else { 0.0 });
                (t.clone(), v)
            })
            .collect(),
    }
}

pub fn road_traffic_features(pool: &Point, buffer: &Buffer, roads: &SpatialLayer, spec: &RoadSpec) -> Result<RoadFeatures> {
    let prepared = prepare_roads(roads, spec)?;
    Ok(road_features_prepared(pool, buffer, &prepared, spec))
}

/// One configured feature source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSpec {
    Count {
        layer: String,
        attribute: String,
        #[serde(default)]
        name: Option<String>,
    },
    Average {
        layer: String,
        attribute: String,
        #[serde(default)]
        name: Option<String>,
    },
    Percentage {
        layer: String,
        attribute: String,
        #[serde(default)]
        name: Option<String>,
    },
    CategoryArea {
        layer: String,
        attribute: String,
        #[serde(default)]
        prefix: Option<String>,
    },
    PointSet {
        layer: String,
        /// Category attribute; without it the whole layer is one set.
        #[serde(default)]
        attribute: Option<String>,
        #[serde(default)]
        prefix: Option<String>,
        /// Raw category → aggregated class; unmapped points are ignored
        /// when a mapping is given.
        #[serde(default)]
        mapping: BTreeMap<String, String>,
        /// Fixed category list (categories may be absent from the data).
        #[serde(default)]
        categories: Option<Vec<String>>,
    },
    Flow {
        layer: String,
        #[serde(default)]
        prefix: Option<String>,
        #[serde(flatten)]
        road: RoadSpec,
    },
}

impl SourceSpec {
    pub fn layer(&self) -> &str {
        match self {
            SourceSpec::Count { layer, .. }
            | SourceSpec::Average { layer, .. }
            | SourceSpec::Percentage { layer, .. }
            | SourceSpec::CategoryArea { layer, .. }
            | SourceSpec::PointSet { layer, .. }
            | SourceSpec::Flow { layer, .. } => layer,
        }
    }

    pub fn kind(&self) -> AttributeKind {
        match self {
            SourceSpec::Count { .. } => AttributeKind::Count,
            SourceSpec::Average { .. } => AttributeKind::Average,
            SourceSpec::Percentage { .. } => AttributeKind::Percentage,
            SourceSpec::CategoryArea { .. } => AttributeKind::CategoryArea,
            SourceSpec::PointSet { .. } => AttributeKind::PointSet,
            SourceSpec::Flow { .. } => AttributeKind::Flow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageRule {
    /// Drop a feature if any row's coverage gap exceeds the threshold.
    #[default]
    PerRowAny,
    /// Drop a feature if the mean coverage gap exceeds the threshold.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sources: Vec<SourceSpec>,
    pub coverage_threshold: f64,
    pub imputation_threshold: f64,
    pub coverage_rule: CoverageRule,
    /// Add the distance to the closest other pool.
    pub pool_distance: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sources: Vec::new(),
            coverage_threshold: 0.15,
            imputation_threshold: 0.015,
            coverage_rule: CoverageRule::PerRowAny,
            pool_distance: false,
        }
    }
}

impl FeatureConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("feature config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedFeature {
    pub name: String,
    pub cells: usize,
    pub median: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub radius_m: f64,
    pub n_pools: usize,
    pub candidate_features: usize,
    pub dropped: Vec<DroppedFeature>,
    pub imputed: Vec<ImputedFeature>,
}

struct ColumnDef {
    name: String,
    prov: Provenance,
    coverage: bool,
}

enum Prepared<'a> {
    Polygon { layer: &'a SpatialLayer, attr: String, mean: bool },
    Category { layer: &'a SpatialLayer, attr: String, cats: Vec<String> },
    Points { sets: Vec<Vec<Point>> },
    Roads { roads: Vec<Road>, spec: RoadSpec },
    PoolDistance { all: Vec<Point> },
}

fn find_layer<'a>(layers: &'a [SpatialLayer], name: &str) -> Result<&'a SpatialLayer> {
    layers.iter().find(|l| l.name == name).ok_or_else(|| Error::Config(format!("feature source refers to unknown layer {name}")))
}

fn prepare<'a>(
    layers: &'a [SpatialLayer],
    pools: &[(String, Point)],
    cfg: &FeatureConfig,
    cols: &mut Vec<ColumnDef>,
    report: &mut ExtractionReport,
) -> Result<Vec<Prepared<'a>>> {
    let mut out = Vec::new();
    for src in &cfg.sources {
        let layer = find_layer(layers, src.layer())?;
        let kind = src.kind().as_str();
        let prov = || Provenance::new(layer.name.clone(), kind);
        match src {
            SourceSpec::Count { attribute, name, .. }
            | SourceSpec::Average { attribute, name, .. }
            | SourceSpec::Percentage { attribute, name, .. } => {
                layer.attributes.numeric(attribute)?;
                let _ = shape_polygons(layer)?;
                cols.push(ColumnDef { name: name.clone().unwrap_or_else(|| attribute.clone()), prov: prov(), coverage: true });
                out.push(Prepared::Polygon {
                    layer,
                    attr: attribute.clone(),
                    mean: !matches!(src, SourceSpec::Count { .. }),
                });
            }
            SourceSpec::CategoryArea { attribute, prefix, .. } => {
                let _ = shape_polygons(layer)?;
                let mut cats = BTreeSet::new();
                for i in 0..layer.len() {
                    if let Some(c) = layer.attributes.label(attribute, i)? {
                        cats.insert(c);
                    }
                }
                let prefix = prefix.clone().unwrap_or_else(|| layer.name.clone());
                for c in &cats {
                    cols.push(ColumnDef { name: format!("{prefix}_{c}"), prov: prov(), coverage: false });
                }
                out.push(Prepared::Category { layer, attr: attribute.clone(), cats: cats.into_iter().collect() });
            }
            SourceSpec::PointSet { attribute, prefix, mapping, categories, .. } => {
                let pts = layer.points()?;
                let prefix = prefix.clone().unwrap_or_else(|| layer.name.clone());
                let mut by_cat: BTreeMap<String, Vec<Point>> = BTreeMap::new();
                for (i, p) in pts.iter().enumerate() {
                    let raw = match attribute {
                        Some(a) => layer.attributes.label(a, i)?,
                        None => Some(prefix.clone()),
                    };
                    let Some(raw) = raw else { continue };
                    let cat = if mapping.is_empty() { Some(raw) } else { mapping.get(&raw).cloned() };
                    if let Some(c) = cat {
                        by_cat.entry(c).or_default().push(*p);
                    }
                }
                let cats: Vec<String> = match categories {
                    Some(c) => c.clone(),
                    None if attribute.is_none() => vec![prefix.clone()],
                    None => by_cat.keys().cloned().collect(),
                };
                let mut sets = Vec::new();
                for c in &cats {
                    let set = by_cat.remove(c).unwrap_or_default();
                    let base = if attribute.is_none() && c == &prefix { prefix.clone() } else { format!("{prefix}_{c}") };
                    let mut p = prov();
                    p.note = Some(format!("category {c}"));
                    if set.is_empty() {
                        report.dropped.push(DroppedFeature {
                            name: format!("{base}_min_dist"),
                            reason: "no point of this category in the layer".into(),
                        });
                    } else {
                        cols.push(ColumnDef { name: format!("{base}_min_dist"), prov: p.clone(), coverage: false });
                    }
                    cols.push(ColumnDef { name: format!("{base}_density"), prov: p, coverage: false });
                    sets.push(set);
                }
                out.push(Prepared::Points { sets });
            }
            SourceSpec::Flow { prefix, road, .. } => {
                let roads = prepare_roads(layer, road)?;
                let prefix = prefix.clone().unwrap_or_else(|| layer.name.clone());
                cols.push(ColumnDef { name: format!("{prefix}_road_density"), prov: prov(), coverage: false });
                cols.push(ColumnDef { name: format!("{prefix}_traffic_density"), prov: prov(), coverage: false });
                for m in road.modes.keys() {
                    cols.push(ColumnDef { name: format!("{prefix}_traffic_density_{m}"), prov: prov(), coverage: false });
                }
                for m in road.modes.keys() {
                    cols.push(ColumnDef { name: format!("{prefix}_nearest_flow_{m}"), prov: prov(), coverage: false });
                }
                for t in &road.types {
                    cols.push(ColumnDef { name: format!("{prefix}_type_{t}"), prov: prov(), coverage: false });
                }
                out.push(Prepared::Roads { roads, spec: road.clone() });
            }
        }
    }
    if cfg.pool_distance {
        cols.push(ColumnDef { name: "pool_min_dist".into(), prov: Provenance::new("pools", "point-set"), coverage: false });
        out.push(Prepared::PoolDistance { all: pools.iter().map(|p| p.1).collect() });
    }
    Ok(out)
}

/// (value, coverage gap) per planned column for one pool.
fn extract_row(index: usize, pool: &Point, buffer: &Buffer, prepared: &[Prepared]) -> Result<Vec<(Option<f64>, f64)>> {
    let mut row = Vec::new();
    for p in prepared {
        match p {
            Prepared::Polygon { layer, attr, mean } => {
                let a = if *mean { areal_mean(buffer, layer, attr)? } else { apportion_count(buffer, layer, attr)? };
                row.push((a.value, a.coverage_gap));
            }
            Prepared::Category { layer, attr, cats } => {
                let areas = land_use_areas(buffer, layer, attr)?;
                for c in cats {
                    row.push((Some(areas.get(c).copied().unwrap_or(0.0)), 0.0));
                }
            }
            Prepared::Points { sets } => {
                for set in sets {
                    let f = poi_features(pool, buffer, set);
                    if !set.is_empty() {
                        row.push((f.min_dist, 0.0));
                    }
                    row.push((Some(f.density), 0.0));
                }
            }
            Prepared::Roads { roads, spec } => {
                let f = road_features_prepared(pool, buffer, roads, spec);
                row.push((Some(f.road_density), 0.0));
                row.push((Some(f.traffic_density), 0.0));
                row.extend(f.traffic_density_by_mode.iter().map(|(_, v)| (Some(*v), 0.0)));
                row.extend(f.nearest_flow.iter().map(|(_, v)| (*v, 0.0)));
                row.extend(f.nearest_type_dummies.iter().map(|(_, v)| (*v, 0.0)));
            }
            Prepared::PoolDistance { all } => {
                let others: Vec<Point> = all.iter().enumerate().filter(|(j, _)| *j != index).map(|(_, p)| *p).collect();
                row.push((min_distance(pool, &others).ok(), 0.0));
            }
        }
    }
    Ok(row)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One row per pool. Features whose coverage gap exceeds the threshold
/// (per the configured rule) are dropped; of the rest, features with fewer
/// than `imputation_threshold` missing rows are median-imputed and the
/// others dropped.
pub fn assemble_matrix(
    pools: &[(String, Point)],
    layers: &[SpatialLayer],
    cfg: &FeatureConfig,
    radius_m: f64,
) -> Result<(FeatureMatrix, ExtractionReport)> {
    if pools.is_empty() {
        return Err(Error::EmptyInput("no pools to extract features for".into()));
    }
    let mut report = ExtractionReport { radius_m, n_pools: pools.len(), ..Default::default() };
    let mut cols = Vec::new();
    let prepared = prepare(layers, pools, cfg, &mut cols, &mut report)?;
    let rows: Vec<Vec<(Option<f64>, f64)>> = pools
        .par_iter()
        .enumerate()
        .map(|(i, (_, pt))| {
            let b = Buffer::new(*pt, radius_m)?;
            extract_row(i, pt, &b, &prepared)
        })
        .collect::<Result<_>>()?;
    report.candidate_features = cols.len();
    let n = pools.len();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut provs = Vec::new();
    for (j, def) in cols.into_iter().enumerate() {
        let mut col: Vec<Option<f64>> = rows.iter().map(|r| r[j].0).collect();
        if def.coverage {
            let gaps: Vec<f64> = rows.iter().map(|r| r[j].1).collect();
            let (bad, what) = match cfg.coverage_rule {
                CoverageRule::PerRowAny => {
                    let worst = gaps.iter().cloned().fold(0.0, f64::max);
                    (worst > cfg.coverage_threshold, format!("coverage gap up to {:.1}%", 100.0 * worst))
                }
                CoverageRule::Aggregate => {
                    let mean = gaps.iter().sum::<f64>() / n as f64;
                    (mean > cfg.coverage_threshold, format!("mean coverage gap {:.1}%", 100.0 * mean))
                }
            };
            if bad {
                report.dropped.push(DroppedFeature {
                    name: def.name,
                    reason: format!("{what} exceeds {:.1}% of the buffer area", 100.0 * cfg.coverage_threshold),
                });
                continue;
            }
        }
        let missing = col.iter().filter(|v| v.is_none()).count();
        let mut prov = def.prov;
        if missing == n {
            report.dropped.push(DroppedFeature { name: def.name, reason: "missing in every row".into() });
            continue;
        }
        if missing > 0 {
            let frac = missing as f64 / n as f64;
            if frac >= cfg.imputation_threshold {
                report.dropped.push(DroppedFeature {
                    name: def.name,
                    reason: format!("missing in {:.2}% of rows", 100.0 * frac),
                });
                continue;
            }
            let mut present: Vec<f64> = col.iter().flatten().copied().collect();
            let med = median(&mut present);
            for v in col.iter_mut() {
                if v.is_none() {
                    *v = Some(med);
                }
            }
            prov.imputed = missing;
            report.imputed.push(ImputedFeature { name: def.name.clone(), cells: missing, median: med });
        }
        names.push(def.name);
        columns.push(col);
        provs.push(prov);
    }
    let ids = pools.iter().map(|p| p.0.clone()).collect();
    let m = FeatureMatrix::new(ids, names, columns, provs)?;
    Ok((m, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius_m: f64,
    pub n_features: usize,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

/// OLS MSE of `y` on the buffer features at each radius. Constant columns
/// are removed before fitting; a singular fit is recorded, not fatal.
pub fn radius_sweep(
    pools: &[(String, Point)],
    layers: &[SpatialLayer],
    cfg: &FeatureConfig,
    y: &[f64],
    radii: &[f64],
) -> Result<Vec<SweepRow>> {
    if radii.is_empty() {
        return Err(Error::Contract("radius sweep needs at least one radius".into()));
    }
    if y.len() != pools.len() {
        return Err(Error::Contract(format!("{} responses for {} pools", y.len(), pools.len())));
    }
    let mut out = Vec::new();
    for &r in radii {
        let (m, _) = assemble_matrix(pools, layers, cfg, r)?;
        let keep: Vec<usize> = (0..m.n_cols()).filter(|&j| m.column(j).iter().any(|v| *v != m.column(j)[0])).collect();
        let m = m.select_columns(&keep);
        let res = m.to_dmatrix().and_then(|x| ols_fit(&x, y));
        out.push(match res {
            Ok(f) => SweepRow { radius_m: r, n_features: m.n_cols(), mse: Some(f.mse), error: None },
            Err(e) => SweepRow { radius_m: r, n_features: m.n_cols(), mse: None, error: Some(e.to_string()) },
        });
    }
    Ok(out)
}

/// 100, 150, …, 800 m.
pub fn default_sweep_radii() -> Vec<f64> {
    (0..=14).map(|i| 100.0 + 50.0 * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::AttributeTable;
    use std::f64::consts::PI;

    fn poly_layer(name: &str, polys: Vec<Polygon>, attr: &str, vals: Vec<Option<f64>>) -> SpatialLayer {
        let mut t = AttributeTable::new(polys.len());
        t.insert_numeric(attr, vals).unwrap();
        SpatialLayer::from_polygons(name, polys, t).unwrap()
    }

    /// Raster oracle on 1 m cells: cell centres inside buffer and polygon.
    fn raster_share(b: &Buffer, p: &Polygon) -> f64 {
        let bb = b.bbox();
        let mut hits = 0usize;
        let mut y = bb.min_y.floor() + 0.5;
        while y < bb.max_y {
            let mut x = bb.min_x.floor() + 0.5;
            while x < bb.max_x {
                let q = Point::new(x, y);
                if b.contains(&q) && point_in_polygon(&q, p) {
                    hits += 1;
                }
                x += 1.0;
            }
            y += 1.0;
        }
        hits as f64
    }

    fn point_in_ring(q: &Point, ring: &[Point]) -> bool {
        let mut inside = false;
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.y > q.y) != (b.y > q.y) && q.x < a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y) {
                inside = !inside;
            }
        }
        inside
    }

    fn point_in_polygon(q: &Point, p: &Polygon) -> bool {
        point_in_ring(q, p.outer()) && !p.holes().iter().any(|h| point_in_ring(q, h))
    }

    #[test]
    fn count_inside_single_polygon() {
        let b = Buffer::new(Point::new(0.0, 0.0), 100.0).unwrap();
        let side = (4.0 * b.area()).sqrt();
        let p = Polygon::rectangle(-side / 2.0, -side / 2.0, side / 2.0, side / 2.0).unwrap();
        let l = poly_layer("n", vec![p], "N4", vec![Some(100.0)]);
        let a = apportion_count(&b, &l, "N4").unwrap();
        assert!((a.value.unwrap() - 25.0).abs() < 1e-9);
        assert!(a.coverage_gap < 1e-12);
    }

    #[test]
    fn count_with_no_overlap() {
        let b = Buffer::new(Point::new(0.0, 0.0), 100.0).unwrap();
        let l = poly_layer("n", vec![Polygon::rectangle(500.0, 500.0, 600.0, 600.0).unwrap()], "N4", vec![Some(5.0)]);
        let a = apportion_count(&b, &l, "N4").unwrap();
        assert_eq!(a.value, Some(0.0));
        assert_eq!(a.coverage_gap, 1.0);
        assert!(matches!(apportion_count(&b, &l, "nope"), Err(Error::Schema(_))));
    }

    #[test]
    fn straddling_two_polygons_matches_raster() {
        let b = Buffer::new(Point::new(0.3, 0.7), 60.0).unwrap();
        let p1 = Polygon::rectangle(-100.0, -100.0, 0.0, 100.0).unwrap();
        let p2 = Polygon::rectangle(0.0, -100.0, 100.0, 100.0).unwrap();
        let l = poly_layer("n", vec![p1.clone(), p2.clone()], "c", vec![Some(10.0), Some(30.0)]);
        let a = apportion_count(&b, &l, "c").unwrap().value.unwrap();
        let expected = 10.0 * intersection_area(&p1, &b) / p1.area() + 30.0 * intersection_area(&p2, &b) / p2.area();
        assert!((a - expected).abs() < 1e-9 * expected);
        let raster = 10.0 * raster_share(&b, &p1) / p1.area() + 30.0 * raster_share(&b, &p2) / p2.area();
        assert!((a - raster).abs() < 0.01 * raster);
    }

    #[test]
    fn weighted_mean() {
        let b = Buffer::new(Point::new(0.0, 0.0), 50.0).unwrap();
        // split the buffer's box at x = -25·k such that areas are 1:3
        let full = Polygon::rectangle(-1000.0, -1000.0, 1000.0, 1000.0).unwrap();
        let l = poly_layer("n", vec![full], "v", vec![Some(7.0)]);
        assert!((areal_mean(&b, &l, "v").unwrap().value.unwrap() - 7.0).abs() < 1e-12);
        // find the split by bisection so the left piece holds a quarter of the buffer
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let left = intersection_area(&Polygon::rectangle(-1000.0, -1000.0, mid, 1000.0).unwrap(), &b);
            if left < 0.25 * b.area() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let p1 = Polygon::rectangle(-1000.0, -1000.0, s, 1000.0).unwrap();
        let p2 = Polygon::rectangle(s, -1000.0, 1000.0, 1000.0).unwrap();
        let l = poly_layer("n", vec![p1, p2], "v", vec![Some(10.0), Some(20.0)]);
        assert!((areal_mean(&b, &l, "v").unwrap().value.unwrap() - 17.5).abs() < 1e-9);
    }

    #[test]
    fn poi_density_closed_form() {
        let c = Point::new(1000.0, 2000.0);
        let b = Buffer::new(c, 350.0).unwrap();
        let mut pts: Vec<Point> = (0..7).map(|k| Point::new(c.x + 30.0 * k as f64, c.y - 20.0 * k as f64)).collect();
        pts.push(Point::new(c.x + 1000.0, c.y));
        let f = poi_features(&c, &b, &pts);
        assert_eq!(f.min_dist, Some(0.0));
        let exact = 7.0 / (b.area() / 1e6);
        assert!((f.density - exact).abs() < 1e-9);
        let circle = 7.0 / (PI * 0.35 * 0.35);
        assert!((circle - 18.19).abs() < 0.005);
        assert!((f.density - circle).abs() < 0.0017 * circle + 1e-9);
        assert_eq!(poi_features(&c, &b, &[]).density, 0.0);
        assert_eq!(poi_features(&c, &b, &[]).min_dist, None);
    }

    #[test]
    fn land_use_inside_and_empty() {
        let b = Buffer::new(Point::new(0.0, 0.0), 100.0).unwrap();
        let mut t = AttributeTable::new(1);
        t.insert_text("class", vec![Some("parkland".into())]).unwrap();
        let l = SpatialLayer::from_polygons("lu", vec![Polygon::rectangle(-500.0, -500.0, 500.0, 500.0).unwrap()], t).unwrap();
        let m = land_use_areas(&b, &l, "class").unwrap();
        assert_eq!(m.len(), 1);
        assert!((m["parkland"] - b.area()).abs() < 1e-6);
        let far = Buffer::new(Point::new(5000.0, 0.0), 100.0).unwrap();
        assert!(land_use_areas(&far, &l, "class").unwrap().is_empty());
    }

    fn road_layer(lines: Vec<Polyline>, flows: Vec<f64>, types: Vec<&str>) -> SpatialLayer {
        let n = lines.len();
        let mut t = AttributeTable::new(n);
        for k in 1..=3 {
            t.insert_numeric(format!("TF{k}"), flows.iter().map(|f| Some(f / 3.0)).collect()).unwrap();
        }
        t.insert_text("type", types.iter().map(|s| Some(s.to_string())).collect()).unwrap();
        SpatialLayer::from_lines("roads", lines, t).unwrap()
    }

    fn spec() -> RoadSpec {
        let mut modes = IndexMap::new();
        modes.insert("cars".to_string(), vec!["TF1".to_string(), "TF2".to_string(), "TF3".to_string()]);
        RoadSpec { modes, type_attribute: Some("type".into()), types: vec!["primary".into(), "secondary".into(), "tertiary".into()] }
    }

    #[test]
    fn diametric_road() {
        let c = Point::new(0.0, 0.0);
        let b = Buffer::new(c, 100.0).unwrap();
        let line = Polyline::new(vec![Point::new(-500.0, 0.0), Point::new(500.0, 0.0)]).unwrap();
        let l = road_layer(vec![line], vec![900.0], vec!["primary"]);
        let f = road_traffic_features(&c, &b, &l, &spec()).unwrap();
        let chord = 200.0 * (PI / 64.0).cos();
        let km2 = b.area() / 1e6;
        assert!((f.road_density - chord / 1000.0 / km2).abs() < 1e-9);
        assert!((f.traffic_density - chord / 1000.0 * 900.0 / km2).abs() < 1e-6);
        assert_eq!(f.nearest_flow[0].1, Some(900.0));
        let d: Vec<Option<f64>> = f.nearest_type_dummies.iter().map(|x| x.1).collect();
        assert_eq!(d, vec![Some(1.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn empty_road_layer() {
        let c = Point::new(0.0, 0.0);
        let b = Buffer::new(c, 100.0).unwrap();
        let l = road_layer(vec![], vec![], vec![]);
        let f = road_traffic_features(&c, &b, &l, &spec()).unwrap();
        assert_eq!(f.road_density, 0.0);
        assert_eq!(f.traffic_density, 0.0);
        assert_eq!(f.nearest_flow[0].1, None);
        assert!(f.nearest_type_dummies.iter().all(|d| d.1.is_none()));
    }

    #[test]
    fn assemble_imputes_and_drops() {
        // 100 pools on a line inside one big polygon tiling.
        let pools: Vec<(String, Point)> = (0..100).map(|i| (format!("p{i}"), Point::new(1000.0 + 50.0 * i as f64, 1000.0))).collect();
        let big = vec![Polygon::rectangle(-5000.0, -5000.0, 20000.0, 5000.0).unwrap()];
        let mut t = AttributeTable::new(1);
        t.insert_numeric("N4", vec![Some(1000.0)]).unwrap();
        t.insert_numeric("gappy", vec![None]).unwrap();
        let neigh = SpatialLayer::from_polygons("neigh", big, t).unwrap();
        let cfg = FeatureConfig {
            sources: vec![
                SourceSpec::Count { layer: "neigh".into(), attribute: "N4".into(), name: None },
                SourceSpec::Average { layer: "neigh".into(), attribute: "gappy".into(), name: None },
            ],
            pool_distance: true,
            ..Default::default()
        };
        let (m, rep) = assemble_matrix(&pools, &[neigh], &cfg, 100.0).unwrap();
        assert_eq!(m.names(), &["N4".to_string(), "pool_min_dist".to_string()]);
        assert!(!m.has_missing());
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].name, "gappy");
        assert!(matches!(assemble_matrix(&[], &[], &cfg, 100.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn median_imputation_below_threshold() {
        // One pool out of 100 falls outside every polygon of an average layer
        // under the aggregate coverage rule: its value is missing and imputed.
        let mut pools: Vec<(String, Point)> = (0..99).map(|i| (format!("p{i}"), Point::new(50.0 * i as f64, 0.0))).collect();
        pools.push(("far".into(), Point::new(1e6, 1e6)));
        let polys = vec![
            Polygon::rectangle(-1000.0, -1000.0, 2450.0, 1000.0).unwrap(),
            Polygon::rectangle(2450.0, -1000.0, 6000.0, 1000.0).unwrap(),
        ];
        let l = poly_layer("n", polys, "v", vec![Some(1.0), Some(3.0)]);
        let cfg = FeatureConfig {
            sources: vec![SourceSpec::Average { layer: "n".into(), attribute: "v".into(), name: None }],
            coverage_rule: CoverageRule::Aggregate,
            ..Default::default()
        };
        let (m, rep) = assemble_matrix(&pools, &[l], &cfg, 100.0).unwrap();
        assert_eq!(m.n_cols(), 1);
        assert_eq!(m.provenance()[0].imputed, 1);
        assert_eq!(rep.imputed[0].cells, 1);
        assert_eq!(m.get(99, 0), Some(rep.imputed[0].median));
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg = FeatureConfig::from_toml(
            r#"
            coverage_rule = "aggregate"
            [[sources]]
            kind = "count"
            layer = "neighbourhoods"
            attribute = "N4"
            [[sources]]
            kind = "point-set"
            layer = "osm"
            attribute = "fclass"
            mapping = { supermarket = "shop", bakery = "shop", school = "education" }
            [[sources]]
            kind = "flow"
            layer = "roads"
            modes = { cars = ["TF1", "TF2", "TF3"], buses = ["TF4", "TF5", "TF6"] }
            type_attribute = "type"
            types = ["primary", "secondary", "tertiary"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.sources.len(), 3);
        assert_eq!(cfg.coverage_rule, CoverageRule::Aggregate);
        assert_eq!(cfg.coverage_threshold, 0.15);
        match &cfg.sources[2] {
            SourceSpec::Flow { road, .. } => assert_eq!(road.modes.keys().collect::<Vec<_>>(), vec!["cars", "buses"]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn default_radii() {
        let r = default_sweep_radii();
        assert_eq!(r.first(), Some(&100.0));
        assert_eq!(r.last(), Some(&800.0));
        assert_eq!(r.len(), 15);
    }
}
