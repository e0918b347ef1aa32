//! Per-pool usage aggregates from charging events, the response-metric
//! variants and the through-origin decomposition models y = k·x.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::regression::ols_fit;

/// One charging session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub pool_id: String,
    pub point_id: String,
    pub start_time: String,
    pub end_time: String,
    pub connection_h: f64,
    pub charging_h: f64,
    pub idle_h: f64,
    pub energy_kwh: f64,
    pub rfid_count: u32,
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e| Error::Schema(format!("{}: event row {}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolUsage {
    pub pool_id: String,
    /// nᵢ
    pub n_transactions: usize,
    /// tᵢ: mean charging hours per transaction.
    pub avg_charging_time: f64,
    /// pᵢ: total energy over total charging time, kW.
    pub avg_power: f64,
    /// yᵢ: total energy, kWh.
    pub energy: f64,
    pub n_points: usize,
    pub max_point_energy: f64,
    /// Summed charging capacity of the pool's points, kW, when known.
    pub capacity: Option<f64>,
}

impl PoolUsage {
    pub fn energy_per_point(&self) -> f64 {
        self.energy / self.n_points as f64
    }

    pub fn energy_per_capacity(&self) -> Option<f64> {
        self.capacity.map(|c| self.energy / c)
    }
}

/// The four response variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Energy,
    EnergyPerPoint,
    MaxPointEnergy,
    EnergyPerCapacity,
}

pub const METRICS: [Metric; 4] = [Metric::Energy, Metric::EnergyPerPoint, Metric::MaxPointEnergy, Metric::EnergyPerCapacity];

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Energy => "energy",
            Metric::EnergyPerPoint => "energy_per_point",
            Metric::MaxPointEnergy => "max_point_energy",
            Metric::EnergyPerCapacity => "energy_per_capacity",
        }
    }

    pub fn value(self, u: &PoolUsage) -> Option<f64> {
        match self {
            Metric::Energy => Some(u.energy),
            Metric::EnergyPerPoint => Some(u.energy_per_point()),
            Metric::MaxPointEnergy => Some(u.max_point_energy),
            Metric::EnergyPerCapacity => u.energy_per_capacity(),
        }
    }
}

/// Aggregates events per pool (sorted by pool id). `capacities` gives
/// each pool's capacity in kW.
pub fn pool_metrics(events: &[Event], capacities: Option<&BTreeMap<String, f64>>) -> Result<Vec<PoolUsage>> {
    if events.is_empty() {
        return Err(Error::EmptyInput("event log is empty".into()));
    }
    let mut bad = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let neg = [e.connection_h, e.charging_h, e.idle_h, e.energy_kwh].iter().any(|v| !(*v >= 0.0));
        if neg || (e.charging_h == 0.0 && e.energy_kwh > 0.0) {
            bad.push(format!("row {} (pool {}, point {})", i + 1, e.pool_id, e.point_id));
        }
    }
    if !bad.is_empty() {
        let shown: Vec<&str> = bad.iter().take(20).map(String::as_str).collect();
        return Err(Error::Data(format!(
            "{} event(s) with negative values or energy without charging time: {}{}",
            bad.len(),
            shown.join(", "),
            if bad.len() > 20 { ", …" } else { "" }
        )));
    }
    struct Acc {
        n: usize,
        hours: f64,
        energy: f64,
        points: BTreeMap<String, f64>,
    }
    let mut pools: BTreeMap<&str, Acc> = BTreeMap::new();
    for e in events {
        let a = pools.entry(&e.pool_id).or_insert_with(|| Acc { n: 0, hours: 0.0, energy: 0.0, points: BTreeMap::new() });
        a.n += 1;
        a.hours += e.charging_h;
        a.energy += e.energy_kwh;
        *a.points.entry(e.point_id.clone()).or_insert(0.0) += e.energy_kwh;
    }
    Ok(pools
        .into_iter()
        .map(|(id, a)| PoolUsage {
            pool_id: id.to_string(),
            n_transactions: a.n,
            avg_charging_time: a.hours / a.n as f64,
            avg_power: if a.hours > 0.0 { a.energy / a.hours } else { 0.0 },
            energy: a.energy,
            n_points: a.points.len(),
            max_point_energy: a.points.values().cloned().fold(0.0, f64::max),
            capacity: capacities.and_then(|c| c.get(id).copied()),
        })
        .collect())
}

pub fn write_usage_csv(path: impl AsRef<Path>, usages: &[PoolUsage]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "pool_id", "n_transactions", "avg_charging_time", "avg_power", "energy", "n_points", "max_point_energy", "capacity",
        "energy_per_point", "energy_per_capacity",
    ])?;
    for u in usages {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            u.pool_id.clone(),
            u.n_transactions.to_string(),
            u.avg_charging_time.to_string(),
            u.avg_power.to_string(),
            u.energy.to_string(),
            u.n_points.to_string(),
            u.max_point_energy.to_string(),
            opt(u.capacity),
            u.energy_per_point().to_string(),
            opt(u.energy_per_capacity()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum R2Convention {
    /// 1 − RSS/Σy², the usual convention for fits without intercept.
    #[default]
    Uncentered,
    /// 1 − RSS/Σ(y − ȳ)².
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleModel {
    pub model: String,
    pub k: Option<f64>,
    pub r_squared: Option<f64>,
    /// Statistics of the per-pool ratio y/x over pools with x > 0.
    pub ratio_mean: Option<f64>,
    pub ratio_sd: Option<f64>,
    pub ratio_cv: Option<f64>,
    pub skipped: Option<String>,
}

pub const SIMPLE_MODELS: [&str; 6] = ["y=kn", "y=kt", "y=kp", "y=k(t∘p)", "y=k(n∘p)", "y=k(n∘t)"];

fn regressor(model: usize, u: &PoolUsage) -> f64 {
    let (n, t, p) = (u.n_transactions as f64, u.avg_charging_time, u.avg_power);
    match model {
        0 => n,
        1 => t,
        2 => p,
        3 => t * p,
        4 => n * p,
        _ => n * t,
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// The six through-origin fits with k̂ = ⟨x, y⟩/⟨x, x⟩.
pub fn simple_models(usages: &[PoolUsage], convention: R2Convention) -> Result<Vec<SimpleModel>> {
    if usages.len() < 2 {
        return Err(Error::Contract(format!("simple models need at least 2 pools (got {})", usages.len())));
    }
    let y: Vec<f64> = usages.iter().map(|u| u.energy).collect();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss = match convention {
        R2Convention::Uncentered => y.iter().map(|v| v * v).sum::<f64>(),
        R2Convention::Centered => y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>(),
    };
    let mut out = Vec::new();
    for (m, name) in SIMPLE_MODELS.iter().enumerate() {
        let x: Vec<f64> = usages.iter().map(|u| regressor(m, u)).collect();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        if xx == 0.0 {
            out.push(SimpleModel {
                model: name.to_string(),
                k: None,
                r_squared: None,
                ratio_mean: None,
                ratio_sd: None,
                ratio_cv: None,
                skipped: Some("regressor is zero for every pool".into()),
            });
            continue;
        }
        let k = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / xx;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - k * a).powi(2)).sum();
        let ratios: Vec<f64> = x.iter().zip(&y).filter(|(a, _)| **a > 0.0).map(|(a, b)| b / a).collect();
        let (mean, sd) = mean_sd(&ratios);
        out.push(SimpleModel {
            model: name.to_string(),
            k: Some(k),
            r_squared: (tss > 0.0).then(|| 1.0 - rss / tss),
            ratio_mean: Some(mean),
            ratio_sd: Some(sd),
            ratio_cv: (mean != 0.0).then(|| sd / mean),
            skipped: None,
        });
    }
    Ok(out)
}

pub fn write_models_csv(path: impl AsRef<Path>, models: &[SimpleModel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "k", "r_squared", "ratio_mean", "ratio_sd", "ratio_cv", "skipped"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in models {
        w.write_record([
            m.model.clone(),
            opt(m.k),
            opt(m.r_squared),
            opt(m.ratio_mean),
            opt(m.ratio_sd),
            opt(m.ratio_cv),
            m.skipped.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: Metric,
    pub r_squared: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub fits: Vec<MetricFit>,
    /// Pearson correlations among the available metrics, in `METRICS` order.
    pub metrics: Vec<Metric>,
    pub correlations: Vec<Vec<f64>>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// OLS R² of each log-metric on `x` (rows aligned with `usages`), and the
/// correlations among the metrics themselves.
pub fn response_metric_comparison(usages: &[PoolUsage], x: &DMatrix<f64>) -> Result<MetricComparison> {
    if x.nrows() != usages.len() {
        return Err(Error::Contract(format!("{} feature rows for {} pools", x.nrows(), usages.len())));
    }
    let mut fits = Vec::new();
    let mut available = Vec::new();
    let mut values = Vec::new();
    for m in METRICS {
        let v: Option<Vec<f64>> = usages.iter().map(|u| m.value(u)).collect();
        let Some(v) = v else {
            fits.push(MetricFit { metric: m, r_squared: None, error: Some("not available for every pool".into()) });
            continue;
        };
        available.push(m);
        if v.iter().any(|e| !(*e > 0.0)) {
            fits.push(MetricFit { metric: m, r_squared: None, error: Some("log undefined for non-positive values".into()) });
        } else {
            let ly: Vec<f64> = v.iter().map(|e| e.ln()).collect();
            match ols_fit(x, &ly) {
                Ok(f) => fits.push(MetricFit { metric: m, r_squared: Some(f.r_squared), error: None }),
                Err(e) => fits.push(MetricFit { metric: m, r_squared: None, error: Some(e.to_string()) }),
            }
        }
        values.push(v);
    }
    let correlations = values.iter().map(|a| values.iter().map(|b| pearson(a, b)).collect()).collect();
    Ok(MetricComparison { fits, metrics: available, correlations })
}

/// Pool ids seen in the events, sorted.
pub fn pool_ids(events: &[Event]) -> BTreeSet<String> {
    events.iter().map(|e| e.pool_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ev(pool: &str, point: &str, kwh: f64, hours: f64) -> Event {
        Event {
            pool_id: pool.into(),
            point_id: point.into(),
            start_time: "2015-01-01T08:00:00".into(),
            end_time: "2015-01-01T12:00:00".into(),
            connection_h: hours + 1.0,
            charging_h: hours,
            idle_h: 1.0,
            energy_kwh: kwh,
            rfid_count: 1,
        }
    }

    #[test]
    fn single_event() {
        let u = pool_metrics(&[ev("a", "1", 5.0, 2.0)], None).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].n_transactions, 1);
        assert_eq!(u[0].avg_charging_time, 2.0);
        assert_eq!(u[0].avg_power, 2.5);
        assert_eq!(u[0].energy, 5.0);
    }

    #[test]
    fn two_identical_points() {
        let u = pool_metrics(&[ev("a", "1", 5.0, 2.0), ev("a", "2", 5.0, 2.0)], None).unwrap();
        assert_eq!(u[0].energy_per_point(), u[0].energy / 2.0);
        assert_eq!(u[0].max_point_energy, 5.0);
    }

    #[test]
    fn zero_time_with_energy_rejected() {
        let e = pool_metrics(&[ev("a", "1", 5.0, 2.0), ev("b", "1", 3.0, 0.0)], None).unwrap_err();
        assert!(matches!(e, Error::Data(ref m) if m.contains("row 2")));
    }

    #[test]
    fn constant_tp_gives_exact_kn() {
        let mut events = Vec::new();
        for (i, n) in [1usize, 3, 4, 7].iter().enumerate() {
            for _ in 0..*n {
                events.push(ev(&format!("p{i}"), "1", 6.0, 2.0));
            }
        }
        let u = pool_metrics(&events, None).unwrap();
        let m = simple_models(&u, R2Convention::Uncentered).unwrap();
        assert_eq!(m[0].k, Some(6.0));
        assert!((m[0].r_squared.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m[0].ratio_cv, Some(0.0));
    }

    #[test]
    fn k_matches_grid_search() {
        let events = vec![ev("a", "1", 10.0, 2.0), ev("a", "1", 4.0, 1.0), ev("b", "1", 7.0, 3.0), ev("c", "1", 20.0, 2.5)];
        let u = pool_metrics(&events, None).unwrap();
        let m = simple_models(&u, R2Convention::Uncentered).unwrap();
        let k = m[1].k.unwrap();
        let rss = |k: f64| u.iter().map(|u| (u.energy - k * u.avg_charging_time).powi(2)).sum::<f64>();
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        let mut c = 0.0;
        while c < 20.0 {
            if rss(c) < best {
                best = rss(c);
                arg = c;
            }
            c += 1e-6;
        }
        assert!((k - arg).abs() < 1e-6);
        for m in &m {
            let (mean, sd) = (m.ratio_mean.unwrap(), m.ratio_sd.unwrap());
            assert!((m.ratio_cv.unwrap() - sd / mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_regressor_skipped() {
        let mut a = ev("a", "1", 0.0, 0.0);
        a.connection_h = 1.0;
        let u = pool_metrics(&[a.clone(), Event { pool_id: "b".into(), ..a }], None).unwrap();
        let m = simple_models(&u, R2Convention::Uncentered).unwrap();
        assert!(m[0].skipped.is_none());
        assert!(m[1..].iter().all(|m| m.skipped.is_some()));
    }

    #[test]
    fn single_point_metrics_coincide() {
        let events: Vec<Event> = (0..12).map(|i| ev(&format!("p{i}"), "1", 5.0 + i as f64 * 3.0, 2.0)).collect();
        let u = pool_metrics(&events, None).unwrap();
        let x = DMatrix::from_fn(12, 1, |i, _| (i as f64).sin());
        let c = response_metric_comparison(&u, &x).unwrap();
        assert_eq!(c.metrics, vec![Metric::Energy, Metric::EnergyPerPoint, Metric::MaxPointEnergy]);
        assert!((c.correlations[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(c.fits[0].r_squared, c.fits[1].r_squared);
        assert!(c.fits[3].error.is_some());
    }

    #[test]
    fn events_roundtrip() {
        let events = vec![ev("a", "1", 5.0, 2.0), ev("b", "2", 1.5, 0.5)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_events(&p, &events).unwrap();
        assert_eq!(read_events(&p).unwrap(), events);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("pool_id,point_id,start_time,end_time,connection_h,charging_h,idle_h,energy_kwh,rfid_count"));
    }
}
