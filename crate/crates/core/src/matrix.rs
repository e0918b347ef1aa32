//! The n × p feature matrix with per-column provenance, stored column-major.
//!
//! On disk a matrix is a CSV (`id` column then one column per feature,
//! empty cell = missing) plus a JSON sidecar holding the provenance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    /// Source layer or stage that produced the column.
    pub source: String,
    /// Attribute kind or derivation rule.
    pub kind: String,
    /// Number of cells filled by median imputation.
    #[serde(default)]
    pub imputed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, kind: impl Into<String>) -> Self {
        Provenance { source: source.into(), kind: kind.into(), imputed: 0, note: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    names: Vec<String>,
    /// Column-major; missing cells hold NaN and are flagged in `missing`.
    values: Vec<f64>,
    missing: Vec<bool>,
    provenance: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_rows: usize,
    features: Vec<SidecarColumn>,
}

#[derive(Serialize, Deserialize)]
struct SidecarColumn {
    name: String,
    #[serde(flatten)]
    provenance: Provenance,
}

impl FeatureMatrix {
    /// Build from columns; `None` marks a missing cell. Non-finite present
    /// values are rejected.
    pub fn new(
        ids: Vec<String>,
        names: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let n = ids.len();
        if names.len() != columns.len() || names.len() != provenance.len() {
            return Err(Error::Schema("feature names, columns and provenance differ in length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for nm in &names {
            if !seen.insert(nm.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {nm}")));
            }
        }
        let mut values = Vec::with_capacity(n * names.len());
        let mut missing = Vec::with_capacity(n * names.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Schema(format!("column {} has {} rows, expected {n}", names[j], col.len())));
            }
            for v in col {
                match v {
                    Some(x) if !x.is_finite() => {
                        return Err(Error::Data(format!("non-finite value in column {}", names[j])))
                    }
                    Some(x) => {
                        values.push(*x);
                        missing.push(false);
                    }
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(FeatureMatrix { ids, names, values, missing, provenance })
    }

    /// Complete matrix from dense columns with default provenance.
    pub fn from_columns(ids: Vec<String>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let prov = names.iter().map(|_| Provenance::new("input", "numeric")).collect();
        let cols = columns.into_iter().map(|c| c.into_iter().map(Some).collect()).collect();
        FeatureMatrix::new(ids, names, cols, prov)
    }

    /// Complete matrix from a dense nalgebra matrix, naming columns `x0..`
    /// and rows `0..` unless given.
    pub fn from_dmatrix(x: &DMatrix<f64>, names: Option<Vec<String>>) -> Result<Self> {
        let names = names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        let ids = (0..x.nrows()).map(|i| i.to_string()).collect();
        let cols = (0..x.ncols()).map(|j| x.column(j).iter().copied().collect()).collect();
        FeatureMatrix::from_columns(ids, names, cols)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn provenance_mut(&mut self, j: usize) -> &mut Provenance {
        &mut self.provenance[j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Raw column values; missing cells are NaN.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n_rows();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn column_missing(&self, j: usize) -> &[bool] {
        let n = self.n_rows();
        &self.missing[j * n..(j + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.n_rows() + i;
        if self.missing[k] {
            None
        } else {
            Some(self.values[k])
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = j * self.n_rows() + i;
        self.values[k] = v;
        self.missing[k] = false;
    }

    pub fn missing_count(&self, j: usize) -> usize {
        self.column_missing(j).iter().filter(|m| **m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|m| *m)
    }

    pub fn select_columns(&self, keep: &[usize]) -> FeatureMatrix {
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * keep.len());
        let mut missing = Vec::with_capacity(n * keep.len());
        for &j in keep {
            values.extend_from_slice(self.column(j));
            missing.extend_from_slice(self.column_missing(j));
        }
        FeatureMatrix {
            ids: self.ids.clone(),
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            values,
            missing,
            provenance: keep.iter().map(|&j| self.provenance[j].clone()).collect(),
        }
    }

    /// Matrix without the named columns; unknown names are ignored.
    pub fn without_columns(&self, drop: &[String]) -> FeatureMatrix {
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&j| !drop.contains(&self.names[j])).collect();
        self.select_columns(&keep)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let n = self.n_rows();
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        let mut missing = Vec::with_capacity(rows.len() * self.n_cols());
        for j in 0..self.n_cols() {
            for &i in rows {
                values.push(self.values[j * n + i]);
                missing.push(self.missing[j * n + i]);
            }
        }
        FeatureMatrix {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            names: self.names.clone(),
            values,
            missing,
            provenance: self.provenance.clone(),
        }
    }

    pub fn push_column(&mut self, name: impl Into<String>, col: Vec<Option<f64>>, prov: Provenance) -> Result<()> {
        let name = name.into();
        if self.column_index(&name).is_some() {
            return Err(Error::Schema(format!("duplicate feature name {name}")));
        }
        if col.len() != self.n_rows() {
            return Err(Error::Schema(format!("column {name} has {} rows, expected {}", col.len(), self.n_rows())));
        }
        for v in col {
            self.values.push(v.unwrap_or(f64::NAN));
            self.missing.push(v.is_none());
        }
        self.names.push(name);
        self.provenance.push(prov);
        Ok(())
    }

    /// Dense copy for numerical work; fails if any cell is missing.
    pub fn to_dmatrix(&self) -> Result<DMatrix<f64>> {
        if let Some(j) = (0..self.n_cols()).find(|&j| self.missing_count(j) > 0) {
            return Err(Error::Data(format!("feature {} has missing values", self.names[j])));
        }
        Ok(DMatrix::from_column_slice(self.n_rows(), self.n_cols(), &self.values))
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.ids[i].clone()];
            for j in 0..self.n_cols() {
                rec.push(self.get(i, j).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        let sidecar = Sidecar {
            n_rows: self.n_rows(),
            features: self
                .names
                .iter()
                .zip(&self.provenance)
                .map(|(n, p)| SidecarColumn { name: n.clone(), provenance: p.clone() })
                .collect(),
        };
        fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    /// Read a matrix CSV; provenance comes from the sidecar when present.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("id") {
            return Err(Error::Schema(format!("{}: first column must be id", path.display())));
        }
        let names: Vec<String> = header[1..].to_vec();
        let mut ids = Vec::new();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Schema(format!("{}: row {} has {} fields", path.display(), row + 1, rec.len())));
            }
            ids.push(rec[0].to_string());
            for (j, col) in cols.iter_mut().enumerate() {
                let cell = rec[j + 1].trim();
                col.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!("{}: bad number {cell:?} in row {}", path.display(), row + 1))
                    })?)
                });
            }
        }
        let side = Self::sidecar_path(path);
        let provenance = if side.exists() {
            let s: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
            if s.features.len() != names.len() || s.features.iter().zip(&names).any(|(c, n)| &c.name != n) {
                return Err(Error::Schema(format!("{}: sidecar does not match CSV columns", side.display())));
            }
            s.features.into_iter().map(|c| c.provenance).collect()
        } else {
            names.iter().map(|_| Provenance::new("input", "numeric")).collect()
        };
        FeatureMatrix::new(ids, names, cols, provenance)
    }
}

/// Response vector saved next to a matrix: `id,<name>` rows.
pub fn write_vector(path: impl AsRef<Path>, ids: &[String], name: &str, y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", name])?;
    for (id, v) in ids.iter().zip(y) {
        w.write_record([id.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or("").to_string());
        let v = rec.get(1).unwrap_or("").trim();
        y.push(v.parse::<f64>().map_err(|_| Error::Data(format!("bad response value {v:?}")))?);
    }
    Ok((ids, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        let mut p = vec![Provenance::new("neigh", "count"), Provenance::new("poi", "point-set")];
        p[1].imputed = 1;
        FeatureMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["N4".into(), "shop_density".into()],
            vec![vec![Some(1.0), None, Some(0.1 + 0.2)], vec![Some(-3.5e-12), Some(7.0), Some(1e300)]],
            p,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let m = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        m.write_csv(&path).unwrap();
        let back = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(back.ids(), m.ids());
        assert_eq!(back.names(), m.names());
        assert_eq!(back.provenance(), m.provenance());
        for j in 0..m.n_cols() {
            for i in 0..m.n_rows() {
                assert_eq!(back.get(i, j).map(f64::to_bits), m.get(i, j).map(f64::to_bits));
            }
        }
    }

    #[test]
    fn selection_and_dense_copy() {
        let m = sample();
        assert!(m.to_dmatrix().is_err());
        let s = m.select_columns(&[1]).select_rows(&[2, 0]);
        let d = s.to_dmatrix().unwrap();
        assert_eq!(d[(0, 0)], 1e300);
        assert_eq!(s.ids(), &["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn rejects_duplicates() {
        let r = FeatureMatrix::from_columns(vec!["0".into()], vec!["a".into(), "a".into()], vec![vec![1.0], vec![2.0]]);
        assert!(matches!(r, Err(Error::Schema(_))));
    }
}
