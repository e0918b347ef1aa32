//! Spatial layers: geometries plus a columnar attribute table, with
//! GeoJSON and point-CSV ingestion.
//!
//! Coordinates must already be projected to a planar CRS in metres; no
//! reprojection happens here. Manual curation of anomalous areas (water,
//! borders) is expected to have happened before ingestion.

use indexmap::IndexMap;
use serde_json::{Map, Value as Json};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon, Polyline};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Columnar attribute table; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeTable {
    n_rows: usize,
    columns: IndexMap<String, Column>,
}

impl AttributeTable {
    pub fn new(n_rows: usize) -> Self {
        AttributeTable { n_rows, columns: IndexMap::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, column: Column) -> Result<()> {
        let name = name.into();
        if column.len() != self.n_rows {
            return Err(Error::Schema(format!(
                "column {name} has {} rows, table has {}",
                column.len(),
                self.n_rows
            )));
        }
        self.columns.insert(name, column);
        Ok(())
    }

    pub fn insert_numeric(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        self.insert(name, Column::Numeric(values))
    }

    pub fn insert_text(&mut self, name: impl Into<String>, values: Vec<Option<String>>) -> Result<()> {
        self.insert(name, Column::Text(values))
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.columns.get(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Text(_)) => Err(Error::Schema(format!("attribute {name} is not numeric"))),
            None => Err(Error::Schema(format!("attribute {name} not found"))),
        }
    }

    pub fn numeric_mut(&mut self, name: &str) -> Result<&mut Vec<Option<f64>>> {
        match self.columns.get_mut(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Text(_)) => Err(Error::Schema(format!("attribute {name} is not numeric"))),
            None => Err(Error::Schema(format!("attribute {name} not found"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[Option<String>]> {
        match self.columns.get(name) {
            Some(Column::Text(v)) => Ok(v),
            Some(Column::Numeric(_)) => Err(Error::Schema(format!("attribute {name} is not text"))),
            None => Err(Error::Schema(format!("attribute {name} not found"))),
        }
    }

    /// Row value rendered as a category label, for text or numeric columns.
    pub fn label(&self, name: &str, row: usize) -> Result<Option<String>> {
        match self.columns.get(name) {
            Some(Column::Text(v)) => Ok(v[row].clone()),
            Some(Column::Numeric(v)) => Ok(v[row].map(|x| x.to_string())),
            None => Err(Error::Schema(format!("attribute {name} not found"))),
        }
    }

    fn row_json(&self, row: usize) -> Map<String, Json> {
        let mut m = Map::new();
        for (name, col) in &self.columns {
            let v = match col {
                Column::Numeric(v) => v[row]
                    .and_then(serde_json::Number::from_f64)
                    .map(Json::Number)
                    .unwrap_or(Json::Null),
                Column::Text(v) => v[row].clone().map(Json::String).unwrap_or(Json::Null),
            };
            m.insert(name.clone(), v);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Point,
    Line,
    Polygon,
}

/// Geometry of one layer row. Multi-geometries keep all their parts.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Point(Point),
    Lines(Vec<Polyline>),
    Polygons(Vec<Polygon>),
}

impl Shape {
    pub fn kind(&self) -> GeometryKind {
        match self {
            Shape::Point(_) => GeometryKind::Point,
            Shape::Lines(_) => GeometryKind::Line,
            Shape::Polygons(_) => GeometryKind::Polygon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLayer {
    pub name: String,
    kind: GeometryKind,
    shapes: Vec<Shape>,
    pub attributes: AttributeTable,
}

impl SpatialLayer {
    pub fn new(name: impl Into<String>, kind: GeometryKind, shapes: Vec<Shape>, attributes: AttributeTable) -> Result<Self> {
        let name = name.into();
        if shapes.iter().any(|s| s.kind() != kind) {
            return Err(Error::Schema(format!("layer {name} mixes geometry types")));
        }
        if attributes.n_rows() != shapes.len() {
            return Err(Error::Schema(format!(
                "layer {name}: {} geometries but {} attribute rows",
                shapes.len(),
                attributes.n_rows()
            )));
        }
        Ok(SpatialLayer { name, kind, shapes, attributes })
    }

    pub fn from_points(name: impl Into<String>, points: Vec<Point>, attributes: AttributeTable) -> Result<Self> {
        SpatialLayer::new(name, GeometryKind::Point, points.into_iter().map(Shape::Point).collect(), attributes)
    }

    pub fn from_polygons(name: impl Into<String>, polygons: Vec<Polygon>, attributes: AttributeTable) -> Result<Self> {
        let shapes = polygons.into_iter().map(|p| Shape::Polygons(vec![p])).collect();
        SpatialLayer::new(name, GeometryKind::Polygon, shapes, attributes)
    }

    pub fn from_lines(name: impl Into<String>, lines: Vec<Polyline>, attributes: AttributeTable) -> Result<Self> {
        let shapes = lines.into_iter().map(|l| Shape::Lines(vec![l])).collect();
        SpatialLayer::new(name, GeometryKind::Line, shapes, attributes)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Point coordinates of a point layer.
    pub fn points(&self) -> Result<Vec<Point>> {
        self.shapes
            .iter()
            .map(|s| match s {
                Shape::Point(p) => Ok(*p),
                _ => Err(Error::Schema(format!("layer {} is not a point layer", self.name))),
            })
            .collect()
    }

    pub fn read_geojson(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::parse_geojson(&text, name)
    }

    pub fn parse_geojson(text: &str, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let gj: geojson::GeoJson = text.parse().map_err(|e: geojson::Error| Error::GeoJson(e.to_string()))?;
        let fc = match gj {
            geojson::GeoJson::FeatureCollection(fc) => fc,
            _ => return Err(Error::GeoJson(format!("layer {name}: expected a FeatureCollection"))),
        };
        let mut shapes = Vec::with_capacity(fc.features.len());
        let mut props = Vec::with_capacity(fc.features.len());
        for (i, f) in fc.features.into_iter().enumerate() {
            let g = f
                .geometry
                .ok_or_else(|| Error::GeoJson(format!("layer {name}: feature {i} has no geometry")))?;
            shapes.push(shape_from_geojson(&g.value).map_err(|e| Error::GeoJson(format!("layer {name}, feature {i}: {e}")))?);
            props.push(f.properties.unwrap_or_default());
        }
        let kind = shapes.first().map(Shape::kind).unwrap_or(GeometryKind::Polygon);
        let attributes = table_from_json_rows(&props)?;
        SpatialLayer::new(name, kind, shapes, attributes)
    }

    pub fn to_geojson_string(&self) -> String {
        let features = self
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| geojson::Feature {
                bbox: None,
                geometry: Some(geojson::Geometry::new(shape_to_geojson(s))),
                id: None,
                properties: Some(self.attributes.row_json(i)),
                foreign_members: None,
            })
            .collect();
        geojson::GeoJson::FeatureCollection(geojson::FeatureCollection { bbox: None, features, foreign_members: None })
            .to_string()
    }

    pub fn write_geojson(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_geojson_string())?;
        Ok(())
    }

    /// Point layer from CSV with coordinate columns `x_col`, `y_col`; the
    /// remaining columns become attributes (numeric when every non-empty
    /// cell parses as a number).
    pub fn read_points_csv(path: impl AsRef<Path>, name: impl Into<String>, x_col: &str, y_col: &str) -> Result<Self> {
        let name = name.into();
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let xi = headers.iter().position(|h| h == x_col).ok_or_else(|| Error::Schema(format!("{name}: no column {x_col}")))?;
        let yi = headers.iter().position(|h| h == y_col).ok_or_else(|| Error::Schema(format!("{name}: no column {y_col}")))?;
        let mut points = Vec::new();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Data(format!("{name}: bad coordinate in row {}", row + 1)))
            };
            points.push(Point::new(parse(xi)?, parse(yi)?));
            for (c, col) in raw.iter_mut().enumerate() {
                col.push(rec.get(c).unwrap_or("").to_string());
            }
        }
        let mut table = AttributeTable::new(points.len());
        for (c, h) in headers.iter().enumerate() {
            if c == xi || c == yi {
                continue;
            }
            table.insert(h.clone(), infer_column(&raw[c]))?;
        }
        SpatialLayer::from_points(name, points, table)
    }
}

/// Numeric column when every non-empty cell parses as f64, else text.
pub fn infer_column(cells: &[String]) -> Column {
    let parsed: Vec<Option<Option<f64>>> = cells
        .iter()
        .map(|s| {
            let t = s.trim();
            if t.is_empty() {
                Some(None)
            } else {
                t.parse::<f64>().ok().map(Some)
            }
        })
        .collect();
    if parsed.iter().all(Option::is_some) {
        Column::Numeric(parsed.into_iter().map(|v| v.flatten()).collect())
    } else {
        Column::Text(
            cells
                .iter()
                .map(|s| if s.trim().is_empty() { None } else { Some(s.clone()) })
                .collect(),
        )
    }
}

fn table_from_json_rows(rows: &[Map<String, Json>]) -> Result<AttributeTable> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        for k in r.keys() {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
    }
    let mut table = AttributeTable::new(rows.len());
    for name in names {
        let cells: Vec<&Json> = rows.iter().map(|r| r.get(&name).unwrap_or(&Json::Null)).collect();
        let numeric = cells.iter().all(|v| matches!(v, Json::Null | Json::Number(_) | Json::Bool(_)));
        let column = if numeric {
            Column::Numeric(
                cells
                    .iter()
                    .map(|v| match v {
                        Json::Number(n) => n.as_f64(),
                        Json::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
                        _ => None,
                    })
                    .collect(),
            )
        } else {
            Column::Text(
                cells
                    .iter()
                    .map(|v| match v {
                        Json::Null => None,
                        Json::String(s) => Some(s.clone()),
                        other => Some(other.to_string()),
                    })
                    .collect(),
            )
        };
        table.insert(name, column)?;
    }
    Ok(table)
}

fn position(p: &[f64]) -> std::result::Result<Point, String> {
    if p.len() < 2 {
        return Err("position needs two coordinates".into());
    }
    Ok(Point::new(p[0], p[1]))
}

fn ring(r: &[Vec<f64>]) -> std::result::Result<Vec<Point>, String> {
    r.iter().map(|p| position(p)).collect()
}

fn polygon(rings: &[Vec<Vec<f64>>]) -> std::result::Result<Polygon, String> {
    let (outer, holes) = rings.split_first().ok_or("polygon without rings")?;
    let holes = holes.iter().map(|h| ring(h)).collect::<std::result::Result<Vec<_>, _>>()?;
    Polygon::new(ring(outer)?, holes).map_err(|e| e.to_string())
}

fn polyline(coords: &[Vec<f64>]) -> std::result::Result<Polyline, String> {
    Polyline::new(ring(coords)?).map_err(|e| e.to_string())
}

fn shape_from_geojson(v: &geojson::Value) -> std::result::Result<Shape, String> {
    use geojson::Value as V;
    Ok(match v {
        V::Point(p) => Shape::Point(position(p)?),
        V::LineString(l) => Shape::Lines(vec![polyline(l)?]),
        V::MultiLineString(ls) => Shape::Lines(ls.iter().map(|l| polyline(l)).collect::<std::result::Result<_, _>>()?),
        V::Polygon(p) => Shape::Polygons(vec![polygon(p)?]),
        V::MultiPolygon(ps) => Shape::Polygons(ps.iter().map(|p| polygon(p)).collect::<std::result::Result<_, _>>()?),
        V::MultiPoint(_) => return Err("MultiPoint is not supported; split into Point features".into()),
        V::GeometryCollection(_) => return Err("GeometryCollection is not supported".into()),
    })
}

fn shape_to_geojson(s: &Shape) -> geojson::Value {
    use geojson::Value as V;
    let pos = |p: &Point| vec![p.x, p.y];
    let rings = |p: &Polygon| {
        std::iter::once(p.outer())
            .chain(p.holes().iter().map(Vec::as_slice))
            .map(|r| r.iter().map(pos).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    match s {
        Shape::Point(p) => V::Point(pos(p)),
        Shape::Lines(ls) if ls.len() == 1 => V::LineString(ls[0].vertices().iter().map(pos).collect()),
        Shape::Lines(ls) => V::MultiLineString(ls.iter().map(|l| l.vertices().iter().map(pos).collect()).collect()),
        Shape::Polygons(ps) if ps.len() == 1 => V::Polygon(rings(&ps[0])),
        Shape::Polygons(ps) => V::MultiPolygon(ps.iter().map(rings).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature",
         "geometry": {"type": "Polygon", "coordinates": [[[0,0],[0,10],[10,10],[10,0],[0,0]]]},
         "properties": {"N4": 120, "name": "a", "flag": true}},
        {"type": "Feature",
         "geometry": {"type": "MultiPolygon", "coordinates": [[[[20,0],[30,0],[30,10],[20,10],[20,0]]]]},
         "properties": {"N4": null, "name": "b"}}
      ]
    }"#;

    #[test]
    fn parses_polygons_and_types_columns() {
        let layer = SpatialLayer::parse_geojson(SAMPLE, "neigh").unwrap();
        assert_eq!(layer.kind(), GeometryKind::Polygon);
        assert_eq!(layer.len(), 2);
        assert_eq!(layer.attributes.numeric("N4").unwrap(), &[Some(120.0), None]);
        assert_eq!(layer.attributes.numeric("flag").unwrap(), &[Some(1.0), None]);
        assert_eq!(layer.attributes.text("name").unwrap()[1].as_deref(), Some("b"));
        // clockwise input ring got reoriented
        match &layer.shapes()[0] {
            Shape::Polygons(ps) => assert!(crate::geometry::signed_area(ps[0].outer()) > 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn geojson_round_trip() {
        let layer = SpatialLayer::parse_geojson(SAMPLE, "neigh").unwrap();
        let again = SpatialLayer::parse_geojson(&layer.to_geojson_string(), "neigh").unwrap();
        assert_eq!(again.shapes(), layer.shapes());
        for name in layer.attributes.names() {
            assert_eq!(again.attributes.column(name), layer.attributes.column(name));
        }
    }

    #[test]
    fn rejects_mixed_and_bad_input() {
        let mixed = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","geometry":{"type":"Point","coordinates":[0,0]},"properties":{}},
          {"type":"Feature","geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]},"properties":{}}]}"#;
        assert!(matches!(SpatialLayer::parse_geojson(mixed, "m"), Err(Error::Schema(_))));
        assert!(SpatialLayer::parse_geojson("{\"type\":\"Point\",\"coordinates\":[0,0]}", "x").is_err());
    }

    #[test]
    fn points_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poi.csv");
        fs::write(&path, "x,y,category,score\n1,2,shop,3.5\n4,5,cafe,\n").unwrap();
        let layer = SpatialLayer::read_points_csv(&path, "poi", "x", "y").unwrap();
        assert_eq!(layer.points().unwrap(), vec![Point::new(1.0, 2.0), Point::new(4.0, 5.0)]);
        assert_eq!(layer.attributes.numeric("score").unwrap(), &[Some(3.5), None]);
        assert_eq!(layer.attributes.text("category").unwrap()[0].as_deref(), Some("shop"));
    }
}
