//! Path-quality metrics: ranked regret (RRPI), centre of mass and regression
//! of (length, regret) scatters, mean Hausdorff alignment and mask IoU.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::canonical_name;
use crate::mask::distance_transform;
use crate::raster::{BinaryMask, Grid, GridShape, Pixel, RasterError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("class {0:?} has no rank")]
    MissingRank(String),
    #[error("rank for {class:?} must be at least 1")]
    InvalidRank { class: String },
    #[error("pixel {pixel:?} lies outside the {shape} grid")]
    OutOfBounds { pixel: Pixel, shape: GridShape },
    #[error("semantic map uses class id {0} which has no name")]
    UnknownId(u32),
    #[error("no points")]
    EmptyPoints,
    #[error("slope is undefined when every length is equal")]
    UndefinedSlope,
    #[error("system path is empty")]
    EmptyPath,
    #[error("no human reference paths")]
    EmptyHumans,
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Preference rank per class; 1 is most preferred.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankMap(BTreeMap<String, u32>);

impl RankMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Result<Self, MetricsError> {
        let mut map = Self::new();
        for (name, rank) in pairs {
            map.insert(name, rank)?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, class: &str, rank: u32) -> Result<(), MetricsError> {
        if rank == 0 {
            return Err(MetricsError::InvalidRank { class: class.to_string() });
        }
        self.0.insert(canonical_name(class), rank);
        Ok(())
    }

    pub fn get(&self, class: &str) -> Option<u32> {
        self.0.get(&canonical_name(class)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-pixel class ids with an id-to-name table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SemanticMapRepr", into = "SemanticMapRepr")]
pub struct SemanticMap {
    pub names: Vec<String>,
    ids: Grid<u32>,
}

#[derive(Serialize, Deserialize)]
struct SemanticMapRepr {
    height: usize,
    width: usize,
    names: Vec<String>,
    ids: Vec<u32>,
}

impl TryFrom<SemanticMapRepr> for SemanticMap {
    type Error = MetricsError;

    fn try_from(r: SemanticMapRepr) -> Result<Self, Self::Error> {
        let shape = GridShape::new(r.height, r.width)?;
        Self::new(r.names, Grid::from_vec(shape, r.ids)?)
    }
}

impl From<SemanticMap> for SemanticMapRepr {
    fn from(m: SemanticMap) -> Self {
        let shape = m.shape();
        Self {
            height: shape.height,
            width: shape.width,
            names: m.names,
            ids: m.ids.into_values(),
        }
    }
}

impl SemanticMap {
    pub fn new(names: Vec<String>, ids: Grid<u32>) -> Result<Self, MetricsError> {
        if let Some(&bad) = ids.values().iter().find(|&&id| id as usize >= names.len()) {
            return Err(MetricsError::UnknownId(bad));
        }
        Ok(Self { names, ids })
    }

    pub fn shape(&self) -> GridShape {
        self.ids.shape()
    }

    pub fn ids(&self) -> &Grid<u32> {
        &self.ids
    }

    pub fn class_at(&self, p: Pixel) -> &str {
        &self.names[*self.ids.get(p.y, p.x) as usize]
    }

    /// Pixels of one class as a mask.
    pub fn mask_of(&self, class: &str) -> BinaryMask {
        let key = canonical_name(class);
        let id = self.names.iter().position(|n| canonical_name(n) == key);
        BinaryMask::from_grid(self.ids.map(|&v| Some(v as usize) == id))
    }
}

/// Ranked regret path integral: the sum over every pixel of the path,
/// endpoints included, of `rank(class) - 1`.
pub fn rrpi(path: &[Pixel], semantic: &SemanticMap, ranks: &RankMap) -> Result<u64, MetricsError> {
    let shape = semantic.shape();
    // resolve each class id once
    let per_id: Vec<Option<u32>> = semantic.names.iter().map(|n| ranks.get(n)).collect();
    let mut total = 0u64;
    for &p in path {
        if !shape.contains(p) {
            return Err(MetricsError::OutOfBounds { pixel: p, shape });
        }
        let id = *semantic.ids.get(p.y, p.x) as usize;
        let rank = per_id[id].ok_or_else(|| MetricsError::MissingRank(semantic.names[id].clone()))?;
        total += u64::from(rank - 1);
    }
    Ok(total)
}

/// One query's outcome: path length in pixels against its regret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub length: usize,
    pub rrpi: u64,
}

impl ScatterPoint {
    fn xy(&self) -> (f64, f64) {
        (self.length as f64, self.rrpi as f64)
    }
}

/// Centre of mass of a Gaussian KDE over the points. Symmetric kernels put
/// it exactly at the sample centroid, whatever the bandwidth.
pub fn kde_com(points: &[ScatterPoint]) -> Result<(f64, f64), MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyPoints);
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().map(ScatterPoint::xy).fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok((sx / n, sy / n))
}

/// Axis-aligned Gaussian KDE with Scott's-rule bandwidths.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Vec<(f64, f64)>,
    pub bandwidth: (f64, f64),
}

impl Kde {
    pub fn fit(points: &[ScatterPoint]) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyPoints);
        }
        let pts: Vec<(f64, f64)> = points.iter().map(ScatterPoint::xy).collect();
        let n = pts.len() as f64;
        let factor = n.powf(-1.0 / 6.0);
        let std = |f: fn(&(f64, f64)) -> f64| {
            let mean = pts.iter().map(f).sum::<f64>() / n;
            let var = if pts.len() > 1 {
                pts.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            // a degenerate axis still needs a nonzero kernel width
            if var > 0.0 { var.sqrt() } else { 1.0 }
        };
        let bandwidth = (std(|p| p.0) * factor, std(|p| p.1) * factor);
        Ok(Self { points: pts, bandwidth })
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let (hx, hy) = self.bandwidth;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * hx * hy * self.points.len() as f64);
        self.points
            .iter()
            .map(|&(px, py)| {
                let u = (x - px) / hx;
                let v = (y - py) / hy;
                (-0.5 * (u * u + v * v)).exp()
            })
            .sum::<f64>()
            * norm
    }
}

/// Least-squares slope of regret against length.
pub fn regression_slope(points: &[ScatterPoint]) -> Result<f64, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::UndefinedSlope);
    }
    // normal equations of y = a + b x
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (x, y) = p.xy();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if points.iter().all(|p| p.length == points[0].length) || det <= 0.0 {
        return Err(MetricsError::UndefinedSlope);
    }
    Ok((n * sxy - sx * sy) / det)
}

/// Mean over system-path pixels of the Euclidean distance to the nearest
/// pixel of any human path, divided by the map diagonal.
pub fn mean_hausdorff(system: &[Pixel], humans: &[&[Pixel]], shape: GridShape) -> Result<f64, MetricsError> {
    if system.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    if humans.iter().all(|h| h.is_empty()) {
        return Err(MetricsError::EmptyHumans);
    }
    let mut reference = BinaryMask::zeros(shape);
    for &p in humans.iter().flat_map(|h| h.iter()).chain(system) {
        if !shape.contains(p) {
            return Err(MetricsError::OutOfBounds { pixel: p, shape });
        }
    }
    for &p in humans.iter().flat_map(|h| h.iter()) {
        reference.set(p.y, p.x, true);
    }
    let dist = distance_transform(&reference);
    let sum: f64 = system.iter().map(|p| *dist.get(p.y, p.x)).sum();
    Ok(sum / system.len() as f64 / shape.diagonal())
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    pred.shape().ensure_same(&gt.shape())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.values().iter().zip(gt.values()) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-query record of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub start: Pixel,
    pub goal: Pixel,
    pub length: usize,
    pub rrpi: u64,
    pub cost: f64,
}

/// Aggregate of one (length, RRPI) scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub queries: Vec<QueryRecord>,
    pub com: (f64, f64),
    /// `None` when every path has the same length.
    pub slope: Option<f64>,
}

impl EvaluationReport {
    pub fn from_records(queries: Vec<QueryRecord>) -> Result<Self, MetricsError> {
        let points = Self::points_of(&queries);
        let com = kde_com(&points)?;
        let slope = match regression_slope(&points) {
            Ok(s) => Some(s),
            Err(MetricsError::UndefinedSlope) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { queries, com, slope })
    }

    pub fn points(&self) -> Vec<ScatterPoint> {
        Self::points_of(&self.queries)
    }

    fn points_of(queries: &[QueryRecord]) -> Vec<ScatterPoint> {
        queries
            .iter()
            .map(|q| ScatterPoint {
                length: q.length,
                rrpi: q.rrpi,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(length: usize, rrpi: u64) -> ScatterPoint {
        ScatterPoint { length, rrpi }
    }

    fn strip(names: &[&str], ids: &[u32]) -> SemanticMap {
        let s = GridShape::new(1, ids.len()).unwrap();
        SemanticMap::new(names.iter().map(|n| n.to_string()).collect(), Grid::from_vec(s, ids.to_vec()).unwrap()).unwrap()
    }

    fn row(n: usize) -> Vec<Pixel> {
        (0..n).map(|x| Pixel::new(x, 0)).collect()
    }

    #[test]
    fn rrpi_examples() {
        let ranks = RankMap::from_pairs([("trail", 1), ("grass", 2), ("water", 3)]).unwrap();
        let all_trail = strip(&["trail"], &[0, 0, 0]);
        assert_eq!(rrpi(&row(3), &all_trail, &ranks).unwrap(), 0);
        let mixed = strip(&["trail", "grass", "water"], &[0, 1, 2, 0]);
        assert_eq!(rrpi(&row(4), &mixed, &ranks).unwrap(), 3);
        let crossing = strip(&["trail", "grass", "water"], &[0, 2, 2, 0]);
        assert_eq!(rrpi(&row(4), &crossing, &ranks).unwrap(), 4);
    }

    #[test]
    fn rrpi_errors() {
        let ranks = RankMap::from_pairs([("trail", 1)]).unwrap();
        let m = strip(&["trail", "lava"], &[0, 1]);
        assert_eq!(rrpi(&row(2), &m, &ranks), Err(MetricsError::MissingRank("lava".into())));
        assert!(matches!(rrpi(&[Pixel::new(5, 0)], &m, &ranks), Err(MetricsError::OutOfBounds { .. })));
        assert!(RankMap::from_pairs([("x", 0)]).is_err());
        assert!(SemanticMap::new(vec!["a".into()], Grid::filled(GridShape::new(1, 1).unwrap(), 1)).is_err());
    }

    #[test]
    fn com_examples() {
        assert_eq!(kde_com(&[pt(100, 7)]).unwrap(), (100.0, 7.0));
        assert_eq!(kde_com(&[pt(1, 1), pt(3, 3)]).unwrap(), (2.0, 2.0));
        assert_eq!(kde_com(&[]), Err(MetricsError::EmptyPoints));
    }

    #[test]
    fn slope_examples() {
        let line: Vec<_> = (1..6).map(|x| pt(x, 2 * x as u64 + 1)).collect();
        assert_eq!(regression_slope(&line).unwrap(), 2.0);
        assert_eq!(regression_slope(&[pt(0, 0), pt(2, 2)]).unwrap(), 1.0);
        assert_eq!(regression_slope(&[pt(4, 0), pt(4, 9)]), Err(MetricsError::UndefinedSlope));
    }

    #[test]
    fn hausdorff_examples() {
        let s = GridShape::new(30, 40).unwrap();
        let human: Vec<Pixel> = (0..10).map(|i| Pixel::new(i, i)).collect();
        assert_eq!(mean_hausdorff(&human, &[&human], s).unwrap(), 0.0);
        let d = mean_hausdorff(&[Pixel::new(3, 7)], &[&[Pixel::new(0, 3)]], s).unwrap();
        assert!((d - 5.0 / 50.0).abs() < 1e-15);
        assert_eq!(mean_hausdorff(&human, &[], s), Err(MetricsError::EmptyHumans));
        assert_eq!(mean_hausdorff(&[], &[&human], s), Err(MetricsError::EmptyPath));
    }

    #[test]
    fn iou_examples() {
        let s = GridShape::new(8, 8).unwrap();
        let a = BinaryMask::from_fn(s, |r, c| r < 4 && c < 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_fn(s, |r, c| r >= 4 && c >= 4);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // 4x4 squares offset by two columns share a 4x2 strip: 8 / 24
        let c = BinaryMask::from_fn(s, |r, c| r < 4 && (2..6).contains(&c));
        assert_eq!(iou(&a, &c).unwrap(), 1.0 / 3.0);
        let e = BinaryMask::zeros(s);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn report_json() {
        let q = |length, rrpi| QueryRecord {
            start: Pixel::new(0, 0),
            goal: Pixel::new(1, 1),
            length,
            rrpi,
            cost: 0.0,
        };
        let r = EvaluationReport::from_records(vec![q(2, 0), q(4, 4)]).unwrap();
        assert_eq!(r.com, (3.0, 2.0));
        assert_eq!(r.slope, Some(2.0));
        let back: EvaluationReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let m = strip(&["trail", "water"], &[0, 1, 1]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"height":1,"width":3,"names":["trail","water"],"ids":[0,1,1]}"#);
        assert_eq!(serde_json::from_str::<SemanticMap>(&json).unwrap(), m);
        assert!(serde_json::from_str::<SemanticMap>(r#"{"height":1,"width":1,"names":[],"ids":[0]}"#).is_err());
    }
}
