//! Value-semantic raster types and the tiling / stitching / thresholding
//! primitives the segmentation stage is built on.
//!
//! All rasters are row-major. A [`Pixel`] is addressed by `x` (column) and
//! `y` (row).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binarization threshold for thin structures (roads, trails, rails).
pub const LINEAR_THRESHOLD: f64 = 0.4;
/// Binarization threshold for broad regions (grass, water, buildings).
pub const AREAL_THRESHOLD: f64 = 0.8;

pub const DEFAULT_TILE_SIZE: usize = 512;
pub const DEFAULT_TILE_OVERLAP: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("grid dimensions must be at least 1x1, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} values for the grid, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: GridShape, right: GridShape },
    #[error("invalid tiling: tile size {tile_size}, overlap {overlap}")]
    InvalidTiling { tile_size: usize, overlap: usize },
    #[error("tile {index} does not fit inside the {shape} image")]
    TileOutOfBounds { index: usize, shape: GridShape },
    #[error("pixel (row {row}, col {col}) is not covered by any tile")]
    Uncovered { row: usize, col: usize },
}

/// Image dimensions, `height` rows by `width` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self, RasterError> {
        if height == 0 || width == 0 {
            return Err(RasterError::EmptyShape { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x < self.width && p.y < self.height
    }

    /// Length of the image diagonal, `sqrt(H^2 + W^2)`.
    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }

    pub fn ensure_same(&self, other: &GridShape) -> Result<(), RasterError> {
        if self != other {
            return Err(RasterError::ShapeMismatch {
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A pixel coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

// Serialized as `[x, y]`.
impl Serialize for Pixel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pixel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[usize; 2]>::deserialize(d)?;
        Ok(Pixel { x, y })
    }
}

/// A dense row-major grid of values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    shape: GridShape,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(shape: GridShape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(shape: GridShape, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != shape.len() {
            return Err(RasterError::LengthMismatch {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for row in 0..shape.height {
            for col in 0..shape.width {
                data.push(f(row, col));
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn into_values(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[self.shape.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.shape.index(row, col);
        self.data[i] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_with<U, V>(
        &self,
        other: &Grid<U>,
        mut f: impl FnMut(&T, &U) -> V,
    ) -> Result<Grid<V>, RasterError> {
        self.shape.ensure_same(&other.shape)?;
        Ok(Grid {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    /// Copies out a `height x width` window whose top-left corner is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Grid<T>
    where
        T: Clone,
    {
        assert!(row0 + height <= self.shape.height && col0 + width <= self.shape.width);
        let mut data = Vec::with_capacity(height * width);
        for row in row0..row0 + height {
            let start = self.shape.index(row, col0);
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Grid {
            shape: GridShape { height, width },
            data,
        }
    }
}

fn check_unit_interval(values: &[f64]) -> Result<(), RasterError> {
    match values
        .iter()
        .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
    {
        Some(index) => Err(RasterError::OutOfRange {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

macro_rules! unit_raster {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Grid<f64>);

        impl $name {
            pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self, RasterError> {
                check_unit_interval(&values)?;
                Ok(Self(Grid::from_vec(shape, values)?))
            }

            pub fn from_grid(grid: Grid<f64>) -> Result<Self, RasterError> {
                check_unit_interval(grid.values())?;
                Ok(Self(grid))
            }

            pub fn constant(shape: GridShape, value: f64) -> Result<Self, RasterError> {
                Self::new(shape, vec![value; shape.len()])
            }

            pub fn zeros(shape: GridShape) -> Self {
                Self(Grid::filled(shape, 0.0))
            }

            pub fn shape(&self) -> GridShape {
                self.0.shape()
            }

            pub fn values(&self) -> &[f64] {
                self.0.values()
            }

            pub fn grid(&self) -> &Grid<f64> {
                &self.0
            }

            #[inline]
            pub fn get(&self, row: usize, col: usize) -> f64 {
                *self.0.get(row, col)
            }

            pub fn max(&self) -> f64 {
                self.values().iter().copied().fold(0.0, f64::max)
            }

            pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Self {
                Self(self.0.crop(row0, col0, height, width))
            }
        }
    };
}

unit_raster!(
    /// Per-pixel class probabilities in `[0, 1]`.
    ProbabilityMap
);
unit_raster!(
    /// Graded mask in `[0, 1]`; binary masks embed with values in `{0, 1}`.
    SoftMask
);
unit_raster!(
    /// Planner-ready cost raster in `[0, 1]`; lower is more traversable.
    Costmap
);

impl From<&BinaryMask> for SoftMask {
    fn from(m: &BinaryMask) -> Self {
        SoftMask(m.0.map(|&b| if b { 1.0 } else { 0.0 }))
    }
}

impl From<&BinaryMask> for ProbabilityMap {
    fn from(m: &BinaryMask) -> Self {
        ProbabilityMap(m.0.map(|&b| if b { 1.0 } else { 0.0 }))
    }
}

/// A per-pixel bit mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask(Grid<bool>);

impl BinaryMask {
    pub fn new(shape: GridShape, values: Vec<bool>) -> Result<Self, RasterError> {
        Ok(Self(Grid::from_vec(shape, values)?))
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self(grid)
    }

    pub fn from_fn(shape: GridShape, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Grid::from_fn(shape, f))
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self(Grid::filled(shape, false))
    }

    pub fn ones(shape: GridShape) -> Self {
        Self(Grid::filled(shape, true))
    }

    pub fn shape(&self) -> GridShape {
        self.0.shape()
    }

    pub fn values(&self) -> &[bool] {
        self.0.values()
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        *self.0.get(row, col)
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.0.set(row, col, value);
    }

    pub fn count_ones(&self) -> usize {
        self.values().iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values().iter().any(|&b| b)
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Self {
        Self(self.0.crop(row0, col0, height, width))
    }
}

/// Terrain geometry category; selects the binarization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Linear,
    Areal,
}

impl Geometry {
    pub fn as_str(&self) -> &'static str {
        match self {
            Geometry::Linear => "linear",
            Geometry::Areal => "areal",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Geometry::Linear),
            "areal" => Ok(Geometry::Areal),
            other => Err(format!("unknown geometry {other:?}")),
        }
    }
}

/// Per-geometry binarization thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub linear: f64,
    pub areal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            linear: LINEAR_THRESHOLD,
            areal: AREAL_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn for_geometry(&self, geometry: Geometry) -> f64 {
        match geometry {
            Geometry::Linear => self.linear,
            Geometry::Areal => self.areal,
        }
    }
}

/// A terrain class extracted from the mission prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub geometry: Geometry,
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, geometry: Geometry) -> Self {
        Self {
            name: name.into(),
            geometry,
        }
    }
}

/// One tile of a tiling plan. Tiles are square except where the image is
/// smaller than the tile size along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileSpec {
    pub index: usize,
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl TileSpec {
    pub fn shape(&self) -> GridShape {
        GridShape {
            height: self.height,
            width: self.width,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.height && col >= self.col0 && col < self.col0 + self.width
    }
}

/// Tile size and overlap used when cutting an image into model-sized chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingParams {
    pub tile_size: usize,
    pub overlap: usize,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            overlap: DEFAULT_TILE_OVERLAP,
        }
    }
}

fn axis_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut origin = 0;
    loop {
        origins.push(origin);
        if origin + tile >= extent {
            break;
        }
        origin += stride;
        if origin + tile > extent {
            // clamp so the last tile ends on the border
            origin = extent - tile;
        }
    }
    origins
}

/// Cuts `shape` into overlapping tiles with stride `tile_size - overlap`.
///
/// The last tile on each axis is shifted back so it ends exactly on the
/// image border. Tiles are ordered row-major by origin.
pub fn plan_tiles(shape: GridShape, params: TilingParams) -> Result<Vec<TileSpec>, RasterError> {
    let TilingParams { tile_size, overlap } = params;
    if tile_size == 0 || overlap >= tile_size {
        return Err(RasterError::InvalidTiling { tile_size, overlap });
    }
    let stride = tile_size - overlap;
    let rows = axis_origins(shape.height, tile_size, stride);
    let cols = axis_origins(shape.width, tile_size, stride);
    let height = tile_size.min(shape.height);
    let width = tile_size.min(shape.width);
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &row0 in &rows {
        for &col0 in &cols {
            tiles.push(TileSpec {
                index: tiles.len(),
                row0,
                col0,
                height,
                width,
            });
        }
    }
    Ok(tiles)
}

/// Joins per-tile probability maps into one full-resolution map, averaging
/// wherever tiles overlap.
pub fn stitch<'a, I>(shape: GridShape, tiles: I) -> Result<ProbabilityMap, RasterError>
where
    I: IntoIterator<Item = (&'a TileSpec, &'a ProbabilityMap)>,
{
    let mut sum = vec![0.0f64; shape.len()];
    let mut count = vec![0u32; shape.len()];
    for (spec, map) in tiles {
        if spec.row0 + spec.height > shape.height || spec.col0 + spec.width > shape.width {
            return Err(RasterError::TileOutOfBounds {
                index: spec.index,
                shape,
            });
        }
        spec.shape().ensure_same(&map.shape())?;
        for r in 0..spec.height {
            let out = shape.index(spec.row0 + r, spec.col0);
            let src = &map.values()[r * spec.width..(r + 1) * spec.width];
            for (c, &v) in src.iter().enumerate() {
                sum[out + c] += v;
                count[out + c] += 1;
            }
        }
    }
    let mut values = Vec::with_capacity(shape.len());
    for (i, (s, n)) in sum.into_iter().zip(count).enumerate() {
        if n == 0 {
            return Err(RasterError::Uncovered {
                row: i / shape.width,
                col: i % shape.width,
            });
        }
        // exact mosaic for single coverage; clamp guards rounding above 1
        values.push(if n == 1 { s } else { (s / n as f64).min(1.0) });
    }
    ProbabilityMap::new(shape, values)
}

/// Thresholds `p` at an explicit level (inclusive).
pub fn binarize_at(p: &ProbabilityMap, threshold: f64) -> BinaryMask {
    BinaryMask(p.grid().map(|&v| v >= threshold))
}

/// Thresholds `p` with the default per-geometry level.
pub fn binarize(p: &ProbabilityMap, geometry: Geometry) -> BinaryMask {
    binarize_at(p, Thresholds::default().for_geometry(geometry))
}

/// Zeroes `p` outside `mask`.
pub fn gate(p: &ProbabilityMap, mask: &BinaryMask) -> Result<ProbabilityMap, RasterError> {
    let grid = p
        .grid()
        .zip_with(mask.grid(), |&v, &keep| if keep { v } else { 0.0 })?;
    Ok(ProbabilityMap(grid))
}
