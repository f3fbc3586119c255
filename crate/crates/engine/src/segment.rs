//! Two-stage open-vocabulary mask generation over image tiles: a coarse
//! language-grounded pass per class, then a refinement pass that takes the
//! coarse mask as a spatial prior.

use std::collections::BTreeMap;

use image::RgbImage;
use overseec_core::classes::ClassSet;
use overseec_core::io::{crop_rgb, image_shape};
use overseec_core::raster::{
    binarize_at, gate, plan_tiles, stitch, BinaryMask, ClassSpec, GridShape, ProbabilityMap, RasterError,
    Thresholds, TileSpec, TilingParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Error)]
pub enum SegError {
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("tile {tile} failed for class {class:?} after {attempts} attempts: {source}")]
    TileFailure {
        class: String,
        tile: usize,
        attempts: u32,
        source: BackendError,
    },
    #[error("tile {tile} for class {class:?}: backend returned {got}, expected {expected}")]
    TileShape {
        class: String,
        tile: usize,
        got: GridShape,
        expected: GridShape,
    },
    #[error("tile size {tile_size} exceeds the backend limit of {max}")]
    TileTooLarge { tile_size: usize, max: usize },
    #[error("coarse mask for {0:?} is missing")]
    MissingPrior(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// What a backend can take. `batch_limit` is informational; the
/// orchestrator sends one tile per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_tile_size: usize,
    pub batch_limit: usize,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self {
            max_tile_size: 1024,
            batch_limit: 1,
        }
    }
}

/// Language-grounded segmentation: image tile plus class name in,
/// per-pixel probability of the class out, shaped like the tile.
pub trait SegBackend: Send + Sync {
    fn id(&self) -> String;
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError>;
}

/// Prompt-based refinement: image tile plus coarse mask tile in, refined
/// probabilities out, shaped like the tile. An empty prior must yield an
/// empty result; the orchestrator never sends one.
pub trait RefineBackend: Send + Sync {
    fn id(&self) -> String;
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub seg_tiling: TilingParams,
    pub refine_tiling: TilingParams,
    pub thresholds: Thresholds,
    /// Extra attempts per tile after the first failure.
    pub retries: u32,
    /// Fail the run when a refinement tile fails instead of keeping the
    /// coarse tile.
    pub strict_refine: bool,
    /// Upper bound on concurrent tile requests.
    pub max_in_flight: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            seg_tiling: TilingParams::default(),
            refine_tiling: TilingParams::default(),
            thresholds: Thresholds::default(),
            retries: 2,
            strict_refine: false,
            max_in_flight: 8,
        }
    }
}

/// Coarse result for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarse {
    pub probability: ProbabilityMap,
    pub mask: BinaryMask,
}

/// All rasters for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLayers {
    pub spec: ClassSpec,
    pub coarse_probability: ProbabilityMap,
    pub coarse_mask: BinaryMask,
    pub refined_probability: ProbabilityMap,
    pub refined_mask: BinaryMask,
    pub gated: ProbabilityMap,
}

impl ClassLayers {
    /// Derives the refined mask and gated map from a refined probability map.
    pub fn derive(spec: ClassSpec, coarse: Coarse, refined: ProbabilityMap, thresholds: &Thresholds) -> Result<Self, RasterError> {
        let refined_mask = binarize_at(&refined, thresholds.for_geometry(spec.geometry));
        let gated = gate(&refined, &refined_mask)?;
        Ok(Self {
            spec,
            coarse_probability: coarse.probability,
            coarse_mask: coarse.mask,
            refined_probability: refined,
            refined_mask,
            gated,
        })
    }

    /// Checks shapes and that the refined mask and gated map follow from the
    /// refined probabilities.
    pub fn check(&self, shape: GridShape, thresholds: &Thresholds) -> Result<(), String> {
        for s in [
            self.coarse_probability.shape(),
            self.coarse_mask.shape(),
            self.refined_probability.shape(),
            self.refined_mask.shape(),
            self.gated.shape(),
        ] {
            if s != shape {
                return Err(format!("{}: raster is {s}, image is {shape}", self.spec.name));
            }
        }
        let tau = thresholds.for_geometry(self.spec.geometry);
        for i in 0..shape.len() {
            let p = self.refined_probability.values()[i];
            let m = self.refined_mask.values()[i];
            if m != (p >= tau) {
                return Err(format!("{}: mask disagrees with threshold at pixel {i}", self.spec.name));
            }
            if self.gated.values()[i] != if m { p } else { 0.0 } {
                return Err(format!("{}: gated map disagrees at pixel {i}", self.spec.name));
            }
        }
        Ok(())
    }
}

/// Rounds probabilities to `f32` precision, the precision of the RF32
/// exchange format, so stored rasters reload bit-for-bit and thresholds
/// give the same masks before and after a round trip.
pub fn quantize(p: &ProbabilityMap) -> ProbabilityMap {
    ProbabilityMap::from_grid(p.grid().map(|&v| v as f32 as f64)).expect("rounding keeps values in [0, 1]")
}

/// Per-class layers keyed by canonical class name.
pub type ClassMasks = BTreeMap<String, ClassLayers>;

fn pool(params: &SegParams) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(params.max_in_flight.max(1))
        .build()
        .expect("thread pool")
}

fn with_retries<T>(
    retries: u32,
    class: &str,
    tile: usize,
    mut call: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, SegError> {
    let mut attempt = 0;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if attempt < retries => {
                log::warn!("tile {tile} for {class:?} failed ({e}); retrying");
                attempt += 1;
            }
            Err(source) => {
                return Err(SegError::TileFailure {
                    class: class.to_string(),
                    tile,
                    attempts: attempt + 1,
                    source,
                })
            }
        }
    }
}

fn check_capabilities(tiling: TilingParams, caps: Capabilities) -> Result<(), SegError> {
    if tiling.tile_size > caps.max_tile_size {
        return Err(SegError::TileTooLarge {
            tile_size: tiling.tile_size,
            max: caps.max_tile_size,
        });
    }
    Ok(())
}

fn check_tile(map: &ProbabilityMap, spec: &TileSpec, class: &str) -> Result<(), SegError> {
    if map.shape() != spec.shape() {
        return Err(SegError::TileShape {
            class: class.to_string(),
            tile: spec.index,
            got: map.shape(),
            expected: spec.shape(),
        });
    }
    Ok(())
}

/// Runs the coarse pass: every (class, tile) pair once, stitched per class
/// and only then thresholded.
pub fn coarse_segment(
    image: &RgbImage,
    classes: &[ClassSpec],
    backend: &dyn SegBackend,
    params: &SegParams,
) -> Result<BTreeMap<String, Coarse>, SegError> {
    if classes.is_empty() {
        return Err(SegError::EmptyClassSet);
    }
    check_capabilities(params.seg_tiling, backend.capabilities())?;
    let shape = image_shape(image);
    let tiles = plan_tiles(shape, params.seg_tiling)?;
    let crops: Vec<RgbImage> = tiles
        .iter()
        .map(|t| crop_rgb(image, t.row0, t.col0, t.height, t.width))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..classes.len()).flat_map(|c| (0..tiles.len()).map(move |t| (c, t))).collect();
    let results: Vec<Result<ProbabilityMap, SegError>> = pool(params).install(|| {
        jobs.par_iter()
            .map(|&(c, t)| {
                let class = &classes[c];
                let map = with_retries(params.retries, &class.name, tiles[t].index, || {
                    backend.segment_tile(&crops[t], class)
                })?;
                check_tile(&map, &tiles[t], &class.name)?;
                Ok(map)
            })
            .collect()
    });
    let results: Vec<ProbabilityMap> = results.into_iter().collect::<Result<_, _>>()?;

    let mut out = BTreeMap::new();
    for (c, class) in classes.iter().enumerate() {
        let maps = &results[c * tiles.len()..(c + 1) * tiles.len()];
        let probability = quantize(&stitch(shape, tiles.iter().zip(maps))?);
        let mask = binarize_at(&probability, params.thresholds.for_geometry(class.geometry));
        out.insert(overseec_core::classes::canonical_name(&class.name), Coarse { probability, mask });
    }
    Ok(out)
}

/// Runs the refinement pass over the coarse masks and derives the final
/// per-class layers. Tiles whose prior is empty are not sent and come back
/// as zeros. A failing tile keeps its coarse probabilities unless
/// `strict_refine` is set.
pub fn refine(
    image: &RgbImage,
    classes: &[ClassSpec],
    coarse: BTreeMap<String, Coarse>,
    backend: &dyn RefineBackend,
    params: &SegParams,
) -> Result<ClassMasks, SegError> {
    check_capabilities(params.refine_tiling, backend.capabilities())?;
    let shape = image_shape(image);
    let tiles = plan_tiles(shape, params.refine_tiling)?;
    let crops: Vec<RgbImage> = tiles
        .iter()
        .map(|t| crop_rgb(image, t.row0, t.col0, t.height, t.width))
        .collect();
    let keys: Vec<String> = classes.iter().map(|c| overseec_core::classes::canonical_name(&c.name)).collect();
    for key in &keys {
        let prior = coarse.get(key).ok_or_else(|| SegError::MissingPrior(key.clone()))?;
        prior.mask.shape().ensure_same(&shape)?;
    }
    let jobs: Vec<(usize, usize)> = (0..classes.len()).flat_map(|c| (0..tiles.len()).map(move |t| (c, t))).collect();
    let results: Vec<Result<ProbabilityMap, SegError>> = pool(params).install(|| {
        jobs.par_iter()
            .map(|&(c, t)| {
                let class = &classes[c];
                let spec = &tiles[t];
                let prior = &coarse[&keys[c]];
                let mask_tile = prior.mask.crop(spec.row0, spec.col0, spec.height, spec.width);
                if mask_tile.is_empty() {
                    return Ok(ProbabilityMap::zeros(spec.shape()));
                }
                let refined = with_retries(params.retries, &class.name, spec.index, || {
                    backend.refine_tile(&crops[t], &mask_tile, class)
                })
                .and_then(|m| check_tile(&m, spec, &class.name).map(|_| m));
                match refined {
                    Ok(m) => Ok(m),
                    Err(e) if !params.strict_refine => {
                        log::warn!("{e}; keeping the coarse tile");
                        Ok(prior.probability.crop(spec.row0, spec.col0, spec.height, spec.width))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let results: Vec<ProbabilityMap> = results.into_iter().collect::<Result<_, _>>()?;

    let mut coarse = coarse;
    let mut out = ClassMasks::new();
    for (c, class) in classes.iter().enumerate() {
        let maps = &results[c * tiles.len()..(c + 1) * tiles.len()];
        let refined = quantize(&stitch(shape, tiles.iter().zip(maps))?);
        let prior = coarse.remove(&keys[c]).expect("checked above");
        out.insert(keys[c].clone(), ClassLayers::derive(class.clone(), prior, refined, &params.thresholds)?);
    }
    Ok(out)
}

/// Coarse segmentation followed by refinement for every class in `classes`.
pub fn run_pipeline(
    image: &RgbImage,
    classes: &ClassSet,
    seg: &dyn SegBackend,
    refiner: &dyn RefineBackend,
    params: &SegParams,
) -> Result<ClassMasks, SegError> {
    let specs = classes.specs();
    let coarse = coarse_segment(image, &specs, seg, params)?;
    refine(image, &specs, coarse, refiner, params)
}
