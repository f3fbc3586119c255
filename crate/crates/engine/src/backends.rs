//! Segmentation and refinement backends: in-process fixtures and HTTP
//! clients for a remote model server.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use overseec_core::classes::canonical_name;
use overseec_core::io::{decode_rf32, encode_mask_png, encode_rgb_png, image_shape};
use overseec_core::mask::dilate;
use overseec_core::raster::{BinaryMask, ClassSpec, Grid, ProbabilityMap};
use serde::{Deserialize, Serialize};

use crate::segment::{BackendError, Capabilities, RefineBackend, SegBackend};

pub const PALETTE_FILE: &str = "palette.json";

/// Class colors of a synthetic scene plus the probabilities a fixture
/// reports inside and outside a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub classes: BTreeMap<String, [u8; 3]>,
    #[serde(default = "default_inside")]
    pub inside: f64,
    #[serde(default = "default_outside")]
    pub outside: f64,
}

// f32-exact so fixture output survives the RF32 format unchanged
fn default_inside() -> f64 {
    0.9f32 as f64
}

fn default_outside() -> f64 {
    0.05f32 as f64
}

impl Palette {
    pub fn new(classes: impl IntoIterator<Item = (impl AsRef<str>, [u8; 3])>) -> Self {
        Self {
            classes: classes.into_iter().map(|(n, c)| (canonical_name(n.as_ref()), c)).collect(),
            inside: default_inside(),
            outside: default_outside(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, BackendError> {
        let path = dir.join(PALETTE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(PALETTE_FILE), serde_json::to_vec_pretty(self).expect("palette serializes"))
    }

    /// Name of the class whose color is nearest to `rgb`. Ties go to the
    /// alphabetically first class.
    pub fn classify(&self, rgb: [u8; 3]) -> Option<&str> {
        let dist = |c: &[u8; 3]| -> u32 { (0..3).map(|k| (c[k] as i32 - rgb[k] as i32).pow(2) as u32).sum() };
        self.classes
            .iter()
            .min_by_key(|(_, c)| dist(c))
            .map(|(n, _)| n.as_str())
    }

    fn class_mask(&self, tile: &RgbImage, class: &str) -> BinaryMask {
        let key = canonical_name(class);
        BinaryMask::from_fn(image_shape(tile), |r, c| {
            self.classify(tile.get_pixel(c as u32, r as u32).0) == Some(key.as_str())
        })
    }
}

/// Coarse fixture: `inside` where the pixel's nearest palette color is the
/// requested class, `outside` elsewhere. Classes missing from the palette
/// get `outside` everywhere.
#[derive(Debug, Clone)]
pub struct PaletteSeg {
    palette: Palette,
    tag: String,
}

impl PaletteSeg {
    pub fn new(palette: Palette, tag: impl Into<String>) -> Self {
        Self {
            palette,
            tag: tag.into(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(Palette::load(dir)?, dir.display().to_string()))
    }
}

impl SegBackend for PaletteSeg {
    fn id(&self) -> String {
        format!("fixture-seg:{}", self.tag)
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        let mask = self.palette.class_mask(tile, &class.name);
        let (a, b) = (self.palette.inside, self.palette.outside);
        ProbabilityMap::from_grid(mask.grid().map(|&m| if m { a } else { b })).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

/// Refinement fixture: keeps the palette pixels of the class that lie within
/// `reach` pixels of the coarse mask, at probability `inside`; zero
/// elsewhere. An empty prior gives an empty result.
#[derive(Debug, Clone)]
pub struct PaletteRefine {
    palette: Palette,
    reach: f64,
    tag: String,
}

impl PaletteRefine {
    pub fn new(palette: Palette, reach: f64, tag: impl Into<String>) -> Self {
        Self {
            palette,
            reach,
            tag: tag.into(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(Palette::load(dir)?, 3.0, dir.display().to_string()))
    }
}

impl RefineBackend for PaletteRefine {
    fn id(&self) -> String {
        format!("fixture-refine:{}:{}", self.tag, self.reach)
    }

    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        if image_shape(tile) != coarse.shape() {
            return Err(BackendError::BadResponse("mask and tile shapes differ".into()));
        }
        let near = dilate(coarse, self.reach);
        let own = self.palette.class_mask(tile, &class.name);
        let p = self.palette.inside;
        let grid = near
            .grid()
            .zip_with(own.grid(), |&n, &o| if n && o { p } else { 0.0 })
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        ProbabilityMap::from_grid(grid).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

/// Returns the coarse mask itself as 0/1 probabilities.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefine;

impl RefineBackend for IdentityRefine {
    fn id(&self) -> String {
        "identity".into()
    }

    fn refine_tile(&self, _tile: &RgbImage, coarse: &BinaryMask, _class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        Ok(ProbabilityMap::from_grid(coarse.grid().map(|&m| if m { 1.0 } else { 0.0 })).expect("0 and 1 are probabilities"))
    }
}

/// Reports the same probability for every pixel and class.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSeg(pub f64);

impl SegBackend for ConstantSeg {
    fn id(&self) -> String {
        format!("constant:{}", self.0)
    }

    fn segment_tile(&self, tile: &RgbImage, _class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        ProbabilityMap::constant(image_shape(tile), self.0).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

/// Wraps a backend and counts the calls made through it.
pub struct Counting<B> {
    inner: B,
    calls: Arc<AtomicUsize>,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Shared handle to the counter, readable after the wrapper moves.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: SegBackend> SegBackend for Counting<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.segment_tile(tile, class)
    }
}

impl<B: RefineBackend> RefineBackend for Counting<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.refine_tile(tile, coarse, class)
    }
}

impl<T: SegBackend + ?Sized> SegBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        (**self).segment_tile(tile, class)
    }
}

impl<T: RefineBackend + ?Sized> RefineBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        (**self).refine_tile(tile, coarse, class)
    }
}

#[derive(Serialize)]
struct ClassMeta<'a> {
    class: &'a str,
}

fn client(timeout_secs: f64) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_secs))
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn png_part(bytes: Vec<u8>, name: &str) -> reqwest::blocking::multipart::Part {
    reqwest::blocking::multipart::Part::bytes(bytes)
        .file_name(name.to_string())
        .mime_str("image/png")
        .expect("static mime type")
}

fn read_raster(resp: reqwest::blocking::Response, expected: overseec_core::raster::GridShape) -> Result<ProbabilityMap, BackendError> {
    let status = resp.status();
    if !status.is_success() {
        return Err(BackendError::Status {
            status: status.as_u16(),
            body: resp.text().unwrap_or_default(),
        });
    }
    let bytes = resp.bytes().map_err(|e| BackendError::Transport(e.to_string()))?;
    let grid: Grid<f64> = decode_rf32(&bytes).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    if grid.shape() != expected {
        return Err(BackendError::BadResponse(format!("raster is {}, tile is {expected}", grid.shape())));
    }
    ProbabilityMap::from_grid(grid).map_err(|e| BackendError::BadResponse(e.to_string()))
}

/// Multipart `POST {base}/segment` with parts `image` (PNG tile) and `meta`
/// (`{"class": name}`); the response body is an RF32 raster.
pub struct HttpSeg {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpSeg {
    pub fn new(base: impl Into<String>, timeout_secs: f64) -> Result<Self, BackendError> {
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            client: client(timeout_secs)?,
        })
    }
}

impl SegBackend for HttpSeg {
    fn id(&self) -> String {
        format!("http-seg:{}", self.base)
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        let meta = serde_json::to_string(&ClassMeta { class: &class.name }).expect("meta serializes");
        let form = reqwest::blocking::multipart::Form::new()
            .part("image", png_part(encode_rgb_png(tile), "tile.png"))
            .text("meta", meta);
        let resp = self
            .client
            .post(format!("{}/segment", self.base))
            .multipart(form)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        read_raster(resp, image_shape(tile))
    }
}

/// Multipart `POST {base}/refine` with parts `image` (PNG tile), `mask`
/// (PNG coarse mask tile) and `meta` (`{"class": name}`); the response body
/// is an RF32 raster.
pub struct HttpRefine {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpRefine {
    pub fn new(base: impl Into<String>, timeout_secs: f64) -> Result<Self, BackendError> {
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            client: client(timeout_secs)?,
        })
    }
}

impl RefineBackend for HttpRefine {
    fn id(&self) -> String {
        format!("http-refine:{}", self.base)
    }

    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        let meta = serde_json::to_string(&ClassMeta { class: &class.name }).expect("meta serializes");
        let form = reqwest::blocking::multipart::Form::new()
            .part("image", png_part(encode_rgb_png(tile), "tile.png"))
            .part("mask", png_part(encode_mask_png(coarse), "mask.png"))
            .text("meta", meta);
        let resp = self
            .client
            .post(format!("{}/refine", self.base))
            .multipart(form)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        read_raster(resp, image_shape(tile))
    }
}

#[cfg(test)]
mod tests {
    use overseec_core::raster::{Geometry, GridShape};

    use super::*;

    fn two_tone() -> RgbImage {
        RgbImage::from_fn(4, 2, |x, _| if x < 2 { image::Rgb([200, 0, 0]) } else { image::Rgb([0, 200, 0]) })
    }

    fn palette() -> Palette {
        Palette::new([("Road", [255, 0, 0]), ("grass", [0, 255, 0])])
    }

    #[test]
    fn nearest_color_classification() {
        let p = palette();
        assert_eq!(p.classify([250, 10, 0]), Some("road"));
        assert_eq!(p.classify([0, 90, 0]), Some("grass"));
    }

    #[test]
    fn palette_seg_scores() {
        let seg = PaletteSeg::new(palette(), "t");
        let m = seg.segment_tile(&two_tone(), &ClassSpec::new("road", Geometry::Linear)).unwrap();
        let (a, b) = (0.9f32 as f64, 0.05f32 as f64);
        assert_eq!(m.values(), &[a, a, b, b, a, a, b, b]);
        let none = seg.segment_tile(&two_tone(), &ClassSpec::new("pier", Geometry::Areal)).unwrap();
        assert!(none.values().iter().all(|&v| v == b));
    }

    #[test]
    fn palette_refine_respects_prior() {
        let r = PaletteRefine::new(palette(), 1.5, "t");
        let spec = ClassSpec::new("road", Geometry::Linear);
        let shape = GridShape::new(2, 4).unwrap();
        let empty = r.refine_tile(&two_tone(), &BinaryMask::zeros(shape), &spec).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
        let mut prior = BinaryMask::zeros(shape);
        prior.set(0, 0, true);
        let out = r.refine_tile(&two_tone(), &prior, &spec).unwrap();
        let a = 0.9f32 as f64;
        assert_eq!(out.values(), &[a, a, 0.0, 0.0, a, a, 0.0, 0.0]);
    }

    #[test]
    fn palette_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        palette().save(dir.path()).unwrap();
        assert_eq!(Palette::load(dir.path()).unwrap(), palette());
    }
}
