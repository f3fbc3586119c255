use std::collections::HashMap;
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use overseec_core::classes::{ClassSet, Provenance};
use overseec_core::io::{crop_rgb, image_shape};
use overseec_core::metrics::iou;
use overseec_core::raster::{
    plan_tiles, BinaryMask, ClassSpec, Geometry, GridShape, ProbabilityMap, Thresholds, TilingParams,
};
use overseec_engine::backends::{ConstantSeg, Counting, IdentityRefine, Palette, PaletteRefine, PaletteSeg};
use overseec_engine::segment::{
    coarse_segment, refine, run_pipeline, BackendError, Capabilities, RefineBackend, SegBackend, SegError, SegParams,
};
use overseec_engine::synth;

fn tiled(tile_size: usize, overlap: usize) -> SegParams {
    let tiling = TilingParams { tile_size, overlap };
    SegParams {
        seg_tiling: tiling,
        refine_tiling: tiling,
        ..SegParams::default()
    }
}

fn scene_classes() -> ClassSet {
    let mut set = ClassSet::new();
    for (name, _) in synth::CLASSES {
        let g = if name == "road" { Geometry::Linear } else { Geometry::Areal };
        set.insert(name, g, Provenance::Prompt);
    }
    set
}

// Deterministic per-pixel values that depend on the whole tile, so
// overlapping tiles disagree.
struct TileDependent;

impl SegBackend for TileDependent {
    fn id(&self) -> String {
        "tile-dependent".into()
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        let corner = tile.get_pixel(0, 0).0;
        let salt = class.name.len() as u32;
        let values = tile
            .pixels()
            .map(|p| {
                let h = (p.0[0] as u32 * 7 + p.0[1] as u32 * 13 + corner[0] as u32 * 29 + corner[1] as u32 * 3 + salt) % 256;
                (h as f32 / 255.0) as f64
            })
            .collect();
        ProbabilityMap::new(image_shape(tile), values).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

fn gradient(h: u32, w: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 5 % 256) as u8, (y * 3 % 256) as u8, 7]))
}

#[test]
fn single_tile_passes_backend_output_through() {
    let img = gradient(40, 30);
    let class = ClassSpec::new("road", Geometry::Linear);
    let out = coarse_segment(&img, std::slice::from_ref(&class), &TileDependent, &tiled(64, 8)).unwrap();
    let direct = TileDependent.segment_tile(&img, &class).unwrap();
    assert_eq!(out["road"].probability, direct);
}

#[test]
fn stitching_happens_before_thresholding() {
    let img = gradient(100, 90);
    let class = ClassSpec::new("grass", Geometry::Areal);
    let params = tiled(32, 12);
    let out = coarse_segment(&img, std::slice::from_ref(&class), &TileDependent, &params).unwrap();

    // independent mean over every tile covering each pixel
    let shape = image_shape(&img);
    let mut sums = vec![0.0f64; shape.len()];
    let mut counts = vec![0u32; shape.len()];
    for t in plan_tiles(shape, params.seg_tiling).unwrap() {
        let crop = crop_rgb(&img, t.row0, t.col0, t.height, t.width);
        let p = TileDependent.segment_tile(&crop, &class).unwrap();
        for r in 0..t.height {
            for c in 0..t.width {
                let i = (t.row0 + r) * shape.width + t.col0 + c;
                sums[i] += p.get(r, c);
                counts[i] += 1;
            }
        }
    }
    let mut overlap_pixels = 0;
    for i in 0..shape.len() {
        let mean = sums[i] / counts[i] as f64;
        let got = out["grass"].probability.values()[i];
        assert!((got - mean).abs() < 1e-6, "pixel {i}: {got} vs {mean}");
        assert_eq!(out["grass"].mask.values()[i], got >= Thresholds::default().areal);
        overlap_pixels += usize::from(counts[i] > 1);
    }
    assert!(overlap_pixels > 0);
}

#[test]
fn fixture_backend_recovers_ground_truth() {
    let img = synth::image();
    let semantic = synth::semantic_map();
    let seg = PaletteSeg::new(synth::palette(), "scene");
    let classes = scene_classes();
    let coarse = coarse_segment(&img, &classes.specs(), &seg, &tiled(96, 24)).unwrap();
    for (name, _) in synth::CLASSES {
        assert_eq!(coarse[name].mask, semantic.mask_of(name), "{name}");
    }
}

#[test]
fn zero_backend_gives_empty_masks() {
    let img = synth::image();
    let out = run_pipeline(&img, &scene_classes(), &ConstantSeg(0.0), &IdentityRefine, &tiled(128, 16)).unwrap();
    for layers in out.values() {
        assert!(layers.coarse_mask.is_empty());
        assert!(layers.refined_mask.is_empty());
        assert!(layers.gated.values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identity_refinement_keeps_the_coarse_mask() {
    let img = synth::image();
    let seg = PaletteSeg::new(synth::palette(), "scene");
    let out = run_pipeline(&img, &scene_classes(), &seg, &IdentityRefine, &tiled(100, 30)).unwrap();
    for layers in out.values() {
        assert_eq!(layers.refined_mask, layers.coarse_mask);
    }
}

// Coarse output that bleeds a few pixels past a thin band, as a blurry
// language-grounded model would.
struct BlurredBand {
    truth: BinaryMask,
}

impl SegBackend for BlurredBand {
    fn id(&self) -> String {
        "blurred".into()
    }

    fn segment_tile(&self, tile: &RgbImage, _class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        assert_eq!(image_shape(tile), self.truth.shape(), "test uses a single tile");
        let dt = overseec_core::mask::distance_transform(&self.truth);
        let values = dt.values().iter().map(|&d| if d == 0.0 { 0.9 } else if d <= 4.0 { 0.5 } else { 0.0 }).collect();
        Ok(ProbabilityMap::new(self.truth.shape(), values).unwrap())
    }
}

#[test]
fn refinement_sharpens_a_blurred_band() {
    let shape = GridShape::new(48, 48).unwrap();
    let truth = BinaryMask::from_fn(shape, |r, _| (22..27).contains(&r));
    let img = RgbImage::from_fn(48, 48, |_, y| if (22..27).contains(&y) { Rgb([128, 128, 128]) } else { Rgb([96, 160, 64]) });
    let palette = Palette::new([("road", [128, 128, 128]), ("grass", [96, 160, 64])]);
    let classes = ClassSet::from_specs(&[ClassSpec::new("road", Geometry::Linear)], Provenance::Prompt);
    let out = run_pipeline(
        &img,
        &classes,
        &BlurredBand { truth: truth.clone() },
        &PaletteRefine::new(palette, 2.0, "t"),
        &tiled(64, 8),
    )
    .unwrap();
    let road = &out["road"];
    let coarse_iou = iou(&road.coarse_mask, &truth).unwrap();
    let refined_iou = iou(&road.refined_mask, &truth).unwrap();
    assert!(refined_iou > coarse_iou, "{refined_iou} vs {coarse_iou}");
    // coarse mask is the band widened by four pixels each side: 5 / 13
    assert!((coarse_iou - 5.0 / 13.0).abs() < 1e-12);
    assert_eq!(refined_iou, 1.0);
}

#[test]
fn empty_priors_are_not_sent_to_the_refiner() {
    let img = synth::image();
    let refiner = Counting::new(IdentityRefine);
    let out = run_pipeline(&img, &scene_classes(), &ConstantSeg(0.1), &refiner, &tiled(64, 16)).unwrap();
    assert_eq!(refiner.calls(), 0);
    assert!(out.values().all(|l| l.refined_mask.is_empty()));
}

#[test]
fn class_layers_are_consistent_on_the_scene() {
    let img = synth::image();
    let seg = PaletteSeg::new(synth::palette(), "scene");
    let refiner = PaletteRefine::new(synth::palette(), 3.0, "scene");
    let mut classes = scene_classes();
    classes.insert("trail", Geometry::Linear, Provenance::Default);
    let params = tiled(96, 32);
    let out = run_pipeline(&img, &classes, &seg, &refiner, &params).unwrap();
    assert_eq!(out.len(), classes.len());
    for layers in out.values() {
        layers.check(image_shape(&img), &params.thresholds).unwrap();
    }
    assert!(out["trail"].refined_mask.is_empty());
    let semantic = synth::semantic_map();
    assert_eq!(out["water"].refined_mask, semantic.mask_of("water"));
}

#[test]
fn empty_class_set_is_an_error() {
    let img = synth::image();
    let r = run_pipeline(&img, &ClassSet::new(), &ConstantSeg(0.5), &IdentityRefine, &SegParams::default());
    assert!(matches!(r, Err(SegError::EmptyClassSet)));
}

#[test]
fn output_does_not_depend_on_scheduling() {
    let img = gradient(120, 140);
    let classes = scene_classes();
    let mut params = tiled(40, 15);
    params.max_in_flight = 1;
    let serial = coarse_segment(&img, &classes.specs(), &TileDependent, &params).unwrap();
    params.max_in_flight = 16;
    let parallel = coarse_segment(&img, &classes.specs(), &TileDependent, &params).unwrap();
    assert_eq!(serial, parallel);
}

// Fails the first `failures` calls for every distinct tile, then delegates.
struct Flaky<B> {
    inner: B,
    failures: u32,
    seen: Mutex<HashMap<Vec<u8>, u32>>,
}

impl<B> Flaky<B> {
    fn new(inner: B, failures: u32) -> Self {
        Self {
            inner,
            failures,
            seen: Mutex::new(HashMap::new()),
        }
    }

    fn should_fail(&self, tile: &RgbImage, class: &ClassSpec) -> bool {
        let mut key = tile.as_raw().clone();
        key.extend_from_slice(class.name.as_bytes());
        let mut seen = self.seen.lock().unwrap();
        let n = seen.entry(key).or_insert(0);
        *n += 1;
        *n <= self.failures
    }
}

impl<B: SegBackend> SegBackend for Flaky<B> {
    fn id(&self) -> String {
        "flaky".into()
    }

    fn segment_tile(&self, tile: &RgbImage, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        if self.should_fail(tile, class) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.inner.segment_tile(tile, class)
    }
}

impl<B: RefineBackend> RefineBackend for Flaky<B> {
    fn id(&self) -> String {
        "flaky".into()
    }

    fn refine_tile(&self, tile: &RgbImage, coarse: &BinaryMask, class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        if self.should_fail(tile, class) {
            return Err(BackendError::Status {
                status: 503,
                body: "busy".into(),
            });
        }
        self.inner.refine_tile(tile, coarse, class)
    }
}

#[test]
fn transient_tile_failures_are_retried() {
    let img = gradient(64, 64);
    let class = ClassSpec::new("road", Geometry::Linear);
    let mut params = tiled(32, 0);
    params.retries = 2;
    let flaky = Flaky::new(TileDependent, 2);
    let got = coarse_segment(&img, std::slice::from_ref(&class), &flaky, &params).unwrap();
    let clean = coarse_segment(&img, std::slice::from_ref(&class), &TileDependent, &params).unwrap();
    assert_eq!(got, clean);
}

#[test]
fn persistent_tile_failure_names_tile_and_class() {
    let img = gradient(64, 64);
    let class = ClassSpec::new("road", Geometry::Linear);
    let mut params = tiled(32, 0);
    params.retries = 1;
    params.max_in_flight = 1;
    let flaky = Flaky::new(TileDependent, 5);
    match coarse_segment(&img, std::slice::from_ref(&class), &flaky, &params) {
        Err(SegError::TileFailure {
            class, tile, attempts, ..
        }) => {
            assert_eq!(class, "road");
            assert!(tile < 4);
            assert_eq!(attempts, 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn failed_refinement_falls_back_to_coarse_unless_strict() {
    let img = synth::image();
    let seg = PaletteSeg::new(synth::palette(), "scene");
    let classes = ClassSet::from_specs(&[ClassSpec::new("water", Geometry::Areal)], Provenance::Prompt);
    let mut params = tiled(128, 0);
    params.retries = 0;
    let coarse = coarse_segment(&img, &classes.specs(), &seg, &params).unwrap();
    let broken = Flaky::new(IdentityRefine, u32::MAX);
    let out = refine(&img, &classes.specs(), coarse.clone(), &broken, &params).unwrap();
    // tiles with water keep their coarse values; empty-prior tiles stay zero
    assert!(out["water"].refined_mask == coarse["water"].mask);
    let (refined, prior) = (&out["water"].refined_probability, &coarse["water"].probability);
    for (i, &m) in coarse["water"].mask.values().iter().enumerate() {
        if m {
            assert_eq!(refined.values()[i], prior.values()[i]);
        }
    }

    params.strict_refine = true;
    let strict = refine(&img, &classes.specs(), coarse, &broken, &params);
    assert!(matches!(strict, Err(SegError::TileFailure { .. })));
}

struct WrongShape;

impl SegBackend for WrongShape {
    fn id(&self) -> String {
        "wrong".into()
    }

    fn segment_tile(&self, _tile: &RgbImage, _class: &ClassSpec) -> Result<ProbabilityMap, BackendError> {
        Ok(ProbabilityMap::zeros(GridShape::new(3, 3).unwrap()))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_tile_size: 64,
            batch_limit: 1,
        }
    }
}

#[test]
fn backend_contract_violations_are_reported() {
    let img = gradient(20, 20);
    let class = ClassSpec::new("road", Geometry::Linear);
    assert!(matches!(
        coarse_segment(&img, std::slice::from_ref(&class), &WrongShape, &tiled(64, 0)),
        Err(SegError::TileShape { .. })
    ));
    assert!(matches!(
        coarse_segment(&img, std::slice::from_ref(&class), &WrongShape, &tiled(128, 0)),
        Err(SegError::TileTooLarge { tile_size: 128, max: 64 })
    ));
}
