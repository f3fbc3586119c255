//! Session orchestration over the artifact store: interpretation,
//! segmentation and composition results are cached so re-prompting only
//! recomputes what changed.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::RgbImage;
use overseec_core::classes::{canonical_name, ClassSet};
use overseec_core::dsl::{evaluate, parse, validate, DslError, EvalError, EvalInputs, ValidatedProgram, ValidationError};
use overseec_core::io::{decode_mask_png, decode_rf32, decode_rgb_png, encode_heatmap_png, encode_mask_png, encode_rf32, FormatError};
use overseec_core::metrics::RankMap;
use overseec_core::planner::{plan, plan_downsampled, PlanError, PlanQuery, Path};
use overseec_core::raster::{BinaryMask, ClassSpec, Costmap, Pixel, ProbabilityMap, RasterError, TilingParams, Thresholds};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpret::{compose_program, derive_rank_map, identify_entities, InterpretError, PromptText, TEMPLATE_VERSION};
use crate::llm::LlmBackend;
use crate::segment::{run_pipeline, ClassLayers, RefineBackend, SegBackend, SegError, SegParams};
use crate::store::{key_of, ArtifactRef, Store, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("image: {0}")]
    Image(#[from] FormatError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Segment(#[from] SegError),
    #[error(transparent)]
    Syntax(#[from] DslError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("no masks for class {0:?}")]
    MissingMasks(String),
    #[error("compose needs a prompt or a program")]
    NothingToCompose,
}

impl EngineError {
    /// Whether the error names a missing input rather than a failed
    /// computation.
    pub fn is_not_found(&self) -> bool {
        matches!(self, EngineError::Store(StoreError::NotFound(_)))
    }
}

/// Artifact refs of one class's rasters. Probabilities are RF32, masks PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRefs {
    pub spec: ClassSpec,
    pub coarse_probability: ArtifactRef,
    pub coarse_mask: ArtifactRef,
    pub refined_probability: ArtifactRef,
    pub refined_mask: ArtifactRef,
    pub gated: ArtifactRef,
}

impl MaskRefs {
    pub fn refs(&self) -> [&ArtifactRef; 5] {
        [
            &self.coarse_probability,
            &self.coarse_mask,
            &self.refined_probability,
            &self.refined_mask,
            &self.gated,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub classes: ClassSet,
    pub ranks: RankMap,
    pub classes_ref: ArtifactRef,
    pub ranks_ref: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub masks: BTreeMap<String, MaskRefs>,
    /// Classes that went through the backends on this call; the rest came
    /// from the cache.
    pub segmented: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeOutcome {
    pub source: String,
    pub program: ArtifactRef,
    pub costmap: ArtifactRef,
    pub heatmap: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub start: Pixel,
    pub goal: Pixel,
    pub path: Path,
}

/// Everything one session produced, by reference.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionManifest {
    pub image: Option<ArtifactRef>,
    pub prompt: Option<String>,
    pub classes: Option<ClassSet>,
    pub ranks: Option<RankMap>,
    pub masks: BTreeMap<String, MaskRefs>,
    pub program_source: Option<String>,
    pub program: Option<ArtifactRef>,
    pub costmap: Option<ArtifactRef>,
    pub heatmap: Option<ArtifactRef>,
    pub plans: Vec<PlanRecord>,
}

impl SessionManifest {
    pub fn refs(&self) -> Vec<&ArtifactRef> {
        let mut out: Vec<&ArtifactRef> = self.image.iter().chain(&self.program).chain(&self.costmap).chain(&self.heatmap).collect();
        for m in self.masks.values() {
            out.extend(m.refs());
        }
        out
    }

    /// Re-reads every referenced artifact, checking it exists and still
    /// hashes to its ref.
    pub fn verify(&self, store: &Store) -> Result<(), StoreError> {
        for r in self.refs() {
            store.get(r)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub seg: SegParams,
    pub llm_retries: u32,
    /// Integer down-sampling factor for planning; 1 plans at full resolution.
    pub plan_factor: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            seg: SegParams::default(),
            llm_retries: crate::interpret::DEFAULT_MAX_RETRIES,
            plan_factor: 1,
        }
    }
}

/// One end-to-end request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub image: ArtifactRef,
    pub prompt: String,
    /// Hand-written program; skips the compose model call.
    pub program: Option<String>,
    pub queries: Vec<PlanQuery>,
}

#[derive(Serialize)]
struct MaskKey<'a> {
    version: u32,
    image: &'a ArtifactRef,
    class: &'a str,
    geometry: overseec_core::raster::Geometry,
    seg: String,
    refine: String,
    seg_tiling: TilingParams,
    refine_tiling: TilingParams,
    thresholds: Thresholds,
    strict_refine: bool,
}

#[derive(Serialize)]
struct LlmKey<'a> {
    backend: String,
    template: &'a str,
    task: &'a str,
    prompt: &'a str,
    classes: Option<&'a ClassSet>,
}

const MASK_NS: &str = "masks";
const LLM_NS: &str = "llm";
const SESSION_NS: &str = "sessions";

pub struct Engine {
    store: Store,
    seg: Arc<dyn SegBackend>,
    refine: Arc<dyn RefineBackend>,
    llm: Arc<dyn LlmBackend>,
    options: EngineOptions,
}

impl Engine {
    pub fn new(
        store: Store,
        seg: Arc<dyn SegBackend>,
        refine: Arc<dyn RefineBackend>,
        llm: Arc<dyn LlmBackend>,
        options: EngineOptions,
    ) -> Self {
        Self {
            store,
            seg,
            refine,
            llm,
            options,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    /// Validates PNG imagery and stores its bytes as uploaded.
    pub fn put_image(&self, bytes: &[u8]) -> Result<ArtifactRef, EngineError> {
        decode_rgb_png(bytes)?;
        Ok(self.store.put(bytes)?)
    }

    pub fn load_image(&self, image: &ArtifactRef) -> Result<RgbImage, EngineError> {
        Ok(decode_rgb_png(&self.store.get(image)?)?)
    }

    fn llm_key(&self, task: &str, prompt: &PromptText, classes: Option<&ClassSet>) -> String {
        key_of(&LlmKey {
            backend: self.llm.id(),
            template: TEMPLATE_VERSION,
            task,
            prompt: prompt.as_str(),
            classes,
        })
    }

    fn cached<T>(&self, key: &str, compute: impl FnOnce() -> Result<T, EngineError>) -> Result<(T, ArtifactRef), EngineError>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        if let Some(r) = self.store.pointer(LLM_NS, key)? {
            return Ok((self.store.get_json(&r)?, r));
        }
        let value = compute()?;
        let r = self.store.put_json(&value)?;
        self.store.set_pointer(LLM_NS, key, &r)?;
        Ok((value, r))
    }

    /// Extracts classes and a preference ranking from `prompt`. Model
    /// answers are cached per (backend, template version, prompt).
    pub fn interpret(&self, prompt: &str) -> Result<Interpretation, EngineError> {
        let prompt = PromptText::new(prompt)?;
        let retries = self.options.llm_retries;
        let (classes, classes_ref) = self.cached(&self.llm_key("entities", &prompt, None), || {
            Ok(identify_entities(&prompt, self.llm.as_ref(), retries)?)
        })?;
        let (ranks, ranks_ref) = self.cached(&self.llm_key("ranks", &prompt, Some(&classes)), || {
            Ok(derive_rank_map(&prompt, &classes, self.llm.as_ref(), retries)?)
        })?;
        Ok(Interpretation {
            classes,
            ranks,
            classes_ref,
            ranks_ref,
        })
    }

    fn mask_key(&self, image: &ArtifactRef, spec: &ClassSpec) -> String {
        let p = &self.options.seg;
        key_of(&MaskKey {
            version: 1,
            image,
            class: &canonical_name(&spec.name),
            geometry: spec.geometry,
            seg: self.seg.id(),
            refine: self.refine.id(),
            seg_tiling: p.seg_tiling,
            refine_tiling: p.refine_tiling,
            thresholds: p.thresholds,
            strict_refine: p.strict_refine,
        })
    }

    fn cached_masks(&self, key: &str) -> Result<Option<MaskRefs>, EngineError> {
        let Some(r) = self.store.pointer(MASK_NS, key)? else {
            return Ok(None);
        };
        let refs: MaskRefs = self.store.get_json(&r)?;
        Ok(refs.refs().iter().all(|r| self.store.contains(r)).then_some(refs))
    }

    fn persist_layers(&self, layers: &ClassLayers) -> Result<MaskRefs, EngineError> {
        let rf32 = |p: &ProbabilityMap| self.store.put(&encode_rf32(p.grid()));
        let png = |m: &BinaryMask| self.store.put(&encode_mask_png(m));
        Ok(MaskRefs {
            spec: layers.spec.clone(),
            coarse_probability: rf32(&layers.coarse_probability)?,
            coarse_mask: png(&layers.coarse_mask)?,
            refined_probability: rf32(&layers.refined_probability)?,
            refined_mask: png(&layers.refined_mask)?,
            gated: rf32(&layers.gated)?,
        })
    }

    /// Segments every class of `classes` in `image`, running the backends
    /// only for classes without cached masks.
    pub fn segment(&self, image: &ArtifactRef, classes: &ClassSet) -> Result<SegmentOutcome, EngineError> {
        if classes.is_empty() {
            return Err(SegError::EmptyClassSet.into());
        }
        let mut masks = BTreeMap::new();
        let mut missing = ClassSet::new();
        let mut keys = BTreeMap::new();
        for entry in classes.iter() {
            let key = self.mask_key(image, &entry.spec());
            match self.cached_masks(&key)? {
                Some(refs) => {
                    masks.insert(entry.name.clone(), refs);
                }
                None => {
                    missing.insert(&entry.name, entry.geometry, entry.provenance);
                    keys.insert(entry.name.clone(), key);
                }
            }
        }
        let segmented: Vec<String> = missing.names().map(str::to_string).collect();
        if !missing.is_empty() {
            let img = self.load_image(image)?;
            let layers = run_pipeline(&img, &missing, self.seg.as_ref(), self.refine.as_ref(), &self.options.seg)?;
            for (name, layer) in &layers {
                let refs = self.persist_layers(layer)?;
                let r = self.store.put_json(&refs)?;
                self.store.set_pointer(MASK_NS, &keys[name], &r)?;
                masks.insert(name.clone(), refs);
            }
        }
        Ok(SegmentOutcome { masks, segmented })
    }

    pub fn load_probability(&self, r: &ArtifactRef) -> Result<ProbabilityMap, EngineError> {
        let grid = decode_rf32(&self.store.get(r)?)?;
        Ok(ProbabilityMap::from_grid(grid)?)
    }

    pub fn load_mask(&self, r: &ArtifactRef) -> Result<BinaryMask, EngineError> {
        Ok(decode_mask_png(&self.store.get(r)?)?)
    }

    pub fn load_costmap(&self, r: &ArtifactRef) -> Result<Costmap, EngineError> {
        let grid = decode_rf32(&self.store.get(r)?)?;
        Ok(Costmap::from_grid(grid)?)
    }

    /// Gets a validated program, from `source` when given, else from the
    /// model (cached like the other model answers).
    pub fn program(&self, prompt: Option<&str>, source: Option<&str>, classes: &ClassSet) -> Result<ValidatedProgram, EngineError> {
        if let Some(source) = source {
            return Ok(validate(&parse(source)?, classes)?);
        }
        let prompt = PromptText::new(prompt.ok_or(EngineError::NothingToCompose)?)?;
        let retries = self.options.llm_retries;
        let (source, _) = self.cached(&self.llm_key("compose", &prompt, Some(classes)), || {
            Ok(compose_program(&prompt, classes, self.llm.as_ref(), retries)?.source)
        })?;
        Ok(validate(&parse(&source)?, classes)?)
    }

    /// Evaluates a program over stored masks and stores the costmap.
    pub fn compose(
        &self,
        prompt: Option<&str>,
        source: Option<&str>,
        classes: &ClassSet,
        masks: &BTreeMap<String, MaskRefs>,
    ) -> Result<ComposeOutcome, EngineError> {
        let program = self.program(prompt, source, classes)?;
        let mut inputs = EvalInputs::default();
        for name in program.program().referenced_classes() {
            let key = canonical_name(name);
            if inputs.masks.contains_key(&key) {
                continue;
            }
            let refs = masks.get(&key).ok_or_else(|| EngineError::MissingMasks(key.clone()))?;
            inputs.insert(&key, self.load_mask(&refs.refined_mask)?, self.load_probability(&refs.gated)?);
        }
        let costmap = evaluate(&program, &inputs)?;
        let formatted = overseec_core::dsl::format(program.program());
        let program_ref = self.store.put(formatted.as_bytes())?;
        let costmap_ref = self.store.put(&encode_rf32(costmap.grid()))?;
        let heatmap = self.store.put(&encode_heatmap_png(costmap.grid()))?;
        Ok(ComposeOutcome {
            source: formatted,
            program: program_ref,
            costmap: costmap_ref,
            heatmap,
        })
    }

    pub fn plan(&self, costmap: &ArtifactRef, query: PlanQuery) -> Result<Path, EngineError> {
        let costmap = self.load_costmap(costmap)?;
        self.plan_on(&costmap, query)
    }

    fn plan_on(&self, costmap: &Costmap, query: PlanQuery) -> Result<Path, EngineError> {
        Ok(match self.options.plan_factor {
            0 | 1 => plan(costmap, query)?,
            f => plan_downsampled(costmap, query, f)?,
        })
    }

    /// Interpret, segment, compose and plan in one go.
    pub fn run(&self, request: &RunRequest) -> Result<SessionManifest, EngineError> {
        self.load_image(&request.image)?;
        let interp = self.interpret(&request.prompt)?;
        let seg = self.segment(&request.image, &interp.classes)?;
        let composed = self.compose(Some(&request.prompt), request.program.as_deref(), &interp.classes, &seg.masks)?;
        let costmap = self.load_costmap(&composed.costmap)?;
        let plans = request
            .queries
            .iter()
            .map(|q| {
                Ok(PlanRecord {
                    start: q.start,
                    goal: q.goal,
                    path: self.plan_on(&costmap, *q)?,
                })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        Ok(SessionManifest {
            image: Some(request.image.clone()),
            prompt: Some(request.prompt.clone()),
            classes: Some(interp.classes),
            ranks: Some(interp.ranks),
            masks: seg.masks,
            program_source: Some(composed.source),
            program: Some(composed.program),
            costmap: Some(composed.costmap),
            heatmap: Some(composed.heatmap),
            plans,
        })
    }

    /// Stores `manifest` and points session `id` at it.
    pub fn save_session(&self, id: &str, manifest: &SessionManifest) -> Result<ArtifactRef, EngineError> {
        let r = self.store.put_json(manifest)?;
        self.store.set_pointer(SESSION_NS, id, &r)?;
        Ok(r)
    }

    pub fn load_session(&self, id: &str) -> Result<Option<SessionManifest>, EngineError> {
        match self.store.pointer(SESSION_NS, id)? {
            Some(r) => Ok(Some(self.store.get_json(&r)?)),
            None => Ok(None),
        }
    }
}
