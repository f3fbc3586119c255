use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::io::Write as _;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use overseec_core::classes::{ClassSet, Provenance};
use overseec_core::dsl::parse;
use overseec_core::io::{decode_mask_png, decode_rf32};
use overseec_core::metrics::{iou, mean_hausdorff, rrpi, EvaluationReport, QueryRecord, RankMap, SemanticMap};
use overseec_core::planner::{plan_downsampled, sample_queries, straight_line, Path as PlanPath, PlanQuery};
use overseec_core::raster::{Costmap, Geometry, Grid, GridShape, Pixel};
use overseec_engine::session::{Engine, EngineError, MaskRefs, RunRequest, SessionManifest};
use overseec_engine::synth;
use overseec_service::api::{router, serve, AppState};
use overseec_service::config::Config;
use overseec_service::error::ErrorBody;
use overseec_service::setup::{build_engine, describe};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Open-vocabulary costmaps from natural-language mission prompts.
#[derive(Parser)]
#[command(name = "overseec", version)]
struct Cli {
    /// TOML configuration file; OVERSEEC_* variables override it.
    #[arg(long, global = true, env = "OVERSEEC_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interpret, segment, compose and plan in one go.
    Run(RunArgs),
    /// Segment classes and write their masks.
    Segment(SegmentArgs),
    /// Build a costmap from a prompt or a DSL program.
    Compose(ComposeArgs),
    /// Plan a path on an RF32 costmap.
    Plan(PlanArgs),
    /// Score paths and masks.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Start the REST service.
    Serve(ServeArgs),
    /// Write the synthetic test scene with fixture backends.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct Backends {
    /// `fixture:DIR` or `http:URL`.
    #[arg(long)]
    seg_backend: Option<String>,
    /// `fixture:DIR` or `http:URL`; defaults to the segmentation source.
    #[arg(long)]
    refine_backend: Option<String>,
    /// `stub:DIR` or `http:URL`.
    #[arg(long)]
    llm_backend: Option<String>,
    /// Artifact store; defaults to `<out>/store`.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Hand-written program used instead of asking the model.
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long, default_value = "overseec-out")]
    out: PathBuf,
    /// Random start/goal pairs to plan.
    #[arg(long, default_value_t = 0)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit query `x0,y0:x1,y1`; repeatable.
    #[arg(long = "query")]
    query: Vec<String>,
    #[command(flatten)]
    backends: Backends,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    image: PathBuf,
    /// Class as `name` or `name:linear|areal`; repeatable.
    #[arg(long = "class")]
    classes: Vec<String>,
    /// Take the classes from this prompt instead.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long, default_value = "overseec-out")]
    out: PathBuf,
    #[command(flatten)]
    backends: Backends,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    program: Option<PathBuf>,
    /// Class as `name` or `name:linear|areal`; repeatable.
    #[arg(long = "class")]
    classes: Vec<String>,
    #[arg(long, default_value = "overseec-out")]
    out: PathBuf,
    #[command(flatten)]
    backends: Backends,
}

#[derive(Args)]
struct PlanArgs {
    /// RF32 costmap.
    #[arg(long)]
    costmap: PathBuf,
    /// `x,y`
    #[arg(long)]
    start: String,
    /// `x,y`
    #[arg(long)]
    goal: String,
    #[arg(long, default_value_t = 1)]
    downsample: usize,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// RRPI report over planned paths, optionally against the straight-line
    /// baseline.
    Rrpi {
        /// Semantic map description (`{"image": PNG of class ids, "names": [...]}`).
        #[arg(long)]
        semantic: PathBuf,
        /// JSON object of class ranks; defaults to the manifest's.
        #[arg(long)]
        ranks: Option<PathBuf>,
        /// Session manifest holding the plans.
        #[arg(long)]
        manifest: PathBuf,
        /// Store holding the manifest's costmap; defaults to `store` next to it.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
    },
    /// Mean Hausdorff distance of a path to human reference paths.
    Hausdorff {
        #[arg(long)]
        system: PathBuf,
        #[arg(long = "human", required = true)]
        humans: Vec<PathBuf>,
        /// Grid as `HEIGHTxWIDTH`.
        #[arg(long)]
        shape: String,
    },
    /// Intersection over union of two mask PNGs.
    Iou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    backends: Backends,
}

fn load_config(path: Option<&Path>, b: &Backends, out: Option<&Path>) -> Result<Config> {
    let mut config = Config::load(path)?;
    if let Some(s) = &b.seg_backend {
        config.segmentation.backend = s.clone();
    }
    if let Some(s) = &b.refine_backend {
        config.segmentation.refine_backend = Some(s.clone());
    }
    if let Some(s) = &b.llm_backend {
        config.llm.backend = s.clone();
    }
    if let Some(t) = b.tile_size {
        config.segmentation.tile_size = t;
    }
    if let Some(o) = b.overlap {
        config.segmentation.overlap = o;
    }
    match (&b.store, out) {
        (Some(s), _) => config.store.root = s.clone(),
        (None, Some(out)) => config.store.root = out.join("store"),
        (None, None) => {}
    }
    config.check()?;
    Ok(config)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_vec_pretty(value)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn pixel(text: &str) -> Result<Pixel> {
    let (x, y) = text.split_once(',').ok_or_else(|| anyhow!("expected x,y, got {text:?}"))?;
    Ok(Pixel::new(x.trim().parse()?, y.trim().parse()?))
}

fn query(text: &str) -> Result<PlanQuery> {
    let (a, b) = text.split_once(':').ok_or_else(|| anyhow!("expected x0,y0:x1,y1, got {text:?}"))?;
    Ok(PlanQuery::new(pixel(a)?, pixel(b)?))
}

fn class_arg(text: &str) -> Result<(String, Geometry)> {
    match text.rsplit_once(':') {
        Some((name, "linear")) => Ok((name.into(), Geometry::Linear)),
        Some((name, "areal")) => Ok((name.into(), Geometry::Areal)),
        Some((_, g)) => bail!("unknown geometry {g:?} (linear or areal)"),
        None => Ok((text.into(), Geometry::Areal)),
    }
}

fn class_set(args: &[String]) -> Result<ClassSet> {
    let mut set = ClassSet::new();
    for a in args {
        let (name, geometry) = class_arg(a)?;
        set.insert(&name, geometry, Provenance::Prompt);
    }
    Ok(set)
}

// Declared classes keep their geometry; classes only referenced are areal.
fn program_classes(source: &str) -> Result<ClassSet> {
    let program = parse(source)?;
    let mut set = ClassSet::new();
    for spec in program.classes() {
        set.insert(&spec.name, spec.geometry, Provenance::Prompt);
    }
    for name in program.referenced_classes() {
        set.insert(name, Geometry::Areal, Provenance::Prompt);
    }
    Ok(set)
}

fn file_stem(class: &str) -> String {
    class
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn export_masks(engine: &Engine, masks: &BTreeMap<String, MaskRefs>, out: &Path) -> Result<()> {
    for (name, refs) in masks {
        let stem = file_stem(name);
        write(&out.join("masks").join(format!("{stem}.png")), engine.store().get(&refs.refined_mask)?)?;
        write(&out.join("masks").join(format!("{stem}.coarse.png")), engine.store().get(&refs.coarse_mask)?)?;
        write(&out.join("masks").join(format!("{stem}.rf32")), engine.store().get(&refs.gated)?)?;
    }
    write_json(&out.join("masks.json"), masks)
}

fn export_costmap(engine: &Engine, manifest: &SessionManifest, out: &Path) -> Result<()> {
    if let Some(source) = &manifest.program_source {
        write(&out.join("program.dsl"), source)?;
    }
    if let Some(c) = &manifest.costmap {
        write(&out.join("costmap.rf32"), engine.store().get(c)?)?;
    }
    if let Some(h) = &manifest.heatmap {
        write(&out.join("costmap.png"), engine.store().get(h)?)?;
    }
    Ok(())
}

fn run(config: Option<&Path>, args: RunArgs) -> Result<Value> {
    let engine = build_engine(&load_config(config, &args.backends, Some(&args.out))?)?;
    let image = engine.put_image(&read(&args.image)?)?;
    let shape = overseec_core::io::image_shape(&engine.load_image(&image)?);
    let mut queries = args.query.iter().map(|q| query(q)).collect::<Result<Vec<_>>>()?;
    if args.queries > 0 {
        queries.extend(sample_queries(shape, args.queries, args.seed)?);
    }
    let program = match &args.program {
        Some(p) => Some(String::from_utf8(read(p)?).context("program is not UTF-8")?),
        None => None,
    };
    let manifest = engine.run(&RunRequest {
        image,
        prompt: args.prompt,
        program,
        queries,
    })?;
    let session = uuid::Uuid::new_v4().simple().to_string();
    engine.save_session(&session, &manifest)?;
    export_masks(&engine, &manifest.masks, &args.out)?;
    export_costmap(&engine, &manifest, &args.out)?;
    write_json(&args.out.join("plans.json"), &manifest.plans)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(json!({
        "session": session,
        "out": args.out,
        "classes": manifest.classes.as_ref().map(|c| c.names().map(str::to_string).collect::<Vec<_>>()),
        "costmap": manifest.costmap,
        "plans": manifest.plans.len(),
    }))
}

fn segment(config: Option<&Path>, args: SegmentArgs) -> Result<Value> {
    let engine = build_engine(&load_config(config, &args.backends, Some(&args.out))?)?;
    let image = engine.put_image(&read(&args.image)?)?;
    let classes = match (&args.prompt, args.classes.is_empty()) {
        (_, false) => class_set(&args.classes)?,
        (Some(p), true) => engine.interpret(p)?.classes,
        (None, true) => bail!("give --class or --prompt"),
    };
    let outcome = engine.segment(&image, &classes)?;
    export_masks(&engine, &outcome.masks, &args.out)?;
    write_json(&args.out.join("classes.json"), &classes)?;
    Ok(json!({ "out": args.out, "segmented": outcome.segmented, "cached": outcome.masks.len() - outcome.segmented.len() }))
}

fn compose(config: Option<&Path>, args: ComposeArgs) -> Result<Value> {
    let engine = build_engine(&load_config(config, &args.backends, Some(&args.out))?)?;
    let image = engine.put_image(&read(&args.image)?)?;
    let source = match &args.program {
        Some(p) => Some(String::from_utf8(read(p)?).context("program is not UTF-8")?),
        None => None,
    };
    let classes = if !args.classes.is_empty() {
        class_set(&args.classes)?
    } else if let Some(src) = &source {
        program_classes(src)?
    } else if let Some(p) = &args.prompt {
        engine.interpret(p)?.classes
    } else {
        bail!("give --prompt or --program");
    };
    let seg = engine.segment(&image, &classes)?;
    let out = engine.compose(args.prompt.as_deref(), source.as_deref(), &classes, &seg.masks)?;
    let manifest = SessionManifest {
        image: Some(image),
        prompt: args.prompt.clone(),
        classes: Some(classes),
        masks: seg.masks,
        program_source: Some(out.source.clone()),
        program: Some(out.program.clone()),
        costmap: Some(out.costmap.clone()),
        heatmap: Some(out.heatmap.clone()),
        ..SessionManifest::default()
    };
    export_costmap(&engine, &manifest, &args.out)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(json!({ "out": args.out, "segmented": seg.segmented, "costmap": out.costmap }))
}

fn plan(args: PlanArgs) -> Result<Value> {
    let costmap = Costmap::from_grid(decode_rf32(&read(&args.costmap)?)?)?;
    let q = PlanQuery::new(pixel(&args.start)?, pixel(&args.goal)?);
    let path = plan_downsampled(&costmap, q, args.downsample)?;
    Ok(json!({ "start": q.start, "goal": q.goal, "length": path.len(), "path": path }))
}

#[derive(Deserialize)]
struct SemanticFile {
    image: PathBuf,
    names: Vec<String>,
}

fn load_semantic(path: &Path) -> Result<SemanticMap> {
    let desc: SemanticFile = read_json(path)?;
    let img_path = path.parent().unwrap_or(Path::new(".")).join(&desc.image);
    let img = image::load_from_memory(&read(&img_path)?)
        .with_context(|| format!("decoding {}", img_path.display()))?
        .to_luma8();
    let shape = GridShape::new(img.height() as usize, img.width() as usize)?;
    let ids = Grid::from_vec(shape, img.pixels().map(|p| u32::from(p.0[0])).collect())?;
    Ok(SemanticMap::new(desc.names, ids)?)
}

fn report(paths: &[(PlanQuery, PlanPath)], semantic: &SemanticMap, ranks: &RankMap) -> Result<EvaluationReport> {
    let records = paths
        .iter()
        .map(|(q, p)| {
            Ok(QueryRecord {
                start: q.start,
                goal: q.goal,
                length: p.len(),
                rrpi: rrpi(&p.pixels, semantic, ranks)?,
                cost: p.cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_records(records)?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PathFile {
    Path(PlanPath),
    Pixels(Vec<Pixel>),
}

fn load_path(path: &Path) -> Result<Vec<Pixel>> {
    Ok(match read_json::<PathFile>(path)? {
        PathFile::Path(p) => p.pixels,
        PathFile::Pixels(p) => p,
    })
}

fn eval(metric: EvalCommand) -> Result<Value> {
    match metric {
        EvalCommand::Rrpi {
            semantic,
            ranks,
            manifest,
            store,
            baseline,
        } => {
            let semantic = load_semantic(&semantic)?;
            let m: SessionManifest = read_json(&manifest)?;
            let ranks: RankMap = match ranks {
                Some(p) => read_json(&p)?,
                None => m.ranks.clone().ok_or_else(|| anyhow!("manifest has no ranks; pass --ranks"))?,
            };
            if m.plans.is_empty() {
                bail!("manifest has no plans");
            }
            let planned: Vec<(PlanQuery, PlanPath)> = m.plans.iter().map(|p| (PlanQuery::new(p.start, p.goal), p.path.clone())).collect();
            let mut out = json!({ "planned": report(&planned, &semantic, &ranks)? });
            if baseline {
                let root = store.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("store"));
                let store = overseec_engine::store::Store::open(root)?;
                let c = m.costmap.as_ref().ok_or_else(|| anyhow!("manifest has no costmap"))?;
                let costmap = Costmap::from_grid(decode_rf32(&store.get(c)?)?)?;
                let lines = planned
                    .iter()
                    .map(|(q, _)| Ok((*q, straight_line(&costmap, *q)?)))
                    .collect::<Result<Vec<_>>>()?;
                out["baseline"] = serde_json::to_value(report(&lines, &semantic, &ranks)?)?;
            }
            Ok(out)
        }
        EvalCommand::Hausdorff { system, humans, shape } => {
            let (h, w) = shape.split_once('x').ok_or_else(|| anyhow!("expected HEIGHTxWIDTH, got {shape:?}"))?;
            let shape = GridShape::new(h.trim().parse()?, w.trim().parse()?)?;
            let system = load_path(&system)?;
            let humans = humans.iter().map(|p| load_path(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[Pixel]> = humans.iter().map(Vec::as_slice).collect();
            Ok(json!({ "mean_hausdorff": mean_hausdorff(&system, &refs, shape)? }))
        }
        EvalCommand::Iou { pred, gt } => {
            let pred = decode_mask_png(&read(&pred)?)?;
            let gt = decode_mask_png(&read(&gt)?)?;
            Ok(json!({ "iou": iou(&pred, &gt)? }))
        }
    }
}

fn synth_scene(out: &Path) -> Result<Value> {
    let fixtures = out.join("fixtures");
    synth::write_fixtures(&fixtures)?;
    write(&out.join("scene.png"), overseec_core::io::encode_rgb_png(&synth::image()))?;
    let semantic = synth::semantic_map();
    let ids = semantic.ids();
    let gray = image::GrayImage::from_fn(synth::SIZE as u32, synth::SIZE as u32, |x, y| {
        image::Luma([*ids.get(y as usize, x as usize) as u8])
    });
    let mut png = Vec::new();
    gray.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)?;
    write(&out.join("semantic.png"), png)?;
    let names: Vec<&str> = synth::CLASSES.iter().map(|(n, _)| *n).collect();
    write_json(&out.join("semantic.json"), &json!({ "image": "semantic.png", "names": names }))?;
    write_json(&out.join("ranks.json"), &synth::rank_map())?;
    write(&out.join("prompt.txt"), synth::PROMPT)?;
    Ok(json!({ "out": out, "prompt": synth::PROMPT, "classes": names }))
}

fn run_serve(config: Option<&Path>, args: ServeArgs) -> Result<()> {
    let mut config = load_config(config, &args.backends, None)?;
    if let Some(b) = args.bind {
        config.server.bind = b;
    }
    if let Some(w) = args.workers {
        config.server.workers = w;
    }
    config.check()?;
    let engine = build_engine(&config)?;
    let state = AppState::new(engine, config.server.workers, describe(&config));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.server.bind)
            .await
            .with_context(|| format!("binding {}", config.server.bind))?;
        log::info!("listening on {}", listener.local_addr()?);
        serve(listener, router(state)).await?;
        Ok(())
    })
}

fn error_body(e: &anyhow::Error) -> ErrorBody {
    if let Some(engine) = e.downcast_ref::<EngineError>() {
        return engine.into();
    }
    if let Some(dsl) = e.downcast_ref::<overseec_core::dsl::DslError>() {
        return ErrorBody {
            line: Some(dsl.line),
            column: Some(dsl.column),
            ..ErrorBody::new("syntax", dsl.to_string())
        };
    }
    if e.downcast_ref::<overseec_service::setup::SetupError>().is_some() {
        return ErrorBody::new("setup", format!("{e:#}"));
    }
    if e.downcast_ref::<overseec_core::planner::PlanError>().is_some() {
        return ErrorBody::new("plan", format!("{e:#}"));
    }
    if let Some(store) = e.downcast_ref::<overseec_engine::store::StoreError>() {
        return store.into();
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return ErrorBody::new("io", format!("{e:#}"));
    }
    ErrorBody::new("error", format!("{e:#}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Run(a) => run(config, a),
        Command::Segment(a) => segment(config, a),
        Command::Compose(a) => compose(config, a),
        Command::Plan(a) => plan(a),
        Command::Eval { metric } => eval(metric),
        Command::Synth { out } => synth_scene(&out),
        Command::Serve(a) => run_serve(config, a).map(|()| Value::Null),
    };
    match result {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("JSON values serialize");
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&error_body(&e)).expect("JSON values serialize"));
            ExitCode::FAILURE
        }
    }
}
