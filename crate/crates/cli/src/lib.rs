//! `scenehier`: builds hierarchical scene trees from scene bundles, queries
//! and evaluates them, writes synthetic fixtures and serves a tree over HTTP.
//!
//! Exit codes: 0 success, 1 usage, 2 unreadable or malformed input,
//! 3 invariant violation, 4 internal error.

mod report;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scenehier_core::embed::{ArchiveProvider, EmbeddingProvider, SyntheticConceptEmbedder};
use scenehier_core::eval::{ap_suite, gt_instances, pred_instances, GtInstance};
use scenehier_core::io::{
    load_masks, load_point_cloud, read_embedding_archive, write_crop_manifest, write_heatmap_ply, write_masks,
    MaskFile, MaskRecord,
};
use scenehier_core::model::{read_tree, validate_tree, write_tree, NodeKind, SceneTree};
use scenehier_core::pipeline::{
    build, build_synthetic, object_crop_manifest, paths, segment2d_crop_manifest, segment_objects, BuildOptions,
    BuildOutput, CropEmbeddings, SceneBundle, StageError,
};
use scenehier_core::query::{top_k, SceneIndex};
use scenehier_core::synthkit::{chair_scene, random_scene, write_bundle, BundleOptions, RandomSceneConfig, SynthScene};
use scenehier_core::{Error, PipelineConfig, ScoreMode};

pub use report::format_report;

/// Relative input paths that do not exist are looked up under this
/// directory.
pub const DATA_ROOT_ENV: &str = "SCENEHIER_DATA";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const INVARIANT: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "scenehier", version, about = "Hierarchical open-vocabulary scene trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split every object of a scene into geometric segments.
    Segment {
        scene: PathBuf,
        /// Object masks (default: the bundle's masks.json).
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Output mask file, objects with their segments as parts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write the crop manifests an image encoder has to embed.
    Crops {
        scene: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Object crop manifest (default: <scene>/crops.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the 2D-segment crop manifest here.
        #[arg(long)]
        segment_crops: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full pipeline and write a tree file.
    Build {
        scene: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Crop embedding archive (default: <scene>/crops.emb).
        #[arg(long)]
        crop_embeddings: Option<PathBuf>,
        /// Answer crop embeddings from the synthetic scene description.
        #[arg(long)]
        synthetic: bool,
        /// Move this fraction of each object's points to other segments.
        #[arg(long)]
        segment_noise: Option<f64>,
        /// Seed for --segment-noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tree file (default: <scene>/tree.hst).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank the nodes of a tree against a text query.
    Query {
        tree: PathBuf,
        /// Query text; omit when --vocab is given.
        text: Option<String>,
        /// One query per line.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Write the per-point scores as a colored PLY.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Point cloud for --heatmap (default: cloud.ply next to the tree).
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[command(flatten)]
        text_source: TextSource,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predicted masks against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Level::All)]
        level: Level,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic scene bundle.
    Synth {
        /// `chair`, `random`, or a scene description JSON file.
        spec: String,
        /// Output directory; its name becomes the scene id.
        #[arg(long)]
        out: PathBuf,
        /// Layout seed for `random` and surface sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
        #[arg(long, default_value_t = 1152)]
        dim: usize,
        /// Gaussian noise per embedding component.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
    },
    /// Serve a tree over HTTP.
    Serve {
        tree: PathBuf,
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        text_source: TextSource,
    },
    /// Check a tree file's structural invariants.
    Validate { tree: PathBuf },
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_cluster: Option<f64>,
    #[arg(long)]
    min_seg: Option<usize>,
    #[arg(long)]
    top_k_views: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    k_exp_obj: Option<f64>,
    #[arg(long)]
    k_exp_seg: Option<f64>,
    #[arg(long)]
    thr_dist: Option<f64>,
    #[arg(long)]
    thr_feat: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TextSource {
    /// Text embedding archive keyed by query text.
    #[arg(long)]
    text_embeddings: Option<PathBuf>,
    /// Embed text with the synthetic concept embedder.
    #[arg(long)]
    synthetic: bool,
    /// Seed of the synthetic embedder.
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Avg,
    Max,
    Object,
    Segment,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Avg => ScoreMode::Avg,
            ModeArg::Max => ScoreMode::Max,
            ModeArg::Object => ScoreMode::ObjectOnly,
            ModeArg::Segment => ScoreMode::SegmentOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    /// Top-level records and their parts.
    All,
    Object,
    Part,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: exit::USAGE, message: message.into() }
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Unsupported(_) => exit::USAGE,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::DimMismatch { .. }
        | Error::DuplicateKey(_)
        | Error::MissingKey(_)
        | Error::LengthMismatch { .. }
        | Error::InvalidFrame { .. }
        | Error::InvalidMask(_)
        | Error::Empty(_)
        | Error::MixedCategories(..) => exit::INPUT,
        Error::Invariant(_) | Error::OverlapViolation { .. } => exit::INVARIANT,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: error_code(&e), message: e.to_string() }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        Self { code: error_code(&e.source), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: exit::INTERNAL, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let text = e.render().to_string();
            let _ = if code == exit::OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Segment { scene, masks, out: dest, config } => cmd_segment(&scene, masks.as_deref(), dest, &config, out),
        Command::Crops { scene, masks, out: dest, segment_crops, config } => {
            cmd_crops(&scene, masks.as_deref(), dest, segment_crops, &config, out)
        }
        Command::Build { scene, masks, crop_embeddings, synthetic, segment_noise, seed, out: dest, config } => {
            let options = BuildOptions { segment_noise: segment_noise.map(|f| (f, seed)) };
            cmd_build(&scene, masks.as_deref(), crop_embeddings, synthetic, &options, dest, &config, out)
        }
        Command::Query { tree, text, vocab, k, mode, heatmap, cloud, text_source, config } => {
            cmd_query(&tree, text, vocab, k, mode, heatmap, cloud, &text_source, &config, out)
        }
        Command::Eval { pred, gt, level, out: dest } => cmd_eval(&pred, &gt, level, dest, out),
        Command::Synth { spec, out: dest, seed, embed_seed, dim, sigma } => {
            cmd_synth(&spec, &dest, &BundleOptions { seed, embed_seed, dim, sigma }, out)
        }
        Command::Serve { tree, cloud, addr, text_source } => cmd_serve(&tree, cloud, addr, &text_source, out),
        Command::Validate { tree } => cmd_validate(&tree, out),
    }
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return Path::new(&root).join(path);
        }
    }
    path.to_path_buf()
}

/// Defaults, then the config file, then individual flags.
fn pipeline_config(args: &ConfigArgs) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = &args.config {
        let p = resolve(p);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
    }
    let mut set = |key: &str, v: Option<String>| -> CliResult {
        if let Some(v) = v {
            cfg.set(key, &v)?;
        }
        Ok(())
    };
    let s = |v: Option<f64>| v.map(|x| x.to_string());
    let u = |v: Option<usize>| v.map(|x| x.to_string());
    set("k_cluster", s(args.k_cluster))?;
    set("min_segment_vertices", u(args.min_seg))?;
    set("top_k_views", u(args.top_k_views))?;
    set("frame_stride", u(args.stride))?;
    set("crop_levels", u(args.levels))?;
    set("k_exp_object", s(args.k_exp_obj))?;
    set("k_exp_segment", s(args.k_exp_seg))?;
    set("thr_dist", s(args.thr_dist))?;
    set("thr_feat", s(args.thr_feat))?;
    set("feature_dim", u(args.dim))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(scene: &Path, masks: Option<&Path>) -> CliResult<SceneBundle> {
    let masks = masks.map(resolve);
    Ok(SceneBundle::load(&resolve(scene), masks.as_deref())?)
}

fn cmd_segment(scene: &Path, masks: Option<&Path>, dest: Option<PathBuf>, args: &ConfigArgs, out: &mut dyn Write) -> CliResult {
    let cfg = pipeline_config(args)?;
    let mut bundle = load_bundle(scene, masks)?;
    bundle.ensure_normals();
    let objects = bundle.objects()?;
    let segments = segment_objects(&bundle.cloud, &objects, &cfg, None)?;
    let file = MaskFile {
        masks: objects
            .iter()
            .zip(&segments)
            .map(|(o, segs)| MaskRecord {
                category: None,
                confidence: o.confidence,
                point_indices: o.point_indices.clone(),
                parts: segs.iter().map(|s| MaskRecord::new(s.clone())).collect(),
            })
            .collect(),
    };
    let dest = dest.unwrap_or_else(|| bundle.root.join("segments.json"));
    write_masks(&file, &dest)?;
    let total: usize = segments.iter().map(Vec::len).sum();
    writeln!(out, "{} objects, {total} segments -> {}", objects.len(), dest.display())?;
    Ok(())
}

fn cmd_crops(
    scene: &Path,
    masks: Option<&Path>,
    dest: Option<PathBuf>,
    segment_crops: Option<PathBuf>,
    args: &ConfigArgs,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = pipeline_config(args)?;
    let bundle = load_bundle(scene, masks)?;
    let objects = bundle.objects()?;
    let manifest = object_crop_manifest(&bundle, &objects, &cfg)?;
    let dest = dest.unwrap_or_else(|| bundle.root.join(paths::CROPS));
    write_crop_manifest(&manifest, &dest)?;
    writeln!(out, "{} object crops -> {}", manifest.len(), dest.display())?;
    if let Some(p) = segment_crops {
        let seg = segment2d_crop_manifest(&bundle, &cfg)?;
        write_crop_manifest(&seg, &p)?;
        writeln!(out, "{} segment crops -> {}", seg.len(), p.display())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_build(
    scene: &Path,
    masks: Option<&Path>,
    crop_embeddings: Option<PathBuf>,
    synthetic: bool,
    options: &BuildOptions,
    dest: Option<PathBuf>,
    args: &ConfigArgs,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = pipeline_config(args)?;
    let root = resolve(scene);
    let BuildOutput { tree, stats, .. } = if synthetic {
        if masks.is_some() || crop_embeddings.is_some() {
            return Err(CliError::usage("--synthetic takes its masks and embeddings from the bundle"));
        }
        build_synthetic(&root, &cfg, options)?.1
    } else {
        let mut bundle = load_bundle(&root, masks)?;
        let seg2d = bundle.seg2d()?;
        let crops_path = crop_embeddings.map(|p| resolve(&p)).unwrap_or_else(|| root.join(paths::CROP_EMBEDDINGS));
        let provider = ArchiveProvider::new(Some(read_embedding_archive(&crops_path)?), None)?;
        build(&mut bundle, &seg2d, CropEmbeddings::Provider(&provider), &cfg, options)?
    };
    let violations = validate_tree(&tree);
    if !violations.is_empty() {
        return Err(Error::Invariant(violations).into());
    }
    let dest = dest.unwrap_or_else(|| root.join("tree.hst"));
    write_tree(&tree, &dest)?;
    writeln!(out, "scene {}", tree.scene_id)?;
    writeln!(out, "objects {}", tree.objects.len())?;
    writeln!(out, "segments {} ({} before merging, {} merges)", tree.segments.len(), stats.segments_before_merge, stats.merges)?;
    writeln!(out, "crops {}", stats.crops)?;
    writeln!(out, "unobserved {} objects, {} segments", stats.unobserved_objects, stats.unobserved_segments)?;
    writeln!(out, "tree {}", dest.display())?;
    Ok(())
}

fn text_provider(src: &TextSource, dim: usize) -> CliResult<Option<Arc<dyn EmbeddingProvider>>> {
    match (&src.text_embeddings, src.synthetic) {
        (Some(_), true) => Err(CliError::usage("give either --text-embeddings or --synthetic")),
        (Some(p), false) => {
            let archive = read_embedding_archive(&resolve(p))?;
            if archive.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, actual: archive.dim() }.into());
            }
            Ok(Some(Arc::new(ArchiveProvider::new(None, Some(archive))?)))
        }
        (None, true) => Ok(Some(Arc::new(SyntheticConceptEmbedder::new(src.embed_seed, dim)?))),
        (None, false) => Ok(None),
    }
}

fn sibling_cloud(tree: &Path) -> PathBuf {
    tree.parent().unwrap_or(Path::new(".")).join(paths::CLOUD)
}

fn kind_name(k: NodeKind) -> &'static str {
    k.as_str()
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    tree_path: &Path,
    text: Option<String>,
    vocab: Option<PathBuf>,
    k: usize,
    mode: Option<ModeArg>,
    heatmap: Option<PathBuf>,
    cloud: Option<PathBuf>,
    src: &TextSource,
    args: &ConfigArgs,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = pipeline_config(args)?;
    let mode = mode.map(ScoreMode::from).unwrap_or(cfg.score_mode);
    let tree_path = resolve(tree_path);
    let tree = read_tree(&tree_path)?;
    let queries: Vec<String> = match (text, &vocab) {
        (Some(t), None) => vec![t],
        (None, Some(p)) => {
            let p = resolve(p);
            let body = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            body.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
        }
        _ => return Err(CliError::usage("give a query text or --vocab, not both")),
    };
    if heatmap.is_some() && queries.len() != 1 {
        return Err(CliError::usage("--heatmap needs exactly one query"));
    }
    let provider = text_provider(src, tree.dim as usize)?
        .ok_or_else(|| CliError::usage("no text embedding provider: pass --text-embeddings or --synthetic"))?;
    let index = SceneIndex::new(&tree);
    for q in &queries {
        let e = provider.embed_text(q)?;
        let result = index.score(&e, mode)?;
        writeln!(out, "# {q} ({mode})")?;
        writeln!(out, "rank\tid\tkind\tscore\tpoints")?;
        for (rank, n) in top_k(&result, k).nodes.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:.6}\t{}", rank + 1, n.id, kind_name(n.kind), n.score, point_count(&tree, n.id))?;
        }
        if let Some(h) = &heatmap {
            let cloud_path = cloud.as_ref().map(|c| resolve(c)).unwrap_or_else(|| sibling_cloud(&tree_path));
            let cloud = load_point_cloud(&cloud_path)?;
            write_heatmap_ply(&cloud, &index.heatmap(&result), h)?;
            writeln!(out, "heatmap {}", h.display())?;
        }
    }
    Ok(())
}

fn point_count(tree: &SceneTree, id: u32) -> usize {
    tree.object(id)
        .map(|o| o.mask.len())
        .or_else(|| tree.segment(id).map(|s| s.mask.len()))
        .unwrap_or(0)
}

fn cmd_eval(pred: &Path, gt: &Path, level: Level, dest: Option<PathBuf>, out: &mut dyn Write) -> CliResult {
    let preds = pred_instances(&load_masks(&resolve(pred))?);
    let gt_file = load_masks(&resolve(gt))?;
    let gts: Vec<GtInstance> = match level {
        Level::Object => gt_instances(&gt_file, NodeKind::Object),
        Level::Part => gt_instances(&gt_file, NodeKind::Segment),
        Level::All => {
            let mut g = gt_instances(&gt_file, NodeKind::Object);
            g.extend(gt_instances(&gt_file, NodeKind::Segment));
            g
        }
    };
    if gts.is_empty() {
        return Err(Error::Empty("ground truth has no categorized masks").into());
    }
    let text = format_report(&ap_suite(&preds, &gts));
    out.write_all(text.as_bytes())?;
    if let Some(p) = dest {
        std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn cmd_synth(spec: &str, dest: &Path, opts: &BundleOptions, out: &mut dyn Write) -> CliResult {
    let mut scene: SynthScene = match spec {
        "chair" => chair_scene(),
        "random" => random_scene(opts.seed, &RandomSceneConfig::default()),
        path => {
            let p = resolve(Path::new(path));
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            SynthScene::from_json(&text, &p.display().to_string())?
        }
    };
    if let Some(name) = dest.file_name() {
        scene.scene_id = name.to_string_lossy().into_owned();
    }
    scene.validate()?;
    let g = write_bundle(&scene, dest, opts)?;
    writeln!(
        out,
        "{}: {} points, {} objects, {} parts, {} frames -> {}",
        scene.scene_id,
        g.cloud.len(),
        g.gt.masks.len(),
        scene.parts.len(),
        scene.cameras.len(),
        dest.display()
    )?;
    Ok(())
}

fn cmd_serve(tree: &Path, cloud: Option<PathBuf>, addr: SocketAddr, src: &TextSource, out: &mut dyn Write) -> CliResult {
    let tree_path = resolve(tree);
    let tree = read_tree(&tree_path)?;
    let provider = text_provider(src, tree.dim as usize)?;
    let cloud_path = cloud.map(|c| resolve(&c)).unwrap_or_else(|| sibling_cloud(&tree_path));
    let state = scenehier_service::ServiceState::new(tree, load_point_cloud(&cloud_path)?, provider)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let (local, handle) = scenehier_service::spawn(addr, Arc::new(state)).await?;
        writeln!(out, "listening on http://{local}")?;
        out.flush()?;
        handle.await.map_err(|e| CliError { code: exit::INTERNAL, message: e.to_string() })??;
        Ok(())
    })
}

fn cmd_validate(tree: &Path, out: &mut dyn Write) -> CliResult {
    let tree = read_tree(&resolve(tree))?;
    let violations = validate_tree(&tree);
    writeln!(
        out,
        "scene {}: {} points, {} objects, {} segments, dim {}",
        tree.scene_id,
        tree.num_points,
        tree.objects.len(),
        tree.segments.len(),
        tree.dim
    )?;
    if violations.is_empty() {
        writeln!(out, "ok")?;
        Ok(())
    } else {
        Err(Error::Invariant(violations).into())
    }
}
