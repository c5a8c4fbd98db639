//! Command-line surface composing the library into the tiling, upscaling,
//! detection, stitching, and evaluation pipelines.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use skychip_core::detect_io::{
    mock_detect, run_external_detector, write_detections, MissModel, MockDetectorParams,
};
use skychip_core::eval::{evaluate, write_comparison_plot, write_report, EvalReport};
use skychip_core::labels::{
    apply_class_map, parse_labels, read_tile_labels, write_geojson, ClassMap, LabeledObject,
    MergedClass,
};
use skychip_core::pipeline::{
    load_scenes_from_dir, run_pipeline, synth_scenes, DetectorEngine, Mode, PipelineConfig,
    SceneInput, UpscaleEngineKind,
};
use skychip_core::process::ExternalCommand;
use skychip_core::raster::{external_upscale, serve_exchange_nn, PixelGrid};
use skychip_core::stitch::{
    dedup, localize, parse_scene_detections, write_scene_detections, DedupConfig, OverlapMetric,
    SceneDetections,
};
use skychip_core::synth::SynthSpec;
use skychip_core::tiling::{extract_tile, plan_tiles, SceneManifest, TilePlacement};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "skychip",
    version,
    about = "Tiled object detection on very large overhead images: tile, upscale, detect, stitch, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// parsed once at startup; variant sizes are irrelevant
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with exact ground truth
    Synth(SynthArgs),
    /// Cut overlapped tiles from a scene and write the placement manifest
    Tile(TileArgs),
    /// Upscale a directory of tiles, or serve the exchange protocol
    Upscale(UpscaleArgs),
    /// Run a detector over a scene's tile directory
    Detect(DetectArgs),
    /// Stitch per-tile detections back to scene coordinates and deduplicate
    Stitch(StitchArgs),
    /// Match detections against ground truth and emit PR tables and plots
    Eval(EvalArgs),
    /// Overlay PR curves from several evaluation reports
    Compare(CompareArgs),
    /// Run a full pipeline end to end
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthSpecArgs {
    #[arg(long, default_value_t = 640)]
    scene_w: u32,
    #[arg(long, default_value_t = 480)]
    scene_h: u32,
    #[arg(long, default_value_t = 13)]
    object_w: u32,
    #[arg(long, default_value_t = 7)]
    object_h: u32,
    /// Scattered (non-cluster) objects per scene
    #[arg(long, default_value_t = 24)]
    scattered: u32,
    /// Dense clusters per scene
    #[arg(long, default_value_t = 2)]
    clusters: u32,
    #[arg(long, default_value_t = 4)]
    cluster_rows: u32,
    #[arg(long, default_value_t = 6)]
    cluster_cols: u32,
    #[arg(long, default_value_t = 2)]
    cluster_gap: u32,
    /// Background noise amplitude
    #[arg(long, default_value_t = 10)]
    noise: u8,
}

impl SynthSpecArgs {
    fn to_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            scene_w: self.scene_w,
            scene_h: self.scene_h,
            object_w: self.object_w,
            object_h: self.object_h,
            n_scattered: self.scattered,
            n_clusters: self.clusters,
            cluster_rows: self.cluster_rows,
            cluster_cols: self.cluster_cols,
            cluster_gap: self.cluster_gap,
            background_noise: self.noise,
            seed,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    spec: SynthSpecArgs,
}

#[derive(Args)]
struct TileArgs {
    /// Scene image (8-bit RGB PNG)
    #[arg(long)]
    image: PathBuf,
    /// Defaults to the image file stem
    #[arg(long)]
    scene_id: Option<String>,
    #[arg(long, default_value_t = 208)]
    size: u32,
    #[arg(long, default_value_t = 50)]
    overlap: u32,
    /// Ground sample distance of the scene, cm per pixel
    #[arg(long, default_value_t = 30.0)]
    gsd: f64,
    /// Ground-truth GeoJSON; when given, per-tile label files are exported
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    class_map: Option<PathBuf>,
    /// Keep tile labels at least this visible after clipping
    #[arg(long, default_value_t = 0.25)]
    min_visible_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UpscaleArgs {
    /// Directory of PNG tiles to upscale
    #[arg(long, conflicts_with = "serve_exchange")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    factor: u32,
    /// nn | external
    #[arg(long, default_value = "nn")]
    engine: String,
    /// External upscaler command (exchange protocol)
    #[arg(long)]
    command: Option<String>,
    /// Act as the exchange-protocol reference upscaler on this directory
    #[arg(long)]
    serve_exchange: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// A scene's tile directory (manifest expected alongside)
    #[arg(long)]
    tiles: PathBuf,
    /// mock | external
    #[arg(long, default_value = "mock")]
    engine: String,
    /// External detector command
    #[arg(long)]
    command: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mock miss probability
    #[arg(long, default_value_t = 0.0)]
    miss: f64,
    /// Mock per-corner jitter, pixels
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Mock expected false positives per tile
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    /// Mock true-positive confidence range as lo:hi (1:1 for a perfect run)
    #[arg(long, default_value = "0.5:1.0")]
    tp_conf: String,
}

#[derive(Args)]
struct StitchArgs {
    /// A scene's tile directory (manifest and detections expected)
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    dedup_threshold: f64,
    /// ioa | iou
    #[arg(long, default_value = "ioa")]
    dedup_metric: String,
    #[arg(long, default_value_t = false)]
    class_agnostic: bool,
    /// Directory for `<scene_id>.detections.txt`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene detection files or directories containing them
    #[arg(long, required = true, num_args = 1..)]
    detections: Vec<PathBuf>,
    /// Ground-truth GeoJSON
    #[arg(long)]
    truth: PathBuf,
    /// Class map file; defaults to the shipped xView map
    #[arg(long)]
    class_map: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Sweep grid as start:end:step
    #[arg(long, default_value = "0.01:0.90:0.01")]
    sweep: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Labeled reports: label=path/to/report.json (repeatable)
    #[arg(long = "report", required = true, num_args = 1..)]
    reports: Vec<String>,
    #[arg(long, default_value = "vehicle")]
    class: String,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// 1stage | 1stage-nn2 | 2stage-nn4 | 2stage-sr4
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; flags win over it
    #[arg(long)]
    config: Option<PathBuf>,

    /// Generate this many synthetic scenes as input
    #[arg(long, conflicts_with = "scenes_dir")]
    synth_scenes: Option<usize>,
    #[command(flatten)]
    spec: SynthSpecArgs,
    /// Run on PNG scenes from this directory
    #[arg(long)]
    scenes_dir: Option<PathBuf>,
    /// Ground-truth GeoJSON for --scenes-dir
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    class_map: Option<PathBuf>,

    /// mock | external
    #[arg(long)]
    detector: Option<String>,
    /// External detector command
    #[arg(long)]
    detector_command: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mock miss probability
    #[arg(long)]
    miss: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    fp_rate: Option<f64>,
    /// Mock true-positive confidence range as lo:hi (1:1 for a perfect run)
    #[arg(long)]
    tp_conf: Option<String>,

    #[arg(long)]
    stage1_size: Option<u32>,
    #[arg(long)]
    stage1_overlap: Option<u32>,
    #[arg(long)]
    factor: Option<u32>,
    /// nn | external
    #[arg(long)]
    engine: Option<String>,
    /// External upscaler command (exchange protocol)
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    stage2_size: Option<u32>,
    #[arg(long)]
    stage2_overlap: Option<u32>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    /// ioa | iou
    #[arg(long)]
    dedup_metric: Option<String>,
    #[arg(long)]
    class_agnostic: bool,
    /// Evaluation IOU threshold
    #[arg(long)]
    iou: Option<f64>,
    /// Sweep grid as start:end:step
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    min_visible_fraction: Option<f64>,
    #[arg(long)]
    gsd: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Tile(args) => cmd_tile(args),
        Command::Upscale(args) => cmd_upscale(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Stitch(args) => cmd_stitch(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Run a command that populates `out`; on failure remove whatever partial
/// output this run created.
fn with_out_guard(out: &Path, run: impl FnOnce() -> Result<()>) -> Result<()> {
    let created = !out.exists();
    let result = run();
    if result.is_err() && created {
        let _ = std::fs::remove_dir_all(out);
    }
    result
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    with_out_guard(&args.out, || {
        let spec = args.spec.to_spec(args.seed);
        let scenes = synth_scenes(args.scenes, &spec)?;
        let scenes_dir = args.out.join("scenes");
        let mut sources = Vec::new();
        for scene in &scenes {
            scene
                .image
                .save_png(&scenes_dir.join(format!("{}.png", scene.scene_id)))?;
            sources.extend(skychip_core::synth::to_source_labels(&scene.truths));
        }
        write_geojson(&args.out.join("labels.geojson"), &sources)?;
        println!(
            "wrote {} scenes ({} objects) under {}",
            scenes.len(),
            sources.len(),
            args.out.display()
        );
        Ok(())
    })
}

fn cmd_tile(args: TileArgs) -> Result<()> {
    with_out_guard(&args.out, || {
        let scene_id = match &args.scene_id {
            Some(id) => id.clone(),
            None => args
                .image
                .file_stem()
                .and_then(|s| s.to_str())
                .context("image path has no usable file stem")?
                .to_owned(),
        };
        let image = PixelGrid::load_png(&args.image)?;
        let rects = plan_tiles(image.width(), image.height(), args.size, args.overlap)?;
        let placements: Vec<TilePlacement> = rects
            .iter()
            .map(|&r| TilePlacement::stage1(&scene_id, r))
            .collect();
        let scene_dir = args.out.join(&scene_id);
        for placement in &placements {
            extract_tile(&image, placement)?
                .save_png(&scene_dir.join(format!("{}.png", placement.tile_id)))?;
        }
        let manifest = SceneManifest::new(
            &scene_id,
            image.width(),
            image.height(),
            args.gsd,
            placements,
        )?;
        manifest.save(&args.out)?;

        if let Some(truth) = &args.truth {
            let class_map = load_class_map(args.class_map.as_deref())?;
            let parsed = parse_labels(truth)?;
            for warning in &parsed.warnings {
                eprintln!("warning: {warning}");
            }
            let merged = apply_class_map(&parsed.labels, &class_map)?;
            let truths: Vec<LabeledObject> = merged
                .into_iter()
                .filter(|o| o.scene_id == scene_id)
                .collect();
            let truths =
                skychip_core::labels::clip_to_scene(&truths, image.width(), image.height());
            let mut exported = 0;
            for placement in manifest.leaf_placements() {
                let chain = manifest.chain(&placement.tile_id)?;
                let labels = skychip_core::labels::export_tile_labels(
                    &truths,
                    &chain,
                    args.min_visible_fraction,
                )?;
                exported += labels.len();
                skychip_core::labels::write_tile_labels(&scene_dir, &placement.tile_id, &labels)?;
            }
            println!("exported {exported} tile labels for {} objects", truths.len());
        }

        println!(
            "wrote {} tiles and {}.manifest.json under {}",
            rects.len(),
            scene_id,
            args.out.display()
        );
        Ok(())
    })
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn cmd_upscale(args: UpscaleArgs) -> Result<()> {
    if let Some(exchange) = &args.serve_exchange {
        let served = serve_exchange_nn(exchange)?;
        println!("served {served} tiles in {}", exchange.display());
        return Ok(());
    }
    let input = args.input.context("--input (or --serve-exchange) is required")?;
    let out = args.out.context("--out is required")?;
    with_out_guard(&out, || {
        let paths = list_pngs(&input)?;
        ensure!(!paths.is_empty(), "no PNG tiles in {}", input.display());
        let tiles: Vec<(String, PixelGrid)> = paths
            .iter()
            .map(|p| {
                Ok((
                    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned(),
                    PixelGrid::load_png(p)?,
                ))
            })
            .collect::<Result<_>>()?;
        let upscaled: Vec<PixelGrid> = match args.engine.as_str() {
            "nn" => tiles
                .iter()
                .map(|(_, g)| g.nn_upscale(args.factor))
                .collect::<skychip_core::Result<_>>()?,
            "external" => {
                let command = args
                    .command
                    .as_deref()
                    .context("--engine external needs --command")?;
                let command = ExternalCommand::parse(command)?;
                external_upscale(&tiles, args.factor, &out.join(".exchange"), &command)?
            }
            other => bail!("unknown engine `{other}` (nn|external)"),
        };
        std::fs::create_dir_all(&out)?;
        for ((name, _), grid) in tiles.iter().zip(&upscaled) {
            grid.save_png(&out.join(format!("{name}.png")))?;
        }
        println!("upscaled {} tiles x{} into {}", tiles.len(), args.factor, out.display());
        Ok(())
    })
}

fn parse_conf_range(spec: &str) -> Result<skychip_core::detect_io::ConfidenceRange> {
    let (lo, hi) = spec
        .split_once(':')
        .with_context(|| format!("expected lo:hi, got `{spec}`"))?;
    Ok(skychip_core::detect_io::ConfidenceRange {
        lo: lo.parse().context("confidence lo")?,
        hi: hi.parse().context("confidence hi")?,
    })
}

fn manifest_for_tiles_dir(tiles_dir: &Path) -> Result<SceneManifest> {
    let scene_id = tiles_dir
        .file_name()
        .and_then(|s| s.to_str())
        .context("tiles directory has no usable name")?;
    let parent = tiles_dir.parent().context("tiles directory has no parent")?;
    let path = SceneManifest::manifest_path(parent, scene_id);
    SceneManifest::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    match args.engine.as_str() {
        "mock" => {
            let manifest = manifest_for_tiles_dir(&args.tiles)?;
            let params = MockDetectorParams {
                miss: MissModel::Constant(args.miss),
                jitter_px: args.jitter,
                false_positive_rate: args.fp_rate,
                tp_confidence: parse_conf_range(&args.tp_conf)?,
                seed: args.seed,
                ..MockDetectorParams::default()
            };
            let mut total = 0;
            for placement in manifest.leaf_placements() {
                let labels = read_tile_labels(&args.tiles, &placement.tile_id).unwrap_or_default();
                let dets = mock_detect(
                    &placement.tile_id,
                    placement.tile_w,
                    placement.tile_h,
                    &labels,
                    &params,
                )?;
                total += dets.len();
                write_detections(&args.tiles, &placement.tile_id, &dets)?;
            }
            println!("mock detector wrote {total} detections in {}", args.tiles.display());
        }
        "external" => {
            let command = args
                .command
                .as_deref()
                .context("--engine external needs --command")?;
            let command = ExternalCommand::parse(command)?;
            let dets = run_external_detector(&args.tiles, &command)?;
            println!(
                "external detector produced {} detections in {}",
                dets.len(),
                args.tiles.display()
            );
        }
        other => bail!("unknown engine `{other}` (mock|external)"),
    }
    Ok(())
}

fn cmd_stitch(args: StitchArgs) -> Result<()> {
    with_out_guard(&args.out, || {
        let manifest = manifest_for_tiles_dir(&args.tiles)?;
        let detections = skychip_core::detect_io::read_detections_dir(&args.tiles)?;
        let raw = localize(&detections, &manifest)?;
        let config = DedupConfig {
            threshold: args.dedup_threshold,
            metric: args
                .dedup_metric
                .parse::<OverlapMetric>()
                .map_err(anyhow::Error::msg)?,
            class_agnostic: args.class_agnostic,
        };
        let deduped = dedup(&raw, &config);
        let path = write_scene_detections(&args.out, &deduped)?;
        println!(
            "stitched {} -> kept {} detections: {}",
            raw.detections.len(),
            deduped.detections.len(),
            path.display()
        );
        Ok(())
    })
}

fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    ensure!(parts.len() == 3, "sweep must be start:end:step, got `{spec}`");
    let start: f64 = parts[0].parse().context("sweep start")?;
    let end: f64 = parts[1].parse().context("sweep end")?;
    let step: f64 = parts[2].parse().context("sweep step")?;
    ensure!(step > 0.0 && end >= start, "sweep must advance from start to end");
    let count = ((end - start) / step).round() as usize;
    let grid: Vec<f64> = (0..=count)
        .map(|i| start + step * i as f64)
        .filter(|t| *t > 0.0 && *t < 1.0)
        .collect();
    ensure!(!grid.is_empty(), "sweep grid is empty");
    Ok(grid)
}

fn collect_detection_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.ends_with(".detections.txt"))
                })
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(path.clone());
        }
    }
    ensure!(!files.is_empty(), "no detection files found");
    Ok(files)
}

fn load_class_map(path: Option<&Path>) -> Result<ClassMap> {
    Ok(match path {
        Some(path) => ClassMap::load(path)?,
        None => ClassMap::xview_default(),
    })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    with_out_guard(&args.out, || {
        let files = collect_detection_files(&args.detections)?;
        let mut scene_dets: Vec<SceneDetections> = Vec::new();
        for file in &files {
            let name = file
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            let scene_id = name.trim_end_matches(".detections.txt").to_owned();
            scene_dets.push(parse_scene_detections(file, &scene_id)?);
        }

        let class_map = load_class_map(args.class_map.as_deref())?;
        let parsed = parse_labels(&args.truth)?;
        for warning in &parsed.warnings {
            eprintln!("warning: {warning}");
        }
        let merged = apply_class_map(&parsed.labels, &class_map)?;
        let mut truths_by_scene: std::collections::BTreeMap<String, Vec<LabeledObject>> =
            std::collections::BTreeMap::new();
        for obj in merged {
            truths_by_scene
                .entry(obj.scene_id.clone())
                .or_default()
                .push(obj);
        }
        // scenes with truth but no detection file still count (all misses)
        for scene_id in truths_by_scene.keys() {
            if !scene_dets.iter().any(|d| &d.scene_id == scene_id) {
                scene_dets.push(SceneDetections {
                    scene_id: scene_id.clone(),
                    detections: Vec::new(),
                });
            }
        }

        let empty: Vec<LabeledObject> = Vec::new();
        let samples: Vec<(&SceneDetections, &[LabeledObject])> = scene_dets
            .iter()
            .map(|d| {
                (
                    d,
                    truths_by_scene
                        .get(&d.scene_id)
                        .map_or(empty.as_slice(), Vec::as_slice),
                )
            })
            .collect();
        let thresholds = parse_sweep(&args.sweep)?;
        let report = evaluate(&samples, &thresholds, args.iou)?;
        write_report(&report, &args.out)?;
        print_report_summary(&report);
        println!("report written to {}", args.out.display());
        Ok(())
    })
}

fn print_report_summary(report: &EvalReport) {
    println!(
        "{} scenes, {} detections, {} truths @ IOU {}",
        report.scene_count, report.detection_count, report.truth_count, report.iou_threshold
    );
    for class in &report.classes {
        println!(
            "  {:<11} AP {:.4}  ({} truths, {} detections)",
            class.class.to_string(),
            class.average_precision,
            class.truth_count,
            class.detection_count
        );
    }
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let class: MergedClass = args.class.parse().map_err(anyhow::Error::msg)?;
    let mut loaded: Vec<(String, EvalReport)> = Vec::new();
    for spec in &args.reports {
        let (label, path) = spec
            .split_once('=')
            .with_context(|| format!("expected label=path, got `{spec}`"))?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let report: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
        loaded.push((label.to_owned(), report));
    }
    let refs: Vec<(String, &EvalReport)> =
        loaded.iter().map(|(l, r)| (l.clone(), r)).collect();
    write_comparison_plot(&args.out, class, &refs)?;
    println!("comparison plot written to {}", args.out.display());
    Ok(())
}

/// Assemble the pipeline configuration: mode preset, then config file keys,
/// then flags.
fn assemble_pipeline_config(
    args: &PipelineArgs,
    file: &ConfigFile,
) -> Result<(PipelineConfig, Mode)> {
    let mode: Mode = match (&args.mode, file.get("mode")) {
        (Some(flag), _) => flag.parse().map_err(anyhow::Error::msg)?,
        (None, Some(key)) => key.parse().map_err(anyhow::Error::msg)?,
        (None, None) => Mode::TwoStageNn4,
    };
    let mut config = PipelineConfig::for_mode(mode);

    // config file layer
    if let Some(v) = file.parsed::<u32>("stage1_tile")? {
        config.stage1_tile = v;
    }
    if let Some(v) = file.parsed::<u32>("stage1_overlap")? {
        config.stage1_overlap = v;
    }
    if let Some(v) = file.parsed::<u32>("factor")? {
        config.upscale_factor = v;
    }
    if let Some(v) = file.get("engine") {
        config.engine = parse_engine(v)?;
    }
    if let Some(v) = file.get("command") {
        config.upscaler_command = Some(ExternalCommand::parse(v)?);
    }
    if let Some(v) = file.parsed::<u32>("stage2_tile")? {
        config.stage2_tile = v;
    }
    if let Some(v) = file.parsed::<u32>("stage2_overlap")? {
        config.stage2_overlap = v;
    }
    if let Some(v) = file.parsed::<f64>("dedup_threshold")? {
        config.dedup.threshold = v;
    }
    if let Some(v) = file.get("dedup_metric") {
        config.dedup.metric = v.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(v) = file.parsed::<bool>("class_agnostic")? {
        config.dedup.class_agnostic = v;
    }
    if let Some(v) = file.parsed::<f64>("iou")? {
        config.eval_iou = v;
    }
    if let Some(v) = file.get("sweep") {
        config.thresholds = parse_sweep(v)?;
    }
    if let Some(v) = file.parsed::<f64>("min_visible_fraction")? {
        config.min_visible_fraction = v;
    }
    if let Some(v) = file.parsed::<f64>("gsd")? {
        config.base_gsd_cm = v;
    }
    if let Some(v) = file.parsed::<usize>("jobs")? {
        config.jobs = v;
    }

    // flag layer wins
    if let Some(v) = args.stage1_size {
        config.stage1_tile = v;
    }
    if let Some(v) = args.stage1_overlap {
        config.stage1_overlap = v;
    }
    if let Some(v) = args.factor {
        config.upscale_factor = v;
    }
    if let Some(v) = &args.engine {
        config.engine = parse_engine(v)?;
    }
    if let Some(v) = &args.command {
        config.upscaler_command = Some(ExternalCommand::parse(v)?);
    }
    if let Some(v) = args.stage2_size {
        config.stage2_tile = v;
    }
    if let Some(v) = args.stage2_overlap {
        config.stage2_overlap = v;
    }
    if let Some(v) = args.dedup_threshold {
        config.dedup.threshold = v;
    }
    if let Some(v) = &args.dedup_metric {
        config.dedup.metric = v.parse().map_err(anyhow::Error::msg)?;
    }
    if args.class_agnostic {
        config.dedup.class_agnostic = true;
    }
    if let Some(v) = args.iou {
        config.eval_iou = v;
    }
    if let Some(v) = &args.sweep {
        config.thresholds = parse_sweep(v)?;
    }
    if let Some(v) = args.min_visible_fraction {
        config.min_visible_fraction = v;
    }
    if let Some(v) = args.gsd {
        config.base_gsd_cm = v;
    }
    if let Some(v) = args.jobs {
        config.jobs = v;
    }
    Ok((config, mode))
}

fn parse_engine(s: &str) -> Result<UpscaleEngineKind> {
    match s {
        "nn" => Ok(UpscaleEngineKind::Nn),
        "external" => Ok(UpscaleEngineKind::External),
        other => bail!("unknown engine `{other}` (nn|external)"),
    }
}

fn assemble_detector(args: &PipelineArgs, file: &ConfigFile, seed: u64) -> Result<DetectorEngine> {
    let kind = args
        .detector
        .clone()
        .or_else(|| file.get("detector").map(str::to_owned))
        .unwrap_or_else(|| "mock".to_owned());
    match kind.as_str() {
        "mock" => {
            let miss_model = match file.get("miss_model").unwrap_or("constant") {
                "constant" => {
                    let miss = args
                        .miss
                        .map(Ok)
                        .or_else(|| file.parsed::<f64>("miss").transpose())
                        .transpose()?
                        .unwrap_or(0.0);
                    MissModel::Constant(miss)
                }
                "area-decay" => MissModel::AreaDecay {
                    floor: file.parsed::<f64>("miss_floor")?.unwrap_or(0.05),
                    ceil: file.parsed::<f64>("miss_ceil")?.unwrap_or(0.9),
                    area_scale: file.parsed::<f64>("miss_area_scale")?.unwrap_or(600.0),
                },
                other => bail!("unknown miss_model `{other}` (constant|area-decay)"),
            };
            let jitter = args
                .jitter
                .map(Ok)
                .or_else(|| file.parsed::<f64>("jitter").transpose())
                .transpose()?
                .unwrap_or(0.0);
            let fp_rate = args
                .fp_rate
                .map(Ok)
                .or_else(|| file.parsed::<f64>("fp_rate").transpose())
                .transpose()?
                .unwrap_or(0.0);
            let tp_confidence = match args
                .tp_conf
                .clone()
                .or_else(|| file.get("tp_conf").map(str::to_owned))
            {
                Some(spec) => parse_conf_range(&spec)?,
                None => MockDetectorParams::default().tp_confidence,
            };
            Ok(DetectorEngine::Mock(MockDetectorParams {
                miss: miss_model,
                jitter_px: jitter,
                false_positive_rate: fp_rate,
                tp_confidence,
                seed,
                ..MockDetectorParams::default()
            }))
        }
        "external" => {
            let command = args
                .detector_command
                .clone()
                .or_else(|| file.get("detector_command").map(str::to_owned))
                .context("external detector needs --detector-command")?;
            Ok(DetectorEngine::External(ExternalCommand::parse(&command)?))
        }
        other => bail!("unknown detector `{other}` (mock|external)"),
    }
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let (config, mode) = assemble_pipeline_config(&args, &file)?;
    let seed = args
        .seed
        .map(Ok)
        .or_else(|| file.parsed::<u64>("seed").transpose())
        .transpose()?
        .unwrap_or(0);
    let detector = assemble_detector(&args, &file, seed)?;

    with_out_guard(&args.out.clone(), move || {
        let scenes: Vec<SceneInput> = if let Some(count) = args.synth_scenes {
            let spec = args.spec.to_spec(seed);
            let scenes = synth_scenes(count, &spec)?;
            // persist the inputs and their recipe so the run is
            // self-contained and the digests cover them
            let scenes_dir = args.out.join("scenes");
            let mut sources = Vec::new();
            for scene in &scenes {
                scene
                    .image
                    .save_png(&scenes_dir.join(format!("{}.png", scene.scene_id)))?;
                sources.extend(skychip_core::synth::to_source_labels(&scene.truths));
            }
            write_geojson(&args.out.join("labels.geojson"), &sources)?;
            std::fs::create_dir_all(&args.out)?;
            std::fs::write(
                args.out.join("synth.json"),
                serde_json::to_string_pretty(&spec)?,
            )?;
            scenes
        } else if let Some(dir) = &args.scenes_dir {
            let class_map = load_class_map(args.class_map.as_deref())?;
            let (scenes, warnings) =
                load_scenes_from_dir(dir, args.truth.as_deref(), &class_map)?;
            for warning in warnings {
                eprintln!("warning: {warning}");
            }
            ensure!(!scenes.is_empty(), "no PNG scenes in {}", dir.display());
            scenes
        } else {
            bail!("pipeline needs --synth-scenes N or --scenes-dir DIR");
        };

        println!(
            "mode {mode}: {} scenes, stage1 {}x{} overlap {}, x{} {:?}, stage2 {}x{} overlap {}",
            scenes.len(),
            config.stage1_tile,
            config.stage1_tile,
            config.stage1_overlap,
            config.upscale_factor,
            config.engine,
            config.stage2_tile,
            config.stage2_tile,
            config.stage2_overlap,
        );
        let run = run_pipeline(&config, &scenes, &detector, Some(&args.out))?;
        print_report_summary(&run.report);
        println!("artifacts and run.json written under {}", args.out.display());
        Ok(())
    })
}
