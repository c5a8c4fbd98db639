//! End-to-end composition: tile, upscale, re-tile, detect, stitch, dedup,
//! evaluate — the four named modes differ only in geometry and upscaling
//! configuration, never in the detection or evaluation code paths.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect_io::{
    mock_detect, run_external_detector, write_detections, Detection, MockDetectorParams,
};
use crate::error::{Error, Result};
use crate::eval::{default_threshold_grid, evaluate, write_report, EvalReport};
use crate::labels::{
    apply_class_map, clip_to_scene, export_tile_labels, parse_labels, write_tile_labels, ClassMap,
    LabeledObject, TileLabel,
};
use crate::process::ExternalCommand;
use crate::raster::{external_upscale, PixelGrid};
use crate::stitch::{dedup, localize, write_scene_detections, DedupConfig, SceneDetections};
use crate::synth::{generate_scene, SynthSpec};
use crate::tiling::{extract_tile, plan_tiles, SceneManifest, TilePlacement};

/// The named pipeline presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// 416px tiles at native resolution.
    OneStage,
    /// 208px tiles upscaled x2 to detector size.
    OneStageNn2,
    /// 208px tiles, nearest-neighbor x4, 416px second-stage tiles.
    TwoStageNn4,
    /// Same geometry as [`Mode::TwoStageNn4`] with an external
    /// super-resolution engine on the exchange protocol.
    TwoStageSr4,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::OneStage,
        Mode::OneStageNn2,
        Mode::TwoStageNn4,
        Mode::TwoStageSr4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mode::OneStage => "1stage",
            Mode::OneStageNn2 => "1stage-nn2",
            Mode::TwoStageNn4 => "2stage-nn4",
            Mode::TwoStageSr4 => "2stage-sr4",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (1stage|1stage-nn2|2stage-nn4|2stage-sr4)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpscaleEngineKind {
    Nn,
    External,
}

/// Full pipeline configuration; [`PipelineConfig::for_mode`] provides the
/// named presets and the defaults reproduce the two-stage x4 geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stage1_tile: u32,
    pub stage1_overlap: u32,
    /// 1 means no upscaling.
    pub upscale_factor: u32,
    pub engine: UpscaleEngineKind,
    /// Exchange-protocol command; required when `engine` is external.
    pub upscaler_command: Option<ExternalCommand>,
    pub stage2_tile: u32,
    pub stage2_overlap: u32,
    pub dedup: DedupConfig,
    pub eval_iou: f64,
    pub thresholds: Vec<f64>,
    pub base_gsd_cm: f64,
    pub min_visible_fraction: f64,
    /// Worker threads; 0 picks the rayon default. Output is identical for
    /// any value.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_mode(Mode::TwoStageNn4)
    }
}

impl PipelineConfig {
    pub fn for_mode(mode: Mode) -> Self {
        let base = Self {
            stage1_tile: 208,
            stage1_overlap: 50,
            upscale_factor: 4,
            engine: UpscaleEngineKind::Nn,
            upscaler_command: None,
            stage2_tile: 416,
            stage2_overlap: 50,
            dedup: DedupConfig::default(),
            eval_iou: 0.5,
            thresholds: default_threshold_grid(),
            base_gsd_cm: 30.0,
            min_visible_fraction: 0.25,
            jobs: 0,
        };
        match mode {
            Mode::OneStage => Self {
                stage1_tile: 416,
                upscale_factor: 1,
                ..base
            },
            Mode::OneStageNn2 => Self {
                upscale_factor: 2,
                ..base
            },
            Mode::TwoStageNn4 => base,
            Mode::TwoStageSr4 => Self {
                engine: UpscaleEngineKind::External,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::BadPipelineConfig { reason });
        if self.stage1_tile <= self.stage1_overlap {
            return bad(format!(
                "stage1 tile {} must exceed overlap {}",
                self.stage1_tile, self.stage1_overlap
            ));
        }
        if self.stage2_tile <= self.stage2_overlap {
            return bad(format!(
                "stage2 tile {} must exceed overlap {}",
                self.stage2_tile, self.stage2_overlap
            ));
        }
        if self.upscale_factor == 0 {
            return bad("upscale factor must be at least 1".into());
        }
        if self.engine == UpscaleEngineKind::External && self.upscaler_command.is_none() {
            return bad("external engine needs an upscaler command".into());
        }
        if !(self.dedup.threshold > 0.0 && self.dedup.threshold <= 1.0) {
            return bad(format!("dedup threshold {} outside (0, 1]", self.dedup.threshold));
        }
        if !(self.eval_iou > 0.0 && self.eval_iou < 1.0) {
            return bad(format!("eval IOU {} outside (0, 1)", self.eval_iou));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return bad(format!(
                "min visible fraction {} outside [0, 1]",
                self.min_visible_fraction
            ));
        }
        Ok(())
    }
}

/// The detector plugged into the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetectorEngine {
    Mock(MockDetectorParams),
    External(ExternalCommand),
}

/// One scene ready to run: pixels plus merged-class ground truth.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub scene_id: String,
    pub image: PixelGrid,
    pub truths: Vec<LabeledObject>,
}

/// Everything one scene produced.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub manifest: SceneManifest,
    /// Exported labels per detector tile, in manifest leaf order.
    pub tile_labels: Vec<(String, Vec<TileLabel>)>,
    /// Raw detector output in tile-local coordinates.
    pub tile_detections: Vec<Detection>,
    /// Stitched, deduplicated scene-space detections.
    pub detections: SceneDetections,
    pub truths: Vec<LabeledObject>,
}

/// A full run: per-scene outputs plus the aggregated evaluation.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub scenes: Vec<SceneRun>,
    pub report: EvalReport,
}

fn external_upscale_batch(
    config: &PipelineConfig,
    scene_id: &str,
    tiles: &[(String, PixelGrid)],
    artifacts_dir: Option<&Path>,
) -> Result<Vec<PixelGrid>> {
    let command = config
        .upscaler_command
        .as_ref()
        .expect("validated: external engine has a command");
    let Some(dir) = artifacts_dir else {
        return Err(Error::BadPipelineConfig {
            reason: "the external upscaler exchange needs an output directory".into(),
        });
    };
    let exchange = dir.join("exchange").join(scene_id);
    external_upscale(tiles, config.upscale_factor, &exchange, command)
}

/// Run one scene through tiling, upscaling, detection, stitching, and
/// deduplication.
///
/// With an artifacts directory the detector tiles, manifest, tile labels,
/// per-tile detection files, and the stitched scene file are written under
/// it; external engines require one.
pub fn run_scene(
    config: &PipelineConfig,
    input: &SceneInput,
    detector: &DetectorEngine,
    artifacts_dir: Option<&Path>,
) -> Result<SceneRun> {
    config.validate()?;
    let scene_id = &input.scene_id;
    let scene_tiles_dir = artifacts_dir.map(|dir| dir.join("tiles").join(scene_id));

    // stage 1: cut from the native scene
    let stage1_rects = plan_tiles(
        input.image.width(),
        input.image.height(),
        config.stage1_tile,
        config.stage1_overlap,
    )?;
    let stage1: Vec<TilePlacement> = stage1_rects
        .iter()
        .map(|&r| TilePlacement::stage1(scene_id, r))
        .collect();

    // The external exchange is one command invocation per batch, so that
    // path materializes every upscaled tile; the built-in path streams one
    // parent at a time and never holds more than a single upscaled tile.
    let mut upscaled_batch: Option<Vec<PixelGrid>> = None;
    if config.upscale_factor > 1 && config.engine == UpscaleEngineKind::External {
        let stage1_tiles: Vec<(String, PixelGrid)> = stage1
            .iter()
            .map(|p| Ok((p.tile_id.clone(), extract_tile(&input.image, p)?)))
            .collect::<Result<_>>()?;
        upscaled_batch = Some(external_upscale_batch(
            config,
            scene_id,
            &stage1_tiles,
            artifacts_dir,
        )?);
    }

    // cut detector tiles from each upscaled parent, writing them as we go
    let mut placements = stage1.clone();
    let mut leaves: Vec<TilePlacement> = Vec::new();
    for (index, parent) in stage1.iter().enumerate() {
        let image = match &upscaled_batch {
            Some(batch) => batch[index].clone(),
            None => extract_tile(&input.image, parent)?.nn_upscale(config.upscale_factor)?,
        };
        let rects = plan_tiles(
            image.width(),
            image.height(),
            config.stage2_tile,
            config.stage2_overlap,
        )?;
        for rect in rects {
            let child = TilePlacement::child_of(parent, config.upscale_factor, rect)?;
            if let Some(dir) = &scene_tiles_dir {
                extract_tile(&image, &child)?
                    .save_png(&dir.join(format!("{}.png", child.tile_id)))?;
            }
            leaves.push(child.clone());
            placements.push(child);
        }
    }
    drop(upscaled_batch);

    let manifest = SceneManifest::new(
        scene_id,
        input.image.width(),
        input.image.height(),
        config.base_gsd_cm,
        placements,
    )?;

    // tile-local ground truth for the detector tiles
    let mut tile_labels: Vec<(String, Vec<TileLabel>)> = Vec::with_capacity(leaves.len());
    for placement in &leaves {
        let chain = manifest.chain(&placement.tile_id)?;
        let labels = export_tile_labels(&input.truths, &chain, config.min_visible_fraction)?;
        tile_labels.push((placement.tile_id.clone(), labels));
    }

    if let Some(dir) = &scene_tiles_dir {
        manifest.save(dir.parent().expect("scene tiles dir has a parent"))?;
        if !input.truths.is_empty() {
            for (tile_id, labels) in &tile_labels {
                write_tile_labels(dir, tile_id, labels)?;
            }
        }
    }

    let tile_detections: Vec<Detection> = match detector {
        DetectorEngine::Mock(params) => {
            let per_tile: Vec<Vec<Detection>> = leaves
                .par_iter()
                .zip(tile_labels.par_iter())
                .map(|(placement, (_, labels))| {
                    mock_detect(
                        &placement.tile_id,
                        placement.tile_w,
                        placement.tile_h,
                        labels,
                        params,
                    )
                })
                .collect::<Result<_>>()?;
            if let Some(dir) = &scene_tiles_dir {
                for (placement, dets) in leaves.iter().zip(&per_tile) {
                    write_detections(dir, &placement.tile_id, dets)?;
                }
            }
            per_tile.into_iter().flatten().collect()
        }
        DetectorEngine::External(command) => {
            let Some(dir) = &scene_tiles_dir else {
                return Err(Error::BadPipelineConfig {
                    reason: "an external detector needs an output directory".into(),
                });
            };
            run_external_detector(dir, command)?
        }
    };

    let raw = localize(&tile_detections, &manifest)?;
    let detections = dedup(&raw, &config.dedup);
    if let Some(dir) = artifacts_dir {
        write_scene_detections(&dir.join("detections"), &detections)?;
    }

    Ok(SceneRun {
        manifest,
        tile_labels,
        tile_detections,
        detections,
        truths: input.truths.clone(),
    })
}

fn run_scenes(
    config: &PipelineConfig,
    scenes: &[SceneInput],
    detector: &DetectorEngine,
    artifacts_dir: Option<&Path>,
) -> Result<Vec<SceneRun>> {
    scenes
        .par_iter()
        .map(|scene| run_scene(config, scene, detector, artifacts_dir))
        .collect()
}

/// Run the pipeline over a set of scenes and evaluate the result.
///
/// Scenes run in parallel under `config.jobs` workers; outputs are
/// deterministic and independent of the worker count. With an output
/// directory every artifact is written plus `report/` and a `run.json` log
/// recording the config, seeds, and artifact digests.
pub fn run_pipeline(
    config: &PipelineConfig,
    scenes: &[SceneInput],
    detector: &DetectorEngine,
    out_dir: Option<&Path>,
) -> Result<PipelineRun> {
    config.validate()?;
    let scene_runs = if config.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::BadPipelineConfig {
                reason: format!("worker pool: {e}"),
            })?;
        pool.install(|| run_scenes(config, scenes, detector, out_dir))?
    } else {
        run_scenes(config, scenes, detector, out_dir)?
    };

    let samples: Vec<(&SceneDetections, &[LabeledObject])> = scene_runs
        .iter()
        .map(|r| (&r.detections, r.truths.as_slice()))
        .collect();
    let report = evaluate(&samples, &config.thresholds, config.eval_iou)?;

    if let Some(dir) = out_dir {
        write_report(&report, &dir.join("report"))?;
        write_run_log(dir, config, detector, scenes)?;
    }
    Ok(PipelineRun {
        scenes: scene_runs,
        report,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub config: PipelineConfig,
    pub detector: DetectorEngine,
    pub scenes: Vec<String>,
    /// Relative artifact path -> SHA-256, sorted by path. Re-running with
    /// the logged config and seeds reproduces these digests byte for byte.
    pub artifacts: BTreeMap<String, String>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != "run.json") {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest = format!("{:x}", Sha256::digest(&bytes));
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, digest);
        }
    }
    Ok(())
}

fn write_run_log(
    out_dir: &Path,
    config: &PipelineConfig,
    detector: &DetectorEngine,
    scenes: &[SceneInput],
) -> Result<PathBuf> {
    let mut artifacts = BTreeMap::new();
    collect_files(out_dir, out_dir, &mut artifacts)?;
    let log = RunLog {
        config: config.clone(),
        detector: detector.clone(),
        scenes: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        artifacts,
    };
    let path = out_dir.join("run.json");
    let body = serde_json::to_string_pretty(&log).expect("run log serialization cannot fail");
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Generate `count` synthetic scenes named `synth_000`, `synth_001`, ...
pub fn synth_scenes(count: usize, spec: &SynthSpec) -> Result<Vec<SceneInput>> {
    (0..count)
        .map(|i| {
            let scene_id = format!("synth_{i:03}");
            let (image, truths) = generate_scene(&scene_id, spec)?;
            Ok(SceneInput {
                scene_id,
                image,
                truths,
            })
        })
        .collect()
}

/// Load scenes from a directory of PNGs plus an optional GeoJSON truth file,
/// applying the class map and clipping truth to each scene.
pub fn load_scenes_from_dir(
    scenes_dir: &Path,
    truth_geojson: Option<&Path>,
    class_map: &ClassMap,
) -> Result<(Vec<SceneInput>, Vec<String>)> {
    let truths_by_scene: BTreeMap<String, Vec<LabeledObject>> = match truth_geojson {
        None => BTreeMap::new(),
        Some(path) => {
            let parsed = parse_labels(path)?;
            let merged = apply_class_map(&parsed.labels, class_map)?;
            let mut grouped: BTreeMap<String, Vec<LabeledObject>> = BTreeMap::new();
            for obj in merged {
                grouped.entry(obj.scene_id.clone()).or_default().push(obj);
            }
            grouped
        }
    };

    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenes_dir)
        .map_err(|e| Error::io(scenes_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();

    let mut scenes = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let scene_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        let image = PixelGrid::load_png(&path)?;
        let truths = truths_by_scene.get(&scene_id).cloned().unwrap_or_default();
        if truths.is_empty() && truth_geojson.is_some() {
            warnings.push(format!("scene `{scene_id}` has no ground truth"));
        }
        let truths = clip_to_scene(&truths, image.width(), image.height());
        scenes.push(SceneInput {
            scene_id,
            image,
            truths,
        });
    }
    Ok((scenes, warnings))
}
