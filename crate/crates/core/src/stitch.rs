//! Map tile-local detections into original-scene coordinates through the
//! placement chain and suppress duplicates with the confidence-sorted IOA
//! rule.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detect_io::Detection;
use crate::error::{Error, Result};
use crate::geometry::{ioa, iou, BBox};
use crate::labels::MergedClass;
use crate::tiling::{ChainMap, RationalBox, SceneManifest};

/// A detection mapped into scene pixels, with the placement chain that
/// produced it (outermost tile first).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDetection {
    pub class: MergedClass,
    pub confidence: f64,
    pub bbox: BBox,
    pub provenance: Vec<String>,
}

/// All detections of one scene in scene coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneDetections {
    pub scene_id: String,
    pub detections: Vec<SceneDetection>,
}

/// Map tile-local detections to scene coordinates through the manifest's
/// placement chains and clip them to the scene rectangle.
///
/// Confidences are untouched. Detections that fall entirely outside the
/// scene after mapping are dropped; ones straddling an edge are clipped
/// flush to it. A detection naming a tile the manifest does not know is an
/// error.
pub fn localize(detections: &[Detection], manifest: &SceneManifest) -> Result<SceneDetections> {
    let mut maps: HashMap<&str, (ChainMap, Vec<String>)> = HashMap::new();
    let mut out = SceneDetections {
        scene_id: manifest.scene_id.clone(),
        detections: Vec::with_capacity(detections.len()),
    };
    for det in detections {
        let (map, provenance) = match maps.get(det.tile_id.as_str()) {
            Some(entry) => entry,
            None => {
                let chain = manifest.chain(&det.tile_id)?;
                let provenance: Vec<String> = chain.iter().map(|p| p.tile_id.clone()).collect();
                maps.insert(det.tile_id.as_str(), (ChainMap::from_chain(&chain)?, provenance));
                &maps[det.tile_id.as_str()]
            }
        };
        let tile_box = RationalBox::from_bbox(&det.bbox)?;
        let scene_box = map.tile_to_scene(&tile_box);
        let Some(clipped) = scene_box.clip_to_extent(manifest.scene_w, manifest.scene_h) else {
            continue;
        };
        out.detections.push(SceneDetection {
            class: det.class,
            confidence: det.confidence,
            bbox: clipped.to_bbox()?,
            provenance: provenance.clone(),
        });
    }
    Ok(out)
}

/// Which overlap measure drives suppression. IOA is the pipeline default;
/// IOU mode ships for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMetric {
    Ioa,
    Iou,
}

impl OverlapMetric {
    fn measure(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            OverlapMetric::Ioa => ioa(a, b),
            OverlapMetric::Iou => iou(a, b),
        }
    }
}

impl fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMetric::Ioa => "ioa",
            OverlapMetric::Iou => "iou",
        })
    }
}

impl FromStr for OverlapMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ioa" => Ok(OverlapMetric::Ioa),
            "iou" => Ok(OverlapMetric::Iou),
            other => Err(format!("unknown dedup metric `{other}` (ioa|iou)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    /// A kept detection suppresses later ones overlapping it above this.
    pub threshold: f64,
    pub metric: OverlapMetric,
    /// Suppress across classes instead of per class.
    pub class_agnostic: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            metric: OverlapMetric::Ioa,
            class_agnostic: false,
        }
    }
}

/// Canonical processing order: confidence descending, ties broken by larger
/// area, then lexicographic box coordinates, then class and provenance, so
/// the kept set is independent of input permutation.
fn canonical_order(a: &SceneDetection, b: &SceneDetection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| b.bbox.area().total_cmp(&a.bbox.area()))
        .then_with(|| a.bbox.xmin().total_cmp(&b.bbox.xmin()))
        .then_with(|| a.bbox.ymin().total_cmp(&b.bbox.ymin()))
        .then_with(|| a.bbox.xmax().total_cmp(&b.bbox.xmax()))
        .then_with(|| a.bbox.ymax().total_cmp(&b.bbox.ymax()))
        .then_with(|| a.class.index().cmp(&b.class.index()))
        .then_with(|| a.provenance.cmp(&b.provenance))
}

/// Greedy duplicate suppression.
///
/// Detections are visited in canonical confidence order; one is kept iff its
/// overlap with every already-kept detection of the same class (or of any
/// class in class-agnostic mode) stays at or below the threshold. Kept
/// detections come back in processing order with coordinates and confidences
/// unaltered.
pub fn dedup(scene: &SceneDetections, config: &DedupConfig) -> SceneDetections {
    let mut ordered: Vec<&SceneDetection> = scene.detections.iter().collect();
    ordered.sort_by(|a, b| canonical_order(a, b));

    let mut kept: Vec<&SceneDetection> = Vec::new();
    for candidate in ordered {
        let duplicate = kept.iter().any(|k| {
            (config.class_agnostic || k.class == candidate.class)
                && config.metric.measure(&k.bbox, &candidate.bbox) > config.threshold
        });
        if !duplicate {
            kept.push(candidate);
        }
    }
    SceneDetections {
        scene_id: scene.scene_id.clone(),
        detections: kept.into_iter().cloned().collect(),
    }
}

/// Scene-level detection file body: same line format as tile detections but
/// scene coordinates, sorted by confidence descending.
pub fn scene_detection_lines(scene: &SceneDetections) -> String {
    let mut ordered: Vec<&SceneDetection> = scene.detections.iter().collect();
    ordered.sort_by(|a, b| canonical_order(a, b));
    let mut s = String::new();
    for d in ordered {
        s.push_str(&format!(
            "{} {:.4} {:.4} {:.4} {:.4} {:.4}\n",
            d.class.index(),
            d.confidence,
            d.bbox.xmin(),
            d.bbox.ymin(),
            d.bbox.xmax(),
            d.bbox.ymax()
        ));
    }
    s
}

/// Write `<dir>/<scene_id>.detections.txt`.
pub fn write_scene_detections(dir: &Path, scene: &SceneDetections) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.detections.txt", scene.scene_id));
    std::fs::write(&path, scene_detection_lines(scene)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parse a scene detection file (provenance is not serialized).
pub fn parse_scene_detections(path: &Path, scene_id: &str) -> Result<SceneDetections> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed =
        crate::detect_io::parse_detection_lines(&text, scene_id, &path.display().to_string())?;
    Ok(SceneDetections {
        scene_id: scene_id.to_owned(),
        detections: parsed
            .into_iter()
            .map(|d| SceneDetection {
                class: d.class,
                confidence: d.confidence,
                bbox: d.bbox,
                provenance: Vec::new(),
            })
            .collect(),
    })
}
