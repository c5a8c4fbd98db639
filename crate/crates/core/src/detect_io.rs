//! The pluggable detector boundary: the per-tile detection file format, the
//! external-process detector adapter, and a deterministic mock detector that
//! stands in for a trained network in the harness and tests.
//!
//! Detection interchange is plain text, one detection per line, so it
//! bridges arbitrary detector ecosystems and stays auditable.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::labels::{MergedClass, TileLabel};
use crate::process::ExternalCommand;
use crate::rng::substream_seed;

/// One detection in tile-local coordinates (scene-space after stitching).
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: MergedClass,
    /// In `(0, 1]`.
    pub confidence: f64,
    pub bbox: BBox,
    pub tile_id: String,
}

impl Detection {
    pub fn new(class: MergedClass, confidence: f64, bbox: BBox, tile_id: &str) -> Result<Self> {
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::BadConfidence { value: confidence });
        }
        Ok(Self {
            class,
            confidence,
            bbox,
            tile_id: tile_id.to_owned(),
        })
    }
}

/// Detection file body: `<class_index> <confidence> <xmin> <ymin> <xmax>
/// <ymax>` per line, four decimal places.
pub fn detection_lines(detections: &[Detection]) -> String {
    let mut s = String::new();
    for d in detections {
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

/// Parse a detection file body, tagging every record with `tile_id`.
/// Unparseable lines fail with the file label and line number.
pub fn parse_detection_lines(text: &str, tile_id: &str, file_label: &str) -> Result<Vec<Detection>> {
    let mut detections = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::DetectionParse {
            file: file_label.to_owned(),
            line: number + 1,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", parts.len())));
        }
        let class_index: u32 = parts[0]
            .parse()
            .map_err(|_| err(format!("bad class index `{}`", parts[0])))?;
        let class = MergedClass::from_index(class_index)
            .ok_or_else(|| err(format!("unknown class index {class_index}")))?;
        let confidence: f64 = parts[1]
            .parse()
            .map_err(|_| err(format!("bad confidence `{}`", parts[1])))?;
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(err(format!("confidence {confidence} outside (0, 1]")));
        }
        let mut vals = [0f64; 4];
        for (v, p) in vals.iter_mut().zip(&parts[2..]) {
            *v = p.parse().map_err(|_| err(format!("bad coordinate `{p}`")))?;
        }
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| err(e.to_string()))?;
        detections.push(Detection {
            class,
            confidence,
            bbox,
            tile_id: tile_id.to_owned(),
        });
    }
    Ok(detections)
}

/// Write `<tiles_dir>/detections/<tile_id>.txt`.
pub fn write_detections(tiles_dir: &Path, tile_id: &str, detections: &[Detection]) -> Result<PathBuf> {
    let dir = tiles_dir.join("detections");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{tile_id}.txt"));
    std::fs::write(&path, detection_lines(detections)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Read every per-tile detection file under `<tiles_dir>/detections/`,
/// tagging records with the file stem as tile id. A missing directory means
/// no detections.
pub fn read_detections_dir(tiles_dir: &Path) -> Result<Vec<Detection>> {
    let dir = tiles_dir.join("detections");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut detections = Vec::new();
    for path in files {
        let tile_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        detections.extend(parse_detection_lines(
            &text,
            &tile_id,
            &path.display().to_string(),
        )?);
    }
    Ok(detections)
}

/// Invoke an external detector on a tiles directory and collect its output.
///
/// The command receives the tiles directory as its sole argument, must exit
/// 0, and is expected to write `detections/<tile_id>.txt` files next to the
/// tiles. A stub that emits no files yields an empty list.
pub fn run_external_detector(tiles_dir: &Path, command: &ExternalCommand) -> Result<Vec<Detection>> {
    command.run_on_dir(tiles_dir)?;
    read_detections_dir(tiles_dir)
}

/// How the mock decides to drop a labeled object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MissModel {
    /// Same miss probability for every object.
    Constant(f64),
    /// Miss probability decays with on-tile box area:
    /// `floor + (ceil - floor) * exp(-area / area_scale)`. Small objects are
    /// missed often; upscaled (larger) ones rarely — the surrogate for a
    /// detector whose recall improves with object resolution.
    AreaDecay {
        floor: f64,
        ceil: f64,
        area_scale: f64,
    },
}

impl MissModel {
    fn probability(&self, area: f64) -> f64 {
        match *self {
            MissModel::Constant(p) => p,
            MissModel::AreaDecay {
                floor,
                ceil,
                area_scale,
            } => floor + (ceil - floor) * (-area / area_scale).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MissModel::Constant(p) => (0.0..=1.0).contains(&p),
            MissModel::AreaDecay {
                floor,
                ceil,
                area_scale,
            } => {
                (0.0..=1.0).contains(&floor)
                    && (0.0..=1.0).contains(&ceil)
                    && floor <= ceil
                    && area_scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::BadMockParams {
                reason: format!("invalid miss model {self:?}"),
            })
        }
    }
}

/// Uniform confidence draw on `(lo, hi]`; `lo == hi` yields the constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRange {
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceRange {
    pub fn constant(value: f64) -> Self {
        Self {
            lo: value,
            hi: value,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.hi
        } else {
            // hi - u * (hi - lo) with u in [0, 1) lands in (lo, hi]
            self.hi - rng.random::<f64>() * (self.hi - self.lo)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lo > 0.0 && self.hi <= 1.0 && self.lo <= self.hi {
            Ok(())
        } else {
            Err(Error::BadMockParams {
                reason: format!("confidence range ({}, {}] invalid", self.lo, self.hi),
            })
        }
    }
}

/// A seeded stochastic detector driven by ground truth.
///
/// Each labeled object is independently dropped per the miss model,
/// surviving boxes are jittered uniformly per corner, and false positives
/// are placed uniformly in the tile with Poisson-distributed count. Draws
/// come from a per-tile substream derived from `(seed, tile_id)`, so results
/// are independent of tile processing order — which is also what makes
/// misses independent across overlapping tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockDetectorParams {
    pub miss: MissModel,
    /// Uniform per-corner jitter amplitude in tile pixels.
    pub jitter_px: f64,
    /// Expected false positives per tile (Poisson mean).
    pub false_positive_rate: f64,
    /// True-positive confidence model; default uniform [0.5, 1.0].
    pub tp_confidence: ConfidenceRange,
    /// False-positive confidence model; default uniform (~0, 0.5].
    pub fp_confidence: ConfidenceRange,
    pub seed: u64,
}

impl Default for MockDetectorParams {
    fn default() -> Self {
        Self {
            miss: MissModel::Constant(0.0),
            jitter_px: 0.0,
            false_positive_rate: 0.0,
            tp_confidence: ConfidenceRange { lo: 0.5, hi: 1.0 },
            // floor keeps confidences on-format: files carry 4 decimals
            fp_confidence: ConfidenceRange { lo: 1e-4, hi: 0.5 },
            seed: 0,
        }
    }
}

impl MockDetectorParams {
    /// The perfect detector: no misses, no jitter, no false positives, and
    /// constant confidence 1.0 so containment ties resolve to the larger
    /// box during deduplication.
    pub fn perfect(seed: u64) -> Self {
        Self {
            tp_confidence: ConfidenceRange::constant(1.0),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.miss.validate()?;
        self.tp_confidence.validate()?;
        self.fp_confidence.validate()?;
        if self.jitter_px < 0.0 {
            return Err(Error::BadMockParams {
                reason: format!("negative jitter {}", self.jitter_px),
            });
        }
        if self.false_positive_rate < 0.0 {
            return Err(Error::BadMockParams {
                reason: format!("negative false positive rate {}", self.false_positive_rate),
            });
        }
        Ok(())
    }
}

// False positives get a plausible small-object footprint.
const FP_MIN_EXTENT: f64 = 3.0;
const FP_MAX_EXTENT: f64 = 30.0;

/// Run the mock detector over one tile's exported labels.
///
/// Deterministic under `(params.seed, tile_id)`: the same inputs always
/// produce byte-identical detection lists, serially or in parallel.
pub fn mock_detect(
    tile_id: &str,
    tile_w: u32,
    tile_h: u32,
    labels: &[TileLabel],
    params: &MockDetectorParams,
) -> Result<Vec<Detection>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(params.seed, tile_id));
    let mut detections = Vec::new();

    for label in labels {
        let miss: f64 = rng.random();
        if miss < params.miss.probability(label.bbox.area()) {
            continue;
        }
        let mut corners = [
            label.bbox.xmin(),
            label.bbox.ymin(),
            label.bbox.xmax(),
            label.bbox.ymax(),
        ];
        if params.jitter_px > 0.0 {
            for c in &mut corners {
                *c += rng.random_range(-params.jitter_px..=params.jitter_px);
            }
            // degenerate jitters are clamped to a minimal valid extent
            if corners[2] <= corners[0] {
                corners[2] = corners[0] + 0.01;
            }
            if corners[3] <= corners[1] {
                corners[3] = corners[1] + 0.01;
            }
        }
        let confidence = params.tp_confidence.sample(&mut rng);
        detections.push(Detection {
            class: label.class,
            confidence,
            bbox: BBox::new(corners[0], corners[1], corners[2], corners[3])
                .expect("clamped jitter keeps boxes valid"),
            tile_id: tile_id.to_owned(),
        });
    }

    if params.false_positive_rate > 0.0 {
        let poisson = Poisson::new(params.false_positive_rate).map_err(|e| Error::BadMockParams {
            reason: format!("false positive rate: {e}"),
        })?;
        let count = poisson.sample(&mut rng) as usize;
        let (tw, th) = (f64::from(tile_w), f64::from(tile_h));
        for _ in 0..count {
            let w = rng.random_range(FP_MIN_EXTENT..FP_MAX_EXTENT).min(tw);
            let h = rng.random_range(FP_MIN_EXTENT..FP_MAX_EXTENT).min(th);
            let x = rng.random_range(0.0..(tw - w).max(f64::MIN_POSITIVE));
            let y = rng.random_range(0.0..(th - h).max(f64::MIN_POSITIVE));
            let confidence = params.fp_confidence.sample(&mut rng);
            detections.push(Detection {
                class: MergedClass::Vehicle,
                confidence,
                bbox: BBox::new(x, y, x + w, y + h).expect("sampled box is valid"),
                tile_id: tile_id.to_owned(),
            });
        }
    }

    Ok(detections)
}
