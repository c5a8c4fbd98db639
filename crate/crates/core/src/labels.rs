//! Ground-truth ingestion: xView-style GeoJSON labels, class merging,
//! deterministic train/validation splits, and tile-local label export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::SplitMix64;
use crate::tiling::{f64_to_rational, ChainMap, RationalBox, TilePlacement};

/// The merged taxonomy the detector is trained and evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergedClass {
    Vehicle,
    Airplane,
    Helicopter,
}

impl MergedClass {
    pub const ALL: [MergedClass; 3] = [
        MergedClass::Vehicle,
        MergedClass::Airplane,
        MergedClass::Helicopter,
    ];

    /// Stable index used in detection and tile-label files.
    pub fn index(self) -> u32 {
        match self {
            MergedClass::Vehicle => 0,
            MergedClass::Airplane => 1,
            MergedClass::Helicopter => 2,
        }
    }

    pub fn from_index(index: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.index() == index)
    }

    pub fn name(self) -> &'static str {
        match self {
            MergedClass::Vehicle => "vehicle",
            MergedClass::Airplane => "airplane",
            MergedClass::Helicopter => "helicopter",
        }
    }

    /// A source type id the default map sends to this class; used when
    /// synthetic truth is written back out in the source taxonomy.
    pub fn representative_type_id(self) -> i64 {
        match self {
            MergedClass::Vehicle => 18,    // Small Car
            MergedClass::Airplane => 12,   // Small Aircraft
            MergedClass::Helicopter => 15, // Helicopter
        }
    }
}

impl fmt::Display for MergedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MergedClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(MergedClass::Vehicle),
            "airplane" => Ok(MergedClass::Airplane),
            "helicopter" => Ok(MergedClass::Helicopter),
            other => Err(format!("unknown merged class `{other}`")),
        }
    }
}

/// A labeled object in the source taxonomy, scene pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLabel {
    pub scene_id: String,
    pub type_id: i64,
    pub bbox: BBox,
}

/// A labeled object after class merging, scene pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObject {
    pub scene_id: String,
    pub class: MergedClass,
    pub bbox: BBox,
}

/// A label mapped into a tile's local coordinates and clipped to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TileLabel {
    pub class: MergedClass,
    pub bbox: BBox,
}

/// Result of parsing a GeoJSON label file: malformed features are counted
/// and reported, not fatal.
#[derive(Debug, Clone, Default)]
pub struct ParsedLabels {
    pub labels: Vec<SourceLabel>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawCollection {
    features: Option<Vec<RawFeature>>,
}

#[derive(Deserialize)]
struct RawFeature {
    properties: Option<RawProps>,
}

#[derive(Deserialize)]
struct RawProps {
    image_id: Option<String>,
    type_id: Option<serde_json::Value>,
    bounds_imcoords: Option<String>,
}

fn parse_bounds(bounds: &str) -> std::result::Result<BBox, String> {
    let parts: Vec<&str> = bounds.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!(
            "expected 4 comma-separated bounds, got {}",
            parts.len()
        ));
    }
    let mut vals = [0f64; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .parse::<f64>()
            .map_err(|_| format!("bad coordinate `{p}`"))?;
    }
    BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| e.to_string())
}

/// Parse an xView-format GeoJSON feature collection.
///
/// Each feature carries the scene it belongs to (`image_id`), a source class
/// (`type_id`), and pixel-space bounds (`bounds_imcoords` as
/// `"xmin,ymin,xmax,ymax"`). Features with missing fields or degenerate
/// bounds are skipped with a warning.
pub fn parse_labels_str(text: &str, origin: &Path) -> Result<ParsedLabels> {
    let collection: RawCollection = serde_json::from_str(text).map_err(|source| Error::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    let Some(features) = collection.features else {
        return Err(Error::NotAFeatureCollection {
            path: origin.to_path_buf(),
        });
    };

    let mut out = ParsedLabels::default();
    for (index, feature) in features.into_iter().enumerate() {
        let skip = |reason: String, out: &mut ParsedLabels| {
            out.skipped += 1;
            out.warnings.push(format!("feature {index}: {reason}"));
        };
        let Some(props) = feature.properties else {
            skip("missing properties".into(), &mut out);
            continue;
        };
        let Some(image_id) = props.image_id else {
            skip("missing image_id".into(), &mut out);
            continue;
        };
        let type_id = match &props.type_id {
            Some(serde_json::Value::Number(n)) if n.as_i64().is_some() => n.as_i64().unwrap(),
            Some(serde_json::Value::String(s)) if s.parse::<i64>().is_ok() => {
                s.parse::<i64>().unwrap()
            }
            _ => {
                skip("missing or non-integer type_id".into(), &mut out);
                continue;
            }
        };
        let Some(bounds) = props.bounds_imcoords else {
            skip("missing bounds_imcoords".into(), &mut out);
            continue;
        };
        match parse_bounds(&bounds) {
            Ok(bbox) => out.labels.push(SourceLabel {
                scene_id: image_id,
                type_id,
                bbox,
            }),
            Err(reason) => skip(format!("bounds `{bounds}`: {reason}"), &mut out),
        }
    }
    Ok(out)
}

pub fn parse_labels(path: &Path) -> Result<ParsedLabels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels_str(&text, path)
}

fn fmt_coord(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.4}")
    }
}

#[derive(Serialize)]
struct OutProps<'a> {
    image_id: &'a str,
    type_id: i64,
    bounds_imcoords: String,
}

#[derive(Serialize)]
struct OutFeature<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    properties: OutProps<'a>,
    geometry: Option<()>,
}

#[derive(Serialize)]
struct OutCollection<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<OutFeature<'a>>,
}

/// Canonical GeoJSON encoding of source labels; the writer half of the
/// dialect [`parse_labels`] reads, so write → parse → write is the identity.
pub fn geojson_string(labels: &[SourceLabel]) -> String {
    let collection = OutCollection {
        kind: "FeatureCollection",
        features: labels
            .iter()
            .map(|l| OutFeature {
                kind: "Feature",
                properties: OutProps {
                    image_id: &l.scene_id,
                    type_id: l.type_id,
                    bounds_imcoords: format!(
                        "{},{},{},{}",
                        fmt_coord(l.bbox.xmin()),
                        fmt_coord(l.bbox.ymin()),
                        fmt_coord(l.bbox.xmax()),
                        fmt_coord(l.bbox.ymax())
                    ),
                },
                geometry: None,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&collection).expect("geojson serialization cannot fail")
}

pub fn write_geojson(path: &Path, labels: &[SourceLabel]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, geojson_string(labels)).map_err(|e| Error::io(path, e))
}

/// Where a source class goes under the merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapTarget {
    Class(MergedClass),
    Ignore,
}

/// Total mapping from source type ids to merged classes. Classes meant to be
/// dropped must be listed as `ignore`; an id present in the data but absent
/// from the map is an error, forcing explicit decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    entries: BTreeMap<i64, MapTarget>,
}

impl ClassMap {
    /// The shipped default: 22 xView vehicle-family sources merge to
    /// `vehicle`, the three aircraft sources to `airplane`, and Helicopter
    /// stands alone; everything else is explicitly ignored.
    pub fn xview_default() -> Self {
        Self::parse(include_str!("../data/xview_class_map.txt"))
            .expect("shipped class map must parse")
    }

    /// Parse the two-column map format: `<type_id> <merged_class|ignore>`
    /// per line, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(target), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::ClassMapParse {
                    line: number + 1,
                    reason: format!("expected `<type_id> <class>`, got `{line}`"),
                });
            };
            let id: i64 = id.parse().map_err(|_| Error::ClassMapParse {
                line: number + 1,
                reason: format!("bad type id `{id}`"),
            })?;
            let target = if target == "ignore" {
                MapTarget::Ignore
            } else {
                MapTarget::Class(target.parse().map_err(|e| Error::ClassMapParse {
                    line: number + 1,
                    reason: e,
                })?)
            };
            if entries.insert(id, target).is_some() {
                return Err(Error::ClassMapParse {
                    line: number + 1,
                    reason: format!("duplicate type id {id}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn target(&self, type_id: i64) -> Option<MapTarget> {
        self.entries.get(&type_id).copied()
    }

    /// Number of source ids mapped to a merged class.
    pub fn source_count(&self, class: MergedClass) -> usize {
        self.entries
            .values()
            .filter(|t| **t == MapTarget::Class(class))
            .count()
    }

    pub fn ignored_count(&self) -> usize {
        self.entries
            .values()
            .filter(|t| **t == MapTarget::Ignore)
            .count()
    }
}

/// Relabel objects into the merged taxonomy, dropping ignored classes.
///
/// Every type id in `labels` must be covered by the map; unmapped ids fail
/// with the full offending list.
pub fn apply_class_map(labels: &[SourceLabel], map: &ClassMap) -> Result<Vec<LabeledObject>> {
    let mut unmapped: Vec<i64> = labels
        .iter()
        .filter(|l| map.target(l.type_id).is_none())
        .map(|l| l.type_id)
        .collect();
    if !unmapped.is_empty() {
        unmapped.sort_unstable();
        unmapped.dedup();
        return Err(Error::UnmappedClasses { ids: unmapped });
    }
    Ok(labels
        .iter()
        .filter_map(|l| match map.target(l.type_id) {
            Some(MapTarget::Class(class)) => Some(LabeledObject {
                scene_id: l.scene_id.clone(),
                class,
                bbox: l.bbox,
            }),
            _ => None,
        })
        .collect())
}

/// Clip labels to the scene rectangle, dropping anything degenerate after
/// the clip.
pub fn clip_to_scene(objs: &[LabeledObject], scene_w: u32, scene_h: u32) -> Vec<LabeledObject> {
    let scene = BBox::new(0.0, 0.0, f64::from(scene_w), f64::from(scene_h))
        .expect("scene rectangle is valid");
    objs.iter()
        .filter_map(|o| {
            o.bbox.intersect(&scene).map(|bbox| LabeledObject {
                scene_id: o.scene_id.clone(),
                class: o.class,
                bbox,
            })
        })
        .collect()
}

/// Deterministic scene-level train/validation split.
///
/// Scene ids are sorted and deduplicated (the partition depends only on the
/// id set), shuffled by a Fisher–Yates pass driven by [`SplitMix64`]
/// (`j = next_u64() mod (i + 1)`, swapping from the back), and cut at
/// `floor(n * fraction)`. Splitting is by scene, never by tile: overlapping
/// tiles from one scene share pixels.
pub fn split_scenes(
    scene_ids: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if scene_ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadSplitFraction { fraction });
    }
    let mut ids = scene_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = SplitMix64::new(seed);
    for i in (1..ids.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
    let cut = (ids.len() as f64 * fraction).floor() as usize;
    let val = ids.split_off(cut);
    Ok((ids, val))
}

/// Map scene labels into a tile's local frame and keep the sufficiently
/// visible ones.
///
/// Each box is carried through the chain with [`ChainMap::scene_to_tile`]
/// (exact), clipped to the tile extent, and kept iff the clipped area is at
/// least `min_visible_fraction` of the box's unclipped tile-space area.
/// Boxes straddling overlapping tiles appear in every tile that sees enough
/// of them.
pub fn export_tile_labels(
    objs: &[LabeledObject],
    chain: &[&TilePlacement],
    min_visible_fraction: f64,
) -> Result<Vec<TileLabel>> {
    if !(0.0..=1.0).contains(&min_visible_fraction) {
        return Err(Error::BadVisibleFraction {
            value: min_visible_fraction,
        });
    }
    let map = ChainMap::from_chain(chain)?;
    let tile = *chain.last().expect("from_chain rejects empty chains");
    let fraction = f64_to_rational(min_visible_fraction)?;
    let mut out = Vec::new();
    for obj in objs {
        let scene_box = RationalBox::from_bbox(&obj.bbox)?;
        let tile_box = map.scene_to_tile(&scene_box);
        let full_area = tile_box.area();
        let Some(clipped) = tile_box.clip_to_extent(tile.tile_w, tile.tile_h) else {
            continue;
        };
        if clipped.area() < fraction * full_area {
            continue;
        }
        out.push(TileLabel {
            class: obj.class,
            bbox: clipped.to_bbox()?,
        });
    }
    Ok(out)
}

/// Tile label file body: one `<class_index> <xmin> <ymin> <xmax> <ymax>`
/// line per object, tile pixels, four decimal places.
pub fn tile_label_lines(labels: &[TileLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        s.push_str(&format!(
            "{} {:.4} {:.4} {:.4} {:.4}\n",
            l.class.index(),
            l.bbox.xmin(),
            l.bbox.ymin(),
            l.bbox.xmax(),
            l.bbox.ymax()
        ));
    }
    s
}

pub fn parse_tile_label_lines(text: &str, file_label: &str) -> Result<Vec<TileLabel>> {
    let mut labels = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::TileLabelParse {
            file: file_label.to_owned(),
            line: number + 1,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", parts.len())));
        }
        let class_index: u32 = parts[0]
            .parse()
            .map_err(|_| err(format!("bad class index `{}`", parts[0])))?;
        let class = MergedClass::from_index(class_index)
            .ok_or_else(|| err(format!("unknown class index {class_index}")))?;
        let mut vals = [0f64; 4];
        for (v, p) in vals.iter_mut().zip(&parts[1..]) {
            *v = p.parse().map_err(|_| err(format!("bad coordinate `{p}`")))?;
        }
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| err(e.to_string()))?;
        labels.push(TileLabel { class, bbox });
    }
    Ok(labels)
}

/// Write `<tiles_dir>/labels/<tile_id>.txt`.
pub fn write_tile_labels(tiles_dir: &Path, tile_id: &str, labels: &[TileLabel]) -> Result<PathBuf> {
    let dir = tiles_dir.join("labels");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{tile_id}.txt"));
    std::fs::write(&path, tile_label_lines(labels)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_tile_labels(tiles_dir: &Path, tile_id: &str) -> Result<Vec<TileLabel>> {
    let path = tiles_dir.join("labels").join(format!("{tile_id}.txt"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_tile_label_lines(&text, &path.display().to_string())
}
