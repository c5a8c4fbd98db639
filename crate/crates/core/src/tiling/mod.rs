//! Overlapped tile planning, extraction, placement manifests, and the
//! coordinate transforms between tile-local and scene spaces.
//!
//! Traversal is column-major: successive tiles run top to bottom, then the
//! planner returns to the top and shifts right. When the next tile would
//! exceed the parent, a final position clamped to `parent - tile` is emitted,
//! which produces the enlarged edge overlap while keeping full coverage and a
//! constant tile size.

mod transform;

pub use transform::{
    f64_to_rational, rational_to_f64, scene_to_tile, tile_to_scene, ChainMap, Rational,
    RationalBox,
};

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::PixelGrid;

/// A planned tile position and extent inside its parent image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Tile positions along one axis.
///
/// Positions advance by `tile - overlap`; the final position is clamped to
/// `parent - tile` (deduplicated when it lands on the previous stride). A
/// parent smaller than the tile yields the single full-extent position 0.
pub fn axis_positions(parent: u32, tile: u32, overlap: u32) -> Result<Vec<u32>> {
    if tile <= overlap {
        return Err(Error::TileSizeNotAboveOverlap {
            tile_size: tile,
            overlap,
        });
    }
    if parent == 0 {
        return Err(Error::EmptyRaster {
            width: parent,
            height: parent,
        });
    }
    if parent < tile {
        return Ok(vec![0]);
    }
    let stride = tile - overlap;
    let mut positions = Vec::new();
    let mut p = 0u32;
    while p + tile <= parent {
        positions.push(p);
        p += stride;
    }
    let last = parent - tile;
    if *positions.last().expect("position 0 always fits") != last {
        positions.push(last);
    }
    Ok(positions)
}

/// Plan overlapped tiles over a parent image, column-major.
///
/// Tiles have extent `tile_size` except when the parent is smaller along an
/// axis, in which case the single tile shrinks to the parent extent.
pub fn plan_tiles(
    parent_w: u32,
    parent_h: u32,
    tile_size: u32,
    overlap: u32,
) -> Result<Vec<TileRect>> {
    let xs = axis_positions(parent_w, tile_size, overlap)?;
    let ys = axis_positions(parent_h, tile_size, overlap)?;
    let w = tile_size.min(parent_w);
    let h = tile_size.min(parent_h);
    let mut rects = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            rects.push(TileRect { x, y, w, h });
        }
    }
    Ok(rects)
}

/// One tile's offset, extent, and cumulative scale relative to its source
/// scene: the coordinate-mapping record that stitching inverts.
///
/// `cumulative_scale` is the product of upscale factors applied between the
/// original scene and the image this tile was cut from; stage-1 tiles cut
/// straight from the scene carry scale 1. `parent_placement` links a tile cut
/// from an upscaled tile back to that tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlacement {
    pub tile_id: String,
    pub scene_id: String,
    pub offset_x: u32,
    pub offset_y: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub cumulative_scale: u32,
    pub parent_placement: Option<String>,
}

impl TilePlacement {
    /// A stage-1 placement cut directly from the scene.
    pub fn stage1(scene_id: &str, rect: TileRect) -> Self {
        Self {
            tile_id: format!("s1_x{:05}_y{:05}", rect.x, rect.y),
            scene_id: scene_id.to_owned(),
            offset_x: rect.x,
            offset_y: rect.y,
            tile_w: rect.w,
            tile_h: rect.h,
            cumulative_scale: 1,
            parent_placement: None,
        }
    }

    /// A placement cut from `parent`'s image after upscaling it by
    /// `upscale_factor`.
    pub fn child_of(parent: &TilePlacement, upscale_factor: u32, rect: TileRect) -> Result<Self> {
        if upscale_factor == 0 {
            return Err(Error::ZeroFactor);
        }
        let cumulative_scale = parent
            .cumulative_scale
            .checked_mul(upscale_factor)
            .ok_or_else(|| Error::InvalidChain {
                tile_id: parent.tile_id.clone(),
                reason: format!(
                    "cumulative scale {} x {} overflows",
                    parent.cumulative_scale, upscale_factor
                ),
            })?;
        Ok(Self {
            tile_id: format!("{}__x{:05}_y{:05}", parent.tile_id, rect.x, rect.y),
            scene_id: parent.scene_id.clone(),
            offset_x: rect.x,
            offset_y: rect.y,
            tile_w: rect.w,
            tile_h: rect.h,
            cumulative_scale,
            parent_placement: Some(parent.tile_id.clone()),
        })
    }

    /// True when the placement rectangle fits inside a parent of the given
    /// extent.
    fn fits(&self, parent_w: u64, parent_h: u64) -> bool {
        u64::from(self.offset_x) + u64::from(self.tile_w) <= parent_w
            && u64::from(self.offset_y) + u64::from(self.tile_h) <= parent_h
    }
}

/// Extract the exact sub-raster a placement covers from its parent image.
pub fn extract_tile(parent: &PixelGrid, p: &TilePlacement) -> Result<PixelGrid> {
    if !p.fits(u64::from(parent.width()), u64::from(parent.height())) {
        return Err(Error::PlacementOutOfBounds {
            tile_id: p.tile_id.clone(),
            offset_x: p.offset_x,
            offset_y: p.offset_y,
            w: p.tile_w,
            h: p.tile_h,
            parent_w: parent.width(),
            parent_h: parent.height(),
        });
    }
    parent.crop(p.offset_x, p.offset_y, p.tile_w, p.tile_h)
}

/// Per-scene record of every placement plus GSD bookkeeping; written
/// alongside tiles so stitching is reconstructable from disk alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub scene_w: u32,
    pub scene_h: u32,
    /// Ground sample distance of the original scene, cm per pixel.
    pub base_gsd_cm: f64,
    /// `base_gsd_cm / max cumulative_scale`: the GSD the most-upscaled tiles
    /// are effectively sampled at.
    pub effective_gsd_cm: f64,
    pub placements: Vec<TilePlacement>,
}

impl SceneManifest {
    pub fn new(
        scene_id: &str,
        scene_w: u32,
        scene_h: u32,
        base_gsd_cm: f64,
        placements: Vec<TilePlacement>,
    ) -> Result<Self> {
        let max_scale = placements
            .iter()
            .map(|p| p.cumulative_scale)
            .max()
            .unwrap_or(1);
        let manifest = Self {
            scene_id: scene_id.to_owned(),
            scene_w,
            scene_h,
            base_gsd_cm,
            effective_gsd_cm: base_gsd_cm / f64::from(max_scale),
            placements,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn max_scale(&self) -> u32 {
        self.placements
            .iter()
            .map(|p| p.cumulative_scale)
            .max()
            .unwrap_or(1)
    }

    /// Check the structural invariants: unique ids, resolvable parents,
    /// placements inside their parent extents, consistent scales and GSD.
    pub fn validate(&self) -> Result<()> {
        let mut by_id: HashMap<&str, &TilePlacement> = HashMap::new();
        for p in &self.placements {
            if by_id.insert(&p.tile_id, p).is_some() {
                return Err(Error::DuplicateTileId {
                    tile_id: p.tile_id.clone(),
                    scene_id: self.scene_id.clone(),
                });
            }
        }
        for p in &self.placements {
            if p.cumulative_scale == 0 {
                return Err(Error::InvalidManifest {
                    scene_id: self.scene_id.clone(),
                    reason: format!("placement `{}` has zero cumulative_scale", p.tile_id),
                });
            }
            let (parent_w, parent_h) = match &p.parent_placement {
                None => {
                    if p.cumulative_scale != 1 {
                        return Err(Error::InvalidManifest {
                            scene_id: self.scene_id.clone(),
                            reason: format!(
                                "stage-1 placement `{}` must have cumulative_scale 1, found {}",
                                p.tile_id, p.cumulative_scale
                            ),
                        });
                    }
                    (u64::from(self.scene_w), u64::from(self.scene_h))
                }
                Some(parent_id) => {
                    let parent =
                        by_id
                            .get(parent_id.as_str())
                            .ok_or_else(|| Error::UnresolvedParent {
                                tile_id: p.tile_id.clone(),
                                parent: parent_id.clone(),
                            })?;
                    // the parent image was upscaled before this tile was cut
                    let factor = p.cumulative_scale / parent.cumulative_scale;
                    if factor == 0 || factor * parent.cumulative_scale != p.cumulative_scale {
                        return Err(Error::InvalidManifest {
                            scene_id: self.scene_id.clone(),
                            reason: format!(
                                "placement `{}` scale {} is not a multiple of parent scale {}",
                                p.tile_id, p.cumulative_scale, parent.cumulative_scale
                            ),
                        });
                    }
                    (
                        u64::from(parent.tile_w) * u64::from(factor),
                        u64::from(parent.tile_h) * u64::from(factor),
                    )
                }
            };
            if !p.fits(parent_w, parent_h) {
                return Err(Error::PlacementOutOfBounds {
                    tile_id: p.tile_id.clone(),
                    offset_x: p.offset_x,
                    offset_y: p.offset_y,
                    w: p.tile_w,
                    h: p.tile_h,
                    parent_w: parent_w.min(u64::from(u32::MAX)) as u32,
                    parent_h: parent_h.min(u64::from(u32::MAX)) as u32,
                });
            }
        }
        let expected = self.base_gsd_cm / f64::from(self.max_scale());
        if self.effective_gsd_cm != expected {
            return Err(Error::InvalidManifest {
                scene_id: self.scene_id.clone(),
                reason: format!(
                    "effective_gsd_cm {} does not equal base {} / max scale {}",
                    self.effective_gsd_cm,
                    self.base_gsd_cm,
                    self.max_scale()
                ),
            });
        }
        Ok(())
    }

    pub fn placement(&self, tile_id: &str) -> Option<&TilePlacement> {
        self.placements.iter().find(|p| p.tile_id == tile_id)
    }

    /// Placement chain for a tile, ordered outermost (stage-1) first.
    pub fn chain(&self, tile_id: &str) -> Result<Vec<&TilePlacement>> {
        let by_id: HashMap<&str, &TilePlacement> = self
            .placements
            .iter()
            .map(|p| (p.tile_id.as_str(), p))
            .collect();
        let mut chain = Vec::new();
        let mut current = *by_id.get(tile_id).ok_or_else(|| Error::UnknownTileId {
            tile_id: tile_id.to_owned(),
            scene_id: self.scene_id.clone(),
        })?;
        chain.push(current);
        while let Some(parent_id) = &current.parent_placement {
            current = *by_id
                .get(parent_id.as_str())
                .ok_or_else(|| Error::UnresolvedParent {
                    tile_id: current.tile_id.clone(),
                    parent: parent_id.clone(),
                })?;
            chain.push(current);
            if chain.len() > self.placements.len() {
                return Err(Error::InvalidManifest {
                    scene_id: self.scene_id.clone(),
                    reason: format!("placement parent cycle at `{tile_id}`"),
                });
            }
        }
        chain.reverse();
        Ok(chain)
    }

    /// Placements no other placement claims as parent: the tiles detection
    /// actually runs on.
    pub fn leaf_placements(&self) -> Vec<&TilePlacement> {
        let parents: HashSet<&str> = self
            .placements
            .iter()
            .filter_map(|p| p.parent_placement.as_deref())
            .collect();
        self.placements
            .iter()
            .filter(|p| !parents.contains(p.tile_id.as_str()))
            .collect()
    }

    /// Canonical JSON encoding (used for byte-stable round trips).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn manifest_path(dir: &Path, scene_id: &str) -> PathBuf {
        dir.join(format!("{scene_id}.manifest.json"))
    }

    /// Write `<dir>/<scene_id>.manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = Self::manifest_path(dir, &self.scene_id);
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SceneManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        manifest.validate()?;
        Ok(manifest)
    }
}
