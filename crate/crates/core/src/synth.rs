//! Synthetic overhead scenes with pixel-exact ground truth.
//!
//! Scenes carry scattered objects and dense parking-lot-style clusters so
//! the pipeline's behavior on crowded regions is testable without real
//! imagery. Objects are flat rectangles in palette colors distinct from the
//! background: deliberately feature-poor, like the small vehicles the
//! pipeline exists for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::labels::{LabeledObject, MergedClass, SourceLabel};
use crate::raster::PixelGrid;
use crate::rng::substream_seed;

/// Scene recipe. Objects default to the nominal 13x7 small-vehicle
/// footprint so a x4 pipeline sees 52x28 objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene_w: u32,
    pub scene_h: u32,
    pub object_w: u32,
    pub object_h: u32,
    /// Objects placed uniformly at random, non-overlapping.
    pub n_scattered: u32,
    /// Dense row/column grids of objects.
    pub n_clusters: u32,
    pub cluster_rows: u32,
    pub cluster_cols: u32,
    /// Pixel gap between cluster members; 0 makes them adjacent.
    pub cluster_gap: u32,
    /// Uniform +/- amplitude added to the background gray.
    pub background_noise: u8,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            scene_w: 640,
            scene_h: 480,
            object_w: 13,
            object_h: 7,
            n_scattered: 24,
            n_clusters: 2,
            cluster_rows: 4,
            cluster_cols: 6,
            cluster_gap: 2,
            background_noise: 10,
            seed: 0,
        }
    }
}

const BACKGROUND: [u8; 3] = [72, 76, 70];
const PALETTE: [[u8; 3]; 8] = [
    [220, 30, 30],
    [30, 90, 220],
    [240, 200, 40],
    [240, 240, 235],
    [20, 20, 25],
    [40, 180, 70],
    [200, 90, 200],
    [250, 140, 30],
];

const PLACEMENT_ATTEMPTS: usize = 1000;

struct Placer {
    occupied: Vec<(u32, u32, u32, u32)>,
}

impl Placer {
    // rects keep a 1px separation so truth boxes never touch across groups
    fn collides(&self, x: u32, y: u32, w: u32, h: u32) -> bool {
        self.occupied.iter().any(|&(ox, oy, ow, oh)| {
            x < ox + ow + 1 && ox < x + w + 1 && y < oy + oh + 1 && oy < y + h + 1
        })
    }

    fn try_place(
        &mut self,
        rng: &mut ChaCha8Rng,
        scene_w: u32,
        scene_h: u32,
        w: u32,
        h: u32,
        index: usize,
    ) -> Result<(u32, u32)> {
        if w > scene_w || h > scene_h {
            return Err(Error::BadSynthSpec {
                reason: format!("{w}x{h} object cannot fit a {scene_w}x{scene_h} scene"),
            });
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.random_range(0..=scene_w - w);
            let y = rng.random_range(0..=scene_h - h);
            if !self.collides(x, y, w, h) {
                self.occupied.push((x, y, w, h));
                return Ok((x, y));
            }
        }
        Err(Error::InfeasiblePacking {
            index,
            attempts: PLACEMENT_ATTEMPTS,
        })
    }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.scene_w == 0 || spec.scene_h == 0 {
        return Err(Error::BadSynthSpec {
            reason: "zero scene extent".into(),
        });
    }
    if spec.object_w == 0 || spec.object_h == 0 {
        return Err(Error::BadSynthSpec {
            reason: "zero object extent".into(),
        });
    }
    if spec.n_clusters > 0 && (spec.cluster_rows == 0 || spec.cluster_cols == 0) {
        return Err(Error::BadSynthSpec {
            reason: "clusters need nonzero rows and cols".into(),
        });
    }
    Ok(())
}

/// Extent of one cluster's bounding region: `cols (rows) x (object + gap)`
/// minus the trailing gap.
pub fn cluster_region(spec: &SynthSpec) -> (u32, u32) {
    let w = spec.cluster_cols * (spec.object_w + spec.cluster_gap) - spec.cluster_gap;
    let h = spec.cluster_rows * (spec.object_h + spec.cluster_gap) - spec.cluster_gap;
    (w, h)
}

/// Generate a scene and its exact ground truth.
///
/// Deterministic under `(spec.seed, scene_id)`: the raster and the truth
/// list are byte-identical across runs and independent of scene processing
/// order. All objects lie fully inside the scene; ground truth never
/// overlaps for `cluster_gap >= 1`.
pub fn generate_scene(scene_id: &str, spec: &SynthSpec) -> Result<(PixelGrid, Vec<LabeledObject>)> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, scene_id));

    let mut grid = PixelGrid::filled(spec.scene_w, spec.scene_h, BACKGROUND)?;
    if spec.background_noise > 0 {
        let amp = i16::from(spec.background_noise);
        for y in 0..spec.scene_h {
            for x in 0..spec.scene_w {
                let delta = rng.random_range(-amp..=amp);
                let px = BACKGROUND.map(|c| (i16::from(c) + delta).clamp(0, 255) as u8);
                grid.set_pixel(x, y, px);
            }
        }
    }

    let mut placer = Placer { occupied: Vec::new() };
    let mut truths: Vec<LabeledObject> = Vec::new();
    let paint = |grid: &mut PixelGrid, x: u32, y: u32, w: u32, h: u32, color: [u8; 3]| {
        for py in y..y + h {
            for px in x..x + w {
                grid.set_pixel(px, py, color);
            }
        }
    };

    for cluster in 0..spec.n_clusters {
        let (region_w, region_h) = cluster_region(spec);
        let (cx, cy) = placer.try_place(
            &mut rng,
            spec.scene_w,
            spec.scene_h,
            region_w,
            region_h,
            cluster as usize,
        )?;
        for row in 0..spec.cluster_rows {
            for col in 0..spec.cluster_cols {
                let x = cx + col * (spec.object_w + spec.cluster_gap);
                let y = cy + row * (spec.object_h + spec.cluster_gap);
                let color = PALETTE[rng.random_range(0..PALETTE.len())];
                paint(&mut grid, x, y, spec.object_w, spec.object_h, color);
                truths.push(LabeledObject {
                    scene_id: scene_id.to_owned(),
                    class: MergedClass::Vehicle,
                    bbox: BBox::new(
                        f64::from(x),
                        f64::from(y),
                        f64::from(x + spec.object_w),
                        f64::from(y + spec.object_h),
                    )?,
                });
            }
        }
    }

    for index in 0..spec.n_scattered {
        let (x, y) = placer.try_place(
            &mut rng,
            spec.scene_w,
            spec.scene_h,
            spec.object_w,
            spec.object_h,
            index as usize,
        )?;
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        paint(&mut grid, x, y, spec.object_w, spec.object_h, color);
        truths.push(LabeledObject {
            scene_id: scene_id.to_owned(),
            class: MergedClass::Vehicle,
            bbox: BBox::new(
                f64::from(x),
                f64::from(y),
                f64::from(x + spec.object_w),
                f64::from(y + spec.object_h),
            )?,
        });
    }

    Ok((grid, truths))
}

/// Re-express merged-class truth in the source taxonomy for GeoJSON export,
/// closing the loop with the label parser.
pub fn to_source_labels(truths: &[LabeledObject]) -> Vec<SourceLabel> {
    truths
        .iter()
        .map(|t| SourceLabel {
            scene_id: t.scene_id.clone(),
            type_id: t.class.representative_type_id(),
            bbox: t.bbox,
        })
        .collect()
}
