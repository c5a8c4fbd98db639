//! Exact coordinate transforms through placement chains.
//!
//! A chain of placements collapses to one affine map per axis:
//! `scene = (tile_local + offset) / scale` with integer offset and scale, so
//! both directions are computed in rational arithmetic and round trips are
//! exact — no tolerance, no rounding. Tile-to-scene results may be fractional
//! after the scale division; they are retained as rationals and only reduced
//! to floats at the evaluation and file-format boundaries.

use num_rational::Ratio;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tiling::TilePlacement;

/// Exact pixel coordinate used by the placement-chain transforms.
pub type Rational = Ratio<i128>;

/// Nearest float to a rational (numerator and denominator each round once).
pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Convert a finite `f64` to the exact rational it denotes.
///
/// Every finite float is `m * 2^e`; the loop doubles until the value is
/// integral. Values needing denominators beyond 2^100 (far below any pixel
/// coordinate) are rejected rather than approximated.
pub fn f64_to_rational(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::InexactCoordinate { value: x });
    }
    let mut scaled = x;
    let mut denom: i128 = 1;
    while scaled.fract() != 0.0 {
        scaled *= 2.0;
        denom *= 2;
        if denom > 1i128 << 100 || !scaled.is_finite() {
            return Err(Error::InexactCoordinate { value: x });
        }
    }
    if scaled.abs() >= 2f64.powi(120) {
        return Err(Error::InexactCoordinate { value: x });
    }
    Ok(Rational::new(scaled as i128, denom))
}

/// An axis-aligned box over exact rational coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalBox {
    xmin: Rational,
    ymin: Rational,
    xmax: Rational,
    ymax: Rational,
}

impl RationalBox {
    pub fn new(xmin: Rational, ymin: Rational, xmax: Rational, ymax: Rational) -> Result<Self> {
        if xmax <= xmin || ymax <= ymin {
            return Err(Error::DegenerateBox {
                xmin: rational_to_f64(xmin),
                ymin: rational_to_f64(ymin),
                xmax: rational_to_f64(xmax),
                ymax: rational_to_f64(ymax),
            });
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn from_ints(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Result<Self> {
        Self::new(
            Rational::from(i128::from(xmin)),
            Rational::from(i128::from(ymin)),
            Rational::from(i128::from(xmax)),
            Rational::from(i128::from(ymax)),
        )
    }

    /// Exact conversion from a float box.
    pub fn from_bbox(b: &BBox) -> Result<Self> {
        Self::new(
            f64_to_rational(b.xmin())?,
            f64_to_rational(b.ymin())?,
            f64_to_rational(b.xmax())?,
            f64_to_rational(b.ymax())?,
        )
    }

    /// Reduce to a float box; the single place rounding may occur.
    pub fn to_bbox(&self) -> Result<BBox> {
        BBox::new(
            rational_to_f64(self.xmin),
            rational_to_f64(self.ymin),
            rational_to_f64(self.xmax),
            rational_to_f64(self.ymax),
        )
    }

    pub fn xmin(&self) -> Rational {
        self.xmin
    }

    pub fn ymin(&self) -> Rational {
        self.ymin
    }

    pub fn xmax(&self) -> Rational {
        self.xmax
    }

    pub fn ymax(&self) -> Rational {
        self.ymax
    }

    pub fn area(&self) -> Rational {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    /// Clip against a rectangle `[0, w) x [0, h)`; `None` when nothing
    /// remains.
    pub fn clip_to_extent(&self, w: u32, h: u32) -> Option<RationalBox> {
        let zero = Rational::zero();
        let w = Rational::from(i128::from(w));
        let h = Rational::from(i128::from(h));
        let xmin = self.xmin.max(zero);
        let ymin = self.ymin.max(zero);
        let xmax = self.xmax.min(w);
        let ymax = self.ymax.min(h);
        if xmax > xmin && ymax > ymin {
            Some(RationalBox {
                xmin,
                ymin,
                xmax,
                ymax,
            })
        } else {
            None
        }
    }
}

/// A placement chain collapsed to `scene = (local + offset) / scale`.
///
/// Offsets and the scale are exact integers, so the forward and inverse maps
/// are exact inverses over rationals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainMap {
    offset_x: i128,
    offset_y: i128,
    scale: i128,
}

impl ChainMap {
    /// Collapse a chain ordered outermost (stage-1) to innermost.
    ///
    /// Validates the linkage: the outermost placement must be parentless,
    /// every later placement must name its predecessor as parent, and
    /// cumulative scales must divide evenly.
    pub fn from_chain(chain: &[&TilePlacement]) -> Result<Self> {
        let innermost = *chain.last().ok_or(Error::EmptyChain)?;
        if chain[0].parent_placement.is_some() {
            return Err(Error::InvalidChain {
                tile_id: chain[0].tile_id.clone(),
                reason: "chain must start at an outermost (parentless) placement".into(),
            });
        }
        let mut offset_x: i128 = 0;
        let mut offset_y: i128 = 0;
        let scale = i128::from(innermost.cumulative_scale);
        let mut prev: Option<&TilePlacement> = None;
        for p in chain {
            if let Some(prev) = prev {
                if p.parent_placement.as_deref() != Some(prev.tile_id.as_str()) {
                    return Err(Error::InvalidChain {
                        tile_id: p.tile_id.clone(),
                        reason: format!("expected parent `{}`", prev.tile_id),
                    });
                }
                if p.cumulative_scale % prev.cumulative_scale != 0
                    || p.cumulative_scale < prev.cumulative_scale
                {
                    return Err(Error::InvalidChain {
                        tile_id: p.tile_id.clone(),
                        reason: format!(
                            "cumulative scale {} is not a multiple of parent scale {}",
                            p.cumulative_scale, prev.cumulative_scale
                        ),
                    });
                }
            }
            // each offset lives in a space scaled by its own cumulative factor
            let weight = scale / i128::from(p.cumulative_scale);
            offset_x += i128::from(p.offset_x) * weight;
            offset_y += i128::from(p.offset_y) * weight;
            prev = Some(p);
        }
        Ok(Self {
            offset_x,
            offset_y,
            scale,
        })
    }

    pub fn scale(&self) -> i128 {
        self.scale
    }

    /// Map an innermost-tile-local box to original-scene coordinates.
    pub fn tile_to_scene(&self, b: &RationalBox) -> RationalBox {
        let ox = Rational::from(self.offset_x);
        let oy = Rational::from(self.offset_y);
        let s = Rational::from(self.scale);
        RationalBox {
            xmin: (b.xmin + ox) / s,
            ymin: (b.ymin + oy) / s,
            xmax: (b.xmax + ox) / s,
            ymax: (b.ymax + oy) / s,
        }
    }

    /// Exact inverse of [`ChainMap::tile_to_scene`]. The result may extend
    /// past the tile bounds; clipping is the caller's decision.
    pub fn scene_to_tile(&self, b: &RationalBox) -> RationalBox {
        let ox = Rational::from(self.offset_x);
        let oy = Rational::from(self.offset_y);
        let s = Rational::from(self.scale);
        RationalBox {
            xmin: b.xmin * s - ox,
            ymin: b.ymin * s - oy,
            xmax: b.xmax * s - ox,
            ymax: b.ymax * s - oy,
        }
    }
}

/// Map a box from innermost-tile coordinates to scene coordinates through a
/// chain ordered outermost first: innermost-first translation by each offset
/// and division by each upscale factor between levels.
pub fn tile_to_scene(b: &RationalBox, chain: &[&TilePlacement]) -> Result<RationalBox> {
    Ok(ChainMap::from_chain(chain)?.tile_to_scene(b))
}

/// Exact inverse of [`tile_to_scene`].
pub fn scene_to_tile(b: &RationalBox, chain: &[&TilePlacement]) -> Result<RationalBox> {
    Ok(ChainMap::from_chain(chain)?.scene_to_tile(b))
}
