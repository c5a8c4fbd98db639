//! Exact axis-aligned box arithmetic: areas, intersections, IOA and IOU.
//!
//! Boxes live in raster coordinates: origin top-left, x rightward, y downward,
//! half-open extents `[min, max)` so adjacent boxes share an edge without
//! sharing pixels. Coordinates are real-valued; integer pixel boxes are a
//! special case.

use crate::error::{Error, Result};

/// An axis-aligned rectangle with strictly positive width and height.
///
/// Degenerate and non-finite boxes are rejected at construction, so every
/// `BBox` in circulation satisfies the invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(Error::NonFiniteBox {
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        if xmax <= xmin || ymax <= ymin {
            return Err(Error::DegenerateBox {
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn ymin(&self) -> f64 {
        self.ymin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// `(xmax - xmin) * (ymax - ymin)`.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection with another box, or `None` when the overlap is empty.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        if xmax > xmin && ymax > ymin {
            Some(BBox {
                xmin,
                ymin,
                xmax,
                ymax,
            })
        } else {
            None
        }
    }

    /// True when `other` lies entirely within `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax >= other.xmax
            && self.ymax >= other.ymax
    }
}

/// Raw per-axis intersection extents `(dx, dy)`.
///
/// `dx = min(x1max, x2max) - max(x1min, x2min)`, and analogously for `dy`.
/// Values are negative when the boxes are disjoint along that axis; no
/// clamping happens at this layer.
pub fn intersection_extents(a: &BBox, b: &BBox) -> (f64, f64) {
    let dx = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let dy = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    (dx, dy)
}

/// Intersection area: the product of the clamped extents.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let (dx, dy) = intersection_extents(a, b);
    dx.max(0.0) * dy.max(0.0)
}

/// Intersection over the smaller box's area. Equals 1.0 under full
/// containment regardless of the relative sizes.
pub fn ioa(a: &BBox, b: &BBox) -> f64 {
    intersection_area(a, b) / a.area().min(b.area())
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    inter / (a.area() + b.area() - inter)
}
