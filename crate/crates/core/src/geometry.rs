//! Axis-aligned box arithmetic.
//!
//! Coordinates are continuous: a box spans `[x1, x2] x [y1, y2]` and its area
//! is `(x2 - x1) * (y2 - y1)` with no "+1" pixel convention.

use crate::error::{Error, Result};

/// Axis-aligned rectangle in corner form, pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    /// Build a box, rejecting inverted or non-finite corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoxXYXY { x1, y1, x2, y2 };
        if !b.is_valid() {
            return Err(b.degenerate("corners inverted or not finite"));
        }
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoxXYXY {
            x1: x,
            y1: y,
            x2: x + w,
            y2: y + h,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoxXYXY {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Geometric-mean side length, `sqrt(w * h)`.
    pub fn scale(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    /// Positive width and height.
    pub fn is_proper(&self) -> bool {
        self.is_valid() && self.width() > 0.0 && self.height() > 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoxXYXY {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale_by(&self, sx: f64, sy: f64) -> Self {
        BoxXYXY {
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            x2: self.x2 * sx,
            y2: self.y2 * sy,
        }
    }

    pub fn intersection_area(&self, other: &BoxXYXY) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    pub(crate) fn degenerate(&self, what: &'static str) -> Error {
        Error::DegenerateBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            what,
        }
    }
}

/// Intersection over union. Errors only when both boxes have zero area.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> Result<f64> {
    debug_assert!(a.is_valid() && b.is_valid());
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::UndefinedIou);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// IoU for hot loops where at least one side is known to have positive area.
#[inline]
pub(crate) fn iou_unchecked(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Clamp every coordinate into `[0, width] x [0, height]`.
pub fn clip_box(b: &BoxXYXY, width: f64, height: f64) -> BoxXYXY {
    debug_assert!(width > 0.0 && height > 0.0);
    BoxXYXY {
        x1: b.x1.clamp(0.0, width),
        y1: b.y1.clamp(0.0, height),
        x2: b.x2.clamp(0.0, width),
        y2: b.y2.clamp(0.0, height),
    }
}
