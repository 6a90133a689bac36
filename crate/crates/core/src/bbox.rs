//! Axis-aligned boxes in normalized, y-up coordinates.

use serde::{Deserialize, Serialize};

/// A box stored as `(l, t, r, b)` with the y axis pointing up, so `t > b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl BBox {
    pub fn new(l: f64, t: f64, r: f64, b: f64) -> crate::Result<Self> {
        let bbox = BBox { l, t, r, b };
        if !bbox.is_valid() {
            return Err(crate::Error::Data(format!(
                "invalid box (l={l}, t={t}, r={r}, b={b}): need r > l and t > b"
            )));
        }
        Ok(bbox)
    }

    /// Builds a box without checking the ordering invariant. Tracker
    /// estimates may be degenerate and are still scored.
    pub fn from_array(a: [f64; 4]) -> Self {
        BBox {
            l: a[0],
            t: a[1],
            r: a[2],
            b: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.l, self.t, self.r, self.b]
    }

    pub fn is_valid(&self) -> bool {
        self.l.is_finite()
            && self.t.is_finite()
            && self.r.is_finite()
            && self.b.is_finite()
            && self.r > self.l
            && self.t > self.b
    }

    pub fn width(&self) -> f64 {
        self.r - self.l
    }

    pub fn height(&self) -> f64 {
        self.t - self.b
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.l + self.r), 0.5 * (self.t + self.b))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        BBox {
            l: self.l * factor,
            t: self.t * factor,
            r: self.r * factor,
            b: self.b * factor,
        }
    }
}
