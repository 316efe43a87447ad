//! Axis-aligned bounding boxes and the exact IoU.
//!
//! Boxes are `[z0, z1, z2, z3]`: `(z0, z1)` is the bottom-left corner and
//! `(z2, z3)` the upper-right one, with x growing right and y growing up.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("box coordinates must be finite, got {0:?}")]
    NonFinite([f64; 4]),
    #[error("box corners out of order (need z0 <= z2 and z1 <= z3), got {0:?}")]
    Unordered([f64; 4]),
    #[error("ground truth box must have positive area, got {0:?}")]
    DegenerateGroundTruth([f64; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    z: [f64; 4],
}

impl BBox {
    pub fn new(z: [f64; 4]) -> Result<Self, BoxError> {
        if z.iter().any(|c| !c.is_finite()) {
            return Err(BoxError::NonFinite(z));
        }
        if z[0] > z[2] || z[1] > z[3] {
            return Err(BoxError::Unordered(z));
        }
        Ok(Self { z })
    }

    pub fn coords(&self) -> [f64; 4] {
        self.z
    }

    pub fn width(&self) -> f64 {
        self.z[2] - self.z[0]
    }

    pub fn height(&self) -> f64 {
        self.z[3] - self.z[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Overlap region of two boxes; `Empty` when they do not share a
    /// rectangle (touching edges give a zero-area box, not `Empty`).
    pub fn intersection(&self, other: &BBox) -> Intersection {
        let (a, b) = (self.z, other.z);
        let z = [
            a[0].max(b[0]),
            a[1].max(b[1]),
            a[2].min(b[2]),
            a[3].min(b[3]),
        ];
        if z[0] > z[2] || z[1] > z[3] {
            Intersection::Empty
        } else {
            Intersection::Box(BBox { z })
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = BoxError;

    fn try_from(z: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(z)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.z
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.z;
        write!(f, "[{a}, {b}, {c}, {d}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intersection {
    Empty,
    Box(BBox),
}

impl Intersection {
    pub fn area(&self) -> f64 {
        match self {
            Intersection::Empty => 0.0,
            Intersection::Box(b) => b.area(),
        }
    }
}

/// Ground-truth box. Its area is strictly positive, so the IoU denominator
/// never vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct GroundTruth {
    bbox: BBox,
}

impl GroundTruth {
    pub fn new(z: [f64; 4]) -> Result<Self, BoxError> {
        let bbox = BBox::new(z)?;
        if !(z[0] < z[2] && z[1] < z[3]) {
            return Err(BoxError::DegenerateGroundTruth(z));
        }
        Ok(Self { bbox })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn coords(&self) -> [f64; 4] {
        self.bbox.z
    }

    pub fn area(&self) -> f64 {
        self.bbox.area()
    }
}

impl TryFrom<[f64; 4]> for GroundTruth {
    type Error = BoxError;

    fn try_from(z: [f64; 4]) -> Result<Self, Self::Error> {
        GroundTruth::new(z)
    }
}

impl From<GroundTruth> for [f64; 4] {
    fn from(g: GroundTruth) -> Self {
        g.bbox.z
    }
}

/// Intersection over union of `b` with the ground truth.
pub fn iou(gt: &GroundTruth, b: &BBox) -> f64 {
    let inter = gt.bbox.intersection(b).area();
    if inter <= 0.0 {
        return 0.0;
    }
    let v = inter / (b.area() + gt.area() - inter);
    v.clamp(0.0, 1.0)
}
