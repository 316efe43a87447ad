//! Closed-interval arithmetic over `f64`.
//!
//! Only the operations needed to bound IoU and to push bounds through affine
//! layers are provided. Products are restricted to nonnegative operands since
//! every product in the IoU formulas is an area of two widths.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval endpoints must be finite, got [{lo}, {hi}]")]
    NonFinite { lo: f64, hi: f64 },
    #[error("interval lower bound {lo} exceeds upper bound {hi}")]
    Inverted { lo: f64, hi: f64 },
    #[error("reciprocal of interval [{lo}, {hi}] with non-positive lower bound")]
    NonPositiveDenominator { lo: f64, hi: f64 },
}

/// A closed real interval `[lo, hi]` with finite endpoints and `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(IntervalError::NonFinite { lo, hi });
        }
        if lo > hi {
            return Err(IntervalError::Inverted { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate interval `[x, x]`.
    ///
    /// Panics if `x` is not finite.
    pub fn point(x: f64) -> Self {
        assert!(x.is_finite(), "point interval must be finite, got {x}");
        Self { lo: x, hi: x }
    }

    /// Interval hull of two values given in any order.
    pub fn hull(a: f64, b: f64) -> Result<Self, IntervalError> {
        Self::new(a.min(b), a.max(b))
    }

    // Callers guarantee lo <= hi and finiteness from already-valid intervals.
    fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi && lo.is_finite() && hi.is_finite(), "[{lo}, {hi}]");
        Self { lo, hi }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Nearest point of the interval to `x`.
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Intersection with `other`, or `None` when disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Self::raw(lo, hi))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Interval) -> Interval {
        Self::raw(self.lo + other.lo, self.hi + other.hi)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Interval) -> Interval {
        Self::raw(self.lo - other.hi, self.hi - other.lo)
    }

    /// Product of two intervals after clamping every endpoint at zero.
    ///
    /// A negative width means a degenerate box, whose area is zero.
    pub fn mul_nonneg(self, other: Interval) -> Interval {
        let a = self.clamp_nonneg();
        let b = other.clamp_nonneg();
        Self::raw(a.lo * b.lo, a.hi * b.hi)
    }

    pub fn recip_pos(self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::NonPositiveDenominator {
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(Self::raw(1.0 / self.hi, 1.0 / self.lo))
    }

    pub fn min(self, other: Interval) -> Interval {
        Self::raw(self.lo.min(other.lo), self.hi.min(other.hi))
    }

    pub fn max(self, other: Interval) -> Interval {
        Self::raw(self.lo.max(other.lo), self.hi.max(other.hi))
    }

    /// `w * self + c`, swapping endpoints for negative `w`.
    pub fn scale_add(self, w: f64, c: f64) -> Interval {
        if w >= 0.0 {
            Self::raw(w * self.lo + c, w * self.hi + c)
        } else {
            Self::raw(w * self.hi + c, w * self.lo + c)
        }
    }

    /// `[max(0, lo), max(0, hi)]`, i.e. the image under ReLU.
    pub fn clamp_nonneg(self) -> Interval {
        Self::raw(self.lo.max(0.0), self.hi.max(0.0))
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = IntervalError;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::new(lo, hi)
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Free-function spellings of the binary operations, mirroring the usual
/// interval-arithmetic table.
pub fn add(a: Interval, b: Interval) -> Interval {
    a.add(b)
}

pub fn sub(a: Interval, b: Interval) -> Interval {
    a.sub(b)
}

pub fn mul_nonneg(a: Interval, b: Interval) -> Interval {
    a.mul_nonneg(b)
}

pub fn recip_pos(a: Interval) -> Result<Interval, IntervalError> {
    a.recip_pos()
}

pub fn imin(a: Interval, b: Interval) -> Interval {
    a.min(b)
}

pub fn imax(a: Interval, b: Interval) -> Interval {
    a.max(b)
}

pub fn scale_add(a: Interval, w: f64, c: f64) -> Interval {
    a.scale_add(w, c)
}
