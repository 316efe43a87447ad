//! IoU bounds over a set of boxes described by per-coordinate intervals.
//!
//! Two bounding methods are provided:
//!
//! - **Vanilla**: every primitive of the IoU formula (min, max, subtraction,
//!   area product, division) is replaced by its interval extension. Sound but
//!   loose, since the same coordinate appears in numerator and denominator.
//! - **Optimal**: IoU is quasi-concave in each coordinate separately, rising
//!   while the coordinate moves toward the ground-truth value and falling
//!   after. The maximum is reached by projecting the ground truth onto the
//!   interval box and the minimum at one of the 16 vertices, or at 0 when the
//!   set contains collapsed boxes.
//!
//! The analytic gradient of IoU is also exposed; it is what makes the
//! per-coordinate monotonicity checkable.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, GroundTruth};
use crate::interval::{Interval, IntervalError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("coordinate z{index}: {source}")]
    Coordinate {
        index: usize,
        #[source]
        source: IntervalError,
    },
    #[error("box bounds out of order: z{lo_corner} {which} bound {a} exceeds z{hi_corner} {which} bound {b}")]
    Unordered {
        lo_corner: usize,
        hi_corner: usize,
        which: &'static str,
        a: f64,
        b: f64,
    },
}

/// Interval enclosure of a set of boxes, one interval per coordinate.
///
/// Lower and upper endpoints of the corners are ordered
/// (`z0.lo <= z2.lo`, `z0.hi <= z2.hi`, same for y), but the intervals may
/// still overlap so that the set contains collapsed boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBoundsRepr", into = "BoxBoundsRepr")]
pub struct BoxBounds {
    z: [Interval; 4],
}

#[derive(Serialize, Deserialize)]
struct BoxBoundsRepr {
    lower: [f64; 4],
    upper: [f64; 4],
}

impl TryFrom<BoxBoundsRepr> for BoxBounds {
    type Error = BoundsError;

    fn try_from(r: BoxBoundsRepr) -> Result<Self, Self::Error> {
        BoxBounds::from_corners(r.lower, r.upper)
    }
}

impl From<BoxBounds> for BoxBoundsRepr {
    fn from(b: BoxBounds) -> Self {
        BoxBoundsRepr {
            lower: b.lower(),
            upper: b.upper(),
        }
    }
}

impl BoxBounds {
    pub fn new(z: [Interval; 4]) -> Result<Self, BoundsError> {
        for (lo_corner, hi_corner) in [(0, 2), (1, 3)] {
            let (a, b) = (z[lo_corner], z[hi_corner]);
            if a.lo() > b.lo() {
                return Err(BoundsError::Unordered {
                    lo_corner,
                    hi_corner,
                    which: "lower",
                    a: a.lo(),
                    b: b.lo(),
                });
            }
            if a.hi() > b.hi() {
                return Err(BoundsError::Unordered {
                    lo_corner,
                    hi_corner,
                    which: "upper",
                    a: a.hi(),
                    b: b.hi(),
                });
            }
        }
        Ok(Self { z })
    }

    /// Builds bounds from the lower box `b̲` and the upper box `b̄`.
    pub fn from_corners(lower: [f64; 4], upper: [f64; 4]) -> Result<Self, BoundsError> {
        let mut z = [Interval::point(0.0); 4];
        for k in 0..4 {
            z[k] = Interval::new(lower[k], upper[k])
                .map_err(|source| BoundsError::Coordinate { index: k, source })?;
        }
        Self::new(z)
    }

    /// The singleton set `{b}`.
    pub fn point(b: &BBox) -> Self {
        Self {
            z: b.coords().map(Interval::point),
        }
    }

    /// Bounds from possibly unordered raw intervals, widening the upper-right
    /// corner so that every well-formed box in the raw set is kept.
    ///
    /// Returns the bounds and whether a repair was needed.
    pub fn repaired(raw: [Interval; 4]) -> (Self, bool) {
        let mut z = raw;
        let mut repaired = false;
        for (a, b) in [(0, 2), (1, 3)] {
            let lo = z[b].lo().max(z[a].lo());
            let hi = z[b].hi().max(z[a].hi());
            if lo != z[b].lo() || hi != z[b].hi() {
                repaired = true;
                z[b] = Interval::new(lo, hi).expect("max of ordered endpoints stays ordered");
            }
        }
        (Self { z }, repaired)
    }

    pub fn coord(&self, k: usize) -> Interval {
        self.z[k]
    }

    pub fn intervals(&self) -> [Interval; 4] {
        self.z
    }

    pub fn lower(&self) -> [f64; 4] {
        self.z.map(|i| i.lo())
    }

    pub fn upper(&self) -> [f64; 4] {
        self.z.map(|i| i.hi())
    }

    /// True when the set contains boxes of zero width or height.
    pub fn is_collapsed(&self) -> bool {
        self.z[2].lo() <= self.z[0].hi() || self.z[3].lo() <= self.z[1].hi()
    }

    pub fn contains(&self, b: &BBox) -> bool {
        self.z.iter().zip(b.coords()).all(|(i, c)| i.contains(c))
    }

    pub fn is_subset_of(&self, other: &BoxBounds) -> bool {
        self.z
            .iter()
            .zip(other.z.iter())
            .all(|(a, b)| a.is_subset_of(b))
    }

    /// Vertex selected by the bit pattern `mask`: bit `k` set takes the upper
    /// endpoint of coordinate `k`. Returns `None` for unordered vertices.
    pub fn vertex(&self, mask: u8) -> Option<BBox> {
        let z: [f64; 4] = std::array::from_fn(|k| {
            if mask >> k & 1 == 1 {
                self.z[k].hi()
            } else {
                self.z[k].lo()
            }
        });
        BBox::new(z).ok()
    }
}

impl fmt::Display for BoxBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.z;
        write!(f, "z0∈{a} z1∈{b} z2∈{c} z3∈{d}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Optimal,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Vanilla => "vanilla",
            Method::Optimal => "optimal",
        })
    }
}

/// An IoU enclosure `0 <= lo <= hi <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouBounds {
    pub lo: f64,
    pub hi: f64,
    pub method: Method,
}

impl IouBounds {
    fn clamped(lo: f64, hi: f64, method: Method) -> Self {
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(lo, 1.0);
        Self { lo, hi, method }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Area enclosure of the boxes `[x0, y0, x1, y1]` with interval corners.
fn area_bounds(x0: Interval, y0: Interval, x1: Interval, y1: Interval) -> Interval {
    x1.sub(x0).mul_nonneg(y1.sub(y0))
}

/// Sound IoU enclosure by interval extension of every primitive of the IoU
/// formula.
pub fn vanilla_bounds(gt: &GroundTruth, bb: &BoxBounds) -> IouBounds {
    let [z0, z1, z2, z3] = bb.z;
    let g = gt.coords().map(Interval::point);
    let box_area = area_bounds(z0, z1, z2, z3);
    let inter_area = area_bounds(z0.max(g[0]), z1.max(g[1]), z2.min(g[2]), z3.min(g[3]));
    let gt_area = gt.area();

    // denominator >= gt_area > 0: the lower intersection area never exceeds
    // the upper box area.
    let lo = inter_area.lo() / (box_area.hi() + gt_area - inter_area.lo());
    let hi_den = box_area.lo() + gt_area - inter_area.hi();
    let hi = if hi_den <= 0.0 {
        1.0
    } else {
        inter_area.hi() / hi_den
    };
    IouBounds::clamped(lo, hi, Method::Vanilla)
}

/// Box in `bb` maximizing IoU: each coordinate is the ground-truth value
/// clamped into its interval.
pub fn optimal_upper(gt: &GroundTruth, bb: &BoxBounds) -> (f64, BBox) {
    let g = gt.coords();
    let z: [f64; 4] = std::array::from_fn(|k| bb.z[k].clamp(g[k]));
    let best = BBox::new(z).expect("clamping an ordered pair into ordered intervals keeps order");
    (iou(gt, &best), best)
}

/// Minimizer returned by [`optimal_lower`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowerWitness {
    /// The set contains zero-width or zero-height boxes, IoU 0.
    Collapsed,
    Vertex(BBox),
}

impl LowerWitness {
    pub fn bbox(&self) -> Option<BBox> {
        match self {
            LowerWitness::Collapsed => None,
            LowerWitness::Vertex(b) => Some(*b),
        }
    }
}

/// Candidate set for the minimization of IoU over a non-collapsed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexSet {
    /// All 16 vertices of the interval box. Exact.
    All,
    /// Only the lower box `b̲` and the upper box `b̄`.
    Extremes,
}

/// Smallest IoU over `bb`.
pub fn optimal_lower(gt: &GroundTruth, bb: &BoxBounds) -> (f64, LowerWitness) {
    optimal_lower_over(gt, bb, VertexSet::All)
}

pub fn optimal_lower_over(gt: &GroundTruth, bb: &BoxBounds, set: VertexSet) -> (f64, LowerWitness) {
    if bb.is_collapsed() {
        return (0.0, LowerWitness::Collapsed);
    }
    let masks: &[u8] = match set {
        VertexSet::All => &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15],
        VertexSet::Extremes => &[0b0000, 0b1111],
    };
    let mut best: Option<(f64, BBox)> = None;
    for &m in masks {
        // Non-collapsed sets only contain ordered boxes.
        let v = bb
            .vertex(m)
            .expect("vertex of a non-collapsed set is ordered");
        let val = iou(gt, &v);
        if best.is_none_or(|(b, _)| val < b) {
            best = Some((val, v));
        }
    }
    let (val, v) = best.expect("vertex set is nonempty");
    (val, LowerWitness::Vertex(v))
}

/// Exact IoU range over `bb`.
pub fn optimal_bounds(gt: &GroundTruth, bb: &BoxBounds) -> IouBounds {
    let (lo, _) = optimal_lower(gt, bb);
    let (hi, _) = optimal_upper(gt, bb);
    IouBounds::clamped(lo, hi, Method::Optimal)
}

pub fn bounds(gt: &GroundTruth, bb: &BoxBounds, method: Method) -> IouBounds {
    match method {
        Method::Vanilla => vanilla_bounds(gt, bb),
        Method::Optimal => optimal_bounds(gt, bb),
    }
}

/// Partial derivatives of IoU with respect to the four box coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IouGradient {
    pub d: [f64; 4],
    /// The boxes share a region of positive area.
    pub overlap: bool,
    /// Some coordinate sits on a branch switch (`z_k == z_k^gt` or an overlap
    /// edge); `d` then holds the `c_k z_k <= c_k z_k^gt` branch value.
    pub non_differentiable: bool,
}

/// Closed-form gradient of IoU at `b`.
///
/// With `x_max = min(z2, z2^gt)`, `x_min = max(z0, z0^gt)` (same in y),
/// `d = a(gt) + a(b) - a(i)` and signs `c = [1, 1, -1, -1]`:
///
/// ```text
/// ∂/∂z_{0,2} = (y_max - y_min)/d² · { c (z3-z1)(x_max-x_min)                     if c z ≤ c z^gt
///                                   { -c a(gt) + c (z3-z1)(x_max - z2 + z0 - x_min)  otherwise
/// ```
///
/// and symmetrically for `z1, z3`.
pub fn iou_gradient(gt: &GroundTruth, b: &BBox) -> IouGradient {
    let z = b.coords();
    let g = gt.coords();
    let x_max = z[2].min(g[2]);
    let x_min = z[0].max(g[0]);
    let y_max = z[3].min(g[3]);
    let y_min = z[1].max(g[1]);
    let iw = x_max - x_min;
    let ih = y_max - y_min;

    let on_edge = iw == 0.0 || ih == 0.0;
    if iw <= 0.0 || ih <= 0.0 {
        return IouGradient {
            d: [0.0; 4],
            overlap: false,
            non_differentiable: on_edge,
        };
    }

    let gt_area = gt.area();
    let (bw, bh) = (b.width(), b.height());
    let denom = gt_area + bw * bh - iw * ih;
    let denom_sq = denom * denom;
    const SIGN: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

    let mut d = [0.0; 4];
    for k in 0..4 {
        let c = SIGN[k];
        // Overlap extent along the other axis and box extent along it.
        let (other_overlap, other_side, own_overlap, own_side) = if k % 2 == 0 {
            (ih, bh, iw, bw)
        } else {
            (iw, bw, ih, bh)
        };
        let branch = if c * z[k] <= c * g[k] {
            c * other_side * own_overlap
        } else {
            -c * gt_area + c * other_side * (own_overlap - own_side)
        };
        d[k] = other_overlap / denom_sq * branch;
    }

    let non_differentiable = (0..4).any(|k| z[k] == g[k]);
    IouGradient {
        d,
        overlap: true,
        non_differentiable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(z: [f64; 4]) -> BBox {
        BBox::new(z).unwrap()
    }

    fn gt(z: [f64; 4]) -> GroundTruth {
        GroundTruth::new(z).unwrap()
    }

    fn bb(lower: [f64; 4], upper: [f64; 4]) -> BoxBounds {
        BoxBounds::from_corners(lower, upper).unwrap()
    }

    fn running_example() -> (GroundTruth, BoxBounds) {
        (
            gt([0.0, 0.0, 2.0, 2.0]),
            bb([0.0, 0.0, 2.0, 2.0], [1.0, 0.0, 2.0, 2.0]),
        )
    }

    /// Dense sampling along the single free coordinate of the running example.
    fn running_example_range() -> (f64, f64) {
        let (g, _) = running_example();
        (0..=1000)
            .map(|i| iou(&g, &bx([i as f64 / 1000.0, 0.0, 2.0, 2.0])))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    #[test]
    fn vanilla_point_interval_worked_example() {
        let g = gt([3.0, 1.0, 6.0, 4.0]);
        let v = vanilla_bounds(&g, &BoxBounds::point(&bx([1.0, 3.0, 4.0, 5.0])));
        assert!((v.lo - 1.0 / 14.0).abs() < 1e-15);
        assert!((v.hi - 1.0 / 14.0).abs() < 1e-15);
        let exact = vanilla_bounds(&g, &BoxBounds::point(g.bbox()));
        assert_eq!((exact.lo, exact.hi), (1.0, 1.0));
    }

    #[test]
    fn vanilla_running_example_is_loose() {
        let (g, set) = running_example();
        let v = vanilla_bounds(&g, &set);
        // Hand evaluation: a(b) ∈ [2, 4], a(i) ∈ [2, 4], lo = 2/(4+4-2), hi = 4/(2+4-4) = 2 -> 1.
        assert!((v.lo - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.hi, 1.0);
        let (lo, hi) = running_example_range();
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert!(v.lo < lo && v.hi >= hi);
    }

    #[test]
    fn optimal_upper_examples() {
        let g = gt([3.0, 1.0, 6.0, 4.0]);
        let containing = bb([2.0, 0.0, 5.0, 3.0], [4.0, 2.0, 7.0, 5.0]);
        assert_eq!(optimal_upper(&g, &containing), (1.0, *g.bbox()));

        let set = bb([0.0, 3.0, 4.0, 5.0], [1.0, 3.0, 4.0, 5.0]);
        let (v, best) = optimal_upper(&g, &set);
        assert_eq!(best, bx([1.0, 3.0, 4.0, 5.0]));
        assert!((v - 1.0 / 14.0).abs() < 1e-15);

        let (g, set) = running_example();
        assert_eq!(optimal_upper(&g, &set), (1.0, bx([0.0, 0.0, 2.0, 2.0])));
    }

    #[test]
    fn optimal_lower_examples() {
        let g = gt([3.0, 1.0, 6.0, 4.0]);
        let collapsed = bb([0.0, 1.0, 2.0, 4.0], [3.0, 1.0, 5.0, 4.0]);
        assert_eq!(
            optimal_lower(&g, &collapsed),
            (0.0, LowerWitness::Collapsed)
        );

        let (g, set) = running_example();
        let (v, w) = optimal_lower(&g, &set);
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(w, LowerWitness::Vertex(bx([1.0, 0.0, 2.0, 2.0])));

        let b = bx([1.0, 3.5, 4.5, 5.0]);
        let g = gt([3.0, 1.0, 6.0, 4.0]);
        assert_eq!(
            optimal_lower(&g, &BoxBounds::point(&b)),
            (iou(&g, &b), LowerWitness::Vertex(b))
        );
    }

    #[test]
    fn optimal_bounds_examples() {
        let (g, set) = running_example();
        let o = optimal_bounds(&g, &set);
        assert_eq!((o.lo, o.hi, o.method), (0.5, 1.0, Method::Optimal));

        let g = gt([3.0, 1.0, 6.0, 4.0]);
        let b = bx([2.0, 2.0, 5.0, 6.0]);
        let p = optimal_bounds(&g, &BoxBounds::point(&b));
        assert_eq!((p.lo, p.hi), (iou(&g, &b), iou(&g, &b)));

        // Collapsed along x and containing the ground truth.
        let set = bb([2.0, 0.0, 2.5, 3.0], [4.0, 2.0, 7.0, 5.0]);
        assert!(set.is_collapsed() && set.contains(g.bbox()));
        let o = optimal_bounds(&g, &set);
        assert_eq!((o.lo, o.hi), (0.0, 1.0));
    }

    #[test]
    fn extremes_variant_can_miss_the_minimum() {
        // Shrinking the box through z2 while growing it through z0 reaches a
        // worse vertex than either all-lower or all-upper box.
        let g = gt([0.0, 0.0, 4.0, 4.0]);
        let set = bb([-2.0, 0.0, 2.0, 4.0], [1.0, 0.0, 6.0, 4.0]);
        let (all, _) = optimal_lower_over(&g, &set, VertexSet::All);
        let (ext, _) = optimal_lower_over(&g, &set, VertexSet::Extremes);
        assert!(ext > all, "extremes {ext} vs all {all}");
    }

    #[test]
    fn gradient_examples() {
        let g = gt([0.0, 0.0, 2.0, 2.0]);
        let grad = iou_gradient(&g, &bx([1.0, 0.0, 2.0, 2.0]));
        assert!(grad.overlap);
        assert!((grad.d[0] + 0.5).abs() < 1e-15);

        // IoU(z0 = t) = 4 / (4 - 2t) for t < 0, derivative 8 / (4 - 2t)^2 = 2/9 at t = -1.
        let grad = iou_gradient(&g, &bx([-1.0, 0.0, 2.0, 2.0]));
        assert!((grad.d[0] - 2.0 / 9.0).abs() < 1e-15);
        let fd = (iou(&g, &bx([-1.0 + 1e-6, 0.0, 2.0, 2.0]))
            - iou(&g, &bx([-1.0 - 1e-6, 0.0, 2.0, 2.0])))
            / 2e-6;
        assert!((fd - grad.d[0]).abs() < 1e-8);

        let grad = iou_gradient(&g, &bx([5.0, 5.0, 6.0, 6.0]));
        assert_eq!(grad.d, [0.0; 4]);
        assert!(!grad.overlap);
    }

    #[test]
    fn gradient_flags_switch_points() {
        let g = gt([0.0, 0.0, 2.0, 2.0]);
        let grad = iou_gradient(&g, &bx([0.0, 0.5, 3.0, 2.5]));
        assert!(grad.non_differentiable);
        // Left branch at z0 == z0^gt: x_min stays at the gt edge.
        let left = iou_gradient(&g, &bx([-1e-9, 0.5, 3.0, 2.5]));
        assert!((grad.d[0] - left.d[0]).abs() < 1e-6);
        let touching = iou_gradient(&g, &bx([2.0, 0.0, 3.0, 2.0]));
        assert!(!touching.overlap && touching.non_differentiable);
    }

    #[test]
    fn bounds_validation_and_repair() {
        assert!(matches!(
            BoxBounds::from_corners([3.0, 0.0, 2.0, 1.0], [4.0, 1.0, 5.0, 2.0]),
            Err(BoundsError::Unordered { .. })
        ));
        assert!(matches!(
            BoxBounds::from_corners([0.0, 0.0, 2.0, 1.0], [-1.0, 1.0, 5.0, 2.0]),
            Err(BoundsError::Coordinate { index: 0, .. })
        ));
        let raw = [
            Interval::new(1.0, 5.0).unwrap(),
            Interval::new(0.0, 1.0).unwrap(),
            Interval::new(0.0, 3.0).unwrap(),
            Interval::new(2.0, 3.0).unwrap(),
        ];
        let (fixed, repaired) = BoxBounds::repaired(raw);
        assert!(repaired);
        assert_eq!(fixed.coord(2), Interval::new(1.0, 5.0).unwrap());
        let (same, repaired) = BoxBounds::repaired(fixed.intervals());
        assert!(!repaired);
        assert_eq!(same, fixed);
    }

    #[test]
    fn json_shape() {
        let set = bb([10.0, 20.0, 50.0, 60.0], [12.0, 22.0, 53.0, 64.0]);
        let s = serde_json::to_string(&set).unwrap();
        assert_eq!(
            s,
            r#"{"lower":[10.0,20.0,50.0,60.0],"upper":[12.0,22.0,53.0,64.0]}"#
        );
        assert_eq!(serde_json::from_str::<BoxBounds>(&s).unwrap(), set);
    }
}
