//! Brute-force references for the IoU bounds and for IBP.
//!
//! The IoU references only evaluate [`geometry::iou`] on explicit candidate
//! boxes, so they share nothing with the bound formulas they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{self, BBox, GroundTruth};
use crate::iou_bounds::{self, BoxBounds, VertexSet};
use crate::network::{Network, NetworkError};
use crate::perturbation::{self, ImageTensor, PerturbationError, PerturbationSpec};

/// Slack for comparing a sampled IoU against a computed enclosure. Bounds use
/// plain double arithmetic without outward rounding.
pub const SAMPLE_SLACK: f64 = 1e-12;

/// Tolerance between the optimal bounds and the vertex oracle.
pub const EXACTNESS_TOL: f64 = 1e-9;

/// Allowed distance between the grid range and the optimal bounds at the
/// default resolution.
pub const GRID_GAP_TOL: f64 = 0.05;

pub const DEFAULT_DIVISIONS: usize = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid needs at least 2 divisions, got {0}")]
    Divisions(usize),
    #[error("need at least one trial or sample")]
    NoTrials,
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Per-coordinate projection of the ground truth onto the interval box.
fn projection(gt: &GroundTruth, bb: &BoxBounds) -> BBox {
    let (lo, hi, g) = (bb.lower(), bb.upper(), gt.coords());
    let z: [f64; 4] = std::array::from_fn(|k| {
        if g[k] < lo[k] {
            lo[k]
        } else if g[k] > hi[k] {
            hi[k]
        } else {
            g[k]
        }
    });
    BBox::new(z).expect("projection keeps corner order")
}

/// Zero-width and zero-height members of the set, when it has any.
fn collapsed_members(bb: &BoxBounds) -> Vec<BBox> {
    let (lo, hi) = (bb.lower(), bb.upper());
    let mut out = Vec::new();
    if lo[2] <= hi[0] {
        let v = lo[0].max(lo[2]);
        out.extend(BBox::new([v, lo[1], v, hi[3]]));
    }
    if lo[3] <= hi[1] {
        let v = lo[1].max(lo[3]);
        out.extend(BBox::new([lo[0], v, hi[2], v]));
    }
    out
}

/// The 16 vertices of the interval box that are well-formed boxes.
fn vertices(bb: &BoxBounds) -> Vec<BBox> {
    let (lo, hi) = (bb.lower(), bb.upper());
    (0u8..16)
        .filter_map(|m| {
            BBox::new(std::array::from_fn(|k| {
                if m >> k & 1 == 1 {
                    hi[k]
                } else {
                    lo[k]
                }
            }))
            .ok()
        })
        .collect()
}

/// Candidate set shared by the grid and vertex oracles.
fn special_candidates(gt: &GroundTruth, bb: &BoxBounds) -> Vec<BBox> {
    let mut c = vertices(bb);
    c.push(projection(gt, bb));
    c.extend(collapsed_members(bb));
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexRange {
    pub min: f64,
    pub max: f64,
    pub argmin: BBox,
    pub argmax: BBox,
}

/// IoU extremes over the vertices, the ground-truth projection and, for
/// collapsed sets, a zero-area member.
pub fn iou_range_vertices(gt: &GroundTruth, bb: &BoxBounds) -> VertexRange {
    let cands = special_candidates(gt, bb);
    let mut r = VertexRange {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        argmin: cands[0],
        argmax: cands[0],
    };
    for b in cands {
        let v = geometry::iou(gt, &b);
        if v < r.min {
            r.min = v;
            r.argmin = b;
        }
        if v > r.max {
            r.max = v;
            r.argmax = b;
        }
    }
    r
}

/// IoU extremes over the `(divisions + 1)^4` lattice of the set plus the
/// candidates of [`iou_range_vertices`]. Ill-formed lattice points are skipped.
pub fn iou_range_grid(
    gt: &GroundTruth,
    bb: &BoxBounds,
    divisions: usize,
) -> Result<(f64, f64), OracleError> {
    let (lattice_lo, lattice_hi) = lattice_range(gt, bb, divisions)?;
    let v = iou_range_vertices(gt, bb);
    Ok((lattice_lo.min(v.min), lattice_hi.max(v.max)))
}

/// IoU extremes over the lattice alone.
pub fn lattice_range(
    gt: &GroundTruth,
    bb: &BoxBounds,
    divisions: usize,
) -> Result<(f64, f64), OracleError> {
    if divisions < 2 {
        return Err(OracleError::Divisions(divisions));
    }
    let (lo, hi) = (bb.lower(), bb.upper());
    let axis = |k: usize| -> Vec<f64> {
        (0..=divisions)
            .map(|i| {
                if i == divisions {
                    hi[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * i as f64 / divisions as f64
                }
            })
            .collect()
    };
    let axes: [Vec<f64>; 4] = std::array::from_fn(axis);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                if c < a {
                    continue;
                }
                for &d in &axes[3] {
                    if d < b {
                        continue;
                    }
                    let v =
                        geometry::iou(gt, &BBox::new([a, b, c, d]).expect("ordered lattice point"));
                    min = min.min(v);
                    max = max.max(v);
                }
            }
        }
    }
    Ok((min, max))
}

/// How much the two-box minimization over `{b̲, b̄}` exceeds the 16-vertex
/// minimum. `None` for collapsed sets, where both are defined as 0.
pub fn extremes_gap(gt: &GroundTruth, bb: &BoxBounds) -> Option<f64> {
    if bb.is_collapsed() {
        return None;
    }
    let all = vertices(bb)
        .iter()
        .map(|b| geometry::iou(gt, b))
        .fold(f64::INFINITY, f64::min);
    let ends = [bb.lower(), bb.upper()]
        .iter()
        .map(|z| {
            geometry::iou(
                gt,
                &BBox::new(*z).expect("non-collapsed corners are ordered"),
            )
        })
        .fold(f64::INFINITY, f64::min);
    Some(ends - all)
}

/// Uniform sample of a well-formed box from the set, by rejection.
pub fn sample_box(bb: &BoxBounds, rng: &mut impl Rng) -> Option<BBox> {
    let (lo, hi) = (bb.lower(), bb.upper());
    for _ in 0..64 {
        let z: [f64; 4] = std::array::from_fn(|k| {
            if lo[k] < hi[k] {
                rng.gen_range(lo[k]..=hi[k])
            } else {
                lo[k]
            }
        });
        if let Ok(b) = BBox::new(z) {
            return Some(b);
        }
    }
    None
}

/// Instance families exercised by the randomized campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InstanceKind {
    /// Narrow intervals near the ground truth.
    Overlapping,
    /// Every ground-truth coordinate inside its interval.
    ContainingGt,
    /// Intervals wide enough to hold zero-area boxes.
    Collapsed,
    /// Intervals drawn anywhere in the frame.
    Arbitrary,
    /// Single boxes.
    Point,
}

const INSTANCE_KINDS: [InstanceKind; 5] = [
    InstanceKind::Overlapping,
    InstanceKind::ContainingGt,
    InstanceKind::Collapsed,
    InstanceKind::Arbitrary,
    InstanceKind::Point,
];

/// Random `(gt, bounds)` pair of the given family, in a 100 x 100 frame.
pub fn random_instance_of(kind: InstanceKind, rng: &mut impl Rng) -> (GroundTruth, BoxBounds) {
    loop {
        let x0 = rng.gen_range(0.0..80.0);
        let y0 = rng.gen_range(0.0..80.0);
        let g = [
            x0,
            y0,
            x0 + rng.gen_range(2.0..20.0),
            y0 + rng.gen_range(2.0..20.0),
        ];
        let gt = GroundTruth::new(g).expect("positive extent");
        let (w, h) = (g[2] - g[0], g[3] - g[1]);
        let side = |k: usize| if k.is_multiple_of(2) { w } else { h };
        let (lower, upper): ([f64; 4], [f64; 4]) = match kind {
            InstanceKind::Overlapping => {
                let mut lo = [0.0; 4];
                let mut hi = [0.0; 4];
                for k in 0..4 {
                    let c = g[k] + rng.gen_range(-0.3..0.3) * side(k);
                    let r = rng.gen_range(0.0..0.25) * side(k);
                    lo[k] = c - r * rng.gen::<f64>();
                    hi[k] = c + r * rng.gen::<f64>();
                }
                (lo, hi)
            }
            InstanceKind::ContainingGt => {
                let mut lo = [0.0; 4];
                let mut hi = [0.0; 4];
                for k in 0..4 {
                    lo[k] = g[k] - rng.gen_range(0.0..0.4) * side(k);
                    hi[k] = g[k] + rng.gen_range(0.0..0.4) * side(k);
                }
                (lo, hi)
            }
            InstanceKind::Collapsed => {
                let mut lo = [0.0; 4];
                let mut hi = [0.0; 4];
                for k in 0..4 {
                    lo[k] = g[k] - rng.gen_range(0.0..0.8) * side(k);
                    hi[k] = g[k] + rng.gen_range(0.0..0.8) * side(k);
                }
                // Force overlap of the two corner intervals along one axis.
                let a = rng.gen_range(0..2usize);
                let mid = 0.5 * (g[a] + g[a + 2]);
                hi[a] = hi[a].max(mid + rng.gen_range(0.0..0.2) * side(a));
                lo[a + 2] = lo[a + 2].min(mid - rng.gen_range(0.0..0.2) * side(a));
                (lo, hi)
            }
            InstanceKind::Arbitrary => {
                let mut lo = [0.0; 4];
                let mut hi = [0.0; 4];
                for k in 0..4 {
                    let a = rng.gen_range(0.0..100.0);
                    let b = rng.gen_range(0.0..100.0);
                    lo[k] = f64::min(a, b);
                    hi[k] = f64::max(a, b);
                }
                (lo, hi)
            }
            InstanceKind::Point => {
                let z: [f64; 4] =
                    std::array::from_fn(|k| g[k] + rng.gen_range(-0.5..0.5) * side(k));
                (z, z)
            }
        };
        if let Ok(bb) = BoxBounds::from_corners(lower, upper) {
            if kind != InstanceKind::Collapsed || bb.is_collapsed() {
                return (gt, bb);
            }
        }
    }
}

/// Random instance cycling through all families.
pub fn random_instance(index: usize, rng: &mut impl Rng) -> (GroundTruth, BoxBounds, InstanceKind) {
    let kind = INSTANCE_KINDS[index % INSTANCE_KINDS.len()];
    let (gt, bb) = random_instance_of(kind, rng);
    (gt, bb, kind)
}

/// Deterministic instance list for a campaign.
pub fn instances(trials: usize, seed: u64) -> Vec<(GroundTruth, BoxBounds, InstanceKind)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|i| random_instance(i, &mut rng)).collect()
}

/// Settings for [`run_campaign`].
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub trials: usize,
    pub seed: u64,
    pub divisions: usize,
    /// Interior samples per instance for the soundness check; 0 disables it.
    pub samples: usize,
    /// Run the lattice comparison; it dominates the cost.
    pub grid: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 7,
            divisions: DEFAULT_DIVISIONS,
            samples: 100,
            grid: true,
        }
    }
}

/// Aggregated outcome of a randomized campaign.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CampaignReport {
    pub trials: usize,
    pub collapsed_instances: usize,
    /// max |optimal - vertex oracle| over both endpoints.
    pub max_exactness_deviation: f64,
    /// Instances where the grid range leaves the optimal bounds.
    pub grid_containment_violations: usize,
    /// max distance from the augmented grid range to the optimal bounds.
    pub max_grid_gap: f64,
    /// Same, for the bare lattice.
    pub max_lattice_gap: f64,
    pub dominance_violations: usize,
    pub samples_checked: usize,
    pub vanilla_soundness_violations: usize,
    pub optimal_soundness_violations: usize,
    /// Non-collapsed instances probed with the two-box minimization.
    pub extremes_probed: usize,
    /// Instances where the two-box minimum exceeds the vertex minimum.
    pub extremes_looser: usize,
    pub max_extremes_gap: f64,
    /// Instances where the optimal lower bound with `VertexSet::Extremes`
    /// differs from the exact one.
    pub extremes_variant_differs: usize,
}

impl CampaignReport {
    pub fn exact(&self) -> bool {
        self.max_exactness_deviation <= EXACTNESS_TOL
    }

    pub fn passed(&self) -> bool {
        self.exact()
            && self.grid_containment_violations == 0
            && self.max_grid_gap <= GRID_GAP_TOL
            && self.dominance_violations == 0
            && self.vanilla_soundness_violations == 0
            && self.optimal_soundness_violations == 0
    }

    fn merge(mut self, o: &CampaignReport) -> Self {
        self.trials += o.trials;
        self.collapsed_instances += o.collapsed_instances;
        self.max_exactness_deviation = self.max_exactness_deviation.max(o.max_exactness_deviation);
        self.grid_containment_violations += o.grid_containment_violations;
        self.max_grid_gap = self.max_grid_gap.max(o.max_grid_gap);
        self.max_lattice_gap = self.max_lattice_gap.max(o.max_lattice_gap);
        self.dominance_violations += o.dominance_violations;
        self.samples_checked += o.samples_checked;
        self.vanilla_soundness_violations += o.vanilla_soundness_violations;
        self.optimal_soundness_violations += o.optimal_soundness_violations;
        self.extremes_probed += o.extremes_probed;
        self.extremes_looser += o.extremes_looser;
        self.max_extremes_gap = self.max_extremes_gap.max(o.max_extremes_gap);
        self.extremes_variant_differs += o.extremes_variant_differs;
        self
    }
}

fn check_instance(
    gt: &GroundTruth,
    bb: &BoxBounds,
    cfg: &CampaignConfig,
    seed: u64,
) -> CampaignReport {
    let mut r = CampaignReport {
        trials: 1,
        collapsed_instances: usize::from(bb.is_collapsed()),
        ..Default::default()
    };
    let opt = iou_bounds::optimal_bounds(gt, bb);
    let van = iou_bounds::vanilla_bounds(gt, bb);
    let vr = iou_range_vertices(gt, bb);
    r.max_exactness_deviation = (opt.lo - vr.min).abs().max((opt.hi - vr.max).abs());

    if cfg.grid {
        let (glo, ghi) = iou_range_grid(gt, bb, cfg.divisions).expect("divisions validated");
        if glo < opt.lo - SAMPLE_SLACK || ghi > opt.hi + SAMPLE_SLACK {
            r.grid_containment_violations = 1;
        }
        r.max_grid_gap = (glo - opt.lo).max(opt.hi - ghi).max(0.0);
        let (llo, lhi) = lattice_range(gt, bb, cfg.divisions).expect("divisions validated");
        r.max_lattice_gap = (llo - opt.lo).max(opt.hi - lhi).max(0.0);
    }

    if opt.lo < van.lo || opt.hi > van.hi {
        r.dominance_violations = 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.samples {
        let Some(b) = sample_box(bb, &mut rng) else {
            break;
        };
        let v = geometry::iou(gt, &b);
        r.samples_checked += 1;
        if v < van.lo - SAMPLE_SLACK || v > van.hi + SAMPLE_SLACK {
            r.vanilla_soundness_violations += 1;
        }
        if v < opt.lo - SAMPLE_SLACK || v > opt.hi + SAMPLE_SLACK {
            r.optimal_soundness_violations += 1;
        }
    }

    if let Some(gap) = extremes_gap(gt, bb) {
        r.extremes_probed = 1;
        r.extremes_looser = usize::from(gap > 0.0);
        r.max_extremes_gap = gap.max(0.0);
        let (ext, _) = iou_bounds::optimal_lower_over(gt, bb, VertexSet::Extremes);
        r.extremes_variant_differs = usize::from(ext != opt.lo);
    }
    r
}

/// Randomized exactness, soundness and dominance campaign over mixed
/// instance families. Deterministic in `cfg.seed`.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, OracleError> {
    if cfg.trials == 0 {
        return Err(OracleError::NoTrials);
    }
    if cfg.grid && cfg.divisions < 2 {
        return Err(OracleError::Divisions(cfg.divisions));
    }
    let inst = instances(cfg.trials, cfg.seed);
    let per: Vec<CampaignReport> = inst
        .par_iter()
        .enumerate()
        .map(|(i, (gt, bb, _))| {
            check_instance(
                gt,
                bb,
                cfg,
                cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )
        })
        .collect();
    Ok(per
        .iter()
        .fold(CampaignReport::default(), |acc, r| acc.merge(r)))
}

/// IBP soundness on sampled perturbations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationReport {
    pub samples: usize,
    /// Sampled outputs with at least one coordinate outside the IBP bounds.
    pub violations: usize,
    pub max_escape: f64,
    /// Samples whose raw output is not a well-formed box.
    pub malformed: usize,
}

/// Draws perturbed images, runs the exact forward pass and reports any
/// output coordinate escaping the IBP enclosure of the same domain.
pub fn network_bound_check(
    net: &Network,
    spec: &PerturbationSpec,
    s0: &ImageTensor,
    samples: usize,
    seed: u64,
) -> Result<ViolationReport, OracleError> {
    if samples == 0 {
        return Err(OracleError::NoTrials);
    }
    let domain = perturbation::build_domain(s0, spec, false)?;
    let ibp = net.propagate_ibp(&domain)?;
    let mut report = ViolationReport::default();
    for img in perturbation::sample_domain(s0, spec, samples, seed)? {
        let p = net.forward_perturbed(&img)?;
        report.samples += 1;
        report.malformed += usize::from(p.malformed);
        let mut escaped = false;
        for k in 0..4 {
            let i = ibp.raw[k];
            let escape = (i.lo() - p.coords[k]).max(p.coords[k] - i.hi());
            if escape > 0.0 {
                escaped = true;
                report.max_escape = report.max_escape.max(escape);
            }
        }
        report.violations += usize::from(escaped);
    }
    Ok(report)
}
