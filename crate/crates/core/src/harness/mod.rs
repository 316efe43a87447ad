//! End-to-end verification: per-image IoU bounds under perturbation sweeps,
//! robustness verdicts and Verified Box Accuracy (VBA).
//!
//! An image is *Verified* for a perturbation when the certified IoU lower
//! bound reaches the threshold `t`. Anything else is *Unknown*: the bounds
//! are not complete, so a failed check never means the detector is broken.

mod dataset;
mod fixture;
mod report;

pub use dataset::{load_dataset, read_raster, write_raster, DatasetEntry, Manifest, ManifestEntry};
pub use fixture::{box_detector, generate_fixture, write_fixture, FixtureConfig, FixtureFiles};
pub use report::{
    read_json_report, records_to_csv, records_to_json, write_report, ReportFormat, CSV_HEADER,
};

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry;
use crate::iou_bounds::{self, BoxBounds, IouBounds, Method};
use crate::network::{ExternalBounds, Network, NetworkError};
use crate::perturbation::{self, PerturbationError, PerturbationSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("no external bounds for image `{0}`")]
    MissingExternalBounds(String),
    #[error("no records match the selection")]
    EmptySelection,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where step-1 box bounds come from.
#[derive(Debug, Clone, Copy)]
pub enum BoundsSource<'a> {
    /// Interval bound propagation through a local network.
    Ibp(&'a Network),
    /// Bounds computed by an external solver, keyed by image id.
    External(&'a ExternalBounds),
}

#[derive(Debug, Clone)]
pub struct VerificationConfig {
    /// Safety threshold `t` in `(0, 1]`.
    pub threshold: f64,
    pub methods: BTreeSet<Method>,
    pub sweep: Vec<PerturbationSpec>,
    /// Intersect perturbed pixel ranges with `[0, 1]`.
    pub clamp01: bool,
    pub seed: u64,
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    /// Measure wall-clock time per step. When off, timings are reported as 0
    /// and reports are byte-identical across runs.
    pub record_timings: bool,
}

impl VerificationConfig {
    pub fn new(sweep: Vec<PerturbationSpec>) -> Self {
        Self {
            threshold: 0.5,
            methods: [Method::Vanilla, Method::Optimal].into_iter().collect(),
            sweep,
            clamp01: false,
            seed: 0,
            workers: 0,
            record_timings: true,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(HarnessError::Config(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config(
                "at least one method is required".into(),
            ));
        }
        if self.sweep.is_empty() {
            return Err(HarnessError::Config("perturbation sweep is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Verified,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Verified => "verified",
            Verdict::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub image_id: String,
    pub spec: PerturbationSpec,
    pub box_bounds: BoxBounds,
    /// Step-1 output needed corner-order repair.
    pub repaired: bool,
    pub vanilla: Option<IouBounds>,
    pub optimal: Option<IouBounds>,
    pub verdict: Verdict,
    pub step1_ms: f64,
    pub step2_ms: f64,
}

impl VerificationRecord {
    pub fn bounds_for(&self, method: Method) -> Option<&IouBounds> {
        match method {
            Method::Vanilla => self.vanilla.as_ref(),
            Method::Optimal => self.optimal.as_ref(),
        }
    }

    /// Best certified lower bound among the computed methods.
    pub fn certified_lower(&self) -> f64 {
        [self.vanilla, self.optimal]
            .iter()
            .flatten()
            .map(|b| b.lo)
            .fold(0.0, f64::max)
    }
}

fn spec_cmp(a: &PerturbationSpec, b: &PerturbationSpec) -> Ordering {
    a.kind
        .cmp(&b.kind)
        .then(a.magnitude.total_cmp(&b.magnitude))
        .then(a.contrast_mode.cmp(&b.contrast_mode))
        .then(a.one_sided.cmp(&b.one_sided))
}

/// Report order: image id, then perturbation kind, then magnitude.
pub fn record_cmp(a: &VerificationRecord, b: &VerificationRecord) -> Ordering {
    a.image_id
        .cmp(&b.image_id)
        .then_with(|| spec_cmp(&a.spec, &b.spec))
}

fn elapsed_ms(start: Instant, enabled: bool) -> f64 {
    if enabled {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Certifies one image against one perturbation.
pub fn verify_image(
    source: BoundsSource<'_>,
    entry: &DatasetEntry,
    spec: &PerturbationSpec,
    cfg: &VerificationConfig,
) -> Result<VerificationRecord, HarnessError> {
    let t1 = Instant::now();
    let (box_bounds, repaired) = match source {
        BoundsSource::Ibp(net) => {
            let domain = perturbation::build_domain(&entry.image, spec, cfg.clamp01)?;
            let out = net.propagate_ibp(&domain)?;
            (out.bounds, out.repaired)
        }
        BoundsSource::External(map) => {
            let b = map
                .get(&entry.image_id)
                .ok_or_else(|| HarnessError::MissingExternalBounds(entry.image_id.clone()))?;
            (*b, false)
        }
    };
    let step1_ms = elapsed_ms(t1, cfg.record_timings);

    let t2 = Instant::now();
    let vanilla = cfg
        .methods
        .contains(&Method::Vanilla)
        .then(|| iou_bounds::vanilla_bounds(&entry.gt, &box_bounds));
    let optimal = cfg
        .methods
        .contains(&Method::Optimal)
        .then(|| iou_bounds::optimal_bounds(&entry.gt, &box_bounds));
    let step2_ms = elapsed_ms(t2, cfg.record_timings);

    let mut record = VerificationRecord {
        image_id: entry.image_id.clone(),
        spec: *spec,
        box_bounds,
        repaired,
        vanilla,
        optimal,
        verdict: Verdict::Unknown,
        step1_ms,
        step2_ms,
    };
    if record.certified_lower() >= cfg.threshold {
        record.verdict = Verdict::Verified;
    }
    Ok(record)
}

/// Per-perturbation aggregate of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub spec: PerturbationSpec,
    pub images: usize,
    /// VBA of the recorded verdicts.
    pub vba: f64,
    pub vanilla: Option<MethodSummary>,
    pub optimal: Option<MethodSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodSummary {
    pub vba: f64,
    pub mean_lo: f64,
    pub mean_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by [`record_cmp`].
    pub records: Vec<VerificationRecord>,
    /// One row per sweep entry, in sweep order.
    pub table: Vec<SweepRow>,
}

/// Evaluates every `(image, perturbation)` pair and aggregates per
/// perturbation. The output does not depend on the worker count.
pub fn run_sweep(
    dataset: &[DatasetEntry],
    source: BoundsSource<'_>,
    cfg: &VerificationConfig,
) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(HarnessError::Dataset("dataset is empty".into()));
    }
    let pairs: Vec<(&DatasetEntry, &PerturbationSpec)> = dataset
        .iter()
        .flat_map(|e| cfg.sweep.iter().map(move |s| (e, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let mut records = pool.install(|| {
        pairs
            .par_iter()
            .map(|(e, s)| verify_image(source, e, s, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    records.sort_by(record_cmp);

    let table = cfg
        .sweep
        .iter()
        .map(|spec| summarize(&records, spec, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult { records, table })
}

fn summarize(
    records: &[VerificationRecord],
    spec: &PerturbationSpec,
    cfg: &VerificationConfig,
) -> Result<SweepRow, HarnessError> {
    let sel: Vec<&VerificationRecord> = records.iter().filter(|r| r.spec == *spec).collect();
    let method = |m: Method| -> Option<MethodSummary> {
        let bounds: Vec<&IouBounds> = sel.iter().filter_map(|r| r.bounds_for(m)).collect();
        if bounds.is_empty() {
            return None;
        }
        let n = bounds.len() as f64;
        Some(MethodSummary {
            vba: bounds.iter().filter(|b| b.lo >= cfg.threshold).count() as f64 / n,
            mean_lo: bounds.iter().map(|b| b.lo).sum::<f64>() / n,
            mean_hi: bounds.iter().map(|b| b.hi).sum::<f64>() / n,
        })
    };
    Ok(SweepRow {
        spec: *spec,
        images: sel.len(),
        vba: compute_vba(records, spec)?,
        vanilla: method(Method::Vanilla),
        optimal: method(Method::Optimal),
    })
}

/// Fraction of records at `spec` whose verdict is Verified.
pub fn compute_vba(
    records: &[VerificationRecord],
    spec: &PerturbationSpec,
) -> Result<f64, HarnessError> {
    let sel: Vec<_> = records.iter().filter(|r| r.spec == *spec).collect();
    if sel.is_empty() {
        return Err(HarnessError::EmptySelection);
    }
    Ok(sel
        .iter()
        .filter(|r| r.verdict == Verdict::Verified)
        .count() as f64
        / sel.len() as f64)
}

/// VBA when only `method`'s lower bound is used against threshold `t`.
pub fn compute_method_vba(
    records: &[VerificationRecord],
    spec: &PerturbationSpec,
    method: Method,
    threshold: f64,
) -> Result<f64, HarnessError> {
    let sel: Vec<_> = records
        .iter()
        .filter(|r| r.spec == *spec)
        .filter_map(|r| r.bounds_for(method))
        .collect();
    if sel.is_empty() {
        return Err(HarnessError::EmptySelection);
    }
    Ok(sel.iter().filter(|b| b.lo >= threshold).count() as f64 / sel.len() as f64)
}

/// Outcome of checking a verdict against sampled perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpotCheck {
    pub samples: usize,
    /// Smallest IoU over samples whose prediction is a well-formed box.
    pub min_iou: f64,
    /// Samples whose raw prediction is not a well-formed box.
    pub malformed: usize,
}

/// Runs the detector on sampled members of the perturbation domain and
/// reports the smallest IoU reached.
pub fn spot_check(
    net: &Network,
    entry: &DatasetEntry,
    spec: &PerturbationSpec,
    clamp01: bool,
    samples: usize,
    seed: u64,
) -> Result<SpotCheck, HarnessError> {
    let mut out = SpotCheck {
        samples: 0,
        min_iou: f64::INFINITY,
        malformed: 0,
    };
    for mut img in perturbation::sample_domain(&entry.image, spec, samples, seed)? {
        if clamp01 {
            perturbation::clamp_unit(&mut img);
        }
        let p = net.forward_perturbed(&img)?;
        out.samples += 1;
        match p.bbox() {
            Some(b) => out.min_iou = out.min_iou.min(geometry::iou(&entry.gt, &b)),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}
