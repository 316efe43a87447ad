//! Certified IoU bounds for single-object localisation networks under image
//! perturbations.
//!
//! Verification runs in two steps. Step 1 bounds every coordinate of the
//! predicted box over the whole perturbation domain ([`network`] does this by
//! interval bound propagation, or bounds are read from an external solver).
//! Step 2 turns those coordinate intervals into an IoU interval against the
//! ground truth, either by plain interval arithmetic
//! ([`iou_bounds::vanilla_bounds`]) or exactly ([`iou_bounds::optimal_bounds`]).

pub mod cli;
pub mod geometry;
pub mod harness;
pub mod interval;
pub mod iou_bounds;
pub mod network;
pub mod oracle;
pub mod perturbation;
