//! Simulation toolkit for blind-sweep obstetric ultrasound quality assessment.
//!
//! The pipeline mirrors a clinical QC gate:
//!
//! 1. [`synthgen`] renders phantom six-sweep studies whose ground truth is
//!    encoded geometrically in the pixels.
//! 2. [`perturb`] applies acquisition-protocol deviations (sequence reversal,
//!    probe flip, incomplete coverage) to the test split with a probabilistic
//!    mixture and records what was done.
//! 3. [`qa`] scores every sweep for each deviation.
//! 4. [`downstream`] predicts sweep tag, fetal presentation and placenta
//!    location.
//! 5. [`eval`] computes accuracy / macro-F1 at sweep and patient level and
//!    simulates the flag-and-reacquire loop.
//!
//! Every stage is a pure function of its inputs and a master seed. Per-sweep
//! work fans out through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise; both produce identical
//! output.

pub mod bswp;
pub mod config;
pub mod downstream;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod metrics;
pub mod par;
pub mod perturb;
pub mod preprocess;
pub mod qa;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod synthgen;

pub use error::{Error, Result};
pub use sweep::{Frame, PlacentaLabel, PresentationLabel, Split, Study, Sweep, SweepTag};
