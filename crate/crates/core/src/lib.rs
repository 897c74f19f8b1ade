//! Uncertainty-aware hazard detection and landing-site selection on
//! digital elevation models.
//!
//! The pipeline: [`terrain`] builds noisy DEMs, [`oracle`] labels them by
//! sweeping lander poses, [`segmenter`] learns a stochastic per-pixel
//! classifier, [`uncertainty`] turns Monte-Carlo predictions into entropy maps
//! and invalidates uncertain pixels, [`site`] proposes the safest landing
//! point, and [`eval`] scores everything.

pub mod error;
pub mod eval;
pub mod format;
pub mod grid;
pub mod maps;
pub mod oracle;
pub mod rng;
pub mod segmenter;
pub mod site;
pub mod terrain;
pub mod uncertainty;

pub use error::{Error, ParseError, Result};
pub use grid::Dem;
pub use maps::{Label, ProbabilityMap, SafetyMap};
