//! Simulation and security-analysis toolkit for fully-passive quantum key
//! distribution sources.
//!
//! The library models a four-laser passive source whose output intensity and
//! polarization are fixed entirely by the random phases of the lasers, the
//! post-selection geometry that turns those outputs into usable signal and
//! decoy states, the decoy-state linear program on pseudo-yields that the
//! sector-shaped regions and the reshaped intensity distribution make
//! possible, and the resulting BB84 / reference-frame-independent key rates
//! in both the asymptotic and the finite-size regime.
//!
//! Modules:
//! - [`source`]: phase-to-state mapping, its inverse, intensity densities and
//!   the distribution-reshaping acceptance function.
//! - [`regions`]: the six-parameter family of post-selection regions.
//! - [`channel`]: Bloch-vector channel and threshold-detector model.
//! - [`statistics`]: quadrature engine for region-averaged observables.
//! - [`lp`]: deterministic dense simplex solver.
//! - [`decoy`]: decoy-state linear programs and single-photon bounds.
//! - [`keyrate`]: BB84 and RFI-QKD secret-key rates, finite-size bounds.
//! - [`pipeline`]: end-to-end rate evaluations used by scans and tests.
//! - [`optimizer`]: post-selection parameter search.
//! - [`monte_carlo`]: event-level simulation used to cross-validate the
//!   quadrature engine.
//! - [`cli`]: scan configuration, orchestration and output files.

pub mod channel;
pub mod cli;
pub mod decoy;
pub mod keyrate;
pub mod lp;
pub mod monte_carlo;
pub mod optimizer;
pub mod pipeline;
pub mod quad;
pub mod regions;
pub mod source;
pub mod statistics;

pub use channel::{Basis, BlochVector, ChannelParams};
pub use regions::{BasisState, PostSelectionConfig, Region};
pub use source::{IntensityPdf, OutputState, SourcePhases};
