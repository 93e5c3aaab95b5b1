//! Longitudinal connectome classification from paired SPD matrices.
//!
//! Each subject contributes two connectivity matrices (baseline and follow-up)
//! and two behavior vectors. The pipeline aligns both visits in the tangent
//! space at their geodesic midpoint, encodes each visit on a kNN graph with
//! heat-kernel tokens and a gated two-layer GCN, fuses the two visits with
//! dual-time attention, rolls the fused seed through a behavior-conditioned
//! Koopman operator, and classifies from the predicted and observed follow-up.

pub mod cli;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod graph_tokens;
pub mod koopman;
pub mod objective;
pub mod spd_align;
pub mod symmat;
pub mod synthdata;

pub use error::{Error, Result};
