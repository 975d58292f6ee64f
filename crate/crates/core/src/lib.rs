//! Desk-scale GAN laboratory: a tiny style-based generator whose latent axes
//! are explicitly linked to image regions by a locality regularizer, plus
//! training, evaluation, ablation and inversion-based editing on top of a
//! self-contained reverse-mode autodiff engine.

pub mod autodiff;
pub mod linkreg;
pub mod models;
pub mod synthdata;

pub use autodiff::{AutodiffError, Gradients, Prim, Tape, Tensor, Var};
pub use linkreg::{LatentPartition, LinkRegion, LinkSpec, RectRegion, RegionMask};
pub use models::{AdamParams, AdamState, ModelConfig, ModelState};
