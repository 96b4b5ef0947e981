//! Continuous-time video recovery from a single motion-blurred grayscale
//! image and the concurrent event stream.
//!
//! The crate covers the full desk-scale pipeline: a parametric scene
//! simulator with analytic optical flow, an ESIM-style event simulator,
//! blur synthesis, the closed-form double-integral baseline, fixed-shape
//! event representations, a dual-attention feature embedding network with a
//! continuous-time decoding MLP trained by reverse-mode autodiff, and the
//! two-phase training schedule with motion- and texture-guided supervision.

pub mod edi;
pub mod error;
pub mod events;
pub mod imaging;
pub mod ivf;
pub mod numerics;
pub mod representation;
pub mod training;

pub use error::{Error, Result};
