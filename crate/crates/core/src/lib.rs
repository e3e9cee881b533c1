//! Desk-scale segment-wise conditional video generation.
//!
//! A two-stage image-to-video pipeline built from toy components small enough
//! to check against brute-force oracles:
//!
//! * [`stage1`] generates a low-resolution motion reference from the first frame.
//! * [`conditioning`] turns that reference into the Stage II input (hybrid
//!   reference latents plus the image anchor).
//! * [`stage2`] denoises the high-resolution latents segment by segment using
//!   the windows planned by [`scheduler`].
//! * [`streamer`] overlaps segment denoising with block decoding.
//!
//! [`metrics`] and the [`cli`] benches measure structure, scaling and quality.

pub mod cli;
pub mod codec;
pub mod conditioning;
mod error;
pub mod grid;
pub mod metrics;
pub mod mixer;
pub mod scheduler;
pub mod stage1;
pub mod stage2;
pub mod streamer;
pub mod synth;
pub mod transition;

pub use error::{Error, Result};
