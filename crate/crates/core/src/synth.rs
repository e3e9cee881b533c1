//! Synthetic scenes with exact ground-truth motion.
//!
//! Each motif is a periodic base image on the pixel grid. Frame `τ` (1-based)
//! samples the base at `p − (τ−1)·velocity` with periodic wrap, bilinearly for
//! fractional displacements, so integer velocities give exact circular shifts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::grid::{streams, Rng, Video};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// 4×4 grid of cells, each with its own seeded colour.
    TranslatingChecker,
    /// Periodic sinusoidal gradient whose phase rotates across the channels.
    RotatingGradient,
    /// Gaussian blob on a dark background, wrapped at the borders.
    BouncingBlob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motif: Motif,
    /// Pixels per frame as `(columns, rows)`.
    pub velocity: (f32, f32),
}

impl SceneSpec {
    /// Checks the extents against latent codec factors.
    pub fn validate(&self, spatial: usize, temporal: usize) -> Result<()> {
        ensure!(self.frames >= 1, InvalidExtent, "scene needs at least one frame");
        ensure!(
            temporal >= 1 && (self.frames - 1).is_multiple_of(temporal),
            InvalidExtent,
            "frames-1 = {} not divisible by temporal factor {temporal}",
            self.frames - 1
        );
        ensure!(
            spatial >= 1
                && self.height > 0
                && self.width > 0
                && self.height.is_multiple_of(spatial)
                && self.width.is_multiple_of(spatial),
            InvalidExtent,
            "{}x{} not divisible by spatial factor {spatial}",
            self.height,
            self.width
        );
        ensure!(
            self.height.is_multiple_of(4) && self.width.is_multiple_of(4),
            InvalidExtent,
            "motif grid needs extents divisible by 4"
        );
        ensure!(
            self.velocity.0.is_finite() && self.velocity.1.is_finite(),
            InvalidArgument,
            "velocity must be finite"
        );
        Ok(())
    }
}

/// Renders against the default codec factors (4 spatial, 4 temporal).
pub fn render_scene(spec: &SceneSpec) -> Result<Video> {
    render_scene_with(spec, 4, 4)
}

pub fn render_scene_with(spec: &SceneSpec, spatial: usize, temporal: usize) -> Result<Video> {
    spec.validate(spatial, temporal)?;
    let base = base_image(spec)?;
    let (h, w) = (spec.height, spec.width);
    Video::from_fn(spec.frames, h, w, 3, |t, y, x, c| {
        let sx = t as f64 * spec.velocity.0 as f64;
        let sy = t as f64 * spec.velocity.1 as f64;
        sample_periodic(&base, y as f64 - sy, x as f64 - sx, c)
    })
}

fn base_image(spec: &SceneSpec) -> Result<Video> {
    let mut rng = Rng::substream(spec.seed, streams::SCENE, 0);
    let (h, w) = (spec.height, spec.width);
    match spec.motif {
        Motif::TranslatingChecker => {
            let colors: Vec<f32> = (0..16 * 3).map(|_| 0.1 + 0.8 * rng.uniform()).collect();
            let (ch, cw) = (h / 4, w / 4);
            Video::from_fn(1, h, w, 3, |_, y, x, c| colors[((y / ch) * 4 + x / cw) * 3 + c])
        }
        Motif::RotatingGradient => {
            let kx = (1 + rng.below(2)) as f64;
            let ky = rng.below(3) as f64;
            let phase = rng.uniform() as f64 * std::f64::consts::TAU;
            Video::from_fn(1, h, w, 3, |_, y, x, c| {
                let arg = std::f64::consts::TAU * (kx * x as f64 / w as f64 + ky * y as f64 / h as f64)
                    + phase
                    + c as f64 * std::f64::consts::TAU / 3.0;
                (0.5 + 0.4 * arg.cos()) as f32
            })
        }
        Motif::BouncingBlob => {
            let cy = rng.uniform() as f64 * h as f64;
            let cx = rng.uniform() as f64 * w as f64;
            let radius = h.min(w) as f64 / 6.0;
            let color: Vec<f64> = (0..3).map(|_| 0.5 + 0.4 * rng.uniform() as f64).collect();
            Video::from_fn(1, h, w, 3, |_, y, x, c| {
                let dy = wrapped_distance(y as f64, cy, h as f64);
                let dx = wrapped_distance(x as f64, cx, w as f64);
                let g = (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
                (0.1 + (color[c] - 0.1) * g) as f32
            })
        }
    }
}

fn wrapped_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

fn sample_periodic(base: &Video, y: f64, x: f64, c: usize) -> f32 {
    let (h, w) = (base.height() as i64, base.width() as i64);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let px = |yy: i64, xx: i64| base.at(0, yy.rem_euclid(h) as usize, xx.rem_euclid(w) as usize, c);
    let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
    let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
}

/// A deterministic corpus of `count` scenes with velocities cycling through
/// integer displacements (even, so they stay integral after a 2× downsample).
pub fn default_corpus(seed: u64, count: usize, motif: Motif, frames: usize, size: usize) -> Vec<SceneSpec> {
    const VELOCITIES: [(f32, f32); 5] = [(2.0, 0.0), (0.0, 2.0), (-2.0, 0.0), (0.0, -2.0), (2.0, 2.0)];
    let mut rng = Rng::substream(seed, streams::SCENE, 1);
    (0..count)
        .map(|i| SceneSpec {
            seed: rng.next_u64(),
            frames,
            height: size,
            width: size,
            motif,
            velocity: VELOCITIES[i % VELOCITIES.len()],
        })
        .collect()
}

pub fn save_manifest(specs: &[SceneSpec], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(specs)?)?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneSpec>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
