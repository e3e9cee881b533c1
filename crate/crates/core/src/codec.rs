//! Toy 3D latent codec.
//!
//! Frame 1 is encoded as its own block; every later block pools `temporal`
//! consecutive frames. Each block is mean-pooled over `spatial × spatial` cells
//! and lifted from RGB to `channels` latent channels by a fixed seeded matrix
//! with orthonormal columns, so decode has an exact left inverse.

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::grid::{streams, Rng, Video};
use crate::Result;

pub const PIXEL_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub spatial: usize,
    pub temporal: usize,
    pub channels: usize,
    pub lift_seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            spatial: 4,
            temporal: 4,
            channels: 4,
            lift_seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.spatial >= 1 && self.temporal >= 1,
            InvalidArgument,
            "codec factors must be >= 1"
        );
        ensure!(
            self.channels >= PIXEL_CHANNELS,
            InvalidArgument,
            "latent channels {} < {PIXEL_CHANNELS}",
            self.channels
        );
        Ok(())
    }

    /// Latent block count for `frames` pixel frames.
    pub fn latent_blocks(&self, frames: usize) -> Result<usize> {
        ensure!(frames >= 1, InvalidExtent, "need at least one frame");
        ensure!(
            (frames - 1).is_multiple_of(self.temporal),
            InvalidExtent,
            "frames-1 = {} not divisible by temporal factor {}",
            frames - 1,
            self.temporal
        );
        Ok(1 + (frames - 1) / self.temporal)
    }

    pub fn pixel_frames(&self, blocks: usize) -> usize {
        1 + blocks.saturating_sub(1) * self.temporal
    }

    /// 1-based inclusive frame range covered by 1-based block `i`.
    pub fn block_frames(&self, i: usize) -> (usize, usize) {
        if i <= 1 {
            (1, 1)
        } else {
            ((i - 2) * self.temporal + 2, (i - 1) * self.temporal + 1)
        }
    }
}

/// A codec with its channel lift materialised.
#[derive(Debug, Clone)]
pub struct Codec {
    cfg: CodecConfig,
    /// `channels × 3`, row-major, orthonormal columns.
    lift: Vec<f32>,
}

impl Codec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lift: orthonormal_lift(cfg.channels, cfg.lift_seed),
            cfg,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn lift(&self) -> &[f32] {
        &self.lift
    }

    pub fn encode(&self, v: &Video) -> Result<Video> {
        let CodecConfig {
            spatial: fs, channels, ..
        } = self.cfg;
        ensure!(
            v.channels() == PIXEL_CHANNELS,
            ShapeMismatch,
            "expected {PIXEL_CHANNELS} pixel channels, got {}",
            v.channels()
        );
        ensure!(
            v.height().is_multiple_of(fs) && v.width().is_multiple_of(fs),
            InvalidExtent,
            "{}x{} not divisible by spatial factor {fs}",
            v.height(),
            v.width()
        );
        let blocks = self.cfg.latent_blocks(v.frames())?;
        let (h, w) = (v.height() / fs, v.width() / fs);
        let mut data = Vec::with_capacity(blocks * h * w * channels);
        for b in 1..=blocks {
            let (first, last) = self.cfg.block_frames(b);
            let count = ((last - first + 1) * fs * fs) as f64;
            for y in 0..h {
                for x in 0..w {
                    let mut pooled = [0.0f64; PIXEL_CHANNELS];
                    for t in first - 1..last {
                        for dy in 0..fs {
                            for dx in 0..fs {
                                for (c, p) in pooled.iter_mut().enumerate() {
                                    *p += v.at(t, y * fs + dy, x * fs + dx, c) as f64;
                                }
                            }
                        }
                    }
                    let pooled = pooled.map(|p| (p / count) as f32);
                    for k in 0..channels {
                        let row = &self.lift[k * PIXEL_CHANNELS..(k + 1) * PIXEL_CHANNELS];
                        data.push(row.iter().zip(&pooled).map(|(a, b)| a * b).sum());
                    }
                }
            }
        }
        Video::new(blocks, h, w, channels, data)
    }

    pub fn decode(&self, z: &Video) -> Result<Video> {
        let parts = (1..=z.frames())
            .map(|i| self.decode_block(&z.frame(i - 1), i))
            .collect::<Result<Vec<_>>>()?;
        Video::concat_frames(&parts)
    }

    /// Decodes a single latent block with 1-based global index `index`:
    /// block 1 yields one frame, every other block `temporal` frames.
    pub fn decode_block(&self, block: &Video, index: usize) -> Result<Video> {
        let CodecConfig {
            spatial: fs,
            temporal,
            channels,
            ..
        } = self.cfg;
        ensure!(block.frames() == 1, ShapeMismatch, "decode_block takes one block");
        ensure!(
            block.channels() == channels,
            ShapeMismatch,
            "latent has {} channels, codec expects {channels}",
            block.channels()
        );
        let (h, w) = (block.height(), block.width());
        let mut rgb = vec![0.0f32; h * w * PIXEL_CHANNELS];
        for y in 0..h {
            for x in 0..w {
                for c in 0..PIXEL_CHANNELS {
                    let mut acc = 0.0f32;
                    for k in 0..channels {
                        acc += self.lift[k * PIXEL_CHANNELS + c] * block.at(0, y, x, k);
                    }
                    rgb[(y * w + x) * PIXEL_CHANNELS + c] = acc.clamp(0.0, 1.0);
                }
            }
        }
        let frames = if index <= 1 { 1 } else { temporal };
        Video::from_fn(frames, h * fs, w * fs, PIXEL_CHANNELS, |_, y, x, c| {
            rgb[((y / fs) * w + x / fs) * PIXEL_CHANNELS + c]
        })
    }
}

/// Gram–Schmidt on a seeded Gaussian `rows × 3` matrix.
fn orthonormal_lift(rows: usize, seed: u64) -> Vec<f32> {
    let mut rng = Rng::substream(seed, streams::LIFT, rows as u64);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(PIXEL_CHANNELS);
    while cols.len() < PIXEL_CHANNELS {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.normal() as f64).collect();
        for u in &cols {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut lift = vec![0.0f32; rows * PIXEL_CHANNELS];
    for (c, col) in cols.iter().enumerate() {
        for (k, &val) in col.iter().enumerate() {
            lift[k * PIXEL_CHANNELS + c] = val as f32;
        }
    }
    lift
}
