//! Stage-transition pair synthesis and diagnostics.
//!
//! A downsampled clip is corrupted in LR latent space along the flow path,
//! `(1−σ)·z + σ·ε`, then partially re-denoised by Stage I for `steps` steps
//! starting at σ. The decoded result carries Stage I artifacts while keeping
//! the clip's motion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::grid::{resize_spatial, streams, ResizeMode, Rng, Video};
use crate::metrics::{psnr, snr, video_ssim};
use crate::stage1::{denoise_from, Stage1Model};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub sigma: f32,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            sigma: 0.10,
            steps: 1,
            seed: 0,
        }
    }
}

impl TransitionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.sigma),
            InvalidArgument,
            "sigma {} outside [0, 1]",
            self.sigma
        );
        ensure!(self.steps >= 1, InvalidArgument, "steps must be >= 1");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    /// Re-denoised LR clip.
    pub lr_tilde: Video,
    /// The clean downsampled clip it was derived from.
    pub lr_clean: Video,
    pub hr: Video,
}

/// Corrupts `Down(v_hr)` and re-denoises it with Stage I. At σ = 0 no
/// denoising runs and the result is the codec projection of `Down(v_hr)`.
pub fn synthesize_pair(
    v_hr: &Video,
    stage1: &Stage1Model,
    cfg: &TransitionConfig,
    lr_factor: usize,
) -> Result<TransitionPair> {
    cfg.validate()?;
    let lr_clean = resize_spatial(v_hr, ResizeMode::DownAvg, lr_factor)?;
    let mut z = stage1.codec.encode(&lr_clean)?;
    let mut rng = Rng::substream(cfg.seed, streams::TRANSITION, 0);
    let sigma = cfg.sigma;
    for i in 1..z.frames() {
        let eps = rng.gaussian_vec(z.frame_len());
        let noisy: Vec<f32> = z
            .frame_data(i)
            .iter()
            .zip(&eps)
            .map(|(&x, &e)| (1.0 - sigma) * x + sigma * e)
            .collect();
        z.set_frame(i, &noisy)?;
    }
    let z = if sigma > 0.0 {
        denoise_from(stage1, &z, &lr_clean.frame(0), sigma, cfg.steps)?
    } else {
        z
    };
    Ok(TransitionPair {
        lr_tilde: stage1.codec.decode(&z)?,
        lr_clean,
        hr: v_hr.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub snr_db: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn diagnostics(lr_tilde: &Video, lr_clean: &Video) -> Result<Diagnostics> {
    Ok(Diagnostics {
        snr_db: snr(lr_tilde, lr_clean)?,
        psnr_db: psnr(lr_tilde, lr_clean)?,
        ssim: video_ssim(lr_tilde, lr_clean)?,
    })
}

/// One line of the pair manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub hr: String,
    pub lr_tilde: String,
    pub sigma: f32,
    pub steps: usize,
    pub seed: u64,
}

/// JSON lines, one record per line.
pub fn write_pair_manifest<W: Write>(records: &[PairRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pair_manifest(text: &str) -> Result<Vec<PairRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
