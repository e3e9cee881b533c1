//! Run configuration: JSON on disk, every field optional, command-line flags
//! applied last.
//!
//! ```json
//! {
//!   "corpus": null,
//!   "motif": "translating_checker",
//!   "train_clips": 8,
//!   "val_clips": 5,
//!   "frames": 81,
//!   "size": 32,
//!   "lr_factor": 2,
//!   "codec": { "spatial": 4, "temporal": 4, "channels": 4, "lift_seed": 0 },
//!   "M": 3, "N": 1,
//!   "steps": 4,
//!   "hidden": 32,
//!   "train_steps": 500,
//!   "learning_rate": 0.01,
//!   "seed": 0,
//!   "mask": "bidirectional",
//!   "transition": { "sigma": 0.1, "steps": 1, "seed": 0 },
//!   "queue_capacity": 2,
//!   "bench_reps": 21,
//!   "accumulation_seeds": 5,
//!   "stage1_checkpoint": null,
//!   "stage2_checkpoint": null,
//!   "input": null,
//!   "out": "out"
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::error::ensure;
use crate::mixer::MaskMode;
use crate::synth::Motif;
use crate::transition::TransitionConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene manifest to train on; a seeded default corpus when absent.
    pub corpus: Option<PathBuf>,
    pub motif: Motif,
    pub train_clips: usize,
    pub val_clips: usize,
    /// Pixel frames per clip (T).
    pub frames: usize,
    /// High-resolution frame side.
    pub size: usize,
    pub lr_factor: usize,
    pub codec: CodecConfig,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Denoising steps per segment (K).
    pub steps: usize,
    pub hidden: usize,
    pub train_steps: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub mask: MaskMode,
    pub transition: TransitionConfig,
    pub queue_capacity: usize,
    pub bench_reps: usize,
    pub accumulation_seeds: usize,
    pub stage1_checkpoint: Option<PathBuf>,
    pub stage2_checkpoint: Option<PathBuf>,
    /// Single-frame SIV1 input image for `generate`.
    pub input: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            motif: Motif::TranslatingChecker,
            train_clips: 8,
            val_clips: 5,
            frames: 81,
            size: 32,
            lr_factor: 2,
            codec: CodecConfig::default(),
            m: 3,
            n: 1,
            steps: 4,
            hidden: 32,
            train_steps: 500,
            learning_rate: 1e-2,
            seed: 0,
            mask: MaskMode::Bidirectional,
            transition: TransitionConfig::default(),
            queue_capacity: 2,
            bench_reps: 21,
            accumulation_seeds: 5,
            stage1_checkpoint: None,
            stage2_checkpoint: None,
            input: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        ensure!(self.m >= 1, InvalidArgument, "M must be >= 1");
        ensure!(self.steps >= 1, InvalidArgument, "steps must be >= 1");
        ensure!(self.hidden >= 1, InvalidArgument, "hidden width must be >= 1");
        ensure!(self.lr_factor >= 1, InvalidArgument, "lr_factor must be >= 1");
        ensure!(
            self.train_clips >= 1 && self.val_clips >= 1,
            InvalidArgument,
            "corpus splits must be non-empty"
        );
        ensure!(self.queue_capacity >= 1, InvalidArgument, "queue capacity must be >= 1");
        ensure!(self.bench_reps >= 1, InvalidArgument, "bench_reps must be >= 1");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            InvalidArgument,
            "learning rate must be positive"
        );
        let lr_side = self.codec.spatial * self.lr_factor;
        ensure!(
            self.size.is_multiple_of(lr_side),
            InvalidExtent,
            "size {} must be divisible by spatial factor × lr_factor = {lr_side}",
            self.size
        );
        self.codec.latent_blocks(self.frames)?;
        ensure!(
            self.frames > self.codec.temporal,
            InvalidExtent,
            "clip has no frames to generate"
        );
        self.transition.validate()
    }

    /// LR latent block extents.
    pub fn lr_block(&self) -> (usize, usize) {
        let side = self.size / (self.codec.spatial * self.lr_factor);
        (side, side)
    }

    /// HR latent block shape.
    pub fn hr_block(&self) -> [usize; 3] {
        let side = self.size / self.codec.spatial;
        [side, side, self.codec.channels]
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.m, c.n, c.steps), (3, 1, 4));
        assert_eq!(c.lr_block(), (4, 4));
        assert_eq!(c.hr_block(), [8, 8, 4]);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"M": 2, "frames": 17}"#).unwrap();
        assert_eq!((c.m, c.n, c.frames), (2, 1, 17));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn rejects_bad_extents() {
        let c = RunConfig {
            size: 36,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().is_validation());
        let c = RunConfig {
            frames: 80,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
