//! Segment plans: which blocks are denoised together and what they can see.
//!
//! Block indices are 1-based throughout this module; block 1 is the anchor.
//! For `t` blocks, segment size `M` and neighbour count `N`:
//!
//! ```text
//! S   = ⌈(t−1)/M⌉
//! a_s = 2 + (s−1)·M
//! I_s = {a_s, …, min(a_s+M−1, t)}
//! N_s = ∅ for s = 1, else {max(2, a_s−N), …, a_s−1}
//! W_s = {1} ∪ N_s ∪ I_s   (ascending)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ensure;
use crate::grid::Video;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("nothing to generate: {0} latent block(s), need at least 2")]
    NothingToGenerate(usize),
    #[error("segment length M must be at least 1")]
    InvalidSegmentLength,
    #[error("segment {index} out of range 1..={count}")]
    SegmentOutOfRange { index: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub noisy: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub segments: Vec<Segment>,
}

pub fn plan(t: usize, m: usize, n: usize) -> Result<SegmentPlan, PlanError> {
    if t < 2 {
        return Err(PlanError::NothingToGenerate(t));
    }
    if m == 0 {
        return Err(PlanError::InvalidSegmentLength);
    }
    let count = (t - 1).div_ceil(m);
    let segments = (1..=count)
        .map(|s| {
            let start = 2 + (s - 1) * m;
            let noisy: Vec<usize> = (start..=(start + m - 1).min(t)).collect();
            let neighbors: Vec<usize> = if s == 1 {
                Vec::new()
            } else {
                (start.saturating_sub(n).max(2)..start).collect()
            };
            let mut window = Vec::with_capacity(1 + neighbors.len() + noisy.len());
            window.push(1);
            window.extend(&neighbors);
            window.extend(&noisy);
            Segment {
                start,
                noisy,
                neighbors,
                window,
            }
        })
        .collect();
    Ok(SegmentPlan {
        t,
        m,
        n,
        s: count,
        segments,
    })
}

impl SegmentPlan {
    /// Segment `s`, 1-based.
    pub fn segment(&self, s: usize) -> Result<&Segment, PlanError> {
        if s == 0 || s > self.s {
            return Err(PlanError::SegmentOutOfRange {
                index: s,
                count: self.s,
            });
        }
        Ok(&self.segments[s - 1])
    }

    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.noisy.len()).collect()
    }

    /// The segment that denoises block `i`, 1-based; `None` for the anchor.
    pub fn segment_of(&self, i: usize) -> Option<usize> {
        (i >= 2 && i <= self.t).then(|| (i - 2) / self.m + 1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `|W_s|·h·w` for each segment.
pub fn token_budget(plan: &SegmentPlan, h: usize, w: usize) -> Vec<usize> {
    plan.segments.iter().map(|s| s.window.len() * h * w).collect()
}

/// Window blocks of segment `s` plus their global (1-based) indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gathered {
    pub blocks: Video,
    pub indices: Vec<usize>,
}

pub fn window_gather(latents: &Video, plan: &SegmentPlan, s: usize) -> Result<Gathered> {
    ensure!(
        latents.frames() == plan.t,
        ShapeMismatch,
        "latent has {} blocks, plan expects {}",
        latents.frames(),
        plan.t
    );
    let seg = plan.segment(s)?;
    let parts: Vec<Video> = seg.window.iter().map(|&i| latents.frame(i - 1)).collect();
    Ok(Gathered {
        blocks: Video::concat_frames(&parts)?,
        indices: seg.window.clone(),
    })
}

/// Writes gathered rows back to their global positions, restricted to the
/// indices accepted by `write`.
pub fn scatter(latents: &mut Video, gathered: &Gathered, write: impl Fn(usize) -> bool) -> Result<()> {
    ensure!(
        gathered.blocks.frames() == gathered.indices.len(),
        ShapeMismatch,
        "index map does not match gathered blocks"
    );
    for (row, &i) in gathered.indices.iter().enumerate() {
        if write(i) {
            latents.set_frame(i - 1, gathered.blocks.frame_data(row))?;
        }
    }
    Ok(())
}
