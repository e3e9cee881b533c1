//! Conditional segment-wise denoising of the high-resolution latents, and the
//! teacher-forced training step that matches it.
//!
//! Within segment `s` the mixer sees exactly the window `W_s`, each block fed
//! as `[z̄_i | z_ref_i]`. Predictions come back for every window block but
//! only blocks of `I_s` are stepped; the anchor and finalized history are
//! read-only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditioning::StageTwoInput;
use crate::error::ensure;
use crate::grid::{streams, Rng, Video};
use crate::mixer::{
    self, forward, loss_and_grad, sampler_step, MaskMode, Matrix, MixerParams, SigmaSchedule, WindowInput,
};
use crate::scheduler::{plan, SegmentPlan};
use crate::{Error, Result};

/// `(M, N)` combinations drawn uniformly during training.
pub const TRAIN_SEGMENTATIONS: [(usize, usize); 4] = [(2, 1), (2, 2), (3, 1), (3, 2)];
/// Probability that a training step uses a stage-transition pair (7:3 mix).
pub const TRANSITION_RATIO: f64 = 0.7;

#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub params: MixerParams,
    pub schedule: SigmaSchedule,
    /// `(h, w, c)` of one latent block.
    pub block_shape: [usize; 3],
}

impl Stage2Model {
    /// Random init with the reference half of the input embedding zeroed.
    pub fn new(
        block_shape: [usize; 3],
        hidden: usize,
        schedule: SigmaSchedule,
        mask_mode: MaskMode,
        seed: u64,
    ) -> Result<Self> {
        let [h, w, c] = block_shape;
        let block = h * w * c;
        let mut rng = Rng::substream(seed, streams::INIT, 2);
        let mut params = MixerParams::init(&mut rng, 2 * block, block, hidden, mask_mode)?;
        params.zero_input_rows(|r| is_reference_feature(r, c));
        Ok(Self {
            params,
            schedule,
            block_shape,
        })
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.params.mask_mode
    }

    fn block_len(&self) -> usize {
        self.block_shape.iter().product()
    }

    fn check_input(&self, input: &StageTwoInput) -> Result<()> {
        ensure!(
            input.block_shape() == self.block_shape,
            ShapeMismatch,
            "input blocks {:?} vs model {:?}",
            input.block_shape(),
            self.block_shape
        );
        ensure!(
            self.params.in_dim() == 2 * self.block_len() && self.params.out_dim() == self.block_len(),
            ShapeMismatch,
            "mixer widths do not match the block shape"
        );
        Ok(())
    }
}

/// True when input feature `r` of a `[noisy | reference]` block vector is a
/// reference channel.
pub fn is_reference_feature(r: usize, c: usize) -> bool {
    r % (2 * c) >= c
}

fn interleave(noisy: &[f32], reference: &[f32], c: usize, out: &mut [f32]) {
    for ((o, a), b) in out
        .chunks_exact_mut(2 * c)
        .zip(noisy.chunks_exact(c))
        .zip(reference.chunks_exact(c))
    {
        o[..c].copy_from_slice(a);
        o[c..].copy_from_slice(b);
    }
}

/// Block 1 = `z_x`; block `i ≥ 2` from sub-stream `(seed, BLOCK_NOISE, i)`.
pub fn initial_noise(input: &StageTwoInput, seed: u64) -> Result<Video> {
    let [h, w, c] = input.block_shape();
    let mut parts = vec![input.z_x.clone()];
    for i in 2..=input.blocks() {
        let data = Rng::substream(seed, streams::BLOCK_NOISE, i as u64).gaussian_vec(h * w * c);
        parts.push(Video::new(1, h, w, c, data)?);
    }
    Video::concat_frames(&parts)
}

/// Rows `[z̄_i | z_ref_i]` for the 1-based `indices`; block 1 reads `z_x`.
fn gather_rows(z: &Video, input: &StageTwoInput, indices: &[usize], sigma: f32) -> Result<WindowInput> {
    let c = z.channels();
    let n = z.frame_len();
    let mut blocks = Matrix::zeros(indices.len(), 2 * n);
    for (row, &i) in indices.iter().enumerate() {
        let noisy = if i == 1 { input.z_x.data() } else { z.frame_data(i - 1) };
        interleave(noisy, input.z_ref.frame_data(i - 1), c, blocks.row_mut(row));
    }
    Ok(WindowInput {
        blocks,
        positions: indices.to_vec(),
        sigma,
    })
}

/// Observation points of an inference run.
#[derive(Debug)]
pub enum CsgEvent<'a> {
    /// After step `step` (1-based) of segment `segment`.
    Step {
        segment: usize,
        step: usize,
        latents: &'a Video,
    },
    /// Segment `segment` is final.
    SegmentDone { segment: usize, latents: &'a Video },
}

/// Segment-by-segment inference state.
pub struct CsgRun<'a> {
    model: &'a Stage2Model,
    input: &'a StageTwoInput,
    plan: &'a SegmentPlan,
    z: Video,
    next: usize,
    forwards: usize,
}

impl<'a> CsgRun<'a> {
    pub fn new(model: &'a Stage2Model, input: &'a StageTwoInput, plan: &'a SegmentPlan, seed: u64) -> Result<Self> {
        model.check_input(input)?;
        ensure!(
            plan.t == input.blocks(),
            ShapeMismatch,
            "plan covers {} blocks, latents have {}",
            plan.t,
            input.blocks()
        );
        Ok(Self {
            model,
            input,
            plan,
            z: initial_noise(input, seed)?,
            next: 1,
            forwards: 0,
        })
    }

    pub fn latents(&self) -> &Video {
        &self.z
    }

    pub fn into_latents(self) -> Video {
        self.z
    }

    pub fn forward_count(&self) -> usize {
        self.forwards
    }

    pub fn is_done(&self) -> bool {
        self.next > self.plan.s
    }

    /// Runs the next segment; returns its 1-based index, or `None` when done.
    pub fn step_segment(&mut self, observer: &mut dyn FnMut(CsgEvent<'_>)) -> Result<Option<usize>> {
        if self.is_done() {
            return Ok(None);
        }
        let s = self.next;
        let seg = self.plan.segment(s)?;
        for (k, (from, to)) in self.model.schedule.pairs().enumerate() {
            let window = gather_rows(&self.z, self.input, &seg.window, from)?;
            let y = forward(&self.model.params, &window)?;
            self.forwards += 1;
            for (row, &i) in seg.window.iter().enumerate() {
                if seg.noisy.contains(&i) {
                    let next = sampler_step(self.z.frame_data(i - 1), y.row(row), from, to)?;
                    self.z.set_frame(i - 1, &next)?;
                }
            }
            observer(CsgEvent::Step {
                segment: s,
                step: k + 1,
                latents: &self.z,
            });
        }
        observer(CsgEvent::SegmentDone {
            segment: s,
            latents: &self.z,
        });
        self.next += 1;
        Ok(Some(s))
    }
}

pub fn infer_csg(model: &Stage2Model, input: &StageTwoInput, plan: &SegmentPlan, seed: u64) -> Result<Video> {
    infer_csg_observed(model, input, plan, seed, |_| {})
}

pub fn infer_csg_observed(
    model: &Stage2Model,
    input: &StageTwoInput,
    plan: &SegmentPlan,
    seed: u64,
    mut observer: impl FnMut(CsgEvent<'_>),
) -> Result<Video> {
    let mut run = CsgRun::new(model, input, plan, seed)?;
    while run.step_segment(&mut observer)?.is_some() {}
    Ok(run.into_latents())
}

/// Denoises all blocks at once in a single full window (no segmentation).
pub fn infer_full_window(model: &Stage2Model, input: &StageTwoInput, seed: u64) -> Result<Video> {
    model.check_input(input)?;
    let t = input.blocks();
    let all: Vec<usize> = (1..=t).collect();
    let mut z = initial_noise(input, seed)?;
    for (from, to) in model.schedule.pairs() {
        let y = forward(&model.params, &gather_rows(&z, input, &all, from)?)?;
        for i in 2..=t {
            let next = sampler_step(z.frame_data(i - 1), y.row(i - 1), from, to)?;
            z.set_frame(i - 1, &next)?;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Transition,
    Downsampled,
}

impl fmt::Display for PairSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairSource::Transition => "transition",
            PairSource::Downsampled => "downsampled",
        })
    }
}

impl FromStr for PairSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transition" => Ok(PairSource::Transition),
            "downsampled" => Ok(PairSource::Downsampled),
            other => Err(Error::InvalidArgument(format!("unknown pair source {other:?}"))),
        }
    }
}

/// One Stage II training example.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    /// Clean latents of the ground-truth high-resolution clip.
    pub z0: Video,
    pub input: StageTwoInput,
    pub source: PairSource,
}

impl TrainingClip {
    pub fn new(z0: Video, input: StageTwoInput, source: PairSource) -> Result<Self> {
        ensure!(
            z0.dims() == input.z_ref.dims(),
            ShapeMismatch,
            "clean latents {:?} vs reference {:?}",
            z0.dims(),
            input.z_ref.dims()
        );
        ensure!(z0.frames() >= 2, InvalidExtent, "clip too short for any segment");
        Ok(Self { z0, input, source })
    }
}

struct TeacherForced {
    window: WindowInput,
    clean: Matrix,
    eps: Matrix,
    mask: Vec<bool>,
}

/// Window of segment `s`: anchor and neighbours clean, `I_s` noised at `sigma`.
fn teacher_forced(
    clip: &TrainingClip,
    plan: &SegmentPlan,
    s: usize,
    sigma: f32,
    rng: &mut Rng,
) -> Result<TeacherForced> {
    let seg = plan.segment(s)?;
    let mut z = clip.z0.clone();
    let n = z.frame_len();
    let rows = seg.window.len();
    let mut eps = Matrix::zeros(rows, n);
    let mut clean = Matrix::zeros(rows, n);
    let mut mask = vec![false; rows];
    for (row, &i) in seg.window.iter().enumerate() {
        let x0 = clip.z0.frame_data(i - 1);
        clean.row_mut(row).copy_from_slice(x0);
        if seg.noisy.contains(&i) {
            let e = rng.gaussian_vec(n);
            let noisy: Vec<f32> = x0
                .iter()
                .zip(&e)
                .map(|(&x, &e)| (1.0 - sigma) * x + sigma * e)
                .collect();
            z.set_frame(i - 1, &noisy)?;
            eps.row_mut(row).copy_from_slice(&e);
            mask[row] = true;
        } else {
            eps.row_mut(row).copy_from_slice(x0);
        }
    }
    let window = gather_rows(&z, &clip.input, &seg.window, sigma)?;
    Ok(TeacherForced {
        window,
        clean,
        eps,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f32,
    pub m: usize,
    pub n: usize,
    pub segment: usize,
}

/// One teacher-forced step with fixed `(M, N)`; draws σ, ε and the segment.
pub fn train_step_with(
    model: &mut Stage2Model,
    clip: &TrainingClip,
    m: usize,
    n: usize,
    rng: &mut Rng,
    lr: f32,
) -> Result<StepOutcome> {
    model.check_input(&clip.input)?;
    let p = plan(clip.z0.frames(), m, n)?;
    let s = 1 + rng.below(p.s);
    let sigma = rng.uniform().max(1e-3);
    let tf = teacher_forced(clip, &p, s, sigma, rng)?;
    let (loss, grads) = loss_and_grad(&model.params, &tf.window, &tf.clean, &tf.eps, &tf.mask)?;
    model.params.descend(&grads, lr);
    Ok(StepOutcome { loss, m, n, segment: s })
}

/// One teacher-forced step with `(M, N)` drawn uniformly from
/// [`TRAIN_SEGMENTATIONS`].
pub fn train_step(model: &mut Stage2Model, clip: &TrainingClip, rng: &mut Rng, lr: f32) -> Result<StepOutcome> {
    let (m, n) = TRAIN_SEGMENTATIONS[rng.below(TRAIN_SEGMENTATIONS.len())];
    train_step_with(model, clip, m, n, rng, lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f32,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub source: PairSource,
}

/// A clip available in both flavours: with a stage-transition reference and
/// with a plain downsampled reference.
#[derive(Debug, Clone)]
pub struct ClipPair {
    pub transition: TrainingClip,
    pub downsampled: TrainingClip,
}

/// Trains for `steps` steps, picking a clip uniformly and its source by a
/// 7:3 Bernoulli draw.
pub fn train(
    model: &mut Stage2Model,
    clips: &[ClipPair],
    steps: usize,
    lr: f32,
    seed: u64,
) -> Result<Vec<TrainRecord>> {
    ensure!(!clips.is_empty(), InvalidArgument, "no training clips");
    let mut rng = Rng::substream(seed, streams::TRAIN, 2);
    let mut log = Vec::with_capacity(steps);
    for step in 1..=steps {
        let pair = &clips[rng.below(clips.len())];
        let clip = if rng.bernoulli(TRANSITION_RATIO) {
            &pair.transition
        } else {
            &pair.downsampled
        };
        let out = train_step(model, clip, &mut rng, lr)?;
        log.push(TrainRecord {
            step,
            loss: out.loss,
            m: out.m,
            n: out.n,
            source: clip.source,
        });
    }
    Ok(log)
}

/// Held-out masked loss with draws fixed by `seed`.
pub fn validation_loss(model: &Stage2Model, clips: &[TrainingClip], draws: usize, seed: u64) -> Result<f32> {
    ensure!(
        !clips.is_empty() && draws > 0,
        InvalidArgument,
        "nothing to validate on"
    );
    let mut rng = Rng::substream(seed, streams::EVAL, 2);
    let mut total = 0.0f64;
    for k in 0..draws {
        let clip = &clips[k % clips.len()];
        let (m, n) = TRAIN_SEGMENTATIONS[rng.below(TRAIN_SEGMENTATIONS.len())];
        let p = plan(clip.z0.frames(), m, n)?;
        let s = 1 + rng.below(p.s);
        let sigma = rng.uniform().max(1e-3);
        let tf = teacher_forced(clip, &p, s, sigma, &mut rng)?;
        total += mixer::loss(&model.params, &tf.window, &tf.clean, &tf.eps, &tf.mask)? as f64;
    }
    Ok((total / draws as f64) as f32)
}

/// Training log as CSV: `step,loss,M,N,source`.
pub fn write_train_log<W: std::io::Write>(log: &[TrainRecord], mut out: W) -> Result<()> {
    writeln!(out, "step,loss,M,N,source")?;
    for r in log {
        writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.m, r.n, r.source)?;
    }
    Ok(())
}
