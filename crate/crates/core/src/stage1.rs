//! Low-resolution motion generator.
//!
//! Denoises every non-anchor LR latent block jointly in one full-sequence
//! window. Each block is fed as `[z_i | anchor]` so the first-frame latent
//! conditions every position; block 1 is the anchor itself and is never
//! updated.

use crate::codec::{Codec, CodecConfig};
use crate::conditioning::concat_channels;
use crate::error::ensure;
use crate::grid::{streams, Rng, Video};
use crate::mixer::{
    self, forward, loss_and_grad, sampler_step, MaskMode, Matrix, MixerParams, SigmaSchedule, WindowInput,
};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub params: MixerParams,
    pub codec: Codec,
    pub schedule: SigmaSchedule,
    /// LR latent block extents `(h, w)` the mixer was built for.
    pub block_hw: (usize, usize),
}

impl Stage1Model {
    pub fn new(
        codec: CodecConfig,
        block_hw: (usize, usize),
        hidden: usize,
        schedule: SigmaSchedule,
        seed: u64,
    ) -> Result<Self> {
        let codec = Codec::new(codec)?;
        let c = codec.config().channels;
        let block = block_hw.0 * block_hw.1 * c;
        let mut rng = Rng::substream(seed, streams::INIT, 1);
        let params = MixerParams::init(&mut rng, 2 * block, block, hidden, MaskMode::Bidirectional)?;
        Ok(Self {
            params,
            codec,
            schedule,
            block_hw,
        })
    }

    /// The same model with every parameter set to zero (predicts v̂ ≡ 0).
    pub fn null(codec: CodecConfig, block_hw: (usize, usize), schedule: SigmaSchedule) -> Result<Self> {
        let codec = Codec::new(codec)?;
        let block = block_hw.0 * block_hw.1 * codec.config().channels;
        Ok(Self {
            params: MixerParams::zeros(2 * block, block, 1, MaskMode::Bidirectional),
            codec,
            schedule,
            block_hw,
        })
    }

    fn check_latents(&self, z: &Video) -> Result<()> {
        let (h, w) = self.block_hw;
        ensure!(
            z.frame_shape() == [h, w, self.codec.config().channels],
            ShapeMismatch,
            "latent block {:?} does not match model {:?}",
            z.frame_shape(),
            [h, w, self.codec.config().channels]
        );
        Ok(())
    }

    fn encode_anchor(&self, x_lr: &Video) -> Result<Video> {
        ensure!(x_lr.frames() == 1, ShapeMismatch, "LR anchor must be a single frame");
        let anchor = self.codec.encode(x_lr)?;
        self.check_latents(&anchor)?;
        Ok(anchor)
    }
}

/// Block 1 = `anchor`; blocks 2..=t from the per-block noise sub-streams.
pub fn initial_latents(anchor: &Video, t: usize, seed: u64) -> Result<Video> {
    let mut parts = vec![anchor.clone()];
    let [h, w, c] = anchor.frame_shape();
    for i in 2..=t {
        let data = Rng::substream(seed, streams::BLOCK_NOISE, i as u64).gaussian_vec(h * w * c);
        parts.push(Video::new(1, h, w, c, data)?);
    }
    Video::concat_frames(&parts)
}

fn window_for(z: &Video, anchor: &Video, sigma: f32) -> Result<WindowInput> {
    let t = z.frames();
    let broadcast = Video::concat_frames(&vec![anchor.clone(); t])?;
    let u = concat_channels(z, &broadcast)?;
    Ok(WindowInput {
        blocks: Matrix::from_vec(t, u.frame_len(), u.into_data())?,
        positions: (1..=t).collect(),
        sigma,
    })
}

fn run_schedule(model: &Stage1Model, mut z: Video, anchor: &Video, schedule: &SigmaSchedule) -> Result<Video> {
    z.set_frame(0, anchor.data())?;
    for (from, to) in schedule.pairs() {
        let y = forward(&model.params, &window_for(&z, anchor, from)?)?;
        for i in 1..z.frames() {
            let next = sampler_step(z.frame_data(i), y.row(i), from, to)?;
            z.set_frame(i, &next)?;
        }
    }
    Ok(z)
}

/// Generates LR latents for `frames` pixel frames starting from `x_lr`.
pub fn generate_latents(model: &Stage1Model, x_lr: &Video, frames: usize, seed: u64) -> Result<Video> {
    let anchor = model.encode_anchor(x_lr)?;
    let t = model.codec.config().latent_blocks(frames)?;
    let z = initial_latents(&anchor, t, seed)?;
    run_schedule(model, z, &anchor, &model.schedule)
}

/// Full LR generation: latents, then decode to `frames × H_lr × W_lr × 3`.
pub fn generate_lr(model: &Stage1Model, x_lr: &Video, frames: usize, seed: u64) -> Result<Video> {
    let z = generate_latents(model, x_lr, frames, seed)?;
    model.codec.decode(&z)
}

/// Runs `steps` uniform Euler steps from `sigma_start` to 0 on `latents`,
/// with block 1 held at the encoding of `x_lr`.
pub fn denoise_from(
    model: &Stage1Model,
    latents: &Video,
    x_lr: &Video,
    sigma_start: f32,
    steps: usize,
) -> Result<Video> {
    model.check_latents(latents)?;
    let schedule = SigmaSchedule::truncated(sigma_start, steps)?;
    let anchor = model.encode_anchor(x_lr)?;
    run_schedule(model, latents.clone(), &anchor, &schedule)
}

fn noised_window(clean: &Video, sigma: f32, rng: &mut Rng) -> Result<(WindowInput, Matrix, Matrix, Vec<bool>)> {
    let t = clean.frames();
    ensure!(t >= 2, InvalidExtent, "clip has no blocks to denoise");
    let n = clean.frame_len();
    let anchor = clean.frame(0);
    let mut z = clean.clone();
    let mut eps = Matrix::zeros(t, n);
    for i in 1..t {
        let e = rng.gaussian_vec(n);
        let noisy: Vec<f32> = clean
            .frame_data(i)
            .iter()
            .zip(&e)
            .map(|(&x, &e)| (1.0 - sigma) * x + sigma * e)
            .collect();
        z.set_frame(i, &noisy)?;
        eps.row_mut(i).copy_from_slice(&e);
    }
    // the anchor row is not scored; give it a zero-velocity target
    eps.row_mut(0).copy_from_slice(clean.frame_data(0));
    let input = window_for(&z, &anchor, sigma)?;
    let clean_m = Matrix::from_vec(t, n, clean.data().to_vec())?;
    let mut mask = vec![true; t];
    mask[0] = false;
    Ok((input, clean_m, eps, mask))
}

fn draw_sigma(rng: &mut Rng) -> f32 {
    rng.uniform().max(1e-3)
}

/// One gradient-descent step on clean LR latents `clip` (block 1 = anchor).
pub fn train_step(model: &mut Stage1Model, clip: &Video, rng: &mut Rng, lr: f32) -> Result<f32> {
    model.check_latents(clip)?;
    let sigma = draw_sigma(rng);
    let (input, clean, eps, mask) = noised_window(clip, sigma, rng)?;
    let (loss, grads) = loss_and_grad(&model.params, &input, &clean, &eps, &mask)?;
    model.params.descend(&grads, lr);
    Ok(loss)
}

/// Trains on `clips` for `steps` steps; returns the per-step losses.
pub fn train(model: &mut Stage1Model, clips: &[Video], steps: usize, lr: f32, seed: u64) -> Result<Vec<f32>> {
    ensure!(!clips.is_empty(), InvalidArgument, "no training clips");
    let mut rng = Rng::substream(seed, streams::TRAIN, 1);
    (0..steps)
        .map(|_| {
            let clip = &clips[rng.below(clips.len())];
            train_step(model, clip, &mut rng, lr)
        })
        .collect()
}

/// Mean masked flow-matching loss with draws fixed by `seed`.
pub fn validation_loss(model: &Stage1Model, clips: &[Video], draws: usize, seed: u64) -> Result<f32> {
    ensure!(
        !clips.is_empty() && draws > 0,
        InvalidArgument,
        "nothing to validate on"
    );
    let mut rng = Rng::substream(seed, streams::EVAL, 1);
    let mut total = 0.0f64;
    for k in 0..draws {
        let clip = &clips[k % clips.len()];
        let sigma = draw_sigma(&mut rng);
        let (input, clean, eps, mask) = noised_window(clip, sigma, &mut rng)?;
        total += mixer::loss(&model.params, &input, &clean, &eps, &mask)? as f64;
    }
    Ok((total / draws as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{resize_spatial, ResizeMode};
    use crate::synth::{default_corpus, render_scene, Motif};

    fn model(seed: u64) -> Stage1Model {
        Stage1Model::new(
            CodecConfig::default(),
            (4, 4),
            16,
            SigmaSchedule::uniform(4).unwrap(),
            seed,
        )
        .unwrap()
    }

    fn lr_clip(seed: u64) -> Video {
        let spec = &default_corpus(seed, 1, Motif::TranslatingChecker, 17, 32)[0];
        resize_spatial(&render_scene(spec).unwrap(), ResizeMode::DownAvg, 2).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let m = model(1);
        let x = lr_clip(2).frame(0);
        let a = generate_lr(&m, &x, 17, 9).unwrap();
        let b = generate_lr(&m, &x, 17, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), [17, 16, 16, 3]);
        assert_ne!(a, generate_lr(&m, &x, 17, 10).unwrap());
        let z = generate_latents(&m, &x, 17, 9).unwrap();
        assert_eq!(z.frame_data(0), m.codec.encode(&x).unwrap().data());
        assert_eq!(a.frame(0), m.codec.decode(&m.codec.encode(&x).unwrap()).unwrap());
    }

    #[test]
    fn full_truncated_schedule_matches_generation() {
        let m = model(3);
        let x = lr_clip(4).frame(0);
        let anchor = m.codec.encode(&x).unwrap();
        let z0 = initial_latents(&anchor, 5, 21).unwrap();
        let a = denoise_from(&m, &z0, &x, 1.0, 4).unwrap();
        assert_eq!(a, generate_latents(&m, &x, 17, 21).unwrap());
        assert!(denoise_from(&m, &z0, &x, 0.0, 1).is_err());
        assert!(denoise_from(&m, &z0, &x, 0.5, 0).is_err());
    }

    #[test]
    fn null_model_leaves_latents_alone() {
        let m = Stage1Model::null(CodecConfig::default(), (4, 4), SigmaSchedule::uniform(4).unwrap()).unwrap();
        let clip = lr_clip(5);
        let z = m.codec.encode(&clip).unwrap();
        let out = denoise_from(&m, &z, &clip.frame(0), 0.3, 3).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn training_reduces_validation_loss() {
        let mut m = model(6);
        let codec = m.codec.clone();
        let encode = |s: u64| codec.encode(&lr_clip(s)).unwrap();
        let train_clips: Vec<Video> = (0..6).map(encode).collect();
        let val: Vec<Video> = (100..103).map(encode).collect();
        let before = validation_loss(&m, &val, 12, 0).unwrap();
        let losses = train(&mut m, &train_clips, 500, 1e-2, 7).unwrap();
        assert!(losses.iter().all(|l| l.is_finite()));
        let after = validation_loss(&m, &val, 12, 0).unwrap();
        assert!(after < before, "before {before} after {after}");
    }
}
