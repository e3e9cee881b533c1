//! Stage II input construction: hybrid pixel reference, anchor substitution,
//! channel concatenation.

use crate::codec::Codec;
use crate::error::ensure;
use crate::grid::{resize_spatial, ResizeMode, Video};
use crate::Result;

/// Upsamples the Stage I video by `factor` and replaces its first frame with
/// the high-resolution input `x`.
pub fn build_hybrid_reference(v_lr: &Video, x: &Video, factor: usize) -> Result<Video> {
    ensure!(x.frames() == 1, ShapeMismatch, "input image must be a single frame");
    let up = resize_spatial(v_lr, ResizeMode::UpNearest, factor)?;
    ensure!(
        up.frame_shape() == x.frame_shape(),
        ShapeMismatch,
        "upsampled reference {:?} vs input {:?}",
        up.frame_shape(),
        x.frame_shape()
    );
    let mut out = up;
    out.set_frame(0, x.data())?;
    Ok(out)
}

/// Everything Stage II is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoInput {
    /// `t × h × w × c` hybrid reference latents.
    pub z_ref: Video,
    /// `1 × h × w × c` anchor latent of the input image.
    pub z_x: Video,
}

impl StageTwoInput {
    pub fn new(z_ref: Video, z_x: Video) -> Result<Self> {
        ensure!(z_x.frames() == 1, ShapeMismatch, "anchor must be a single block");
        ensure!(
            z_ref.frame_shape() == z_x.frame_shape(),
            ShapeMismatch,
            "reference block {:?} vs anchor {:?}",
            z_ref.frame_shape(),
            z_x.frame_shape()
        );
        Ok(Self { z_ref, z_x })
    }

    /// Encodes a hybrid reference video and the input image.
    pub fn encode(codec: &Codec, hybrid: &Video, x: &Video) -> Result<Self> {
        Self::new(codec.encode(hybrid)?, codec.encode(x)?)
    }

    pub fn blocks(&self) -> usize {
        self.z_ref.frames()
    }

    pub fn block_shape(&self) -> [usize; 3] {
        self.z_x.frame_shape()
    }
}

/// Per-pixel channel concatenation `[a | b]`.
pub fn concat_channels(a: &Video, b: &Video) -> Result<Video> {
    ensure!(
        a.frames() == b.frames() && a.height() == b.height() && a.width() == b.width(),
        ShapeMismatch,
        "{:?} vs {:?}",
        a.dims(),
        b.dims()
    );
    let (ca, cb) = (a.channels(), b.channels());
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Video::new(a.frames(), a.height(), a.width(), ca + cb, data)
}

/// Inverse of [`concat_channels`]: the first `c` channels and the rest.
pub fn split_channels(v: &Video, c: usize) -> Result<(Video, Video)> {
    ensure!(
        c > 0 && c < v.channels(),
        ShapeMismatch,
        "cannot split {} channels at {c}",
        v.channels()
    );
    let rest = v.channels() - c;
    let mut a = Vec::with_capacity(v.data().len() / v.channels() * c);
    let mut b = Vec::with_capacity(v.data().len() / v.channels() * rest);
    for px in v.data().chunks_exact(v.channels()) {
        a.extend_from_slice(&px[..c]);
        b.extend_from_slice(&px[c..]);
    }
    Ok((
        Video::new(v.frames(), v.height(), v.width(), c, a)?,
        Video::new(v.frames(), v.height(), v.width(), rest, b)?,
    ))
}

/// Replaces block 1 of `z_noisy` with `z_x` and concatenates the reference
/// along channels, giving `t × h × w × 2c`. `z_noisy` is left untouched.
pub fn assemble_input(z_noisy: &Video, z_ref: &Video, z_x: &Video) -> Result<Video> {
    ensure!(
        z_noisy.dims() == z_ref.dims(),
        ShapeMismatch,
        "noisy {:?} vs reference {:?}",
        z_noisy.dims(),
        z_ref.dims()
    );
    ensure!(
        z_x.frames() == 1 && z_x.frame_shape() == z_noisy.frame_shape(),
        ShapeMismatch,
        "anchor {:?} does not match a noisy block {:?}",
        z_x.dims(),
        z_noisy.frame_shape()
    );
    let mut anchored = z_noisy.clone();
    anchored.set_frame(0, z_x.data())?;
    concat_channels(&anchored, z_ref)
}
