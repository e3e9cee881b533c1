//! Dense arrays, seeded randomness and the SIV1 container.
//!
//! Everything is `f32`. Videos (pixel or latent) are stored row-major with the
//! frame axis outermost and channels innermost, which makes one frame (or one
//! latent block) a contiguous slice.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::ensure;
use crate::{Error, Result};

/// Sub-stream domains. A sub-stream is the ChaCha8 stream
/// `(domain << 32) | index` of the generator seeded with the run seed, so two
/// domains never share a stream for indices below 2^32.
pub mod streams {
    /// Initial latent noise for one block, indexed by the global block index.
    pub const BLOCK_NOISE: u64 = 0x01;
    /// Parameter initialisation.
    pub const INIT: u64 = 0x02;
    /// Training draws (sigma, noise, segment choice, (M, N), pair source).
    pub const TRAIN: u64 = 0x03;
    /// Stage-transition corruption noise.
    pub const TRANSITION: u64 = 0x04;
    /// Validation draws.
    pub const EVAL: u64 = 0x05;
    /// Synthetic scene content.
    pub const SCENE: u64 = 0x06;
    /// Codec channel lift.
    pub const LIFT: u64 = 0x07;
}

/// Seeded ChaCha8 generator. Identical seeds give identical streams on every
/// platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream `(domain, index)` of `seed`.
    pub fn substream(seed: u64, domain: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream((domain << 32) | (index & 0xFFFF_FFFF));
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f32 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f32 {
        self.inner.gen::<f32>()
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen_bool(p.clamp(0.0, 1.0))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Fills a tensor of the given extents with i.i.d. standard normals.
    pub fn gaussian_fill(&mut self, dims: &[usize]) -> Result<Tensor> {
        let len = checked_volume(dims)?;
        let data = (0..len).map(|_| self.normal()).collect();
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f32> {
        (0..len).map(|_| self.normal()).collect()
    }
}

fn checked_volume(dims: &[usize]) -> Result<usize> {
    ensure!(!dims.is_empty(), InvalidExtent, "no extents given");
    dims.iter().try_fold(1usize, |acc, &d| {
        ensure!(d > 0, InvalidExtent, "zero extent in {dims:?}");
        acc.checked_mul(d)
            .ok_or_else(|| Error::InvalidExtent(format!("extent product overflows for {dims:?}")))
    })
}

/// N-dimensional row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn into_video(self) -> Result<Video> {
        ensure!(
            self.dims.len() == 4,
            ShapeMismatch,
            "expected 4 extents, got {:?}",
            self.dims
        );
        Video::new(self.dims[0], self.dims[1], self.dims[2], self.dims[3], self.data)
    }
}

/// A `frames × height × width × channels` sequence. Used for pixel videos
/// (channels = 3, values in [0, 1]) as well as latent videos, where a "frame"
/// is one temporal latent block.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let len = checked_volume(&[frames, height, width, channels])?;
        ensure!(
            data.len() == len,
            ShapeMismatch,
            "data length {} does not match {frames}x{height}x{width}x{channels}",
            data.len()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite value in video data"
        );
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        let len = checked_volume(&[frames, height, width, channels])?;
        Self::new(frames, height, width, channels, vec![value; len])
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(frames, height, width, channels, 0.0)
    }

    /// Builds a video from a generator over `(frame, y, x, channel)`.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        checked_volume(&[frames, height, width, channels])?;
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self::new(frames, height, width, channels, data)
    }

    /// Concatenates single-or-multi-frame videos along the frame axis.
    pub fn concat_frames(parts: &[Video]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidExtent("no frames to concatenate".into()))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            ensure!(
                p.frame_shape() == first.frame_shape(),
                ShapeMismatch,
                "frame shapes {:?} and {:?} differ",
                first.frame_shape(),
                p.frame_shape()
            );
            frames += p.frames;
            data.extend_from_slice(&p.data);
        }
        Self::new(frames, first.height, first.width, first.channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }
    pub fn frame_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(t, y, x, c)]
    }

    /// Contiguous slice of frame (or latent block) `t`, zero-based.
    pub fn frame_data(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Copies `values` into frame `t`. Values must be finite.
    pub fn set_frame(&mut self, t: usize, values: &[f32]) -> Result<()> {
        ensure!(t < self.frames, InvalidExtent, "frame {t} out of range {}", self.frames);
        ensure!(
            values.len() == self.frame_len(),
            ShapeMismatch,
            "frame of {} values, expected {}",
            values.len(),
            self.frame_len()
        );
        ensure!(
            values.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite value written to frame {t}"
        );
        let n = self.frame_len();
        self.data[t * n..(t + 1) * n].copy_from_slice(values);
        Ok(())
    }

    /// Frame `t` as a one-frame video.
    pub fn frame(&self, t: usize) -> Video {
        Video {
            frames: 1,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.frame_data(t).to_vec(),
        }
    }

    /// Frames `start..end` as a new video.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Video> {
        ensure!(
            start < end && end <= self.frames,
            InvalidExtent,
            "frame range {start}..{end} outside 0..{}",
            self.frames
        );
        let n = self.frame_len();
        Ok(Video {
            frames: end - start,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    /// Elementwise linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f32, other: &Video, b: f32) -> Result<Video> {
        ensure!(
            self.dims() == other.dims(),
            ShapeMismatch,
            "{:?} vs {:?}",
            self.dims(),
            other.dims()
        );
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Video::new(self.frames, self.height, self.width, self.channels, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Video> {
        Video::new(
            self.frames,
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Non-overlapping `factor × factor` block mean.
    DownAvg,
    /// Pixel replication.
    UpNearest,
}

pub fn resize_spatial(v: &Video, mode: ResizeMode, factor: usize) -> Result<Video> {
    ensure!(factor > 0, InvalidArgument, "resize factor must be positive");
    match mode {
        ResizeMode::DownAvg => {
            ensure!(
                v.height.is_multiple_of(factor) && v.width.is_multiple_of(factor),
                InvalidExtent,
                "{}x{} not divisible by {factor}",
                v.height,
                v.width
            );
            let (h, w) = (v.height / factor, v.width / factor);
            let area = (factor * factor) as f32;
            Video::from_fn(v.frames, h, w, v.channels, |t, y, x, c| {
                let mut acc = 0.0f32;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += v.at(t, y * factor + dy, x * factor + dx, c);
                    }
                }
                acc / area
            })
        }
        ResizeMode::UpNearest => {
            let h = v.height.checked_mul(factor);
            let w = v.width.checked_mul(factor);
            let (h, w) = h
                .zip(w)
                .ok_or_else(|| Error::InvalidExtent("upsampled extent overflows".into()))?;
            Video::from_fn(v.frames, h, w, v.channels, |t, y, x, c| {
                v.at(t, y / factor, x / factor, c)
            })
        }
    }
}

/// Magic bytes of the SIV1 container.
pub const SIV1_MAGIC: [u8; 4] = *b"SIV1";

/// Writes `v` as SIV1: magic, five little-endian u32 `(T, H, W, C, 0)`, then
/// the values as little-endian f32 in row-major order.
pub fn write_siv1<W: Write>(v: &Video, mut out: W) -> Result<()> {
    out.write_all(&SIV1_MAGIC)?;
    for d in v.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} does not fit in u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    out.write_all(&0u32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(v.data.len() * 4);
    for x in &v.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_siv1<R: Read>(mut input: R) -> Result<Video> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != SIV1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut header = [0u32; 5];
    for h in header.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b);
    }
    if header[4] != 0 {
        return Err(Error::Format(format!("reserved header field is {}", header[4])));
    }
    let dims = [
        header[0] as usize,
        header[1] as usize,
        header[2] as usize,
        header[3] as usize,
    ];
    let len = checked_volume(&dims)?;
    let bytes = len
        .checked_mul(4)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut raw = vec![0u8; bytes];
    input.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Video::new(dims[0], dims[1], dims[2], dims[3], data)
}

pub fn save_siv1(v: &Video, path: impl AsRef<Path>) -> Result<()> {
    write_siv1(v, BufWriter::new(File::create(path)?))
}

pub fn load_siv1(path: impl AsRef<Path>) -> Result<Video> {
    read_siv1(BufReader::new(File::open(path)?))
}

/// FNV-1a over the bit patterns of `values`; used for bit-exact history checks.
pub fn checksum(values: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
