//! Quality and structure metrics used by the benches.
//!
//! PSNR assumes a peak of 1.0 and returns `f64::INFINITY` for identical
//! inputs. SSIM uses a uniform 8×8 window slid with stride 1 over every
//! channel, population statistics, `C1 = 1e-4` and `C2 = 9e-4`.

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::error::ensure;
use crate::grid::Video;
use crate::scheduler::SegmentPlan;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn same_dims(a: &Video, b: &Video) -> Result<()> {
    ensure!(a.dims() == b.dims(), ShapeMismatch, "{:?} vs {:?}", a.dims(), b.dims());
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    s / a.len().max(1) as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Video, b: &Video) -> Result<f64> {
    same_dims(a, b)?;
    Ok(psnr_from_mse(mse(a.data(), b.data())))
}

/// `10·log₁₀(Σv² / Σ(v−ṽ)²)` with `clean` as the signal.
pub fn snr(estimate: &Video, clean: &Video) -> Result<f64> {
    same_dims(estimate, clean)?;
    let signal: f64 = clean.data().iter().map(|&v| (v as f64).powi(2)).sum();
    if signal == 0.0 {
        return Err(Error::Undefined("SNR of a zero signal".into()));
    }
    let noise: f64 = clean
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(&v, &e)| (v as f64 - e as f64).powi(2))
        .sum();
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    })
}

/// Mean SSIM of frame `ta` of `a` against frame `tb` of `b`.
fn ssim_frames(a: &Video, ta: usize, b: &Video, tb: usize) -> Result<f64> {
    ensure!(
        a.frame_shape() == b.frame_shape(),
        ShapeMismatch,
        "{:?} vs {:?}",
        a.frame_shape(),
        b.frame_shape()
    );
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        InvalidExtent,
        "frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
    );
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let p = a.at(ta, y, x, c) as f64;
                        let q = b.at(tb, y, x, c) as f64;
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &Video, b: &Video) -> Result<f64> {
    ensure!(
        a.frames() == 1 && b.frames() == 1,
        ShapeMismatch,
        "ssim compares single frames"
    );
    ssim_frames(a, 0, b, 0)
}

/// Mean per-frame SSIM.
pub fn video_ssim(a: &Video, b: &Video) -> Result<f64> {
    same_dims(a, b)?;
    let mut s = 0.0;
    for t in 0..a.frames() {
        s += ssim_frames(a, t, b, t)?;
    }
    Ok(s / a.frames() as f64)
}

/// Mean absolute difference in 0–255 units.
pub fn pixel_diff(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    255.0 * s / a.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub pixel_diff: f64,
}

pub fn frame_metrics(a: &Video, b: &Video) -> Result<FrameMetrics> {
    same_dims(a, b)?;
    ensure!(a.frames() == 1, ShapeMismatch, "frame_metrics compares single frames");
    Ok(FrameMetrics {
        psnr: psnr_from_mse(mse(a.data(), b.data())),
        ssim: ssim_frames(a, 0, b, 0)?,
        pixel_diff: pixel_diff(a.data(), b.data()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    PixelDiff,
    OneMinusSsim,
}

impl Dissimilarity {
    fn between(self, v: &Video, t0: usize, t1: usize) -> Result<f64> {
        Ok(match self {
            Dissimilarity::PixelDiff => pixel_diff(v.frame_data(t0), v.frame_data(t1)),
            Dissimilarity::OneMinusSsim => 1.0 - ssim_frames(v, t0, v, t1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub metric: Dissimilarity,
    /// 1-based `(last frame of segment s, first frame of segment s+1)`.
    pub boundary_pairs: Vec<(usize, usize)>,
    pub boundary_mean: f64,
    pub nonboundary_mean: f64,
    /// `None` when the non-boundary mean is zero.
    pub gap_pct: Option<f64>,
}

fn segment_frames(plan: &SegmentPlan, cfg: &CodecConfig, s: usize) -> (usize, usize) {
    let seg = &plan.segments[s - 1];
    let first = seg.noisy.first().copied().unwrap_or(2);
    let last = seg.noisy.last().copied().unwrap_or(first);
    (cfg.block_frames(first).0, cfg.block_frames(last).1)
}

/// Consecutive frame pairs that straddle a segment boundary.
pub fn boundary_pairs(plan: &SegmentPlan, cfg: &CodecConfig) -> Vec<(usize, usize)> {
    (1..plan.s)
        .map(|s| (segment_frames(plan, cfg, s).1, segment_frames(plan, cfg, s + 1).0))
        .collect()
}

fn check_frames(video: &Video, plan: &SegmentPlan, cfg: &CodecConfig) -> Result<()> {
    let want = cfg.pixel_frames(plan.t);
    ensure!(
        video.frames() == want,
        ShapeMismatch,
        "video has {} frames, plan with {} blocks covers {want}",
        video.frames(),
        plan.t
    );
    Ok(())
}

pub fn boundary_gap(
    video: &Video,
    plan: &SegmentPlan,
    cfg: &CodecConfig,
    metric: Dissimilarity,
) -> Result<BoundaryReport> {
    check_frames(video, plan, cfg)?;
    let pairs = boundary_pairs(plan, cfg);
    let (mut b_sum, mut b_n, mut o_sum, mut o_n) = (0.0, 0usize, 0.0, 0usize);
    for f in 1..video.frames() {
        let d = metric.between(video, f - 1, f)?;
        if pairs.contains(&(f, f + 1)) {
            b_sum += d;
            b_n += 1;
        } else {
            o_sum += d;
            o_n += 1;
        }
    }
    let boundary_mean = if b_n > 0 { b_sum / b_n as f64 } else { 0.0 };
    let nonboundary_mean = if o_n > 0 { o_sum / o_n as f64 } else { 0.0 };
    let gap_pct = (nonboundary_mean > 0.0).then(|| (boundary_mean - nonboundary_mean) / nonboundary_mean * 100.0);
    Ok(BoundaryReport {
        metric,
        boundary_pairs: pairs,
        boundary_mean,
        nonboundary_mean,
        gap_pct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub slope: f64,
    pub intercept: f64,
    /// 1 by convention when `y` has no variance.
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn trend_fit(points: &[(f64, f64)]) -> Result<TrendReport> {
    ensure!(points.len() >= 2, InvalidArgument, "need at least two points");
    ensure!(
        points.iter().all(|(x, y)| x.is_finite() && y.is_finite()),
        InvalidArgument,
        "non-finite point"
    );
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    ensure!(sxx > 0.0, InvalidArgument, "x values are all equal");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(TrendReport {
        slope,
        intercept,
        r2,
        points: points.to_vec(),
    })
}

/// PSNR of `generated` against `truth` over each segment's frame coverage.
pub fn segment_quality_series(
    generated: &Video,
    truth: &Video,
    plan: &SegmentPlan,
    cfg: &CodecConfig,
) -> Result<Vec<f64>> {
    same_dims(generated, truth)?;
    check_frames(generated, plan, cfg)?;
    (1..=plan.s)
        .map(|s| {
            let (first, last) = segment_frames(plan, cfg, s);
            let n = generated.frame_len();
            let range = (first - 1) * n..last * n;
            Ok(psnr_from_mse(mse(
                &generated.data()[range.clone()],
                &truth.data()[range],
            )))
        })
        .collect()
}
