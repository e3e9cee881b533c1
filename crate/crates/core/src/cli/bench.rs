//! Benchmarks and sweeps. Each writes its artifacts into `out` and returns
//! the numbers it wrote.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pipeline::{
    self, downsample, generate, new_stage2, prepare, run_stage2, stage2_clips, train_stage2, write_csv, write_json,
    Corpus, Models,
};
use crate::codec::Codec;
use crate::conditioning::{build_hybrid_reference, StageTwoInput};
use crate::error::ensure;
use crate::grid::{save_siv1, Video};
use crate::metrics::{
    boundary_gap, psnr, segment_quality_series, trend_fit, BoundaryReport, Dissimilarity, TrendReport,
};
use crate::mixer::MaskMode;
use crate::scheduler::{plan, token_budget, SegmentPlan};
use crate::stage1::Stage1Model;
use crate::stage2::TRAIN_SEGMENTATIONS;
use crate::streamer::{
    predict_timing, replay_agrees, run_streaming, write_event_log, EventKind, StreamOptions, TimingModel, TimingReport,
};
use crate::synth::{default_corpus, render_scene_with};
use crate::transition::{diagnostics, synthesize_pair, write_pair_manifest, PairRecord, TransitionConfig};
use crate::Result;

pub const SCALING_FRAMES: [usize; 5] = [17, 33, 49, 65, 81];
pub const TRANSITION_SIGMAS: [f32; 5] = [0.01, 0.1, 0.3, 0.5, 0.7];

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn max_tokens(p: &SegmentPlan, block: [usize; 3]) -> usize {
    token_budget(p, block[0], block[1]).into_iter().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "T")]
    pub frames: usize,
    pub t: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub max_tokens: usize,
    pub forward_count: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub forward_fit: TrendReport,
    pub wall_fit: TrendReport,
}

/// Stage II inference cost per clip length. The mixer is freshly initialised;
/// cost does not depend on the weights.
pub fn scaling(cfg: &RunConfig, out: &Path) -> Result<ScalingReport> {
    let codec = Codec::new(cfg.codec)?;
    let model = new_stage2(cfg, cfg.mask, cfg.seed)?;
    let mut cases = Vec::new();
    for frames in SCALING_FRAMES {
        let spec = &default_corpus(cfg.seed, 1, cfg.motif, frames, cfg.size)[0];
        let v = render_scene_with(spec, cfg.codec.spatial * cfg.lr_factor, cfg.codec.temporal)?;
        let x = v.frame(0);
        let hybrid = build_hybrid_reference(&downsample(cfg, &v)?, &x, cfg.lr_factor)?;
        let input = StageTwoInput::encode(&codec, &hybrid, &x)?;
        let p = plan(input.blocks(), cfg.m, cfg.n)?;
        let (_, forward_count, _) = run_stage2(&model, &input, &p, cfg.seed)?;
        cases.push((frames, input, p, forward_count, Vec::with_capacity(cfg.bench_reps)));
    }
    for _ in 0..cfg.bench_reps {
        for (_, input, p, _, walls) in cases.iter_mut() {
            let (_, _, ms) = run_stage2(&model, input, p, cfg.seed)?;
            walls.push(ms);
        }
    }
    let rows: Vec<ScalingRow> = cases
        .into_iter()
        .map(|(frames, _, p, forward_count, walls)| ScalingRow {
            frames,
            t: p.t,
            s: p.s,
            max_tokens: max_tokens(&p, cfg.hr_block()),
            forward_count,
            wall_ms: median(walls),
        })
        .collect();
    let forward_fit = trend_fit(
        &rows
            .iter()
            .map(|r| (r.s as f64, r.forward_count as f64))
            .collect::<Vec<_>>(),
    )?;
    let wall_fit = trend_fit(&rows.iter().map(|r| (r.s as f64, r.wall_ms)).collect::<Vec<_>>())?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{:.4}",
                r.frames, r.t, r.s, r.max_tokens, r.forward_count, r.wall_ms
            )
        })
        .collect();
    write_csv(
        &out.join("scaling.csv"),
        "T,t,S,max_tokens,forward_count,wall_ms",
        &lines,
    )?;
    let report = ScalingReport {
        rows,
        forward_fit,
        wall_fit,
    };
    write_json(&out.join("scaling_fit.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipBoundary {
    pub clip: usize,
    pub pixel_diff: BoundaryReport,
    pub one_minus_ssim: BoundaryReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryBench {
    pub plan: serde_json::Value,
    pub clips: Vec<ClipBoundary>,
    /// Pooled over clips: means of the per-clip means.
    pub pixel_diff: BoundaryReport,
    pub one_minus_ssim: BoundaryReport,
}

fn pool(reports: &[&BoundaryReport]) -> BoundaryReport {
    let n = reports.len().max(1) as f64;
    let boundary_mean = reports.iter().map(|r| r.boundary_mean).sum::<f64>() / n;
    let nonboundary_mean = reports.iter().map(|r| r.nonboundary_mean).sum::<f64>() / n;
    BoundaryReport {
        metric: reports[0].metric,
        boundary_pairs: reports[0].boundary_pairs.clone(),
        boundary_mean,
        nonboundary_mean,
        gap_pct: (nonboundary_mean > 0.0).then(|| (boundary_mean - nonboundary_mean) / nonboundary_mean * 100.0),
    }
}

/// Boundary versus interior temporal dissimilarity of generated validation
/// clips.
pub fn boundary(cfg: &RunConfig, corpus: &Corpus, models: &Models, out: &Path) -> Result<BoundaryBench> {
    let mut clips = Vec::new();
    let mut plan_value = serde_json::Value::Null;
    for (k, truth) in corpus.val.iter().enumerate() {
        let g = generate(cfg, models, &truth.frame(0), cfg.seed)?;
        let p = &g.prepared.plan;
        plan_value = pipeline::plan_json(p);
        clips.push(ClipBoundary {
            clip: k,
            pixel_diff: boundary_gap(&g.video, p, &cfg.codec, Dissimilarity::PixelDiff)?,
            one_minus_ssim: boundary_gap(&g.video, p, &cfg.codec, Dissimilarity::OneMinusSsim)?,
        });
        if k == 0 {
            save_siv1(&g.video, out.join("boundary_clip0.siv1"))?;
        }
    }
    ensure!(!clips.is_empty(), InvalidArgument, "no validation clips");
    let report = BoundaryBench {
        plan: plan_value,
        pixel_diff: pool(&clips.iter().map(|c| &c.pixel_diff).collect::<Vec<_>>()),
        one_minus_ssim: pool(&clips.iter().map(|c| &c.one_minus_ssim).collect::<Vec<_>>()),
        clips,
    };
    write_json(&out.join("boundary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub bidirectional: TrendReport,
    pub causal: TrendReport,
    pub bidirectional_not_worse: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccumulationReport {
    pub seeds: Vec<SeedComparison>,
    pub bidirectional_wins: usize,
}

/// Mean per-segment PSNR against ground truth over the validation clips.
pub fn segment_series(cfg: &RunConfig, corpus: &Corpus, models: &Models, seed: u64) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for truth in &corpus.val {
        let g = generate(cfg, models, &truth.frame(0), seed)?;
        let s = segment_quality_series(&g.video, truth, &g.prepared.plan, &cfg.codec)?;
        if acc.is_empty() {
            acc = vec![0.0; s.len()];
        }
        acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }
    let n = corpus.val.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn slope_of(series: &[f64]) -> Result<TrendReport> {
    let pts: Vec<(f64, f64)> = series.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect();
    trend_fit(&pts)
}

/// Paired Stage II trainings differing only in the mask mode, one pair per
/// seed, compared by the slope of their per-segment PSNR.
pub fn accumulation(cfg: &RunConfig, corpus: &Corpus, stage1: &Stage1Model, out: &Path) -> Result<AccumulationReport> {
    let clips = stage2_clips(cfg, stage1, &corpus.train)?;
    let mut seeds = Vec::new();
    let mut lines = Vec::new();
    for k in 0..cfg.accumulation_seeds {
        let seed = cfg.seed.wrapping_add(k as u64);
        let mut fits = Vec::new();
        for mask in [MaskMode::Bidirectional, MaskMode::Causal] {
            let (stage2, _) = train_stage2(cfg, &clips, mask, seed)?;
            let models = Models {
                stage1: stage1.clone(),
                stage2,
                stage1_losses: Vec::new(),
                stage2_log: Vec::new(),
            };
            let series = segment_series(cfg, corpus, &models, seed)?;
            let name = serde_json::to_value(mask)?.as_str().unwrap_or("").to_string();
            for (s, y) in series.iter().enumerate() {
                lines.push(format!("{seed},{name},{},{y}", s + 1));
            }
            fits.push(slope_of(&series)?);
        }
        let causal = fits.pop().unwrap_or_else(|| unreachable!());
        let bidirectional = fits.pop().unwrap_or_else(|| unreachable!());
        seeds.push(SeedComparison {
            seed,
            bidirectional_not_worse: bidirectional.slope >= causal.slope,
            bidirectional,
            causal,
        });
    }
    write_csv(&out.join("accumulation.csv"), "seed,mask,segment,psnr", &lines)?;
    let report = AccumulationReport {
        bidirectional_wins: seeds.iter().filter(|s| s.bidirectional_not_worse).count(),
        seeds,
    };
    write_json(&out.join("accumulation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamingReport {
    pub queue_capacity: usize,
    pub measured_ms: TimingModel,
    pub predicted_ms: TimingReport,
    pub observed_first_output_ms: f64,
    pub observed_full_output_ms: f64,
    pub first_emit_before_last_denoise: bool,
    pub replay_agrees: bool,
}

/// Streams one generation and compares observed and modelled timing.
pub fn streaming(cfg: &RunConfig, corpus: &Corpus, models: &Models, out: &Path) -> Result<StreamingReport> {
    let x = pipeline::input_image(cfg, corpus)?;
    let prepared = prepare(cfg, &models.stage1, &x, cfg.seed)?;
    let opts = StreamOptions::with_capacity(cfg.queue_capacity);
    let run = run_streaming(
        &models.stage2,
        &prepared.input,
        &prepared.plan,
        &models.stage1.codec,
        cfg.seed,
        &opts,
    )
    .map_err(|e| e.error)?;
    write_event_log(&run.events, fs::File::create(out.join("events.csv"))?)?;
    save_siv1(&run.video, out.join("stream.siv1"))?;
    let report = streaming_report(cfg.queue_capacity, &run.events, &run.measured)?;
    write_json(&out.join("streaming.json"), &report)?;
    Ok(report)
}

pub fn streaming_report(
    queue_capacity: usize,
    events: &[crate::streamer::StreamEvent],
    measured: &TimingModel,
) -> Result<StreamingReport> {
    let first = events.iter().find(|e| e.kind == EventKind::FramesEmitted);
    let last_emit = events.iter().rev().find(|e| e.kind == EventKind::FramesEmitted);
    let last_denoise = events.iter().rev().find(|e| e.kind == EventKind::SegmentDenoised);
    let first_pos = events.iter().position(|e| e.kind == EventKind::FramesEmitted);
    let last_denoise_pos = events.iter().rposition(|e| e.kind == EventKind::SegmentDenoised);
    Ok(StreamingReport {
        queue_capacity,
        predicted_ms: predict_timing(measured)?,
        measured_ms: measured.clone(),
        observed_first_output_ms: first.map_or(f64::NAN, |e| e.t_ms),
        observed_full_output_ms: last_emit.map_or(f64::NAN, |e| e.t_ms),
        first_emit_before_last_denoise: matches!((first_pos, last_denoise_pos, last_denoise), (Some(a), Some(b), Some(_)) if a < b),
        replay_agrees: replay_agrees(events, measured, queue_capacity, 1.0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub max_tokens: usize,
    pub forward_count: usize,
    pub psnr_db: f64,
    pub boundary_gap_pct: Option<f64>,
    pub wall_ms: f64,
}

/// Segmentation sweep over `{2,3} × {1,2}` with one trained model.
pub fn ablate_mn(cfg: &RunConfig, corpus: &Corpus, models: &Models, out: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (m, n) in TRAIN_SEGMENTATIONS {
        let run_cfg = RunConfig { m, n, ..cfg.clone() };
        let (mut psnr_sum, mut b_sum, mut o_sum, mut wall) = (0.0, 0.0, 0.0, 0.0);
        let mut last = None;
        for truth in &corpus.val {
            let g = generate(&run_cfg, models, &truth.frame(0), cfg.seed)?;
            psnr_sum += psnr(&g.video, truth)?;
            let b = boundary_gap(&g.video, &g.prepared.plan, &cfg.codec, Dissimilarity::PixelDiff)?;
            b_sum += b.boundary_mean;
            o_sum += b.nonboundary_mean;
            wall += g.stage2_ms;
            last = Some(g);
        }
        let Some(g) = last else {
            return Err(crate::Error::InvalidArgument("no validation clips".into()));
        };
        let k = corpus.val.len() as f64;
        rows.push(AblationRow {
            m,
            n,
            s: g.prepared.plan.s,
            max_tokens: max_tokens(&g.prepared.plan, cfg.hr_block()),
            forward_count: g.forward_count,
            psnr_db: psnr_sum / k,
            boundary_gap_pct: (o_sum > 0.0).then(|| (b_sum - o_sum) / o_sum * 100.0),
            wall_ms: wall / k,
        });
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            let gap = r.boundary_gap_pct.map_or(String::new(), |g| g.to_string());
            format!(
                "{},{},{},{},{},{},{gap},{:.4}",
                r.m, r.n, r.s, r.max_tokens, r.forward_count, r.psnr_db, r.wall_ms
            )
        })
        .collect();
    write_csv(
        &out.join("ablate_mn.csv"),
        "M,N,S,max_tokens,forward_count,psnr_db,boundary_gap_pct,wall_ms",
        &lines,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f32,
    pub steps: usize,
    pub snr_db: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Writes transition pairs at the configured σ and a diagnostics sweep over
/// [`TRANSITION_SIGMAS`], averaged over the validation clips.
pub fn transition(cfg: &RunConfig, corpus: &Corpus, stage1: &Stage1Model, out: &Path) -> Result<Vec<SweepRow>> {
    let pairs_dir = out.join("pairs");
    fs::create_dir_all(&pairs_dir)?;
    let mut records = Vec::new();
    for (k, v) in corpus.train.iter().enumerate() {
        let tcfg = TransitionConfig {
            seed: cfg.transition.seed.wrapping_add(k as u64),
            ..cfg.transition
        };
        let pair = synthesize_pair(v, stage1, &tcfg, cfg.lr_factor)?;
        let hr = format!("clip{k:03}.hr.siv1");
        let lr = format!("clip{k:03}.lr_tilde.siv1");
        save_siv1(&pair.hr, pairs_dir.join(&hr))?;
        save_siv1(&pair.lr_tilde, pairs_dir.join(&lr))?;
        records.push(PairRecord {
            hr,
            lr_tilde: lr,
            sigma: tcfg.sigma,
            steps: tcfg.steps,
            seed: tcfg.seed,
        });
    }
    write_pair_manifest(&records, fs::File::create(pairs_dir.join("pairs.jsonl"))?)?;
    let rows = sigma_sweep(cfg, &corpus.val, stage1, &TRANSITION_SIGMAS)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{},{}", r.sigma, r.steps, r.snr_db, r.psnr_db, r.ssim))
        .collect();
    write_csv(
        &out.join("transition_sweep.csv"),
        "sigma,steps,snr_db,psnr_db,ssim",
        &lines,
    )?;
    Ok(rows)
}

pub fn sigma_sweep(cfg: &RunConfig, clips: &[Video], stage1: &Stage1Model, sigmas: &[f32]) -> Result<Vec<SweepRow>> {
    ensure!(!clips.is_empty(), InvalidArgument, "no clips to sweep");
    sigmas
        .iter()
        .map(|&sigma| {
            let (mut snr, mut psnr_db, mut ssim) = (0.0, 0.0, 0.0);
            for (k, v) in clips.iter().enumerate() {
                let tcfg = TransitionConfig {
                    sigma,
                    seed: cfg.transition.seed.wrapping_add(k as u64),
                    ..cfg.transition
                };
                let pair = synthesize_pair(v, stage1, &tcfg, cfg.lr_factor)?;
                let d = diagnostics(&pair.lr_tilde, &pair.lr_clean)?;
                snr += d.snr_db;
                psnr_db += d.psnr_db;
                ssim += d.ssim;
            }
            let n = clips.len() as f64;
            Ok(SweepRow {
                sigma,
                steps: cfg.transition.steps,
                snr_db: snr / n,
                psnr_db: psnr_db / n,
                ssim: ssim / n,
            })
        })
        .collect()
}
