//! End-to-end plumbing shared by the subcommands: corpus, training, two-stage
//! generation and checkpoints.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use crate::codec::{Codec, CodecConfig};
use crate::conditioning::{build_hybrid_reference, StageTwoInput};
use crate::error::ensure;
use crate::grid::{load_siv1, resize_spatial, ResizeMode, Video};
use crate::mixer::{load_params, save_params, MaskMode, SigmaSchedule};
use crate::scheduler::{plan, SegmentPlan};
use crate::stage1::{self, Stage1Model};
use crate::stage2::{self, infer_csg_observed, ClipPair, CsgEvent, PairSource, Stage2Model, TrainRecord, TrainingClip};
use crate::synth::{default_corpus, load_manifest, render_scene_with, save_manifest, SceneSpec};
use crate::transition::{synthesize_pair, TransitionConfig};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train_specs: Vec<SceneSpec>,
    pub val_specs: Vec<SceneSpec>,
    pub train: Vec<Video>,
    pub val: Vec<Video>,
}

/// Seeded scene specs, split into train and validation.
pub fn default_specs(cfg: &RunConfig) -> (Vec<SceneSpec>, Vec<SceneSpec>) {
    let mut all = default_corpus(
        cfg.seed,
        cfg.train_clips + cfg.val_clips,
        cfg.motif,
        cfg.frames,
        cfg.size,
    );
    let val = all.split_off(cfg.train_clips);
    (all, val)
}

pub fn save_corpus_manifests(train: &[SceneSpec], val: &[SceneSpec], dir: &Path) -> Result<()> {
    save_manifest(train, dir.join("train.json"))?;
    save_manifest(val, dir.join("val.json"))
}

/// Loads `train.json` and `val.json` from `cfg.corpus`, or builds the default
/// corpus, and renders every clip.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let (train_specs, val_specs) = match &cfg.corpus {
        Some(dir) => (
            load_manifest(dir.join("train.json"))?,
            load_manifest(dir.join("val.json"))?,
        ),
        None => default_specs(cfg),
    };
    ensure!(
        !train_specs.is_empty() && !val_specs.is_empty(),
        InvalidArgument,
        "corpus splits must be non-empty"
    );
    let render = |specs: &[SceneSpec]| -> Result<Vec<Video>> {
        specs
            .iter()
            .map(|s| {
                ensure!(
                    s.frames == cfg.frames && s.height == cfg.size && s.width == cfg.size,
                    ShapeMismatch,
                    "scene {}x{}x{} does not match config {}x{}x{}",
                    s.frames,
                    s.height,
                    s.width,
                    cfg.frames,
                    cfg.size,
                    cfg.size
                );
                render_scene_with(s, cfg.codec.spatial * cfg.lr_factor, cfg.codec.temporal)
            })
            .collect()
    };
    Ok(Corpus {
        train: render(&train_specs)?,
        val: render(&val_specs)?,
        train_specs,
        val_specs,
    })
}

fn schedule(cfg: &RunConfig) -> Result<SigmaSchedule> {
    SigmaSchedule::uniform(cfg.steps)
}

pub fn downsample(cfg: &RunConfig, v: &Video) -> Result<Video> {
    resize_spatial(v, ResizeMode::DownAvg, cfg.lr_factor)
}

pub fn new_stage1(cfg: &RunConfig) -> Result<Stage1Model> {
    Stage1Model::new(cfg.codec, cfg.lr_block(), cfg.hidden, schedule(cfg)?, cfg.seed)
}

pub fn train_stage1(cfg: &RunConfig, corpus: &Corpus) -> Result<(Stage1Model, Vec<f32>)> {
    let mut model = new_stage1(cfg)?;
    let clips = corpus
        .train
        .iter()
        .map(|v| model.codec.encode(&downsample(cfg, v)?))
        .collect::<Result<Vec<_>>>()?;
    let losses = stage1::train(&mut model, &clips, cfg.train_steps, cfg.learning_rate, cfg.seed)?;
    ensure!(model.params.is_finite(), Worker, "Stage I training diverged");
    Ok((model, losses))
}

/// Builds one training pair per clip: the transition flavour uses a Stage I
/// re-denoised LR clip, the downsampled flavour the clean `Down(V)`.
pub fn stage2_clips(cfg: &RunConfig, stage1: &Stage1Model, hr: &[Video]) -> Result<Vec<ClipPair>> {
    let codec = &stage1.codec;
    hr.iter()
        .enumerate()
        .map(|(k, v)| {
            let x = v.frame(0);
            let z0 = codec.encode(v)?;
            let tcfg = TransitionConfig {
                seed: cfg.transition.seed.wrapping_add(k as u64),
                ..cfg.transition
            };
            let pair = synthesize_pair(v, stage1, &tcfg, cfg.lr_factor)?;
            let tr = StageTwoInput::encode(codec, &build_hybrid_reference(&pair.lr_tilde, &x, cfg.lr_factor)?, &x)?;
            let ds = StageTwoInput::encode(codec, &build_hybrid_reference(&pair.lr_clean, &x, cfg.lr_factor)?, &x)?;
            Ok(ClipPair {
                transition: TrainingClip::new(z0.clone(), tr, PairSource::Transition)?,
                downsampled: TrainingClip::new(z0, ds, PairSource::Downsampled)?,
            })
        })
        .collect()
}

pub fn new_stage2(cfg: &RunConfig, mask: MaskMode, seed: u64) -> Result<Stage2Model> {
    Stage2Model::new(cfg.hr_block(), cfg.hidden, schedule(cfg)?, mask, seed)
}

pub fn train_stage2(
    cfg: &RunConfig,
    clips: &[ClipPair],
    mask: MaskMode,
    seed: u64,
) -> Result<(Stage2Model, Vec<TrainRecord>)> {
    let mut model = new_stage2(cfg, mask, seed)?;
    let log = stage2::train(&mut model, clips, cfg.train_steps, cfg.learning_rate, seed)?;
    ensure!(model.params.is_finite(), Worker, "Stage II training diverged");
    Ok((model, log))
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage1Meta {
    codec: CodecConfig,
    block_hw: (usize, usize),
    sigmas: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage2Meta {
    block_shape: [usize; 3],
    sigmas: Vec<f32>,
}

pub fn save_stage1(model: &Stage1Model, stem: &Path) -> Result<()> {
    let meta = Stage1Meta {
        codec: *model.codec.config(),
        block_hw: model.block_hw,
        sigmas: model.schedule.sigmas().to_vec(),
    };
    save_params(&model.params, stem, serde_json::to_value(meta)?)
}

pub fn load_stage1(stem: &Path) -> Result<Stage1Model> {
    let (params, extra) = load_params(stem)?;
    let meta: Stage1Meta = serde_json::from_value(extra)?;
    Ok(Stage1Model {
        params,
        codec: Codec::new(meta.codec)?,
        schedule: SigmaSchedule::from_sigmas(meta.sigmas)?,
        block_hw: meta.block_hw,
    })
}

pub fn save_stage2(model: &Stage2Model, stem: &Path) -> Result<()> {
    let meta = Stage2Meta {
        block_shape: model.block_shape,
        sigmas: model.schedule.sigmas().to_vec(),
    };
    save_params(&model.params, stem, serde_json::to_value(meta)?)
}

pub fn load_stage2(stem: &Path) -> Result<Stage2Model> {
    let (params, extra) = load_params(stem)?;
    let meta: Stage2Meta = serde_json::from_value(extra)?;
    Ok(Stage2Model {
        params,
        schedule: SigmaSchedule::from_sigmas(meta.sigmas)?,
        block_shape: meta.block_shape,
    })
}

/// Both trained stages, loaded from checkpoints where configured.
pub struct Models {
    pub stage1: Stage1Model,
    pub stage2: Stage2Model,
    pub stage1_losses: Vec<f32>,
    pub stage2_log: Vec<TrainRecord>,
}

pub fn obtain_stage1(cfg: &RunConfig, corpus: &Corpus) -> Result<(Stage1Model, Vec<f32>)> {
    match &cfg.stage1_checkpoint {
        Some(stem) => Ok((load_stage1(stem)?, Vec::new())),
        None => train_stage1(cfg, corpus),
    }
}

pub fn obtain_models(cfg: &RunConfig, corpus: &Corpus) -> Result<Models> {
    let (stage1, stage1_losses) = obtain_stage1(cfg, corpus)?;
    let (stage2, stage2_log) = match &cfg.stage2_checkpoint {
        Some(stem) => (load_stage2(stem)?, Vec::new()),
        None => {
            let clips = stage2_clips(cfg, &stage1, &corpus.train)?;
            train_stage2(cfg, &clips, cfg.mask, cfg.seed)?
        }
    };
    ensure!(
        stage2.block_shape == cfg.hr_block(),
        ShapeMismatch,
        "Stage II checkpoint blocks {:?} vs config {:?}",
        stage2.block_shape,
        cfg.hr_block()
    );
    Ok(Models {
        stage1,
        stage2,
        stage1_losses,
        stage2_log,
    })
}

/// Stage I output and the Stage II conditioning built from it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub lr: Video,
    pub hybrid: Video,
    pub input: StageTwoInput,
    pub plan: SegmentPlan,
}

pub fn prepare(cfg: &RunConfig, stage1: &Stage1Model, x: &Video, seed: u64) -> Result<Prepared> {
    ensure!(x.frames() == 1, ShapeMismatch, "input image must be a single frame");
    ensure!(
        x.height() == cfg.size && x.width() == cfg.size,
        ShapeMismatch,
        "input is {}x{}, config expects {}x{}",
        x.height(),
        x.width(),
        cfg.size,
        cfg.size
    );
    let lr = stage1::generate_lr(stage1, &downsample(cfg, x)?, cfg.frames, seed)?;
    let hybrid = build_hybrid_reference(&lr, x, cfg.lr_factor)?;
    let input = StageTwoInput::encode(&stage1.codec, &hybrid, x)?;
    let plan = plan(input.blocks(), cfg.m, cfg.n)?;
    Ok(Prepared {
        lr,
        hybrid,
        input,
        plan,
    })
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub prepared: Prepared,
    pub latents: Video,
    pub video: Video,
    pub forward_count: usize,
    pub stage2_ms: f64,
}

/// Stage I, hybrid reference, CSG Stage II and decode.
pub fn generate(cfg: &RunConfig, models: &Models, x: &Video, seed: u64) -> Result<Generation> {
    let prepared = prepare(cfg, &models.stage1, x, seed)?;
    let (latents, forward_count, stage2_ms) = run_stage2(&models.stage2, &prepared.input, &prepared.plan, seed)?;
    let video = models.stage1.codec.decode(&latents)?;
    Ok(Generation {
        prepared,
        latents,
        video,
        forward_count,
        stage2_ms,
    })
}

/// CSG inference returning latents, forward-pass count and wall time.
pub fn run_stage2(
    model: &Stage2Model,
    input: &StageTwoInput,
    plan: &SegmentPlan,
    seed: u64,
) -> Result<(Video, usize, f64)> {
    let mut forwards = 0usize;
    let began = Instant::now();
    let z = infer_csg_observed(model, input, plan, seed, |e| {
        if let CsgEvent::Step { .. } = e {
            forwards += 1;
        }
    })?;
    Ok((z, forwards, began.elapsed().as_secs_f64() * 1e3))
}

/// The configured input image, or the first frame of validation clip 0.
pub fn input_image(cfg: &RunConfig, corpus: &Corpus) -> Result<Video> {
    match &cfg.input {
        Some(path) => {
            let v = load_siv1(path)?;
            ensure!(
                v.frames() == 1,
                ShapeMismatch,
                "input image must hold exactly one frame"
            );
            Ok(v)
        }
        None => corpus
            .val
            .first()
            .map(|v| v.frame(0))
            .ok_or_else(|| Error::InvalidArgument("empty validation split".into())),
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn plan_json(p: &SegmentPlan) -> serde_json::Value {
    json!({ "t": p.t, "M": p.m, "N": p.n, "S": p.s, "starts": p.starts(), "sizes": p.sizes() })
}
