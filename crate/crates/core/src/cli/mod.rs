//! Command-line front end. Every subcommand resolves a [`RunConfig`], echoes
//! it to `config.resolved.json` under `--out`, and writes its artifacts there.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime failure.

pub mod bench;
pub mod config;
pub mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::grid::save_siv1;
use crate::mixer::MaskMode;
use crate::stage2::write_train_log;
use crate::streamer::{run_streaming, write_event_log, StreamOptions};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "segvid", version, about = "Segment-wise two-stage image-to-video toolkit")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Segment length.
    #[arg(long = "M", global = true)]
    m: Option<usize>,
    /// Neighbour blocks per window.
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    /// Denoising steps per segment.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Attention mask: bi or causal.
    #[arg(long, global = true)]
    mask: Option<MaskMode>,
    /// Pixel frames per clip.
    #[arg(long, global = true)]
    frames: Option<usize>,
    #[arg(long, global = true)]
    train_steps: Option<usize>,
    #[arg(long, global = true)]
    queue_capacity: Option<usize>,
    /// Corpus directory holding train.json and val.json.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Stage I checkpoint stem.
    #[arg(long, global = true)]
    stage1: Option<PathBuf>,
    /// Stage II checkpoint stem.
    #[arg(long, global = true)]
    stage2: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic corpus.
    Synth,
    /// Train the low-resolution motion generator.
    TrainStage1,
    /// Train the segment-wise high-resolution generator.
    TrainStage2,
    /// Two-stage generation from an input image.
    Generate {
        /// Run the streaming runtime and write its event log.
        #[arg(long)]
        stream: bool,
        /// Single-frame SIV1 input image.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
    /// Segmentation sweep over M in {2,3} and N in {1,2}.
    AblateMn,
    /// Stage-transition pairs and sigma sweep.
    Transition,
}

#[derive(Debug, Subcommand)]
enum BenchKind {
    Scaling,
    Boundary,
    Accumulation,
    Streaming,
}

fn resolve(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = o.$field.clone() { $target = v; })*
        };
    }
    set!(seed => cfg.seed, out => cfg.out, m => cfg.m, n => cfg.n, steps => cfg.steps, mask => cfg.mask,
         frames => cfg.frames, train_steps => cfg.train_steps, queue_capacity => cfg.queue_capacity);
    if o.corpus.is_some() {
        cfg.corpus = o.corpus.clone();
    }
    if o.stage1.is_some() {
        cfg.stage1_checkpoint = o.stage1.clone();
    }
    if o.stage2.is_some() {
        cfg.stage2_checkpoint = o.stage2.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.overrides)?;
    if let Command::Generate { input: Some(p), .. } = &cli.command {
        cfg.input = Some(p.clone());
    }
    let out = cfg.out.clone();
    fs::create_dir_all(&out)?;
    cfg.write_resolved(&out)?;
    match cli.command {
        Command::Synth => synth(&cfg, &out),
        Command::TrainStage1 => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let (model, losses) = pipeline::train_stage1(&cfg, &corpus)?;
            pipeline::save_stage1(&model, &out.join("stage1"))?;
            let rows: Vec<String> = losses
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{},{l}", i + 1))
                .collect();
            pipeline::write_csv(&out.join("stage1_train.csv"), "step,loss", &rows)?;
            println!(
                "stage1: {} steps, final loss {}",
                losses.len(),
                losses.last().copied().unwrap_or(f32::NAN)
            );
            Ok(())
        }
        Command::TrainStage2 => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let (stage1, _) = pipeline::obtain_stage1(&cfg, &corpus)?;
            let clips = pipeline::stage2_clips(&cfg, &stage1, &corpus.train)?;
            let (model, log) = pipeline::train_stage2(&cfg, &clips, cfg.mask, cfg.seed)?;
            if cfg.stage1_checkpoint.is_none() {
                pipeline::save_stage1(&stage1, &out.join("stage1"))?;
            }
            pipeline::save_stage2(&model, &out.join("stage2"))?;
            write_train_log(&log, fs::File::create(out.join("stage2_train.csv"))?)?;
            println!(
                "stage2: {} steps, final loss {}",
                log.len(),
                log.last().map_or(f32::NAN, |r| r.loss)
            );
            Ok(())
        }
        Command::Generate { stream, .. } => generate(&cfg, &out, stream),
        Command::Bench { kind } => {
            match kind {
                BenchKind::Scaling => {
                    let r = bench::scaling(&cfg, &out)?;
                    println!(
                        "scaling: forward r2 {:.6}, wall r2 {:.4}",
                        r.forward_fit.r2, r.wall_fit.r2
                    );
                }
                BenchKind::Boundary => {
                    let corpus = pipeline::load_corpus(&cfg)?;
                    let models = pipeline::obtain_models(&cfg, &corpus)?;
                    let r = bench::boundary(&cfg, &corpus, &models, &out)?;
                    println!(
                        "boundary: {} pairs, pixel_diff gap {:?}%, 1-ssim gap {:?}%",
                        r.pixel_diff.boundary_pairs.len(),
                        r.pixel_diff.gap_pct,
                        r.one_minus_ssim.gap_pct
                    );
                }
                BenchKind::Accumulation => {
                    let corpus = pipeline::load_corpus(&cfg)?;
                    let (stage1, _) = pipeline::obtain_stage1(&cfg, &corpus)?;
                    let r = bench::accumulation(&cfg, &corpus, &stage1, &out)?;
                    println!(
                        "accumulation: bidirectional slope >= causal in {}/{} seeds",
                        r.bidirectional_wins,
                        r.seeds.len()
                    );
                }
                BenchKind::Streaming => {
                    let corpus = pipeline::load_corpus(&cfg)?;
                    let models = pipeline::obtain_models(&cfg, &corpus)?;
                    let r = bench::streaming(&cfg, &corpus, &models, &out)?;
                    println!(
                        "streaming: first output {:.2} ms, full {:.2} ms, predicted full {:.2} ms",
                        r.observed_first_output_ms, r.observed_full_output_ms, r.predicted_ms.full_output
                    );
                }
            }
            Ok(())
        }
        Command::AblateMn => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let models = pipeline::obtain_models(&cfg, &corpus)?;
            let rows = bench::ablate_mn(&cfg, &corpus, &models, &out)?;
            println!("ablate-mn: {} rows", rows.len());
            Ok(())
        }
        Command::Transition => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let (stage1, _) = pipeline::obtain_stage1(&cfg, &corpus)?;
            let rows = bench::transition(&cfg, &corpus, &stage1, &out)?;
            println!("transition: {} sigma rows", rows.len());
            Ok(())
        }
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = out.join("corpus");
    fs::create_dir_all(&dir)?;
    let (train, val) = pipeline::default_specs(cfg);
    pipeline::save_corpus_manifests(&train, &val, &dir)?;
    let corpus = pipeline::load_corpus(&RunConfig {
        corpus: Some(dir.clone()),
        ..cfg.clone()
    })?;
    for (name, clips) in [("train", &corpus.train), ("val", &corpus.val)] {
        for (k, v) in clips.iter().enumerate() {
            save_siv1(v, dir.join(format!("{name}_{k:03}.siv1")))?;
        }
    }
    println!("synth: {} train, {} val clips", corpus.train.len(), corpus.val.len());
    Ok(())
}

fn generate(cfg: &RunConfig, out: &Path, stream: bool) -> Result<()> {
    let corpus = pipeline::load_corpus(cfg)?;
    let models = pipeline::obtain_models(cfg, &corpus)?;
    let x = pipeline::input_image(cfg, &corpus)?;
    if stream {
        let prepared = pipeline::prepare(cfg, &models.stage1, &x, cfg.seed)?;
        let opts = StreamOptions::with_capacity(cfg.queue_capacity);
        let run = run_streaming(
            &models.stage2,
            &prepared.input,
            &prepared.plan,
            &models.stage1.codec,
            cfg.seed,
            &opts,
        )
        .map_err(|e| match e.error {
            Error::Worker(msg) => Error::Worker(format!("{msg} ({} events logged)", e.partial_log.len())),
            other => other,
        })?;
        save_siv1(&prepared.lr, out.join("lr.siv1"))?;
        save_siv1(&run.video, out.join("video.siv1"))?;
        write_event_log(&run.events, fs::File::create(out.join("events.csv"))?)?;
        let report = bench::streaming_report(cfg.queue_capacity, &run.events, &run.measured)?;
        pipeline::write_json(&out.join("timing.json"), &report)?;
        pipeline::write_json(&out.join("plan.json"), &pipeline::plan_json(&prepared.plan))?;
        println!(
            "generate: {} frames streamed, {} events",
            run.video.frames(),
            run.events.len()
        );
    } else {
        let g = pipeline::generate(cfg, &models, &x, cfg.seed)?;
        save_siv1(&g.prepared.lr, out.join("lr.siv1"))?;
        save_siv1(&g.prepared.hybrid, out.join("hybrid.siv1"))?;
        save_siv1(&g.video, out.join("video.siv1"))?;
        pipeline::write_json(&out.join("plan.json"), &pipeline::plan_json(&g.prepared.plan))?;
        println!(
            "generate: {} frames, {} forward passes",
            g.video.frames(),
            g.forward_count
        );
    }
    Ok(())
}
