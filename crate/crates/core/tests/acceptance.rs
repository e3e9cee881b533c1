//! Acceptance suite. Runs every criterion in order, prints one line each and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use segvid::cli::bench;
use segvid::cli::pipeline::{load_corpus, obtain_models, prepare, Corpus, Models, Prepared};
use segvid::cli::RunConfig;
use segvid::codec::{Codec, CodecConfig};
use segvid::conditioning::StageTwoInput;
use segvid::grid::{checksum, read_siv1, write_siv1, Rng, Video};
use segvid::metrics::boundary_gap;
use segvid::mixer::{forward, loss, loss_and_grad, MaskMode, Matrix, MixerParams, SigmaSchedule, WindowInput};
use segvid::scheduler::{plan, token_budget};
use segvid::stage2::{infer_csg, infer_csg_observed, infer_full_window, is_reference_feature, CsgEvent, Stage2Model};
use segvid::streamer::{
    predict_timing, replay_agrees, run_streaming, EventKind, StreamEvent, StreamOptions, TimingModel,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Fixture {
    cfg: RunConfig,
    corpus: Corpus,
    models: Models,
    prepared: Prepared,
}

impl Fixture {
    fn new() -> Self {
        let cfg = RunConfig::default();
        let corpus = load_corpus(&cfg).expect("corpus");
        let models = obtain_models(&cfg, &corpus).expect("models");
        let prepared = prepare(&cfg, &models.stage1, &corpus.val[0].frame(0), cfg.seed).expect("prepare");
        Self {
            cfg,
            corpus,
            models,
            prepared,
        }
    }
}

fn fx() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(Fixture::new)
}

fn bits(v: &Video) -> Vec<u32> {
    v.data().iter().map(|x| x.to_bits()).collect()
}

struct OracleSegment {
    start: usize,
    noisy: Vec<usize>,
    neighbors: Vec<usize>,
    window: Vec<usize>,
}

/// Walks the blocks greedily: take up to `m` from the cursor, look back `n`.
fn brute_force_plan(t: usize, m: usize, n: usize) -> Vec<OracleSegment> {
    let mut out = Vec::new();
    let mut cursor = 2;
    while cursor <= t {
        let mut noisy = Vec::new();
        while noisy.len() < m && cursor <= t {
            noisy.push(cursor);
            cursor += 1;
        }
        let start = noisy[0];
        let mut neighbors = Vec::new();
        let mut j = start - 1;
        while neighbors.len() < n && j >= 2 {
            neighbors.insert(0, j);
            j -= 1;
        }
        let mut window = vec![1];
        window.extend(&neighbors);
        window.extend(&noisy);
        out.push(OracleSegment {
            start,
            noisy,
            neighbors,
            window,
        });
    }
    out
}

/// Smallest `t` at which some segment carries a full `1 + n + m` window.
fn saturation_t(m: usize, n: usize) -> usize {
    2 + n.div_ceil(m) * m + m - 1
}

fn c1_plan_exactness() -> Outcome {
    let began = Instant::now();
    let p = plan(21, 3, 1).map_err(|e| e.to_string())?;
    check!(p.s == 7, "S = {}", p.s);
    check!(p.sizes() == vec![3, 3, 3, 3, 3, 3, 2], "sizes {:?}", p.sizes());
    check!(p.starts() == vec![2, 5, 8, 11, 14, 17, 20], "starts {:?}", p.starts());
    let mut cases = 0;
    for t in 2..=200 {
        for m in 1..=8 {
            for n in 0..=4 {
                let p = plan(t, m, n).map_err(|e| e.to_string())?;
                let oracle = brute_force_plan(t, m, n);
                check!(p.s == oracle.len(), "t={t} M={m} N={n}: S {} vs {}", p.s, oracle.len());
                for (seg, o) in p.segments.iter().zip(&oracle) {
                    check!(
                        seg.start == o.start
                            && seg.noisy == o.noisy
                            && seg.neighbors == o.neighbors
                            && seg.window == o.window,
                        "t={t} M={m} N={n}: segment at {} differs from oracle",
                        o.start
                    );
                }
                cases += 1;
            }
        }
    }
    let elapsed = began.elapsed();
    check!(elapsed < Duration::from_secs(5), "sweep took {elapsed:?}");
    Ok(format!(
        "plan(21,3,1) exact; {cases} sweep cases match oracle in {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn c2_token_budget() -> Outcome {
    let mut checked = 0;
    for (h, w) in [(8, 8), (4, 4), (3, 5)] {
        for m in 1..=8 {
            for n in 0..=4 {
                let bound = (1 + n + m) * h * w;
                let t0 = saturation_t(m, n);
                let mut prev = 0;
                for t in 2..=200 {
                    let p = plan(t, m, n).map_err(|e| e.to_string())?;
                    let max = token_budget(&p, h, w).into_iter().max().unwrap_or(0);
                    let oracle = brute_force_plan(t, m, n)
                        .iter()
                        .map(|s| s.window.len())
                        .max()
                        .unwrap_or(0)
                        * h
                        * w;
                    check!(max == oracle, "t={t} M={m} N={n}: max tokens {max} vs oracle {oracle}");
                    check!(max <= bound, "t={t} M={m} N={n}: {max} exceeds bound {bound}");
                    check!(max >= prev, "t={t} M={m} N={n}: budget shrank from {prev} to {max}");
                    if t >= t0 {
                        check!(max == bound, "t={t} M={m} N={n}: budget {max} not constant at {bound}");
                    }
                    prev = max;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "{checked} cases: max <= (1+N+M)hw everywhere, equal to it for every t >= 2+ceil(N/M)M+M-1, non-decreasing below"
    ))
}

fn c3_immutability(fx: &Fixture) -> Outcome {
    let p = plan(21, 3, 1).map_err(|e| e.to_string())?;
    let input = &fx.prepared.input;
    check!(input.blocks() == 21, "input has {} blocks", input.blocks());
    let anchor = bits(&input.z_x);
    let mut frozen: Vec<(usize, u64)> = Vec::new();
    let mut violations = Vec::new();
    let mut steps = 0;
    infer_csg_observed(&fx.models.stage2, input, &p, fx.cfg.seed, |e| match e {
        CsgEvent::Step { segment, latents, .. } => {
            steps += 1;
            if latents.frame_data(0).iter().map(|x| x.to_bits()).collect::<Vec<_>>() != anchor {
                violations.push(format!("anchor changed in segment {segment}"));
            }
            for &(i, sum) in &frozen {
                if checksum(latents.frame_data(i - 1)) != sum {
                    violations.push(format!("block {i} changed in segment {segment}"));
                }
            }
        }
        CsgEvent::SegmentDone { segment, latents } => {
            for &i in &p.segments[segment - 1].noisy {
                frozen.push((i, checksum(latents.frame_data(i - 1))));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    check!(violations.is_empty(), "{}", violations.join("; "));
    check!(frozen.len() == 20, "{} blocks finalized", frozen.len());
    Ok(format!(
        "anchor and {} finalized blocks bit-stable over {steps} steps",
        frozen.len()
    ))
}

fn c4_single_segment(fx: &Fixture) -> Outcome {
    let input = &fx.prepared.input;
    let t = input.blocks();
    let p = plan(t, t - 1, 0).map_err(|e| e.to_string())?;
    check!(p.s == 1, "single-segment plan has {} segments", p.s);
    for seed in [0u64, 1, 2] {
        let csg = infer_csg(&fx.models.stage2, input, &p, seed).map_err(|e| e.to_string())?;
        let full = infer_full_window(&fx.models.stage2, input, seed).map_err(|e| e.to_string())?;
        check!(bits(&csg) == bits(&full), "seed {seed}: outputs differ");
    }
    Ok(format!(
        "M={}, N=0 bit-identical to full window for seeds 0, 1, 2",
        t - 1
    ))
}

fn ordering_check(events: &[StreamEvent]) -> Option<(f64, f64)> {
    let first_emit = events.iter().position(|e| e.kind == EventKind::FramesEmitted)?;
    let last_denoise = events.iter().rposition(|e| e.kind == EventKind::SegmentDenoised)?;
    (first_emit < last_denoise).then(|| (events[first_emit].t_ms, events[last_denoise].t_ms))
}

fn c5_streaming(fx: &Fixture) -> Outcome {
    let r = predict_timing(&TimingModel {
        denoise_s: vec![2.0; 3],
        decode_s: vec![5.0; 3],
    })
    .map_err(|e| e.to_string())?;
    check!(
        (r.first_output, r.full_output, r.sequential_total) == (7.0, 17.0, 21.0),
        "predict_timing gave {r:?}"
    );
    let model = &fx.models.stage2;
    let input = &fx.prepared.input;
    let p = &fx.prepared.plan;
    let codec = &fx.models.stage1.codec;
    let seed = fx.cfg.seed;
    let latents = infer_csg(model, input, p, seed).map_err(|e| e.to_string())?;
    let video = codec.decode(&latents).map_err(|e| e.to_string())?;
    let (want_z, want_v) = (bits(&latents), bits(&video));
    let mut rng = Rng::new(0x5eed);
    let schedules: Vec<Vec<Duration>> = (0..5)
        .map(|_| {
            (0..p.s)
                .map(|_| Duration::from_micros(rng.below(2000) as u64))
                .collect()
        })
        .collect();
    let mut runs = 0;
    let mut ordered = 0;
    for capacity in [1usize, 2, 8] {
        for delays in std::iter::once(Vec::new()).chain(schedules.iter().cloned()) {
            let delayed = !delays.is_empty();
            let opts = StreamOptions {
                queue_capacity: capacity,
                consumer_delays: delays,
                inline: false,
            };
            let out = run_streaming(model, input, p, codec, seed, &opts).map_err(|e| e.to_string())?;
            check!(bits(&out.latents) == want_z, "capacity {capacity}: latents differ");
            check!(bits(&out.video) == want_v, "capacity {capacity}: video differs");
            check!(
                replay_agrees(&out.events, &out.measured, capacity, 1.0).map_err(|e| e.to_string())?,
                "capacity {capacity}: replayed timing disagrees with observed ordering"
            );
            if capacity <= 2 || !delayed {
                check!(
                    ordering_check(&out.events).is_some(),
                    "capacity {capacity}: first frames_emitted not before final segment_denoised"
                );
                ordered += 1;
            }
            runs += 1;
        }
        let inline = StreamOptions {
            queue_capacity: capacity,
            consumer_delays: Vec::new(),
            inline: true,
        };
        let out = run_streaming(model, input, p, codec, seed, &inline).map_err(|e| e.to_string())?;
        check!(bits(&out.video) == want_v, "inline capacity {capacity}: video differs");
    }
    Ok(format!(
        "{runs} threaded runs and 3 inline runs bit-identical; replay agrees; early emit in all {ordered} backpressured or undelayed runs; predict_timing (7,17,21)"
    ))
}

fn random_params(rng: &mut Rng, in_dim: usize, out_dim: usize, hidden: usize, mode: MaskMode) -> MixerParams<f64> {
    MixerParams::init(rng, in_dim, out_dim, hidden, mode)
        .expect("init")
        .cast::<f64>()
}

fn random_window(rng: &mut Rng, rows: usize, in_dim: usize) -> WindowInput<f64> {
    WindowInput {
        blocks: Matrix::from_vec(rows, in_dim, (0..rows * in_dim).map(|_| rng.normal() as f64).collect())
            .expect("matrix"),
        positions: (1..=rows).map(|j| j * 2).collect(),
        sigma: 0.5,
    }
}

fn max_row_change(a: &Matrix<f64>, b: &Matrix<f64>, row: usize) -> f64 {
    a.row(row)
        .iter()
        .zip(b.row(row))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c6_mask_semantics() -> Outcome {
    const DELTA: f64 = 1e-2;
    let (mut causal_worst, mut bidir_least) = (0.0f64, f64::INFINITY);
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        let rows = 3 + rng.below(4);
        let (in_dim, out_dim, hidden) = (12, 6, 8);
        let window = random_window(&mut rng, rows, in_dim);
        for mode in [MaskMode::Causal, MaskMode::Bidirectional] {
            let params = random_params(&mut rng, in_dim, out_dim, hidden, mode);
            let base = forward(&params, &window).map_err(|e| e.to_string())?;
            for l in 1..rows {
                let mut bumped = window.clone();
                bumped.blocks.row_mut(l).iter_mut().for_each(|v| *v += DELTA);
                let y = forward(&params, &bumped).map_err(|e| e.to_string())?;
                let earlier = (0..l).map(|j| max_row_change(&base, &y, j)).fold(0.0, f64::max);
                match mode {
                    MaskMode::Causal => causal_worst = causal_worst.max(earlier),
                    MaskMode::Bidirectional => bidir_least = bidir_least.min(earlier),
                }
            }
        }
    }
    check!(causal_worst < 1e-8, "causal response {causal_worst:e} to later blocks");
    check!(bidir_least > 1e-8, "bidirectional response only {bidir_least:e}");
    Ok(format!(
        "causal max response {causal_worst:e}; bidirectional min response {bidir_least:e}"
    ))
}

fn c7_gradients() -> Outcome {
    const H: f64 = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = Rng::new(1000 + seed);
        let rows = 2 + rng.below(4);
        let (in_dim, out_dim, hidden) = (4 + rng.below(5), 2 + rng.below(4), 3 + rng.below(4));
        let mode = if seed % 2 == 0 {
            MaskMode::Bidirectional
        } else {
            MaskMode::Causal
        };
        let params = random_params(&mut rng, in_dim, out_dim, hidden, mode);
        let mut window = random_window(&mut rng, rows, in_dim);
        window.sigma = rng.uniform() as f64;
        let mut noisy: Vec<bool> = (0..rows).map(|_| rng.bernoulli(0.5)).collect();
        noisy[rows - 1] = true;
        let target = |rng: &mut Rng| {
            Matrix::from_vec(
                rows,
                out_dim,
                (0..rows * out_dim).map(|_| rng.normal() as f64).collect(),
            )
            .expect("matrix")
        };
        let (clean, eps) = (target(&mut rng), target(&mut rng));
        let (_, grads) = loss_and_grad(&params, &window, &clean, &eps, &noisy).map_err(|e| e.to_string())?;
        let analytic: Vec<Matrix<f64>> = grads.matrices().iter().map(|(_, m)| (*m).clone()).collect();
        for (k, g) in analytic.iter().enumerate() {
            for idx in 0..g.data().len() {
                let (mut plus, mut minus) = (params.clone(), params.clone());
                plus.matrices_mut()[k].1.data_mut()[idx] += H;
                minus.matrices_mut()[k].1.data_mut()[idx] -= H;
                let lp = loss(&plus, &window, &clean, &eps, &noisy).map_err(|e| e.to_string())?;
                let lm = loss(&minus, &window, &clean, &eps, &noisy).map_err(|e| e.to_string())?;
                let numeric = (lp - lm) / (2.0 * H);
                let a = g.data()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        let (mut clean2, mut eps2) = (clean.clone(), eps.clone());
        for (j, &is_noisy) in noisy.iter().enumerate() {
            if !is_noisy {
                clean2.row_mut(j).iter_mut().for_each(|v| *v += 5.0);
                eps2.row_mut(j).iter_mut().for_each(|v| *v -= 5.0);
            }
        }
        let (_, grads2) = loss_and_grad(&params, &window, &clean2, &eps2, &noisy).map_err(|e| e.to_string())?;
        check!(
            grads == grads2,
            "seed {seed}: conditioning targets changed the gradient"
        );
        for (j, &is_noisy) in noisy.iter().enumerate() {
            if !is_noisy {
                check!(
                    grads.output.row(j).iter().all(|&v| v == 0.0),
                    "seed {seed}: nonzero grad on conditioning row {j}"
                );
            }
        }
    }
    check!(worst < 1e-4, "worst relative error {worst:e}");
    Ok(format!(
        "20 instances, worst relative error {worst:e}; conditioning rows contribute exactly zero"
    ))
}

fn c8_zero_init(fx: &Fixture) -> Outcome {
    let cfg = &fx.cfg;
    let block = cfg.hr_block();
    let model = Stage2Model::new(
        block,
        cfg.hidden,
        SigmaSchedule::uniform(cfg.steps).map_err(|e| e.to_string())?,
        cfg.mask,
        7,
    )
    .map_err(|e| e.to_string())?;
    let [h, w, c] = block;
    let t = 21;
    let mut rng = Rng::new(99);
    let mut random_video = |frames| {
        let data = rng.gaussian_vec(frames * h * w * c);
        Video::new(frames, h, w, c, data).expect("video")
    };
    let z_x = random_video(1);
    let a = StageTwoInput::new(random_video(t), z_x.clone()).map_err(|e| e.to_string())?;
    let b = StageTwoInput::new(random_video(t), z_x).map_err(|e| e.to_string())?;
    check!(bits(&a.z_ref) != bits(&b.z_ref), "reference latents coincide");
    let p = plan(t, cfg.m, cfg.n).map_err(|e| e.to_string())?;
    let za = infer_csg(&model, &a, &p, 3).map_err(|e| e.to_string())?;
    let zb = infer_csg(&model, &b, &p, 3).map_err(|e| e.to_string())?;
    check!(bits(&za) == bits(&zb), "CSG output depends on the reference");

    let width = model.params.in_dim();
    let mut rows = Matrix::zeros(4, width);
    for r in 0..4 {
        for col in 0..width {
            rows.set(r, col, rng.normal());
        }
    }
    let mut other = rows.clone();
    for r in 0..4 {
        for col in 0..width {
            if is_reference_feature(col, c) {
                other.set(r, col, rng.normal());
            }
        }
    }
    let win = |blocks| WindowInput {
        blocks,
        positions: vec![1, 4, 5, 6],
        sigma: 0.75,
    };
    let ya = forward(&model.params, &win(rows.clone())).map_err(|e| e.to_string())?;
    let yb = forward(&model.params, &win(other.clone())).map_err(|e| e.to_string())?;
    check!(ya == yb, "forward output depends on reference channels");
    let mut live = model.params.clone();
    live.w_in.data_mut().iter_mut().for_each(|v| *v += 0.01);
    let la = forward(&live, &win(rows)).map_err(|e| e.to_string())?;
    let lb = forward(&live, &win(other)).map_err(|e| e.to_string())?;
    check!(la != lb, "control: nonzero reference weights show no effect");
    Ok(
        "forward and full CSG output bit-identical under two references; control with live reference weights differs"
            .into(),
    )
}

fn c9_transition(fx: &Fixture) -> Outcome {
    let rows = bench::sigma_sweep(&fx.cfg, &fx.corpus.val, &fx.models.stage1, &bench::TRANSITION_SIGMAS)
        .map_err(|e| e.to_string())?;
    let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
    check!(
        psnrs.windows(2).all(|w| w[1] <= w[0]),
        "PSNR not non-increasing: {psnrs:?}"
    );
    Ok(format!(
        "PSNR over sigma {:?}: {}",
        bench::TRANSITION_SIGMAS,
        psnrs.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" >= ")
    ))
}

fn c10_scaling(fx: &Fixture) -> Outcome {
    let began = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = bench::scaling(&fx.cfg, dir.path()).map_err(|e| e.to_string())?;
    let elapsed = began.elapsed();
    check!(report.forward_fit.r2 >= 0.999, "forward r2 {}", report.forward_fit.r2);
    check!(report.wall_fit.r2 >= 0.95, "wall r2 {}", report.wall_fit.r2);
    let [h, w, _] = fx.cfg.hr_block();
    let (m, n) = (fx.cfg.m, fx.cfg.n);
    let t0 = saturation_t(m, n);
    for r in &report.rows {
        let oracle = brute_force_plan(r.t, m, n)
            .iter()
            .map(|s| s.window.len())
            .max()
            .unwrap_or(0)
            * h
            * w;
        check!(
            r.max_tokens == oracle,
            "T={}: max tokens {} vs oracle {oracle}",
            r.frames,
            r.max_tokens
        );
        if r.t >= t0 {
            check!(
                r.max_tokens == (1 + n + m) * h * w,
                "T={}: max tokens {} not constant",
                r.frames,
                r.max_tokens
            );
        }
    }
    let saturated: Vec<usize> = report.rows.iter().filter(|r| r.t >= t0).map(|r| r.max_tokens).collect();
    check!(saturated.len() >= 4, "only {} saturated rows", saturated.len());
    let narrow = RunConfig {
        m: 2,
        n: 1,
        bench_reps: 3,
        ..fx.cfg.clone()
    };
    let narrow_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let narrow_report = bench::scaling(&narrow, narrow_dir.path()).map_err(|e| e.to_string())?;
    let cols: Vec<usize> = narrow_report.rows.iter().map(|r| r.max_tokens).collect();
    check!(cols.windows(2).all(|w| w[0] == w[1]), "(M,N)=(2,1) max tokens {cols:?}");
    check!(elapsed < Duration::from_secs(120), "bench took {elapsed:?}");
    Ok(format!(
        "forward r2 {:.6}, wall r2 {:.4}; max tokens {:?} (constant once t >= {t0}; (2,1) column {:?}); {:.1} s",
        report.forward_fit.r2,
        report.wall_fit.r2,
        report.rows.iter().map(|r| r.max_tokens).collect::<Vec<_>>(),
        cols,
        elapsed.as_secs_f64()
    ))
}

fn c11_boundary(fx: &Fixture) -> Outcome {
    check!(
        fx.cfg.train_steps >= 500,
        "trained for only {} steps",
        fx.cfg.train_steps
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = bench::boundary(&fx.cfg, &fx.corpus, &fx.models, dir.path()).map_err(|e| e.to_string())?;
    let cfg = &fx.cfg;
    let t = cfg.codec.latent_blocks(cfg.frames).map_err(|e| e.to_string())?;
    let s = t.saturating_sub(1).div_ceil(cfg.m);
    let tf = cfg.codec.temporal;
    let oracle: Vec<(usize, usize)> = (1..s)
        .map(|k| {
            let last_block = 1 + k * cfg.m;
            ((last_block - 1) * tf + 1, (last_block - 1) * tf + 2)
        })
        .collect();
    check!(oracle.len() == 6, "oracle expects {} pairs", oracle.len());
    for r in [&report.pixel_diff, &report.one_minus_ssim] {
        check!(
            r.boundary_pairs == oracle,
            "{:?} pairs {:?} vs {oracle:?}",
            r.metric,
            r.boundary_pairs
        );
        check!(
            r.gap_pct.is_some_and(f64::is_finite),
            "{:?} gap_pct {:?}",
            r.metric,
            r.gap_pct
        );
    }
    for clip in &report.clips {
        check!(
            clip.pixel_diff.boundary_pairs == oracle,
            "clip {} pairs differ",
            clip.clip
        );
    }
    let g = bench::segment_series(cfg, &fx.corpus, &fx.models, cfg.seed).map_err(|e| e.to_string())?;
    check!(g.len() == s, "series has {} segments", g.len());
    let video = fx
        .models
        .stage1
        .codec
        .decode(
            &infer_csg(&fx.models.stage2, &fx.prepared.input, &fx.prepared.plan, cfg.seed)
                .map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
    let direct = boundary_gap(
        &video,
        &fx.prepared.plan,
        &cfg.codec,
        segvid::metrics::Dissimilarity::PixelDiff,
    )
    .map_err(|e| e.to_string())?;
    check!(direct.boundary_pairs == oracle, "direct report pairs differ");
    Ok(format!(
        "6 boundary pairs {:?}; gap_pct pixel_diff {:.1}%, 1-SSIM {:.1}%",
        oracle,
        report.pixel_diff.gap_pct.unwrap_or(f64::NAN),
        report.one_minus_ssim.gap_pct.unwrap_or(f64::NAN)
    ))
}

fn c12_accumulation(fx: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = bench::accumulation(&fx.cfg, &fx.corpus, &fx.models.stage1, dir.path()).map_err(|e| e.to_string())?;
    let slopes: Vec<String> = report
        .seeds
        .iter()
        .map(|s| {
            format!(
                "seed {}: bi {:+.4} causal {:+.4}",
                s.seed, s.bidirectional.slope, s.causal.slope
            )
        })
        .collect();
    check!(report.seeds.len() == 5, "{} seeds", report.seeds.len());
    check!(
        report.bidirectional_wins >= 4,
        "bidirectional slope >= causal in {}/5 seeds ({})",
        report.bidirectional_wins,
        slopes.join("; ")
    );
    Ok(format!(
        "bidirectional slope >= causal in {}/5 seeds ({})",
        report.bidirectional_wins,
        slopes.join("; ")
    ))
}

fn c13_codec_format() -> Outcome {
    let cfg = CodecConfig::default();
    check!(
        cfg.latent_blocks(81).map_err(|e| e.to_string())? == 21,
        "T=81 does not map to t=21"
    );
    let codec = Codec::new(cfg).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(13);
    let (frames, size) = (81, 32);
    let v = Video::from_fn(frames, size, size, 3, |_, _, _, _| rng.uniform()).map_err(|e| e.to_string())?;
    let z = codec.encode(&v).map_err(|e| e.to_string())?;
    check!(z.dims() == [21, 8, 8, 4], "latent dims {:?}", z.dims());
    let back = codec.decode(&z).map_err(|e| e.to_string())?;
    check!(back.dims() == v.dims(), "decoded dims {:?}", back.dims());
    let fs = cfg.spatial;
    let mut worst = 0.0f64;
    for i in 1..=21usize {
        let frames_of: Vec<usize> = if i == 1 {
            vec![0]
        } else {
            ((i - 2) * 4 + 1..(i - 1) * 4 + 1).collect()
        };
        for cy in 0..size / fs {
            for cx in 0..size / fs {
                for c in 0..3 {
                    let mut sum = 0.0f64;
                    for &f in &frames_of {
                        for y in cy * fs..(cy + 1) * fs {
                            for x in cx * fs..(cx + 1) * fs {
                                sum += v.at(f, y, x, c) as f64;
                            }
                        }
                    }
                    let mean = sum / (frames_of.len() * fs * fs) as f64;
                    for &f in &frames_of {
                        for y in cy * fs..(cy + 1) * fs {
                            for x in cx * fs..(cx + 1) * fs {
                                worst = worst.max((back.at(f, y, x, c) as f64 - mean).abs());
                            }
                        }
                    }
                }
            }
        }
    }
    check!(worst <= 1e-5, "decode(encode) deviates from cell means by {worst:e}");
    let mut special = v.data().to_vec();
    special[..6].copy_from_slice(&[-0.0, f32::MIN_POSITIVE / 2.0, f32::MAX, -1e-30, 1.0 + f32::EPSILON, 0.1]);
    let tricky = Video::new(frames, size, size, 3, special).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_siv1(&tricky, &mut buf).map_err(|e| e.to_string())?;
    let read = read_siv1(buf.as_slice()).map_err(|e| e.to_string())?;
    check!(
        read.dims() == tricky.dims() && bits(&read) == bits(&tricky),
        "SIV1 round trip not bit-exact"
    );
    Ok(format!(
        "cell-mean oracle max deviation {worst:e}; 81 frames -> 21 blocks; SIV1 round trip bit-exact"
    ))
}

fn main() -> ExitCode {
    let began = Instant::now();
    let mut results = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{id:>2}] {name}: {detail}");
        results.push(outcome.is_ok());
    };
    run(1, "segment plan exactness", &mut c1_plan_exactness);
    run(2, "token budget bound", &mut c2_token_budget);
    run(3, "anchor and history immutability", &mut || c3_immutability(fx()));
    run(4, "single-segment equivalence", &mut || c4_single_segment(fx()));
    run(5, "streaming equivalence and latency shape", &mut || c5_streaming(fx()));
    run(6, "mask semantics", &mut c6_mask_semantics);
    run(7, "gradient correctness", &mut c7_gradients);
    run(8, "zero-init reference invariance", &mut || c8_zero_init(fx()));
    run(9, "stage-transition direction", &mut || c9_transition(fx()));
    run(10, "scaling linearity", &mut || c10_scaling(fx()));
    run(11, "boundary-gap pipeline", &mut || c11_boundary(fx()));
    run(12, "error-accumulation comparison", &mut || c12_accumulation(fx()));
    run(13, "codec and format", &mut c13_codec_format);
    let passed = results.iter().filter(|&&ok| ok).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1} s",
        results.len(),
        began.elapsed().as_secs_f64()
    );
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
