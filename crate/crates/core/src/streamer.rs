//! Streaming runtime: one producer denoises segments in order and hands the
//! finalized latents to one consumer through a bounded FIFO; the consumer
//! decodes each segment and emits its frame groups as soon as they exist.
//!
//! The emission unit is one latent block (`temporal` frames). The anchor
//! frame goes out together with the first group of segment 1.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::conditioning::StageTwoInput;
use crate::error::ensure;
use crate::grid::Video;
use crate::scheduler::SegmentPlan;
use crate::stage2::{CsgRun, Stage2Model};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SegmentDenoised,
    SegmentDecoded,
    FramesEmitted,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::SegmentDenoised => "segment_denoised",
            EventKind::SegmentDecoded => "segment_decoded",
            EventKind::FramesEmitted => "frames_emitted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub kind: EventKind,
    /// Segment index for the segment events, frame-group index (block − 1)
    /// for `frames_emitted`. 1-based.
    pub index: usize,
    pub t_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StreamOptions {
    pub queue_capacity: usize,
    /// Extra consumer latency before decoding segment `s`, cycled.
    pub consumer_delays: Vec<Duration>,
    /// Run the deterministic single-threaded interleaving instead of two
    /// worker threads.
    pub inline: bool,
}

impl StreamOptions {
    pub fn with_capacity(queue_capacity: usize) -> Self {
        Self {
            queue_capacity,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub video: Video,
    pub latents: Video,
    pub events: Vec<StreamEvent>,
    /// Measured per-segment durations in milliseconds.
    pub measured: TimingModel,
}

/// A failed run with whatever was logged before the failure.
#[derive(Debug)]
pub struct StreamError {
    pub error: Error,
    pub partial_log: Vec<StreamEvent>,
}

impl fmt::Display for StreamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} events)", self.error, self.partial_log.len())
    }
}

impl std::error::Error for StreamError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Log {
    start: Instant,
    events: Mutex<Vec<StreamEvent>>,
}

impl Log {
    fn push(&self, kind: EventKind, index: usize) {
        let mut ev = self.events.lock().unwrap_or_else(|e| e.into_inner());
        let t_ms = self.start.elapsed().as_secs_f64() * 1e3;
        ev.push(StreamEvent { kind, index, t_ms });
    }

    fn snapshot(&self) -> Vec<StreamEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Finalized latents of one segment.
struct SegmentMsg {
    segment: usize,
    blocks: Vec<(usize, Video)>,
}

struct Consumer<'a> {
    codec: &'a Codec,
    anchor: &'a Video,
    delays: &'a [Duration],
    frames: Vec<Video>,
    decode_ms: Vec<f64>,
}

impl Consumer<'_> {
    fn handle(&mut self, msg: SegmentMsg, log: &Log) -> Result<()> {
        let began = Instant::now();
        if !self.delays.is_empty() {
            thread::sleep(self.delays[(msg.segment - 1) % self.delays.len()]);
        }
        let mut groups = Vec::with_capacity(msg.blocks.len());
        for (i, block) in &msg.blocks {
            groups.push((*i, self.codec.decode_block(block, *i)?));
        }
        if msg.segment == 1 {
            self.frames.push(self.codec.decode_block(self.anchor, 1)?);
        }
        self.decode_ms.push(began.elapsed().as_secs_f64() * 1e3);
        log.push(EventKind::SegmentDecoded, msg.segment);
        for (i, frames) in groups {
            self.frames.push(frames);
            log.push(EventKind::FramesEmitted, i - 1);
        }
        Ok(())
    }
}

fn segment_msg(run: &CsgRun<'_>, plan: &SegmentPlan, s: usize) -> Result<SegmentMsg> {
    let seg = plan.segment(s)?;
    Ok(SegmentMsg {
        segment: s,
        blocks: seg.noisy.iter().map(|&i| (i, run.latents().frame(i - 1))).collect(),
    })
}

/// Denoises with `model` while decoding through `codec` in a second worker.
/// The result is bit-identical to `infer_csg` followed by a full decode.
pub fn run_streaming(
    model: &Stage2Model,
    input: &StageTwoInput,
    plan: &SegmentPlan,
    codec: &Codec,
    seed: u64,
    opts: &StreamOptions,
) -> std::result::Result<StreamOutput, StreamError> {
    let log = Log {
        start: Instant::now(),
        events: Mutex::new(Vec::new()),
    };
    let fail = |error: Error, log: &Log| StreamError {
        error,
        partial_log: log.snapshot(),
    };
    if opts.queue_capacity == 0 {
        return Err(fail(Error::InvalidArgument("queue capacity must be >= 1".into()), &log));
    }
    let mut consumer = Consumer {
        codec,
        anchor: &input.z_x,
        delays: &opts.consumer_delays,
        frames: Vec::new(),
        decode_ms: Vec::new(),
    };
    let produced = if opts.inline {
        run_inline(model, input, plan, seed, opts.queue_capacity, &mut consumer, &log)
    } else {
        run_threaded(model, input, plan, seed, opts.queue_capacity, &mut consumer, &log)
    };
    let (latents, denoise_ms) = produced.map_err(|e| fail(e, &log))?;
    let video = Video::concat_frames(&consumer.frames).map_err(|e| fail(e, &log))?;
    Ok(StreamOutput {
        video,
        latents,
        events: log.snapshot(),
        measured: TimingModel {
            denoise_s: denoise_ms,
            decode_s: consumer.decode_ms,
        },
    })
}

fn run_threaded(
    model: &Stage2Model,
    input: &StageTwoInput,
    plan: &SegmentPlan,
    seed: u64,
    capacity: usize,
    consumer: &mut Consumer<'_>,
    log: &Log,
) -> Result<(Video, Vec<f64>)> {
    let (tx, rx) = bounded::<SegmentMsg>(capacity);
    let consumer_error: Arc<Mutex<Option<Error>>> = Arc::new(Mutex::new(None));
    let produced = thread::scope(|scope| {
        let worker_error = Arc::clone(&consumer_error);
        let consumer_handle = scope.spawn(move || {
            for msg in rx.iter() {
                if let Err(e) = consumer.handle(msg, log) {
                    *worker_error.lock().unwrap_or_else(|p| p.into_inner()) = Some(e);
                    return;
                }
            }
        });
        let producer = scope.spawn(move || -> Result<(Video, Vec<f64>)> {
            let mut run = CsgRun::new(model, input, plan, seed)?;
            let mut denoise_ms = Vec::with_capacity(plan.s);
            loop {
                let began = Instant::now();
                let Some(s) = run.step_segment(&mut |_| {})? else { break };
                denoise_ms.push(began.elapsed().as_secs_f64() * 1e3);
                log.push(EventKind::SegmentDenoised, s);
                if tx.send(segment_msg(&run, plan, s)?).is_err() {
                    return Err(Error::Worker("decoder stopped before all segments were sent".into()));
                }
                thread::yield_now();
            }
            drop(tx);
            Ok((run.into_latents(), denoise_ms))
        });
        let produced = producer
            .join()
            .unwrap_or_else(|_| Err(Error::Worker("denoise worker panicked".into())));
        if consumer_handle.join().is_err() {
            return Err(Error::Worker("decode worker panicked".into()));
        }
        produced
    });
    if let Some(e) = consumer_error.lock().unwrap_or_else(|p| p.into_inner()).take() {
        return Err(e);
    }
    produced
}

fn run_inline(
    model: &Stage2Model,
    input: &StageTwoInput,
    plan: &SegmentPlan,
    seed: u64,
    capacity: usize,
    consumer: &mut Consumer<'_>,
    log: &Log,
) -> Result<(Video, Vec<f64>)> {
    let mut run = CsgRun::new(model, input, plan, seed)?;
    let mut queue: VecDeque<SegmentMsg> = VecDeque::with_capacity(capacity);
    let mut denoise_ms = Vec::with_capacity(plan.s);
    loop {
        let began = Instant::now();
        let Some(s) = run.step_segment(&mut |_| {})? else { break };
        denoise_ms.push(began.elapsed().as_secs_f64() * 1e3);
        log.push(EventKind::SegmentDenoised, s);
        queue.push_back(segment_msg(&run, plan, s)?);
        while queue.len() >= capacity {
            if let Some(msg) = queue.pop_front() {
                consumer.handle(msg, log)?;
            }
        }
    }
    while let Some(msg) = queue.pop_front() {
        consumer.handle(msg, log)?;
    }
    Ok((run.into_latents(), denoise_ms))
}

/// Event log as CSV: `kind,index,t_ms`.
pub fn write_event_log<W: Write>(events: &[StreamEvent], mut out: W) -> Result<()> {
    writeln!(out, "kind,index,t_ms")?;
    for e in events {
        writeln!(out, "{},{},{:.3}", e.kind, e.index, e.t_ms)?;
    }
    Ok(())
}

/// Per-segment durations, all in one time unit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingModel {
    pub denoise_s: Vec<f64>,
    pub decode_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub first_output: f64,
    pub full_output: f64,
    pub sequential_total: f64,
}

/// End times of every denoise and decode under ideal two-worker pipelining.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSchedule {
    pub end_denoise: Vec<f64>,
    pub end_decode: Vec<f64>,
}

pub fn pipeline_schedule(tm: &TimingModel) -> Result<PipelineSchedule> {
    bounded_schedule(tm, usize::MAX)
}

/// [`pipeline_schedule`] with the producer held back while `capacity`
/// segments wait in the queue. Equal to the unbounded schedule once
/// `capacity` reaches the segment count.
pub fn bounded_schedule(tm: &TimingModel, capacity: usize) -> Result<PipelineSchedule> {
    ensure!(
        tm.denoise_s.len() == tm.decode_s.len(),
        ShapeMismatch,
        "{} denoise vs {} decode durations",
        tm.denoise_s.len(),
        tm.decode_s.len()
    );
    ensure!(!tm.denoise_s.is_empty(), InvalidArgument, "no segments to schedule");
    ensure!(capacity >= 1, InvalidArgument, "queue capacity must be >= 1");
    ensure!(
        tm.denoise_s
            .iter()
            .chain(&tm.decode_s)
            .all(|d| d.is_finite() && *d >= 0.0),
        InvalidArgument,
        "durations must be finite and non-negative"
    );
    let n = tm.denoise_s.len();
    let mut end_denoise = Vec::with_capacity(n);
    let mut end_decode: Vec<f64> = Vec::with_capacity(n);
    let mut start_decode: Vec<f64> = Vec::with_capacity(n);
    let mut free_at = 0.0;
    for (s, (d, c)) in tm.denoise_s.iter().zip(&tm.decode_s).enumerate() {
        let done = free_at + d;
        end_denoise.push(done);
        let queued = if s >= capacity {
            done.max(start_decode[s - capacity])
        } else {
            done
        };
        free_at = queued;
        let start = end_decode.last().map_or(queued, |&prev| queued.max(prev));
        start_decode.push(start);
        end_decode.push(start + c);
    }
    Ok(PipelineSchedule {
        end_denoise,
        end_decode,
    })
}

pub fn predict_timing(tm: &TimingModel) -> Result<TimingReport> {
    let sched = pipeline_schedule(tm)?;
    Ok(TimingReport {
        first_output: sched.end_decode[0],
        full_output: *sched.end_decode.last().unwrap_or(&0.0),
        sequential_total: tm.denoise_s.iter().sum::<f64>() + tm.decode_s.iter().sum::<f64>(),
    })
}

/// Checks that the schedule predicted for a queue of `capacity` orders every
/// pair of segment events the same way as the observed log, ignoring pairs
/// whose predicted times are within `slack_ms` of each other.
pub fn replay_agrees(events: &[StreamEvent], measured: &TimingModel, capacity: usize, slack_ms: f64) -> Result<bool> {
    let sched = bounded_schedule(measured, capacity)?;
    let observed: Vec<(f64, f64)> = events
        .iter()
        .filter_map(|e| {
            let predicted = match e.kind {
                EventKind::SegmentDenoised => sched.end_denoise.get(e.index - 1),
                EventKind::SegmentDecoded => sched.end_decode.get(e.index - 1),
                EventKind::FramesEmitted => None,
            }?;
            Some((e.t_ms, *predicted))
        })
        .collect();
    for (i, a) in observed.iter().enumerate() {
        for b in &observed[i + 1..] {
            if (a.1 - b.1).abs() > slack_ms && (a.0 < b.0) != (a.1 < b.1) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
