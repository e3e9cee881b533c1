//! C ABI over the segvid core: segment plans, SIV1 videos, the toy codec,
//! the streaming timing model and PSNR.
//!
//! Every fallible call returns a [`SegvidStatus`]; on failure the message is
//! kept per thread and can be read back with [`segvid_last_error`]. Objects
//! are opaque handles released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use segvid::codec::{Codec, CodecConfig};
use segvid::grid::{checksum, load_siv1, save_siv1, Video};
use segvid::metrics::psnr;
use segvid::scheduler::{plan, token_budget, SegmentPlan};
use segvid::streamer::{predict_timing, TimingModel};
use segvid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegvidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidExtent = 3,
    ShapeMismatch = 4,
    Format = 5,
    Io = 6,
    Runtime = 7,
    Panic = 8,
}

/// Segment plan handle.
pub struct SegvidPlan(SegmentPlan);

/// `T × H × W × C` float video handle.
pub struct SegvidVideo(Video);

/// Codec handle.
pub struct SegvidCodec(Codec);

/// Timing prediction in the unit of the durations passed in.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegvidTiming {
    pub first_output: f64,
    pub full_output: f64,
    pub sequential_total: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SegvidStatus {
    match e {
        Error::InvalidArgument(_) | Error::Plan(_) | Error::Undefined(_) => SegvidStatus::InvalidArgument,
        Error::InvalidExtent(_) => SegvidStatus::InvalidExtent,
        Error::ShapeMismatch(_) => SegvidStatus::ShapeMismatch,
        Error::Format(_) | Error::Json(_) => SegvidStatus::Format,
        Error::Io(_) => SegvidStatus::Io,
        _ => SegvidStatus::Runtime,
    }
}

fn fail(status: SegvidStatus, msg: impl Into<String>) -> Result<(), SegvidStatus> {
    set_error(msg.into());
    Err(status)
}

fn guard(f: impl FnOnce() -> Result<(), SegvidStatus>) -> SegvidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SegvidStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SegvidStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SegvidStatus>;
}

impl<T> OrStatus<T> for segvid::Result<T> {
    fn or_status(self) -> Result<T, SegvidStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        })
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SegvidStatus> {
    if p.is_null() {
        fail(SegvidStatus::NullPointer, format!("{what} is null"))?;
    }
    // SAFETY: non-null and, per the caller contract, a live handle.
    Ok(unsafe { &*p })
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SegvidStatus> {
    if p.is_null() {
        fail(SegvidStatus::NullPointer, format!("{what} is null"))?;
    }
    // SAFETY: non-null and writable per the caller contract.
    Ok(unsafe { &mut *p })
}

unsafe fn path_arg(p: *const c_char) -> Result<String, SegvidStatus> {
    if p.is_null() {
        fail(SegvidStatus::NullPointer, "path is null")?;
    }
    // SAFETY: NUL-terminated per the caller contract.
    match unsafe { CStr::from_ptr(p) }.to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => {
            fail(SegvidStatus::InvalidArgument, "path is not UTF-8")?;
            unreachable!()
        }
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn segvid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `cap > 0`). Returns the full message length
/// including the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn segvid_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            // SAFETY: `buf` holds `cap >= n` bytes.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Builds the segment plan for `t` latent blocks, segment length `m` and `n`
/// neighbours.
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_new(t: usize, m: usize, n: usize, out: *mut *mut SegvidPlan) -> SegvidStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out")? };
        let p = plan(t, m, n).map_err(Error::from).or_status()?;
        *out = boxed(SegvidPlan(p));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`segvid_plan_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_free(p: *mut SegvidPlan) {
    if !p.is_null() {
        // SAFETY: created by `boxed` in this crate.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Number of segments S, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_segment_count(p: *const SegvidPlan) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.0.s)
}

/// Start block and set sizes of segment `s` (1-based).
///
/// # Safety
/// `p` must be a live plan handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_segment(
    p: *const SegvidPlan,
    s: usize,
    start: *mut usize,
    noisy_len: *mut usize,
    neighbor_len: *mut usize,
    window_len: *mut usize,
) -> SegvidStatus {
    guard(|| {
        let p = unsafe { deref(p, "plan")? };
        let (start, noisy_len, neighbor_len, window_len) = unsafe {
            (
                out_ptr(start, "start")?,
                out_ptr(noisy_len, "noisy_len")?,
                out_ptr(neighbor_len, "neighbor_len")?,
                out_ptr(window_len, "window_len")?,
            )
        };
        let seg = p.0.segment(s).map_err(Error::from).or_status()?;
        *start = seg.start;
        *noisy_len = seg.noisy.len();
        *neighbor_len = seg.neighbors.len();
        *window_len = seg.window.len();
        Ok(())
    })
}

/// Writes the 1-based window indices of segment `s` into `buf`. `len`
/// receives the window size; when it exceeds `cap` nothing is written and
/// `SEGVID_STATUS_INVALID_ARGUMENT` is returned.
///
/// # Safety
/// `p` must be a live plan handle, `buf` must hold `cap` elements, `len` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_window(
    p: *const SegvidPlan,
    s: usize,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> SegvidStatus {
    guard(|| {
        let p = unsafe { deref(p, "plan")? };
        let len = unsafe { out_ptr(len, "len")? };
        let seg = p.0.segment(s).map_err(Error::from).or_status()?;
        *len = seg.window.len();
        if seg.window.len() > cap {
            return fail(
                SegvidStatus::InvalidArgument,
                format!("window needs {} slots, got {cap}", seg.window.len()),
            );
        }
        if buf.is_null() {
            return fail(SegvidStatus::NullPointer, "buf is null");
        }
        // SAFETY: `buf` holds at least `cap >= window.len()` elements.
        unsafe { ptr::copy_nonoverlapping(seg.window.as_ptr(), buf, seg.window.len()) };
        Ok(())
    })
}

/// Largest per-segment window token count for `h × w` latent blocks, or 0
/// for a null handle.
///
/// # Safety
/// `p` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn segvid_plan_max_tokens(p: *const SegvidPlan, h: usize, w: usize) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| token_budget(&p.0, h, w).into_iter().max().unwrap_or(0))
}

/// Copies `len = t·h·w·c` row-major floats into a new video.
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_new(
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut SegvidVideo,
) -> SegvidStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out")? };
        if data.is_null() {
            return fail(SegvidStatus::NullPointer, "data is null");
        }
        // SAFETY: `data` holds `len` floats per the caller contract.
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let v = Video::new(t, h, w, c, values).or_status()?;
        *out = boxed(SegvidVideo(v));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_load(path: *const c_char, out: *mut *mut SegvidVideo) -> SegvidStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out")? };
        let path = unsafe { path_arg(path)? };
        *out = boxed(SegvidVideo(load_siv1(path).or_status()?));
        Ok(())
    })
}

/// # Safety
/// `v` must be a live video handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_save(v: *const SegvidVideo, path: *const c_char) -> SegvidStatus {
    guard(|| {
        let v = unsafe { deref(v, "video")? };
        let path = unsafe { path_arg(path)? };
        save_siv1(&v.0, path).or_status()
    })
}

/// Writes `[T, H, W, C]` into `dims`.
///
/// # Safety
/// `v` must be a live video handle; `dims` must hold 4 elements.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_dims(v: *const SegvidVideo, dims: *mut usize) -> SegvidStatus {
    guard(|| {
        let v = unsafe { deref(v, "video")? };
        if dims.is_null() {
            return fail(SegvidStatus::NullPointer, "dims is null");
        }
        // SAFETY: `dims` holds 4 elements.
        unsafe { ptr::copy_nonoverlapping(v.0.dims().as_ptr(), dims, 4) };
        Ok(())
    })
}

/// Borrowed pointer to the video's values, valid until the handle is freed.
/// `len` receives the element count. Returns null for a null handle.
///
/// # Safety
/// `v` must be null or a live video handle; `len` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_data(v: *const SegvidVideo, len: *mut usize) -> *const f32 {
    let Some(v) = (unsafe { v.as_ref() }) else {
        return ptr::null();
    };
    if let Some(len) = unsafe { len.as_mut() } {
        *len = v.0.data().len();
    }
    v.0.data().as_ptr()
}

/// FNV-1a checksum over the bit patterns of the values; 0 for null.
///
/// # Safety
/// `v` must be null or a live video handle.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_checksum(v: *const SegvidVideo) -> u64 {
    unsafe { v.as_ref() }.map_or(0, |v| checksum(v.0.data()))
}

/// # Safety
/// `v` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn segvid_video_free(v: *mut SegvidVideo) {
    if !v.is_null() {
        // SAFETY: created by `boxed` in this crate.
        drop(unsafe { Box::from_raw(v) });
    }
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_codec_new(
    spatial: usize,
    temporal: usize,
    channels: usize,
    lift_seed: u64,
    out: *mut *mut SegvidCodec,
) -> SegvidStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out")? };
        let codec = Codec::new(CodecConfig {
            spatial,
            temporal,
            channels,
            lift_seed,
        })
        .or_status()?;
        *out = boxed(SegvidCodec(codec));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn segvid_codec_free(c: *mut SegvidCodec) {
    if !c.is_null() {
        // SAFETY: created by `boxed` in this crate.
        drop(unsafe { Box::from_raw(c) });
    }
}

/// Encodes a pixel video into a new latent video.
///
/// # Safety
/// `c` and `v` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_codec_encode(
    c: *const SegvidCodec,
    v: *const SegvidVideo,
    out: *mut *mut SegvidVideo,
) -> SegvidStatus {
    guard(|| {
        let (c, v, out) = unsafe { (deref(c, "codec")?, deref(v, "video")?, out_ptr(out, "out")?) };
        *out = boxed(SegvidVideo(c.0.encode(&v.0).or_status()?));
        Ok(())
    })
}

/// Decodes a latent video into a new pixel video.
///
/// # Safety
/// `c` and `z` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_codec_decode(
    c: *const SegvidCodec,
    z: *const SegvidVideo,
    out: *mut *mut SegvidVideo,
) -> SegvidStatus {
    guard(|| {
        let (c, z, out) = unsafe { (deref(c, "codec")?, deref(z, "latents")?, out_ptr(out, "out")?) };
        *out = boxed(SegvidVideo(c.0.decode(&z.0).or_status()?));
        Ok(())
    })
}

/// Two-worker pipeline timing from `n` per-segment denoise and decode
/// durations.
///
/// # Safety
/// `denoise` and `decode` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_predict_timing(
    denoise: *const f64,
    decode: *const f64,
    n: usize,
    out: *mut SegvidTiming,
) -> SegvidStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out")? };
        if denoise.is_null() || decode.is_null() {
            return fail(SegvidStatus::NullPointer, "duration array is null");
        }
        // SAFETY: both arrays hold `n` values.
        let tm = unsafe {
            TimingModel {
                denoise_s: std::slice::from_raw_parts(denoise, n).to_vec(),
                decode_s: std::slice::from_raw_parts(decode, n).to_vec(),
            }
        };
        let r = predict_timing(&tm).or_status()?;
        *out = SegvidTiming {
            first_output: r.first_output,
            full_output: r.full_output,
            sequential_total: r.sequential_total,
        };
        Ok(())
    })
}

/// PSNR with peak 1.0; `+inf` for identical videos.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn segvid_psnr(a: *const SegvidVideo, b: *const SegvidVideo, out: *mut f64) -> SegvidStatus {
    guard(|| {
        let (a, b, out) = unsafe { (deref(a, "a")?, deref(b, "b")?, out_ptr(out, "out")?) };
        *out = psnr(&a.0, &b.0).or_status()?;
        Ok(())
    })
}
