//! C ABI over the flowception core.
//!
//! Every fallible function returns an [`FcStatus`]. On failure the message
//! is kept per thread and can be read with [`fc_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flowception::error::Error;
use flowception::flops::analytic_costs;
use flowception::model::{load_checkpoint, ReferenceNet};
use flowception::sampler::{generate, SamplerConfig, Thinning};
use flowception::schedule::Scheduler;
use flowception::seq::{Frame, FrameSeq};
use flowception::toyset::read_dataset;
use flowception::ContextSpec;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

pub const FC_THINNING_BERNOULLI: u32 = 0;
pub const FC_THINNING_POISSON: u32 = 1;

pub const FC_SCHEDULE_LINEAR: u32 = 0;
pub const FC_SCHEDULE_POWER: u32 = 1;

/// Opaque trained model.
pub struct FcModel {
    net: ReferenceNet,
}

/// Opaque generated sequence.
pub struct FcSample {
    seq: FrameSeq,
    steps: u64,
    truncated: bool,
}

/// Opaque dataset.
pub struct FcDataset {
    videos: Vec<FrameSeq>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FcSamplerOptions {
    pub h: f64,
    pub n_start: u32,
    /// `FC_THINNING_BERNOULLI` or `FC_THINNING_POISSON`.
    pub thinning: u32,
    pub exact_integral: bool,
    pub w_s: f64,
    pub gamma: f64,
    pub max_len: u32,
    pub max_inserts_per_slot_step: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FcFlops {
    pub full_seq: f64,
    pub ar_nocache: f64,
    pub ar_cache: f64,
    pub flowception: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::Io { .. } => FcStatus::Io,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::Corrupt(_)
        | Error::ShapeMismatch { .. } => FcStatus::Format,
        e if e.is_numerical() => FcStatus::Numeric,
        _ => FcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), FcStatus>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FcStatus::Panic
        }
    }
}

fn fail(e: Error) -> FcStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> FcStatus {
    set_error(format!("{what} is null"));
    FcStatus::NullPointer
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, FcStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not UTF-8");
        FcStatus::InvalidArgument
    })?;
    Ok(PathBuf::from(s))
}

fn scheduler_arg(family: u32, p: f64) -> Result<Scheduler, FcStatus> {
    match family {
        FC_SCHEDULE_LINEAR => Ok(Scheduler::Linear),
        FC_SCHEDULE_POWER => Scheduler::power(p).map_err(fail),
        other => {
            set_error(format!("unknown schedule family {other}"));
            Err(FcStatus::InvalidArgument)
        }
    }
}

/// Message for the last failure on this thread. Valid until the next call
/// into this library on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn fc_sampler_options_default() -> FcSamplerOptions {
    let d = SamplerConfig::default();
    FcSamplerOptions {
        h: d.h,
        n_start: d.n_start as u32,
        thinning: FC_THINNING_BERNOULLI,
        exact_integral: d.exact_integral,
        w_s: d.w_s,
        gamma: d.gamma,
        max_len: d.max_len as u32,
        max_inserts_per_slot_step: d.max_inserts_per_slot_step,
        seed: d.seed,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_load(path: *const c_char, out: *mut *mut FcModel) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = path_arg(path)?;
        let ck = load_checkpoint(&p).map_err(fail)?;
        *out = Box::into_raw(Box::new(FcModel { net: ck.net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `fc_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_model_free(model: *mut FcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_model_frame_shape(
    model: *const FcModel,
    h: *mut u32,
    w: *mut u32,
    c: *mut u32,
) -> FcStatus {
    guard(|| {
        if model.is_null() || h.is_null() || w.is_null() || c.is_null() {
            return Err(null("argument"));
        }
        let s = (*model).net.arch().frame;
        *h = s.h as u32;
        *w = s.w as u32;
        *c = s.c as u32;
        Ok(())
    })
}

fn sampler_config(opts: &FcSamplerOptions) -> Result<SamplerConfig, FcStatus> {
    let thinning = match opts.thinning {
        FC_THINNING_BERNOULLI => Thinning::Bernoulli,
        FC_THINNING_POISSON => Thinning::Poisson,
        other => {
            set_error(format!("unknown thinning mode {other}"));
            return Err(FcStatus::InvalidArgument);
        }
    };
    let cfg = SamplerConfig {
        h: opts.h,
        n_start: opts.n_start as usize,
        thinning,
        exact_integral: opts.exact_integral,
        w_s: opts.w_s,
        gamma: opts.gamma,
        max_len: opts.max_len as usize,
        max_inserts_per_slot_step: opts.max_inserts_per_slot_step,
        seed: opts.seed,
        scheduler: Scheduler::Linear,
    };
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

/// Generates one sequence. When `first_frame` is non-null it must point to
/// one frame of `first_frame_len` values and is used as an active context
/// frame in front.
///
/// # Safety
/// `model` and `opts` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_generate(
    model: *const FcModel,
    opts: *const FcSamplerOptions,
    first_frame: *const f32,
    first_frame_len: usize,
    out: *mut *mut FcSample,
) -> FcStatus {
    guard(|| {
        if model.is_null() || opts.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        *out = ptr::null_mut();
        let net = &(*model).net;
        let cfg = sampler_config(&*opts)?;
        let shape = net.arch().frame;
        let ctx = if first_frame.is_null() {
            ContextSpec::none()
        } else {
            let vals = std::slice::from_raw_parts(first_frame, first_frame_len).to_vec();
            ContextSpec::i2v(Frame::new(shape, vals).map_err(fail)?)
        };
        let (seq, trace) = generate(net, shape, &cfg, &ctx).map_err(fail)?;
        *out = Box::into_raw(Box::new(FcSample {
            seq,
            steps: trace.step_count(),
            truncated: trace.truncated,
        }));
        Ok(())
    })
}

/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_length(sample: *const FcSample) -> usize {
    sample.as_ref().map_or(0, |s| s.seq.len())
}

/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_steps(sample: *const FcSample) -> u64 {
    sample.as_ref().map_or(0, |s| s.steps)
}

/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_truncated(sample: *const FcSample) -> bool {
    sample.as_ref().is_some_and(|s| s.truncated)
}

/// Number of `f32` values in one frame of the sample.
///
/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_frame_numel(sample: *const FcSample) -> usize {
    sample.as_ref().map_or(0, |s| s.seq.shape().numel())
}

/// Copies all frames, frame-major, into `buf` of capacity `cap` values.
///
/// # Safety
/// `sample` must be a live handle; `buf` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_copy_frames(sample: *const FcSample, buf: *mut f32, cap: usize) -> FcStatus {
    guard(|| {
        if sample.is_null() || buf.is_null() {
            return Err(null("argument"));
        }
        let s = &*sample;
        let need = s.seq.len() * s.seq.shape().numel();
        if cap < need {
            set_error(format!("buffer holds {cap} values, {need} needed"));
            return Err(FcStatus::InvalidArgument);
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (chunk, f) in dst.chunks_exact_mut(s.seq.shape().numel()).zip(s.seq.frames()) {
            chunk.copy_from_slice(f.values());
        }
        Ok(())
    })
}

/// # Safety
/// `sample` must come from `fc_generate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_sample_free(sample: *mut FcSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_dataset_read(path: *const c_char, out: *mut *mut FcDataset) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = path_arg(path)?;
        let videos = read_dataset(&p).map_err(fail)?;
        *out = Box::into_raw(Box::new(FcDataset { videos }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_dataset_count(ds: *const FcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.videos.len())
}

/// # Safety
/// `ds` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_dataset_video_length(ds: *const FcDataset, index: usize, len: *mut usize) -> FcStatus {
    guard(|| {
        if ds.is_null() || len.is_null() {
            return Err(null("argument"));
        }
        let ds = &*ds;
        match ds.videos.get(index) {
            Some(v) => {
                *len = v.len();
                Ok(())
            }
            None => {
                set_error(format!("video {index} out of range"));
                Err(FcStatus::InvalidArgument)
            }
        }
    })
}

/// # Safety
/// `ds` must come from `fc_dataset_read` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fc_dataset_free(ds: *mut FcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Reveal hazard `kappa'(t) / (1 - kappa(t))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_hazard(family: u32, power_p: f64, t: f64, out: *mut f64) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = scheduler_arg(family, power_p)?;
        *out = s.hazard(t).map_err(fail)?;
        Ok(())
    })
}

/// Hazard integrated over `[t, t + h]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_integrated_hazard(family: u32, power_p: f64, t: f64, h: f64, out: *mut f64) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = scheduler_arg(family, power_p)?;
        *out = s.integrated_hazard(t, h).map_err(fail)?;
        Ok(())
    })
}

/// Analytic attention costs.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_flops_analytic(
    n: u64,
    l: u64,
    t_full: u64,
    t_ar: u64,
    alpha: f64,
    out: *mut FcFlops,
) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = analytic_costs(n, l, t_full, t_ar, alpha).map_err(fail)?;
        *out = FcFlops {
            full_seq: r.full_seq,
            ar_nocache: r.ar_nocache,
            ar_cache: r.ar_cache,
            flowception: r.flowception_analytic,
        };
        Ok(())
    })
}
