//! C ABI over the tracker.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `*_load` functions and released with the matching `*_free`. Every
//! fallible call returns a [`DvaeStatus`]; the message of the last failure
//! on the calling thread is available from [`dvae_last_error`]. Boxes are
//! `double[4]` in normalised `(l, t, r, b)` coordinates with y pointing up.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dvae_umot::checkpoint;
use dvae_umot::srnn::SrnnParams;
use dvae_umot::tracker::{self, Dynamics, Scene, TrackResult, TrackerConfig};
use dvae_umot::{BBox, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numeric = 5,
    Panic = 6,
}

/// Pre-trained SRNN weights.
pub struct DvaeModel {
    params: SrnnParams,
}

/// Detections of a sequence, filled frame by frame.
pub struct DvaeScene {
    frames: Vec<Vec<BBox>>,
}

/// Output of [`dvae_track`].
pub struct DvaeResult {
    inner: TrackResult,
}

/// Tracker settings. `dynamics` is 0 for the DVAE, 1 for the linear
/// baseline; `n_objects` 0 means one object per first-frame detection.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DvaeTrackerConfig {
    pub r_phi: f64,
    pub init_window: usize,
    pub init_iters: usize,
    pub iters: usize,
    pub fine_tune: bool,
    pub fine_tune_lr: f64,
    pub m_step_phi: bool,
    pub dynamics: u32,
    pub seed: u64,
    pub n_objects: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DvaeStatus {
    match e {
        Error::Config(_) => DvaeStatus::InvalidArgument,
        Error::Io { .. } => DvaeStatus::Io,
        Error::Parse { .. } | Error::Checkpoint(_) | Error::Data(_) => DvaeStatus::Data,
        _ => DvaeStatus::Numeric,
    }
}

fn fail(status: DvaeStatus, msg: &str) -> DvaeStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DvaeStatus>) -> DvaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DvaeStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(DvaeStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> DvaeStatus {
    fail(status_of(&e), &e.to_string())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, DvaeStatus> {
    p.as_ref().ok_or_else(|| fail(DvaeStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DvaeStatus> {
    p.as_mut().ok_or_else(|| fail(DvaeStatus::NullPointer, &format!("{what} is null")))
}

/// Library version, e.g. `0.1.0`. The string is static.
#[no_mangle]
pub extern "C" fn dvae_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(c) => c,
        Err(_) => panic!("version has no interior nul"),
    };
    V.as_ptr()
}

/// Checkpoint format version read by [`dvae_model_load`].
#[no_mangle]
pub extern "C" fn dvae_checkpoint_format() -> u32 {
    checkpoint::FORMAT_VERSION
}

/// Message of the last failed call on this thread (empty after success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dvae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dvae_model_load(path: *const c_char, out: *mut *mut DvaeModel) -> DvaeStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(fail(DvaeStatus::NullPointer, "path is null"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(DvaeStatus::InvalidArgument, "path is not UTF-8"))?;
        let (params, _) = checkpoint::load(Path::new(p)).map_err(lift)?;
        *out = Box::into_raw(Box::new(DvaeModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dvae_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dvae_model_free(model: *mut DvaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dvae_scene_new(out: *mut *mut DvaeScene) -> DvaeStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(DvaeScene { frames: Vec::new() }));
        Ok(())
    })
}

/// Appends a frame of `count` boxes read from `boxes[4 * count]`.
///
/// # Safety
/// `scene` must be a live handle; `boxes` must hold `4 * count` doubles
/// (it may be null when `count` is 0).
#[no_mangle]
pub unsafe extern "C" fn dvae_scene_push_frame(scene: *mut DvaeScene, boxes: *const f64, count: usize) -> DvaeStatus {
    guard(|| {
        let scene = deref_mut(scene, "scene")?;
        let mut frame = Vec::with_capacity(count);
        if count > 0 {
            if boxes.is_null() {
                return Err(fail(DvaeStatus::NullPointer, "boxes is null"));
            }
            let raw = std::slice::from_raw_parts(boxes, 4 * count);
            for (k, c) in raw.chunks_exact(4).enumerate() {
                let b = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| {
                    fail(DvaeStatus::Data, &format!("frame {} box {k}: {e}", scene.frames.len() + 1))
                })?;
                frame.push(b);
            }
        }
        scene.frames.push(frame);
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dvae_scene_num_frames(scene: *const DvaeScene) -> usize {
    scene.as_ref().map_or(0, |s| s.frames.len())
}

/// # Safety
/// `scene` must come from [`dvae_scene_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dvae_scene_free(scene: *mut DvaeScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Fills `cfg` with the default settings.
///
/// # Safety
/// `cfg` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dvae_tracker_config_default(cfg: *mut DvaeTrackerConfig) -> DvaeStatus {
    guard(|| {
        let cfg = deref_mut(cfg, "cfg")?;
        let d = TrackerConfig::default();
        *cfg = DvaeTrackerConfig {
            r_phi: d.r_phi,
            init_window: d.init_window,
            init_iters: d.init_iters,
            iters: d.iters,
            fine_tune: d.fine_tune,
            fine_tune_lr: d.fine_tune_lr,
            m_step_phi: d.m_step_phi,
            dynamics: 0,
            seed: d.seed,
            n_objects: 0,
        };
        Ok(())
    })
}

fn to_config(c: &DvaeTrackerConfig) -> Result<TrackerConfig, DvaeStatus> {
    let dynamics = match c.dynamics {
        0 => Dynamics::Dvae,
        1 => Dynamics::Linear,
        d => return Err(fail(DvaeStatus::InvalidArgument, &format!("unknown dynamics {d}"))),
    };
    Ok(TrackerConfig {
        r_phi: c.r_phi,
        init_window: c.init_window,
        init_iters: c.init_iters,
        iters: c.iters,
        fine_tune: c.fine_tune,
        fine_tune_lr: c.fine_tune_lr,
        m_step_phi: c.m_step_phi,
        dynamics,
        seed: c.seed,
        n_objects: (c.n_objects > 0).then_some(c.n_objects),
        ..TrackerConfig::default()
    })
}

/// Tracks the scene. `model` may be null for the linear baseline; `cfg`
/// may be null for the defaults.
///
/// # Safety
/// Non-null pointers must be live handles or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dvae_track(
    model: *const DvaeModel,
    scene: *const DvaeScene,
    cfg: *const DvaeTrackerConfig,
    out: *mut *mut DvaeResult,
) -> DvaeStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let scene = deref(scene, "scene")?;
        let cfg = match cfg.as_ref() {
            Some(c) => to_config(c)?,
            None => TrackerConfig::default(),
        };
        let params = model.as_ref().map(|m| &m.params);
        let s = Scene::new(scene.frames.clone()).map_err(lift)?;
        let inner = tracker::track(&s, params, &cfg).map_err(lift)?;
        *out = Box::into_raw(Box::new(DvaeResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dvae_result_num_objects(result: *const DvaeResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.n_objects())
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dvae_result_num_frames(result: *const DvaeResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.m.first().map_or(0, Vec::len))
}

/// Writes the estimated box of object `n` at frame `t` (both from 0) into
/// `out[4]`.
///
/// # Safety
/// `result` must be a live handle and `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn dvae_result_position(result: *const DvaeResult, n: usize, t: usize, out: *mut f64) -> DvaeStatus {
    guard(|| {
        let r = deref(result, "result")?;
        if out.is_null() {
            return Err(fail(DvaeStatus::NullPointer, "out is null"));
        }
        let b = r
            .inner
            .m
            .get(n)
            .and_then(|tr| tr.get(t))
            .ok_or_else(|| fail(DvaeStatus::InvalidArgument, &format!("no estimate for object {n} at frame {t}")))?;
        std::ptr::copy_nonoverlapping(b.as_ptr(), out, 4);
        Ok(())
    })
}

/// Object that detection `k` of frame `t` is assigned to (argmax of the
/// assignment posterior).
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dvae_result_assignment(result: *const DvaeResult, t: usize, k: usize, out: *mut usize) -> DvaeStatus {
    guard(|| {
        let r = deref(result, "result")?;
        let out = deref_mut(out, "out")?;
        *out = *r
            .inner
            .assignments
            .get(t)
            .and_then(|f| f.get(k))
            .ok_or_else(|| fail(DvaeStatus::InvalidArgument, &format!("no detection {k} in frame {t}")))?;
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`dvae_track`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dvae_result_free(result: *mut DvaeResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
