//! C ABI over flowseg checkpoints.
//!
//! Every function returns a [`FlowsegStatus`]. On failure the message is kept
//! per thread and read back with [`flowseg_last_error`]. Colors cross the
//! boundary in color space (0..=255 scale, retained channels only), never in
//! the normalized network space. Panics are caught and reported as
//! `FLOWSEG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use flowseg::anchor::{self, AnchorConfig, CategoryId, PseudoColor};
use flowseg::checkpoint::{Checkpoint, Model};
use flowseg::dsm::{self, SamplerMode};
use flowseg::sampler::{self, Direction, SolveConfig};
use flowseg::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    NoValidPixels = 5,
    Format = 6,
    Checksum = 7,
    Io = 8,
    Validation = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowsegModelKind {
    Flow = 0,
    Dsm = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowsegSolver {
    Euler = 0,
    Rk45 = 1,
}

/// Opaque model handle.
pub struct FlowsegModel {
    model: Model,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct FlowsegModelInfo {
    /// A `FlowsegModelKind` value.
    pub kind: u32,
    /// Values per sample (pixels x channels).
    pub sample_dim: usize,
    pub pixels: usize,
    pub channels: usize,
    pub num_categories: u32,
    /// Training perturbation amplitude; 0 for diffusion models.
    pub beta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FlowsegStatus {
    match e.kind() {
        "shape" => FlowsegStatus::Shape,
        "numerical" => FlowsegStatus::Numerical,
        "no_valid_pixels" => FlowsegStatus::NoValidPixels,
        "format" => FlowsegStatus::Format,
        "checksum" => FlowsegStatus::Checksum,
        "io" => FlowsegStatus::Io,
        "validation" => FlowsegStatus::Validation,
        _ => FlowsegStatus::InvalidArgument,
    }
}

struct Fail(FlowsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FlowsegStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FlowsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FlowsegStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FlowsegStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const FlowsegModel) -> Result<&'a FlowsegModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn flowseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. On success `*out` owns a handle to release with
/// [`flowseg_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flowseg_model_load(path: *const c_char, out: *mut *mut FlowsegModel) -> FlowsegStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(FlowsegStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(FlowsegModel { model: ck.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`flowseg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flowseg_model_free(model: *mut FlowsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `info` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn flowseg_model_info(model: *const FlowsegModel, info: *mut FlowsegModelInfo) -> FlowsegStatus {
    guard(|| {
        let m = model_ref(model)?;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        let g = m.model.geometry();
        *info = FlowsegModelInfo {
            kind: match &m.model {
                Model::Flow(_) => FlowsegModelKind::Flow as u32,
                Model::Dsm(_) => FlowsegModelKind::Dsm as u32,
            },
            sample_dim: g.sample_dim(),
            pixels: g.pixels(),
            channels: g.num_channels(),
            num_categories: g.anchors.num_categories(),
            beta: match &m.model {
                Model::Flow(f) => f.beta,
                Model::Dsm(_) => 0.0,
            },
        };
        Ok(())
    })
}

/// Segments `count` samples of `sample_dim` color values each into
/// `count * pixels` category ids. Flow models integrate forward with the
/// given solver (`steps` is ignored by RK45); diffusion models run
/// deterministic strided sampling with `steps` steps and `seed`.
///
/// # Safety
/// `colors` must hold `count * sample_dim` values and `labels` room for
/// `count * pixels`.
#[no_mangle]
pub unsafe extern "C" fn flowseg_segment(
    model: *const FlowsegModel,
    colors: *const f64,
    count: usize,
    solver: FlowsegSolver,
    steps: usize,
    seed: u64,
    labels: *mut u32,
) -> FlowsegStatus {
    guard(|| {
        let m = model_ref(model)?;
        let g = m.model.geometry();
        let input = slice(colors, count * g.sample_dim(), "colors")?;
        let out = slice_mut(labels, count * g.pixels(), "labels")?;
        if count == 0 {
            return Ok(());
        }
        let norm: Vec<f64> = input.iter().map(|&v| g.normalize(v)).collect();
        let images = Array2::from_shape_vec((count, g.sample_dim()), norm).expect("sized above");
        let pred = match &m.model {
            Model::Flow(f) => {
                let cfg = match solver {
                    FlowsegSolver::Euler => SolveConfig::euler(Direction::Forward, steps),
                    FlowsegSolver::Rk45 => SolveConfig {
                        solver: sampler::Solver::Rk45,
                        ..SolveConfig::euler(Direction::Forward, steps.max(1))
                    },
                };
                sampler::segment(f, images.view(), &cfg)?
            }
            Model::Dsm(d) => dsm::dsm_segment(d, images.view(), steps, SamplerMode::Ddim, seed)?,
        };
        for (o, c) in out.iter_mut().zip(pred) {
            *o = c.0;
        }
        Ok(())
    })
}

/// Synthesizes one sample per layout with the reverse flow. `labels` holds
/// `count * pixels` ids; `colors` receives `count * sample_dim` color values.
/// A negative `beta_prime` selects the model's training amplitude.
///
/// # Safety
/// Buffers must be sized as described.
#[no_mangle]
pub unsafe extern "C" fn flowseg_synthesize(
    model: *const FlowsegModel,
    labels: *const u32,
    count: usize,
    beta_prime: f64,
    steps: usize,
    seed: u64,
    colors: *mut f64,
) -> FlowsegStatus {
    guard(|| {
        let m = model_ref(model)?;
        let Model::Flow(f) = &m.model else {
            return Err(Fail(FlowsegStatus::InvalidArgument, "synthesis needs a flow checkpoint".into()));
        };
        let g = &f.geometry;
        let layouts: Vec<CategoryId> = slice(labels, count * g.pixels(), "labels")?.iter().map(|&c| CategoryId(c)).collect();
        let out = slice_mut(colors, count * g.sample_dim(), "colors")?;
        if count == 0 {
            return Ok(());
        }
        let beta = (beta_prime >= 0.0).then_some(beta_prime);
        let images = sampler::synthesize(f, &layouts, beta, seed, &SolveConfig::euler(Direction::Reverse, steps))?;
        for (o, &v) in out.iter_mut().zip(images.iter()) {
            *o = g.denormalize(v);
        }
        Ok(())
    })
}

fn anchors(k: u32, spacing: f64, num_categories: u32) -> Result<AnchorConfig, Fail> {
    Ok(AnchorConfig::new(k, spacing, num_categories)?)
}

/// Writes the three-channel anchor color of `category` to `rgb`.
///
/// # Safety
/// `rgb` must have room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn flowseg_anchor_encode(
    k: u32,
    spacing: f64,
    num_categories: u32,
    category: u32,
    rgb: *mut f64,
) -> FlowsegStatus {
    guard(|| {
        let cfg = anchors(k, spacing, num_categories)?;
        let out = slice_mut(rgb, 3, "rgb")?;
        out.copy_from_slice(&anchor::encode(CategoryId(category), &cfg)?.0);
        Ok(())
    })
}

/// Nearest-anchor decoding of `count` RGB triples.
///
/// # Safety
/// `rgb` must hold `3 * count` values and `labels` room for `count`.
#[no_mangle]
pub unsafe extern "C" fn flowseg_anchor_decode(
    k: u32,
    spacing: f64,
    num_categories: u32,
    rgb: *const f64,
    count: usize,
    labels: *mut u32,
) -> FlowsegStatus {
    guard(|| {
        let cfg = anchors(k, spacing, num_categories)?;
        let input = slice(rgb, 3 * count, "rgb")?;
        let out = slice_mut(labels, count, "labels")?;
        for (o, px) in out.iter_mut().zip(input.chunks_exact(3)) {
            *o = anchor::decode(&PseudoColor([px[0], px[1], px[2]]), &cfg).0;
        }
        Ok(())
    })
}
