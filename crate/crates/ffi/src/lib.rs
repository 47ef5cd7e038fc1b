//! C ABI over the cbnlab library.
//!
//! Every function returns a `CbnlabStatus`. On failure a message is kept per
//! thread and can be read with `cbnlab_last_error`. Generators are opaque
//! handles released with `cbnlab_generator_free`; strings returned by the
//! library are released with `cbnlab_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cbnlab::checks::{run_checks, CheckOptions};
use cbnlab::generator::{build_generator, count_params, load_checkpoint, Generator, GeneratorSpec};
use cbnlab::layers::{central_biasing_norm, BiasConstraint, Mode, NormKind, NormLayer, NormOptions, ParamStore};
use cbnlab::tensor::{Prng, Tensor};
use cbnlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CbnlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Internal = 5,
    BufferTooSmall = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CbnlabConstraint {
    Tanh = 0,
    Sigmoid = 1,
    None = 2,
}

/// Opaque generator handle.
pub struct CbnlabGenerator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> CbnlabStatus {
    match e {
        Error::Shape(_) | Error::Dimension { .. } | Error::ReflectionPad { .. } => CbnlabStatus::Shape,
        Error::Io(_) | Error::Format(_) | Error::Json(_) => CbnlabStatus::Io,
        Error::InvalidSpec(_) | Error::Config { .. } | Error::BatchSizeOne(_) => CbnlabStatus::InvalidArgument,
        _ => CbnlabStatus::Internal,
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (CbnlabStatus, String)>) -> CbnlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbnlabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CbnlabStatus::Internal
        }
    }
}

type FfiResult<T> = Result<T, (CbnlabStatus, String)>;

fn lib<T>(r: cbnlab::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((CbnlabStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CbnlabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Weights a central-biasing generator of the reference size adds for a
/// latent code of length `latent_dim`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_params_added(latent_dim: usize, out: *mut u64) -> CbnlabStatus {
    guard(|| {
        non_null(out, "out")?;
        if latent_dim == 0 {
            return Err((CbnlabStatus::InvalidArgument, "latent_dim must be positive".into()));
        }
        let spec = GeneratorSpec {
            latent_dim,
            ..Default::default()
        };
        *out = count_params(&spec).injection_added as u64;
        Ok(())
    })
}

/// Build a generator from a JSON spec (`{}` or null for the defaults) and a
/// seed.
///
/// # Safety
/// `spec_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_generator_new(
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut CbnlabGenerator,
) -> CbnlabStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec: GeneratorSpec = if spec_json.is_null() {
            GeneratorSpec::default()
        } else {
            let s = c_str(spec_json, "spec_json")?;
            serde_json::from_str(s).map_err(|e| (CbnlabStatus::InvalidArgument, e.to_string()))?
        };
        let g = lib(build_generator(&spec, &mut Prng::new(seed)))?;
        *out = Box::into_raw(Box::new(CbnlabGenerator { inner: g }));
        Ok(())
    })
}

/// Load a generator checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_generator_load(dir: *const c_char, out: *mut *mut CbnlabGenerator) -> CbnlabStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = c_str(dir, "dir")?;
        let g = lib(load_checkpoint(d))?;
        *out = Box::into_raw(Box::new(CbnlabGenerator { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_generator_free(g: *mut CbnlabGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Image extent, latent size and learnable parameter count. Any output
/// pointer may be null.
///
/// # Safety
/// `g` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_generator_info(
    g: *const CbnlabGenerator,
    extent: *mut usize,
    latent_dim: *mut usize,
    param_count: *mut usize,
) -> CbnlabStatus {
    guard(|| {
        non_null(g, "generator")?;
        let g = &(*g).inner;
        if !extent.is_null() {
            *extent = g.spec.extent;
        }
        if !latent_dim.is_null() {
            *latent_dim = g.spec.latent_dim;
        }
        if !param_count.is_null() {
            *param_count = g.param_count();
        }
        Ok(())
    })
}

/// Inference forward pass. `x` holds `batch` images of [in_channels, E, E],
/// `codes` holds `batch` rows of `latent_dim`; `out` receives `batch`
/// images of [out_channels, E, E] and must hold `out_len` doubles.
///
/// # Safety
/// Pointers must reference arrays of the sizes implied by the generator.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_generator_forward(
    g: *const CbnlabGenerator,
    x: *const f64,
    codes: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> CbnlabStatus {
    guard(|| {
        non_null(g, "generator")?;
        non_null(x, "x")?;
        non_null(codes, "codes")?;
        non_null(out, "out")?;
        let g = &(*g).inner;
        let (e, cin, cout, s) = (g.spec.extent, g.spec.in_channels, g.spec.out_channels, g.spec.latent_dim);
        let need = batch * cout * e * e;
        if out_len < need {
            return Err((CbnlabStatus::BufferTooSmall, format!("output needs {need} doubles, got {out_len}")));
        }
        let xt = lib(Tensor::new(&[batch, cin, e, e], slice::from_raw_parts(x, batch * cin * e * e).to_vec()))?;
        let ct = lib(Tensor::new(&[batch, s], slice::from_raw_parts(codes, batch * s).to_vec()))?;
        let y = lib(g.generate(&xt, &ct))?;
        slice::from_raw_parts_mut(out, need).copy_from_slice(y.data());
        Ok(())
    })
}

/// Central-biasing instance normalization of `y` [b, c, h, w] with bias
/// net weights `f` [c, s] applied to `codes` [b, s]; result written to `out`
/// (same size as `y`).
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_cbin_forward(
    y: *const f64,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    codes: *const f64,
    s: usize,
    f: *const f64,
    constraint: CbnlabConstraint,
    eps: f64,
    out: *mut f64,
) -> CbnlabStatus {
    guard(|| {
        non_null(y, "y")?;
        non_null(codes, "codes")?;
        non_null(f, "f")?;
        non_null(out, "out")?;
        if !(eps >= 0.0) {
            return Err((CbnlabStatus::InvalidArgument, "eps must be non-negative".into()));
        }
        let n = b * c * h * w;
        let yt = lib(Tensor::new(&[b, c, h, w], slice::from_raw_parts(y, n).to_vec()))?;
        let ct = lib(Tensor::new(&[b, s], slice::from_raw_parts(codes, b * s).to_vec()))?;
        let opts = NormOptions {
            eps,
            constraint: match constraint {
                CbnlabConstraint::Tanh => BiasConstraint::Tanh,
                CbnlabConstraint::Sigmoid => BiasConstraint::Sigmoid,
                CbnlabConstraint::None => BiasConstraint::None,
            },
            ..Default::default()
        };
        let mut store = ParamStore::new();
        let mut layer = lib(NormLayer::new(NormKind::Cbin, c, Some(s), &mut store, "cbin", opts, &mut Prng::new(0)))?;
        let id = layer.bias_net.as_ref().expect("central biasing layer").weight;
        *store.get_mut(id) = lib(Tensor::new(&[c, s], slice::from_raw_parts(f, c * s).to_vec()))?;
        let z = lib(central_biasing_norm(&yt, &ct, &mut layer, &store, Mode::Eval))?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(z.data());
        Ok(())
    })
}

/// Run the self checks whose names contain `filter` (null for all). Writes
/// JSON lines to `*json_out` (free with `cbnlab_string_free`) and the number
/// of failed checks to `*failed`.
///
/// # Safety
/// `filter` must be null or NUL-terminated; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_run_checks(
    filter: *const c_char,
    json_out: *mut *mut c_char,
    failed: *mut usize,
) -> CbnlabStatus {
    guard(|| {
        non_null(json_out, "json_out")?;
        non_null(failed, "failed")?;
        let pat = if filter.is_null() { "" } else { c_str(filter, "filter")? };
        let recs = run_checks(|n| n.contains(pat), &CheckOptions::default());
        let mut text = String::new();
        for r in &recs {
            text.push_str(&serde_json::to_string(r).map_err(|e| (CbnlabStatus::Internal, e.to_string()))?);
            text.push('\n');
        }
        *failed = recs.iter().filter(|r| !r.pass).count();
        *json_out = CString::new(text)
            .map_err(|_| (CbnlabStatus::Internal, "NUL in output".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cbnlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
