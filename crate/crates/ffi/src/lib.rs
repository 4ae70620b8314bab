//! C ABI for `lmnet`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call returns
//! an [`LmnetStatus`]; on failure a description is kept per thread and can be read
//! with [`lmnet_last_error_message`]. Panics are caught and reported as
//! `LMNET_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use lmnet::dynamics::{rk4_flow, SystemSpec};
use lmnet::imde::{xi_coefficients, TruncatedImde, Truncation};
use lmnet::jets::JetField;
use lmnet::lmm::{catalog, LmmScheme};
use lmnet::model::Mlp;
use lmnet::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmnetStatus {
    Ok = 0,
    InvalidArgument = 1,
    UnknownScheme = 2,
    Contract = 3,
    Singularity = 4,
    Divergence = 5,
    Io = 6,
    Parse = 7,
    UnsupportedOrder = 8,
    Panic = 9,
}

/// A normalized linear multistep scheme.
pub struct LmnetScheme(LmmScheme);

/// A vector field with Taylor-mode support.
pub struct LmnetSystem(Arc<dyn JetField>);

/// A trained network.
pub struct LmnetMlp(Mlp);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> LmnetStatus {
    match err {
        Error::Catalog(_) => LmnetStatus::UnknownScheme,
        Error::Normalization(_) | Error::Contract(_) => LmnetStatus::Contract,
        Error::Singularity(_) => LmnetStatus::Singularity,
        Error::Divergence(_) => LmnetStatus::Divergence,
        Error::UnsupportedOrder(_) => LmnetStatus::UnsupportedOrder,
        Error::Io { .. } => LmnetStatus::Io,
        Error::Json { .. } | Error::Parse(_) => LmnetStatus::Parse,
    }
}

enum Failure {
    Arg(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LmnetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            LmnetStatus::Ok
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(format!("invalid argument: {msg}"));
            LmnetStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LmnetStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Arg(what))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    p.write(value);
    Ok(())
}

fn copy_into(dst: &mut [f64], src: &[f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Failure::Arg("output length does not match the result dimension"));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message for the most recent failure on this thread, or null after a success.
/// The pointer stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn lmnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Looks up a catalogued scheme by name (`AB1`, `BDF2`, ...) and normalizes it.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_scheme_catalog(name: *const c_char, out: *mut *mut LmnetScheme) -> LmnetStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let scheme = catalog(name)?.normalize()?;
        write_out(out, Box::into_raw(Box::new(LmnetScheme(scheme))), "out")
    })
}

/// Builds a scheme from `steps + 1` alphas and betas, oldest first, then normalizes it.
///
/// # Safety
/// `alphas` and `betas` must point to `steps + 1` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_scheme_new(
    alphas: *const f64,
    betas: *const f64,
    steps: usize,
    out: *mut *mut LmnetScheme,
) -> LmnetStatus {
    guard(|| {
        let a = slice_arg(alphas, steps + 1, "alphas")?;
        let b = slice_arg(betas, steps + 1, "betas")?;
        let scheme = LmmScheme::new("custom", a.to_vec(), b.to_vec())?.normalize()?;
        write_out(out, Box::into_raw(Box::new(LmnetScheme(scheme))), "out")
    })
}

/// # Safety
/// `scheme` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lmnet_scheme_free(scheme: *mut LmnetScheme) {
    if !scheme.is_null() {
        drop(Box::from_raw(scheme));
    }
}

/// Number of steps M, or 0 for a null handle.
///
/// # Safety
/// `scheme` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_scheme_steps(scheme: *const LmnetScheme) -> usize {
    scheme.as_ref().map_or(0, |s| s.0.steps())
}

/// Consistency order p, or 0 for a null handle.
///
/// # Safety
/// `scheme` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_scheme_order(scheme: *const LmnetScheme) -> usize {
    scheme.as_ref().map_or(0, |s| s.0.order())
}

/// Writes `xi_0..=xi_k` into `out`, which must hold `k + 1` doubles.
///
/// # Safety
/// `scheme` must be a live handle and `out` must point to `k + 1` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lmnet_xi_coefficients(scheme: *const LmnetScheme, k: usize, out: *mut f64) -> LmnetStatus {
    guard(|| {
        let scheme = handle(scheme, "scheme")?;
        let out = slice_out(out, k + 1, "out")?;
        let xi = xi_coefficients(&scheme.0, k)?;
        copy_into(out, xi.values())
    })
}

/// Builds one of the systems without parameters: `damped_oscillator` or `lorenz`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_system_builtin(name: *const c_char, out: *mut *mut LmnetSystem) -> LmnetStatus {
    guard(|| {
        let spec = match str_arg(name, "name")? {
            "damped_oscillator" => SystemSpec::DampedOscillator,
            "lorenz" => SystemSpec::Lorenz,
            _ => return Err(Failure::Arg("unknown built-in system")),
        };
        write_out(out, Box::into_raw(Box::new(LmnetSystem(spec.build(None)?))), "out")
    })
}

/// Builds a system from its JSON description, e.g. `{"kind":"linear","matrix":[[0,1],[-1,0]]}`.
/// Relative parameter files resolve against the working directory.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_system_from_json(json: *const c_char, out: *mut *mut LmnetSystem) -> LmnetStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let spec: SystemSpec = serde_json::from_str(text).map_err(|e| Error::Parse(format!("system: {e}")))?;
        write_out(out, Box::into_raw(Box::new(LmnetSystem(spec.build(None)?))), "out")
    })
}

/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_system_free(system: *mut LmnetSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_system_dim(system: *const LmnetSystem) -> usize {
    system.as_ref().map_or(0, |s| s.0.dim())
}

/// Evaluates `f(x)`. Both arrays have `dim` entries.
///
/// # Safety
/// `system` must be a live handle; `x` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lmnet_system_eval(
    system: *const LmnetSystem,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> LmnetStatus {
    guard(|| {
        let system = handle(system, "system")?;
        let x = slice_arg(x, dim, "x")?;
        let out = slice_out(out, dim, "out")?;
        copy_into(out, &system.0.eval(x)?)
    })
}

/// Advances `x` by time `t` with `substeps` classical RK4 steps.
///
/// # Safety
/// `system` must be a live handle; `x` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lmnet_rk4_flow(
    system: *const LmnetSystem,
    x: *const f64,
    dim: usize,
    t: f64,
    substeps: usize,
    out: *mut f64,
) -> LmnetStatus {
    guard(|| {
        let system = handle(system, "system")?;
        let x = slice_arg(x, dim, "x")?;
        let out = slice_out(out, dim, "out")?;
        copy_into(out, &rk4_flow(system.0.as_ref(), x, t, substeps)?)
    })
}

/// Evaluates the modified field truncated after `k` terms at `x` for step size `h`.
///
/// # Safety
/// `scheme` and `system` must be live handles; `x` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lmnet_imde_eval(
    scheme: *const LmnetScheme,
    system: *const LmnetSystem,
    k: usize,
    x: *const f64,
    dim: usize,
    h: f64,
    out: *mut f64,
) -> LmnetStatus {
    guard(|| {
        let scheme = handle(scheme, "scheme")?;
        let system = handle(system, "system")?;
        let x = slice_arg(x, dim, "x")?;
        let out = slice_out(out, dim, "out")?;
        let imde = TruncatedImde::new(&scheme.0, system.0.clone(), Truncation::Fixed(k))?;
        copy_into(out, &imde.eval(x, h)?)
    })
}

/// Loads a checkpoint written by `lmnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_load(path: *const c_char, out: *mut *mut LmnetMlp) -> LmnetStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let net = Mlp::load(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(LmnetMlp(net))), "out")
    })
}

/// Parses a checkpoint from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_from_json(json: *const c_char, out: *mut *mut LmnetMlp) -> LmnetStatus {
    guard(|| {
        let net = Mlp::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(LmnetMlp(net))), "out")
    })
}

/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_free(mlp: *mut LmnetMlp) {
    if !mlp.is_null() {
        drop(Box::from_raw(mlp));
    }
}

/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_input_dim(mlp: *const LmnetMlp) -> usize {
    mlp.as_ref().map_or(0, |m| m.0.input_dim())
}

/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_output_dim(mlp: *const LmnetMlp) -> usize {
    mlp.as_ref().map_or(0, |m| m.0.output_dim())
}

/// Runs the network on one input of `in_len` values and writes `out_len` outputs.
///
/// # Safety
/// `mlp` must be a live handle; `x` and `out` must hold `in_len` and `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lmnet_mlp_forward(
    mlp: *const LmnetMlp,
    x: *const f64,
    in_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LmnetStatus {
    guard(|| {
        let mlp = handle(mlp, "mlp")?;
        let x = slice_arg(x, in_len, "x")?;
        let out = slice_out(out, out_len, "out")?;
        copy_into(out, &mlp.0.forward(x)?)
    })
}
