//! C ABI over `polysls`.
//!
//! Every entry point returns a [`PolyslsStatus`]. On failure the message is
//! available from [`polysls_last_error`] on the same thread. Handles are
//! created by the library and released with the matching `*_free` function.
//!
//! Disturbance windows are flat lag-major buffers: entries `k*n .. (k+1)*n`
//! hold `w_{t-k}`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use polysls::archive::{load_clm, save_clm};
use polysls::models::{builtin, builtin_defaults};
use polysls::poly::Window;
use polysls::sim::ControllerState;
use polysls::synthesis::{verify_achievability, AlphaParams, ClosedLoopMaps, SynthesisOptions, Synthesizer, SystemModel};
use polysls::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolyslsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Overflow = 3,
    Verification = 4,
    Divergence = 5,
    Io = 6,
    Panic = 7,
}

/// Polynomial dynamics `x_{t+1} = f(x_t) + u_t + w_t`.
pub struct PolyslsModel(SystemModel);

/// Synthesized state and input closed-loop maps.
pub struct PolyslsClm(ClosedLoopMaps);

/// Online controller: reconstructs disturbances from observed states.
pub struct PolyslsController(ControllerState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> PolyslsStatus {
    match e {
        Error::ExpansionOverflow { .. } | Error::SupportMismatch { .. } => PolyslsStatus::Overflow,
        Error::AchievabilityViolation { .. } => PolyslsStatus::Verification,
        Error::Divergence { .. } => PolyslsStatus::Divergence,
        Error::Io(_) => PolyslsStatus::Io,
        Error::DimensionMismatch { .. } | Error::WindowTooShort { .. } => PolyslsStatus::InvalidArgument,
        _ => PolyslsStatus::Config,
    }
}

struct Fail(PolyslsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(PolyslsStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PolyslsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PolyslsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            PolyslsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Fail> {
    if out.is_null() || out_len < values.len() {
        return Err(invalid(&format!("output buffer needs {} entries", values.len())));
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn polysls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a built-in model (`scalar_quadratic`, `cylinder_wake`).
/// `params_json` is an optional JSON object of parameter overrides.
///
/// # Safety
/// `name` and `params_json` (if non-null) must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_model_builtin(
    name: *const c_char,
    params_json: *const c_char,
    out: *mut *mut PolyslsModel,
) -> PolyslsStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let mut params = builtin_defaults(name)?;
        if !params_json.is_null() {
            let text = str_arg(params_json, "params_json")?;
            let extra: BTreeMap<String, f64> = serde_json::from_str(text)
                .map_err(|e| Fail(PolyslsStatus::Config, format!("params_json: {e}")))?;
            for (k, v) in extra {
                if !params.contains_key(&k) {
                    return Err(Fail(PolyslsStatus::Config, format!("unknown parameter `{k}` for {name}")));
                }
                params.insert(k, v);
            }
        }
        put(out, PolyslsModel(builtin(name, &params)?))
    })
}

/// # Safety
/// `model` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_model_dim(model: *const PolyslsModel, out: *mut usize) -> PolyslsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        *out.as_mut().ok_or_else(|| invalid("out is null"))? = m.0.dim();
        Ok(())
    })
}

/// Number of alpha slots for `model` at FIR horizon `horizon`.
///
/// # Safety
/// `model` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_slot_count(
    model: *const PolyslsModel,
    horizon: usize,
    out: *mut usize,
) -> PolyslsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let s = Synthesizer::new(&m.0, horizon, SynthesisOptions::default())?;
        *out.as_mut().ok_or_else(|| invalid("out is null"))? = s.slots().len();
        Ok(())
    })
}

/// Synthesizes the closed-loop maps. `alpha` holds either one value applied
/// to every slot or one value per slot in table order.
///
/// # Safety
/// `model` must be a valid handle, `alpha` must point to `alpha_len`
/// doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_synthesize(
    model: *const PolyslsModel,
    horizon: usize,
    alpha: *const f64,
    alpha_len: usize,
    out: *mut *mut PolyslsClm,
) -> PolyslsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let values = slice_arg(alpha, alpha_len, "alpha")?;
        let s = Synthesizer::new(&m.0, horizon, SynthesisOptions::default())?;
        let slots = s.slots();
        let params = match values.len() {
            1 => AlphaParams::uniform(&slots, values[0]),
            k if k == slots.len() => AlphaParams::from_values(&slots, values),
            k => return Err(invalid(&format!("alpha has {k} values, expected 1 or {}", slots.len()))),
        };
        let (_, clms) = s.synthesize(&params)?;
        put(out, PolyslsClm(clms))
    })
}

/// # Safety
/// `clm` must be a valid handle; `horizon` and `dim` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_shape(
    clm: *const PolyslsClm,
    horizon: *mut usize,
    dim: *mut usize,
) -> PolyslsStatus {
    guard(|| {
        let c = ref_arg(clm, "clm")?;
        *horizon.as_mut().ok_or_else(|| invalid("horizon is null"))? = c.0.horizon;
        *dim.as_mut().ok_or_else(|| invalid("dim is null"))? = c.0.dim();
        Ok(())
    })
}

unsafe fn eval(
    clm: *const PolyslsClm,
    window: *const f64,
    window_len: usize,
    out: *mut f64,
    out_len: usize,
    input: bool,
) -> PolyslsStatus {
    guard(|| {
        let c = ref_arg(clm, "clm")?;
        let w = Window::from_flat(c.0.dim(), slice_arg(window, window_len, "window")?.to_vec())?;
        let v = if input { c.0.input(&w)? } else { c.0.state(&w)? };
        write_out(out, out_len, &v)
    })
}

/// Evaluates the state map on a window of `(T+1)*n` values.
///
/// # Safety
/// `clm` must be a valid handle; `window` must point to `window_len`
/// doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_state(
    clm: *const PolyslsClm,
    window: *const f64,
    window_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PolyslsStatus {
    eval(clm, window, window_len, out, out_len, false)
}

/// Evaluates the input map on a window of `(T+1)*n` values.
///
/// # Safety
/// Same as [`polysls_clm_state`].
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_input(
    clm: *const PolyslsClm,
    window: *const f64,
    window_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PolyslsStatus {
    eval(clm, window, window_len, out, out_len, true)
}

/// Largest achievability residual over `trials` random windows. Returns
/// `POLYSLS_STATUS_VERIFICATION` when it exceeds `tolerance`; the residual
/// is written either way.
///
/// # Safety
/// `clm` and `model` must be valid handles; `residual` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_verify(
    clm: *const PolyslsClm,
    model: *const PolyslsModel,
    trials: usize,
    seed: u64,
    tolerance: f64,
    residual: *mut f64,
) -> PolyslsStatus {
    guard(|| {
        let c = ref_arg(clm, "clm")?;
        let m = ref_arg(model, "model")?;
        let out = residual.as_mut().ok_or_else(|| invalid("residual is null"))?;
        let r = verify_achievability(&c.0, &m.0, trials, seed)?;
        *out = r;
        if r > tolerance {
            return Err(Error::AchievabilityViolation { residual: r, tolerance }.into());
        }
        Ok(())
    })
}

/// Writes the maps to a JSON archive.
///
/// # Safety
/// `clm` must be a valid handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_save(clm: *const PolyslsClm, path: *const c_char) -> PolyslsStatus {
    guard(|| {
        let c = ref_arg(clm, "clm")?;
        let path = str_arg(path, "path")?;
        save_clm(&c.0, &BTreeMap::new(), Path::new(path))?;
        Ok(())
    })
}

/// Reads an archive. With a non-null `model`, the archive must have been
/// built for the same dynamics.
///
/// # Safety
/// `path` must be a NUL-terminated string, `model` null or a valid handle
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_load(
    path: *const c_char,
    model: *const PolyslsModel,
    out: *mut *mut PolyslsClm,
) -> PolyslsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = model.as_ref().map(|m| &m.0);
        let (clms, _) = load_clm(Path::new(path), m)?;
        put(out, PolyslsClm(clms))
    })
}

/// # Safety
/// `clm` must be a valid handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn polysls_controller_new(
    clm: *const PolyslsClm,
    out: *mut *mut PolyslsController,
) -> PolyslsStatus {
    guard(|| {
        let c = ref_arg(clm, "clm")?;
        put(out, PolyslsController(ControllerState::for_maps(&c.0)))
    })
}

/// Observes `x_t` (`n` values) and writes `u_t` to `u_out`.
///
/// # Safety
/// Handles must be valid; `x` must point to `n` doubles and `u_out` to `n`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn polysls_controller_step(
    controller: *mut PolyslsController,
    clm: *const PolyslsClm,
    model: *const PolyslsModel,
    x: *const f64,
    n: usize,
    u_out: *mut f64,
) -> PolyslsStatus {
    guard(|| {
        let ctrl = controller.as_mut().ok_or_else(|| invalid("controller is null"))?;
        let c = ref_arg(clm, "clm")?;
        let m = ref_arg(model, "model")?;
        let u = ctrl.0.step(&c.0, &m.0, slice_arg(x, n, "x")?)?;
        write_out(u_out, n, &u)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn polysls_model_free(model: *mut PolyslsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `clm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn polysls_clm_free(clm: *mut PolyslsClm) {
    if !clm.is_null() {
        drop(Box::from_raw(clm));
    }
}

/// # Safety
/// `controller` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn polysls_controller_free(controller: *mut PolyslsController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classes() {
        assert_eq!(status_of(&Error::Divergence { step: 1, norm: 2.0 }), PolyslsStatus::Divergence);
        assert_eq!(
            status_of(&Error::ExpansionOverflow { degree: 9, max_degree: 8 }),
            PolyslsStatus::Overflow
        );
        assert_eq!(status_of(&Error::UnknownModel("x".into())), PolyslsStatus::Config);
    }

    #[test]
    fn panics_become_a_status() {
        assert_eq!(guard(|| panic!("boom")), PolyslsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(polysls_last_error()) }.to_str().unwrap().to_string();
        assert!(msg.contains("boom"));
    }
}
