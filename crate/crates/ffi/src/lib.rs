//! C ABI over `vcache-core`.
//!
//! Fallible functions return a [`VcStatus`]. On failure a message is kept
//! per thread and can be read with [`vc_last_error`]. Objects cross the
//! boundary as opaque handles, each released by its own `_free` function.
//! Strings handed out by the library are released with [`vc_string_free`].
//! Panics are caught at the boundary and reported as `VC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vcache_core::cli::{self, CliError};
use vcache_core::coreset::{self, Budget, CoresetConfig, SelectionManifest};
use vcache_core::difficulty::{self, DifficultyConfig};
use vcache_core::flowsim::{integrate_full, FlowField, GmmField, MlpField, SamplerConfig};
use vcache_core::ingest::{self, Dataset};
use vcache_core::vcache::{self, CacheConfig};

/// Result of a library call. Values 1 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    Io = 1,
    InvalidArgument = 2,
    MissingLosses = 3,
    NonFinite = 4,
    Diverged = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Loaded or generated embedding dataset.
pub struct VcDataset(Dataset);

/// Result of a coreset or random-baseline selection.
pub struct VcManifest(SelectionManifest);

/// Velocity field (GMM or MLP).
pub struct VcField(Box<dyn FlowField>);

/// Caching schedule parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VcCacheConfig {
    /// Relative smoothness threshold, in (0, 1).
    pub threshold: f64,
    /// Recompute interval during the stable phase.
    pub interval: usize,
    /// Trailing steps that are always computed.
    pub adjust: usize,
    pub min_onset: usize,
}

impl From<VcCacheConfig> for CacheConfig {
    fn from(c: VcCacheConfig) -> Self {
        CacheConfig {
            threshold: c.threshold,
            interval: c.interval,
            adjust: c.adjust,
            min_onset: c.min_onset,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail {
    status: VcStatus,
    message: String,
}

impl Fail {
    fn new(status: VcStatus, message: impl Into<String>) -> Self {
        Fail {
            status,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Fail::new(VcStatus::InvalidArgument, message)
    }
}

impl From<CliError> for Fail {
    fn from(e: CliError) -> Self {
        let status = match e.exit_code() {
            cli::EXIT_IO => VcStatus::Io,
            cli::EXIT_MISSING_LOSSES => VcStatus::MissingLosses,
            cli::EXIT_NON_FINITE => VcStatus::NonFinite,
            cli::EXIT_DIVERGED => VcStatus::Diverged,
            _ => VcStatus::InvalidArgument,
        };
        Fail::new(status, e.to_string())
    }
}

fn fail<E: Into<CliError>>(e: E) -> Fail {
    Fail::from(e.into())
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VcStatus::Panic
        }
    }
}

fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(VcStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::invalid(format!("{name} is not valid UTF-8")))
}

fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| Fail::new(VcStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(VcStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn emit<T>(out: *mut *mut T, value: T) {
    // SAFETY: `out` was checked non-null by the caller of `emit`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads a JSONL dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_load_jsonl(path: *const c_char, out: *mut *mut VcDataset) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = ingest::load_jsonl(str_arg(path, "path")?).map_err(fail)?;
        emit(out, VcDataset(ds));
        Ok(())
    })
}

/// Loads a binary embedding matrix.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_load_matrix(path: *const c_char, out: *mut *mut VcDataset) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = ingest::load_matrix(str_arg(path, "path")?).map_err(fail)?;
        emit(out, VcDataset(ds));
        Ok(())
    })
}

/// Generates the deterministic clustered dataset used by `vcache synth`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_synth(
    seed: u64,
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f64,
    out: *mut *mut VcDataset,
) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = ingest::synth_dataset(seed, n, dim, clusters, spread).map_err(fail)?;
        emit(out, VcDataset(ds));
        Ok(())
    })
}

/// Writes a dataset as JSONL.
///
/// # Safety
/// `dataset` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_save_jsonl(dataset: *const VcDataset, path: *const c_char) -> VcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        ingest::save_jsonl(&ds.0, str_arg(path, "path")?).map_err(fail)
    })
}

/// Number of records; 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_len(dataset: *const VcDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.0.len())
}

/// Embedding dimension; 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_dim(dataset: *const VcDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.0.dim())
}

/// # Safety
/// `dataset` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vc_dataset_free(dataset: *mut VcDataset) {
    free(dataset);
}

/// Difficulty scoring, forward pass and greedy selection, as in
/// `vcache select`. `budget` accepts `"10"`, `"0.1"` or `"10%"`.
///
/// # Safety
/// `dataset` must be a live handle, `budget` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vc_coreset_select(
    dataset: *const VcDataset,
    budget: *const c_char,
    k_neighbors: usize,
    gamma_f: f64,
    gamma_r: f64,
    sample_fraction: f64,
    seed: u64,
    out: *mut *mut VcManifest,
) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = &handle(dataset, "dataset")?.0;
        let budget: Budget = str_arg(budget, "budget")?.parse().map_err(Fail::invalid)?;
        let cfg = CoresetConfig {
            k_neighbors,
            gamma_f,
            gamma_r,
            budget,
        };
        let dcfg = DifficultyConfig { sample_fraction, seed };
        dcfg.validate().map_err(fail)?;
        let x = difficulty::difficulties(ds, &dcfg).map_err(fail)?;
        let (manifest, _) = coreset::run_pipeline(ds, &x, &cfg).map_err(fail)?;
        emit(out, VcManifest(manifest));
        Ok(())
    })
}

/// Seeded uniform selection of the same budget.
///
/// # Safety
/// As for [`vc_coreset_select`].
#[no_mangle]
pub unsafe extern "C" fn vc_random_baseline(
    dataset: *const VcDataset,
    budget: *const c_char,
    seed: u64,
    out: *mut *mut VcManifest,
) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = &handle(dataset, "dataset")?.0;
        let budget: Budget = str_arg(budget, "budget")?.parse().map_err(Fail::invalid)?;
        let m = coreset::random_baseline(ds, budget, seed).map_err(fail)?;
        emit(out, VcManifest(m));
        Ok(())
    })
}

/// Number of picks; 0 for null.
///
/// # Safety
/// `manifest` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_manifest_len(manifest: *const VcManifest) -> usize {
    unsafe { manifest.as_ref() }.map_or(0, |m| m.0.picks.len())
}

/// Copies the picked row indices, in selection order, into `indices`.
///
/// # Safety
/// `indices` must have room for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn vc_manifest_indices(
    manifest: *const VcManifest,
    indices: *mut usize,
    capacity: usize,
) -> VcStatus {
    guard(|| {
        let m = &handle(manifest, "manifest")?.0;
        out_ptr(indices, "indices")?;
        if capacity < m.picks.len() {
            return Err(Fail::new(
                VcStatus::BufferTooSmall,
                format!("need {} slots, got {capacity}", m.picks.len()),
            ));
        }
        // SAFETY: checked non-null, caller guarantees `capacity` slots.
        let buf = unsafe { std::slice::from_raw_parts_mut(indices, capacity) };
        for (slot, p) in buf.iter_mut().zip(&m.picks) {
            *slot = p.index;
        }
        Ok(())
    })
}

/// Manifest as pretty JSON, same bytes as `manifest.json` without the
/// trailing newline. Free the result with [`vc_string_free`].
///
/// # Safety
/// `manifest` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_manifest_to_json(manifest: *const VcManifest, out: *mut *mut c_char) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = &handle(manifest, "manifest")?.0;
        let text = serde_json::to_string_pretty(m).map_err(|e| Fail::invalid(e.to_string()))?;
        let c = CString::new(text).map_err(|e| Fail::invalid(e.to_string()))?;
        // SAFETY: checked non-null above.
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `manifest` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vc_manifest_free(manifest: *mut VcManifest) {
    free(manifest);
}

#[no_mangle]
pub extern "C" fn vc_cache_config_default() -> VcCacheConfig {
    let c = CacheConfig::default();
    VcCacheConfig {
        threshold: c.threshold,
        interval: c.interval,
        adjust: c.adjust,
        min_onset: c.min_onset,
    }
}

/// Fills `mask` (one byte per step, 1 = compute) for a run of `n_steps`
/// with the given onset; a negative onset means none was detected. A null
/// `config` uses the defaults. `computed` may be null.
///
/// # Safety
/// `mask` must have room for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn vc_plan_schedule(
    n_steps: usize,
    onset: isize,
    config: *const VcCacheConfig,
    mask: *mut u8,
    capacity: usize,
    computed: *mut usize,
) -> VcStatus {
    guard(|| {
        out_ptr(mask, "mask")?;
        let cfg = unsafe { config.as_ref() }.map_or_else(CacheConfig::default, |c| (*c).into());
        let onset = usize::try_from(onset).ok();
        let s = vcache::plan_schedule(n_steps, onset, &cfg).map_err(fail)?;
        if capacity < n_steps {
            return Err(Fail::new(
                VcStatus::BufferTooSmall,
                format!("need {n_steps} bytes, got {capacity}"),
            ));
        }
        // SAFETY: checked non-null, caller guarantees `capacity` bytes.
        let buf = unsafe { std::slice::from_raw_parts_mut(mask, capacity) };
        for (b, &m) in buf.iter_mut().zip(&s.mask) {
            *b = u8::from(m);
        }
        if !computed.is_null() {
            // SAFETY: checked non-null.
            unsafe { *computed = s.computed_count };
        }
        Ok(())
    })
}

/// The bundled two-component GMM field in two dimensions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_field_gmm_bundled(out: *mut *mut VcField) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        emit(out, VcField(Box::new(GmmField::bundled())));
        Ok(())
    })
}

/// Parses a field from JSON: a GMM (`{"components": [...]}`) or an MLP
/// written by `vcache train-flow`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vc_field_from_json(json: *const c_char, out: *mut *mut VcField) -> VcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let value: serde_json::Value =
            serde_json::from_str(str_arg(json, "json")?).map_err(|e| Fail::invalid(e.to_string()))?;
        let field: Box<dyn FlowField> = if value.get("components").is_some() {
            let g: GmmField = serde_json::from_value(value).map_err(|e| Fail::invalid(e.to_string()))?;
            Box::new(g)
        } else {
            Box::new(MlpField::from_json(&value).map_err(fail)?)
        };
        emit(out, VcField(field));
        Ok(())
    })
}

/// Field dimension; 0 for null.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_field_dim(field: *const VcField) -> usize {
    unsafe { field.as_ref() }.map_or(0, |f| f.0.dim())
}

/// # Safety
/// `field` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vc_field_free(field: *mut VcField) {
    free(field);
}

/// Integrates one sample from `x0` over `n_steps` Euler steps and writes the
/// endpoint to `endpoint` (`dim` values). A null `cache` runs every step;
/// otherwise the three-stage cache is used. `evaluations` (nullable)
/// receives the number of field evaluations.
///
/// # Safety
/// `x0` and `endpoint` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn vc_integrate(
    field: *const VcField,
    x0: *const f64,
    dim: usize,
    n_steps: usize,
    cache: *const VcCacheConfig,
    endpoint: *mut f64,
    evaluations: *mut usize,
) -> VcStatus {
    guard(|| {
        let f = handle(field, "field")?.0.as_ref();
        out_ptr(x0 as *mut f64, "x0")?;
        out_ptr(endpoint, "endpoint")?;
        // SAFETY: checked non-null, caller guarantees `dim` values.
        let x = unsafe { std::slice::from_raw_parts(x0, dim) };
        let scfg = SamplerConfig {
            n_steps,
            ..SamplerConfig::default()
        };
        let tr = match unsafe { cache.as_ref() } {
            None => integrate_full(f, x, &scfg).map_err(fail)?,
            Some(c) => vcache::integrate_cached(f, x, &scfg, &(*c).into()).map_err(fail)?.trajectory,
        };
        // SAFETY: checked non-null, caller guarantees `dim` slots.
        let out = unsafe { std::slice::from_raw_parts_mut(endpoint, dim) };
        out.copy_from_slice(tr.endpoint());
        if !evaluations.is_null() {
            // SAFETY: checked non-null.
            unsafe { *evaluations = tr.evaluations() };
        }
        Ok(())
    })
}
