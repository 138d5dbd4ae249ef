//! C ABI for the encompass library.
//!
//! Tables and models are opaque heap handles released with their `_free`
//! functions. Every fallible call returns an [`EncStatus`]; on failure the
//! message is available from [`enc_last_error`] on the same thread until the
//! next failing call. Strings returned to the caller are freed with
//! [`enc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use encompass::hypothesis::{ModelDefinition, ModelSpec};
use encompass::mc::{bayes_factor, BfKind, PriorSpec, RunSettings};
use encompass::{fixtures, studies, table, Error, StratifiedTable};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input data or a model failed to parse or validate.
    InvalidInput = 3,
    /// Shapes of the arguments disagree.
    Dimension = 4,
    /// The estimator failed, e.g. no draw satisfied the constraints.
    Estimation = 5,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 6,
    /// An unexpected internal failure.
    Internal = 7,
}

/// Opaque table handle.
pub struct EncTable(StratifiedTable);

/// Opaque model handle, built against one table's shape.
pub struct EncModel(ModelSpec);

/// Run settings for [`enc_bayes_factor`]; start from
/// [`enc_settings_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EncSettings {
    pub seed: u64,
    pub draws: u64,
    pub pilot: u64,
    pub replicates: u64,
    /// Symmetric Dirichlet prior concentration per cell.
    pub concentration: f64,
}

/// Summary of a Bayes factor against the encompassing model, natural log.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EncBfResult {
    pub log_bf: f64,
    /// Standard deviation over replicates.
    pub sd: f64,
    pub replicates: u64,
    /// Largest number of tolerance stages used by a replicate.
    pub stages: u32,
    /// 1 when a stage chain stopped on a small effective sample size.
    pub truncated: u8,
    /// 1 for models with about-equality rows.
    pub about_equality: u8,
    /// Smallest first-stage effective sample size.
    pub min_ess: f64,
    /// Number of warnings; see the JSON variant for their text.
    pub warnings: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> EncStatus {
    match err {
        Error::Dimension(_) => EncStatus::Dimension,
        e if !e.is_input_error() => EncStatus::Estimation,
        _ => EncStatus::InvalidInput,
    }
}

/// Run `f`, recording any error or panic for [`enc_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (EncStatus, String)>) -> EncStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EncStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EncStatus::Internal
        }
    }
}

type Fallible<T> = Result<T, (EncStatus, String)>;

fn lib<T>(r: encompass::Result<T>) -> Fallible<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EncStatus, String) {
    (EncStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Fallible<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (EncStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Fallible<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Fallible<()> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// The message of the last failure on this thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn enc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn enc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn enc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a bundled dataset by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enc_table_fixture(name: *const c_char, out: *mut *mut EncTable) -> EncStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        put(out, EncTable(lib(fixtures::by_name(name))?), "out")
    })
}

/// Parse a table from CSV text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enc_table_from_csv(text: *const c_char, out: *mut *mut EncTable) -> EncStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        put(out, EncTable(lib(StratifiedTable::from_csv_str(text))?), "out")
    })
}

/// Parse a table from JSON text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enc_table_from_json(text: *const c_char, out: *mut *mut EncTable) -> EncStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        put(out, EncTable(lib(StratifiedTable::from_json_str(text))?), "out")
    })
}

/// # Safety
/// `t` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn enc_table_free(t: *mut EncTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live table handle.
#[no_mangle]
pub unsafe extern "C" fn enc_table_num_variables(t: *const EncTable) -> usize {
    t.as_ref().map_or(0, |t| t.0.dims().len())
}

/// Number of strata, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live table handle.
#[no_mangle]
pub unsafe extern "C" fn enc_table_num_strata(t: *const EncTable) -> usize {
    t.as_ref().map_or(0, |t| t.0.num_strata())
}

/// Total count over all strata, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live table handle.
#[no_mangle]
pub unsafe extern "C" fn enc_table_total(t: *const EncTable) -> u64 {
    t.as_ref().map_or(0, |t| t.0.total())
}

/// Copy the category counts of each variable into `dims[0..len]`.
///
/// # Safety
/// `t` must be a live table handle; `dims` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn enc_table_dims(t: *const EncTable, dims: *mut usize, len: usize) -> EncStatus {
    guard(|| {
        let t = ref_arg(t, "table")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = t.0.dims();
        if len < d.len() {
            return Err((EncStatus::BufferTooSmall, format!("need {} entries, got {len}", d.len())));
        }
        std::slice::from_raw_parts_mut(dims, d.len()).copy_from_slice(d);
        Ok(())
    })
}

/// Flat 0-based offset of a 1-based multi-index, last variable fastest.
///
/// # Safety
/// `index` and `dims` must each hold `q` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enc_lex_index(index: *const usize, dims: *const usize, q: usize, out: *mut usize) -> EncStatus {
    guard(|| {
        if index.is_null() || dims.is_null() || out.is_null() {
            return Err(null("index, dims or out"));
        }
        let idx = std::slice::from_raw_parts(index, q);
        let d = std::slice::from_raw_parts(dims, q);
        *out = lib(table::lex_index(idx, d))?;
        Ok(())
    })
}

/// Build a model from model-spec JSON against `table`'s shape.
///
/// # Safety
/// `json` must be a NUL-terminated string, `table` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn enc_model_from_json(
    json: *const c_char,
    table: *const EncTable,
    out: *mut *mut EncModel,
) -> EncStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let t = ref_arg(table, "table")?;
        let def = lib(ModelDefinition::from_json_str(json))?;
        let model = lib(def.build(t.0.dims(), t.0.num_strata()))?;
        put(out, EncModel(model), "out")
    })
}

/// Build one of the bundled models of a case study, e.g. `("father_son", "M3")`.
///
/// # Safety
/// `dataset` and `name` must be NUL-terminated strings, `table` a live
/// handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn enc_model_bundled(
    dataset: *const c_char,
    name: *const c_char,
    table: *const EncTable,
    out: *mut *mut EncModel,
) -> EncStatus {
    guard(|| {
        let dataset = str_arg(dataset, "dataset")?;
        let name = str_arg(name, "name")?;
        let t = ref_arg(table, "table")?;
        let def = lib(studies::models_for(dataset))?
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| (EncStatus::InvalidInput, format!("no bundled model '{name}' for {dataset}")))?;
        let model = lib(def.build(t.0.dims(), t.0.num_strata()))?;
        put(out, EncModel(model), "out")
    })
}

/// # Safety
/// `m` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn enc_model_free(m: *mut EncModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of about-equality rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn enc_model_num_equalities(m: *const EncModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.constraints.n_equalities())
}

/// Number of inequality rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn enc_model_num_inequalities(m: *const EncModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.constraints.n_inequalities())
}

/// Default settings: 10^6 draws, 10^5 pilot draws, one replicate, unit prior.
#[no_mangle]
pub extern "C" fn enc_settings_default() -> EncSettings {
    let d = RunSettings::default();
    EncSettings {
        seed: d.seed,
        draws: d.draws as u64,
        pilot: d.pilot as u64,
        replicates: d.replicates as u64,
        concentration: 1.0,
    }
}

fn estimate(model: &EncModel, table: &EncTable, s: &EncSettings) -> Fallible<encompass::mc::BFEstimate> {
    let to_usize = |v: u64, what: &str| {
        usize::try_from(v).map_err(|_| (EncStatus::InvalidInput, format!("{what} {v} is too large")))
    };
    let settings = RunSettings {
        seed: s.seed,
        draws: to_usize(s.draws, "draws")?,
        pilot: to_usize(s.pilot, "pilot")?,
        replicates: to_usize(s.replicates, "replicates")?,
        ..RunSettings::default()
    };
    let t = &table.0;
    if !(s.concentration > 0.0) || !s.concentration.is_finite() {
        return Err((EncStatus::InvalidInput, format!("concentration {} must be positive", s.concentration)));
    }
    let prior = PriorSpec::symmetric(s.concentration, t.cells_per_stratum(), t.num_strata());
    lib(bayes_factor(&model.0, t, &prior, &settings))
}

/// Bayes factor of `model` against the encompassing model.
///
/// # Safety
/// `model` and `table` must be live handles, `settings` null or valid, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn enc_bayes_factor(
    model: *const EncModel,
    table: *const EncTable,
    settings: *const EncSettings,
    out: *mut EncBfResult,
) -> EncStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let t = ref_arg(table, "table")?;
        let s = settings.as_ref().copied().unwrap_or_else(|| enc_settings_default());
        if out.is_null() {
            return Err(null("out"));
        }
        let est = estimate(m, t, &s)?;
        let min_ess = est
            .runs
            .iter()
            .filter_map(|r| r.stages.first())
            .map(|st| st.prior.ess.min(st.posterior.ess))
            .fold(f64::INFINITY, f64::min);
        *out = EncBfResult {
            log_bf: est.log_bf,
            sd: est.sd,
            replicates: est.replicates.len() as u64,
            stages: est.stage_counts().into_iter().max().unwrap_or(0) as u32,
            truncated: est.truncated() as u8,
            about_equality: (est.kind == BfKind::AboutEquality) as u8,
            min_ess,
            warnings: est.warnings.len() as u32,
        };
        Ok(())
    })
}

/// Bayes factor as the full serialised estimate; free `*out_json` with
/// [`enc_string_free`].
///
/// # Safety
/// As [`enc_bayes_factor`]; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enc_bayes_factor_json(
    model: *const EncModel,
    table: *const EncTable,
    settings: *const EncSettings,
    out_json: *mut *mut c_char,
) -> EncStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let t = ref_arg(table, "table")?;
        let s = settings.as_ref().copied().unwrap_or_else(|| enc_settings_default());
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let est = estimate(m, t, &s)?;
        let text = serde_json::to_string(&est).map_err(|e| (EncStatus::Internal, e.to_string()))?;
        *out_json = CString::new(text).map_err(|e| (EncStatus::Internal, e.to_string()))?.into_raw();
        Ok(())
    })
}
