//! C ABI over the antmute library.
//!
//! Every object crosses the boundary as an opaque handle. Handles come from a
//! constructor such as `am_config_profile` or `am_model_load` and are released
//! by the matching `am_*_free`.
//! Functions return an [`AmStatus`]; on failure a description is kept per
//! thread and can be read with [`am_last_error`]. Results are written through
//! out-pointers, which are left untouched on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use antmute::complexity::{energy_report_from_counts, fpo_iteration, fpo_report, Algorithm};
use antmute::experiment::{
    evaluate_split, generate_dataset, run_heuristics, train_asymmetric, train_symmetric, Dataset, ExperimentConfig,
    HeuristicRun,
};
use antmute::nam::{NamModel, Split};
use antmute::tam::SolverId;
use antmute::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Invariant = 5,
    Numerical = 6,
    Panic = 7,
}

impl From<&Error> for AmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch(_)
            | Error::OutOfRange(_)
            | Error::Empty(_)
            | Error::Missing(_) => AmStatus::InvalidArgument,
            Error::Io { .. } => AmStatus::Io,
            Error::Format { .. } | Error::Json(_) => AmStatus::Format,
            Error::Invariant(_) => AmStatus::Invariant,
            Error::Singular(_) | Error::NotPsd(_) | Error::Diverged { .. } => AmStatus::Numerical,
        }
    }
}

/// Dataset split selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmSplit {
    Train = 0,
    Validation = 1,
    Test = 2,
}

impl From<AmSplit> for Split {
    fn from(s: AmSplit) -> Self {
        match s {
            AmSplit::Train => Split::Train,
            AmSplit::Validation => Split::Validation,
            AmSplit::Test => Split::Test,
        }
    }
}

/// Solver selector for heuristic-run queries.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmSolver {
    Greedy = 0,
    Sequential = 1,
    FixedColumn = 2,
    FixedRow = 3,
    Nam = 4,
}

impl From<AmSolver> for SolverId {
    fn from(s: AmSolver) -> Self {
        match s {
            AmSolver::Greedy => SolverId::Greedy,
            AmSolver::Sequential => SolverId::Sequential,
            AmSolver::FixedColumn => SolverId::FixedColumn,
            AmSolver::FixedRow => SolverId::FixedRow,
            AmSolver::Nam => SolverId::Nam,
        }
    }
}

/// Experiment configuration.
pub struct AmConfig(ExperimentConfig);
/// Labeled dataset.
pub struct AmDataset(Dataset);
/// Classifier checkpoint.
pub struct AmModel(NamModel);
/// Per-slot solver comparison.
pub struct AmHeuristicRun(HeuristicRun);

/// Accuracy and QoS guarantee of a model on one split.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AmMetrics {
    pub samples: usize,
    pub accuracy: f64,
    pub qos_guarantee: f64,
}

/// Per-slot FPO totals of the analytic model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AmFpoSummary {
    pub greedy: f64,
    pub sequential: f64,
    pub fixed_column: f64,
    pub nn: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AmStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            AmStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            AmStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AmStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: caller guarantees `p` is null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(slot: &mut *mut T, value: T) {
    *slot = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn am_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn am_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in profile, `"desk"` or `"full"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_config_profile(name: *const c_char, out_cfg: *mut *mut AmConfig) -> AmStatus {
    guard(|| {
        let name = unsafe { path(name, "name") }?;
        let slot = unsafe { out(out_cfg, "out_cfg") }?;
        let cfg = ExperimentConfig::profile(&name.to_string_lossy())?;
        boxed(slot, AmConfig(cfg));
        Ok(())
    })
}

/// Loads and validates a JSON configuration file.
///
/// # Safety
/// `file` must be a NUL-terminated path; `out_cfg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_config_load(file: *const c_char, out_cfg: *mut *mut AmConfig) -> AmStatus {
    guard(|| {
        let p = unsafe { path(file, "file") }?;
        let slot = unsafe { out(out_cfg, "out_cfg") }?;
        let cfg = ExperimentConfig::load(&p)?;
        cfg.validate()?;
        boxed(slot, AmConfig(cfg));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_config_save(cfg: *const AmConfig, file: *const c_char) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let p = unsafe { path(file, "file") }?;
        cfg.0.save(&p)?;
        Ok(())
    })
}

/// Derives every seed of the configuration from `base`.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn am_config_reseed(cfg: *mut AmConfig, base: u64) -> AmStatus {
    guard(|| {
        let cfg = unsafe { out(cfg, "cfg") }?;
        cfg.0.reseed(base);
        Ok(())
    })
}

/// Sets the dataset size.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn am_config_set_dataset_size(cfg: *mut AmConfig, drops: usize, slots_per_drop: usize) -> AmStatus {
    guard(|| {
        let cfg = unsafe { out(cfg, "cfg") }?;
        let mut next = cfg.0.clone();
        next.dataset.drops = drops;
        next.dataset.slots_per_drop = slots_per_drop;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Sets the epoch budget of both training phases.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn am_config_set_epochs(cfg: *mut AmConfig, symmetric: usize, asymmetric: usize) -> AmStatus {
    guard(|| {
        let cfg = unsafe { out(cfg, "cfg") }?;
        cfg.0.nam.symmetric.epochs = symmetric;
        cfg.0.nam.asymmetric.epochs = asymmetric;
        Ok(())
    })
}

/// Configuration hash as 16 hex digits plus NUL; `buf` needs 17 bytes.
///
/// # Safety
/// `cfg` must be a live handle; `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn am_config_hash(cfg: *const AmConfig, buf: *mut c_char, len: usize) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let h = cfg.0.hash();
        if len < h.len() + 1 {
            return Err(Fail::Arg(format!("buffer of {len} bytes, need {}", h.len() + 1)));
        }
        // SAFETY: `buf` holds at least h.len() + 1 bytes.
        unsafe {
            ptr::copy_nonoverlapping(h.as_ptr().cast::<c_char>(), buf, h.len());
            *buf.add(h.len()) = 0;
        }
        Ok(())
    })
}

/// Number of antenna configuration classes.
///
/// # Safety
/// `cfg` must be a live handle; `out_classes` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_config_classes(cfg: *const AmConfig, out_classes: *mut usize) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        *unsafe { out(out_classes, "out_classes") }? = cfg.0.classes();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_config_free(cfg: *mut AmConfig) {
    if !cfg.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// # Safety
/// `cfg` must be a live handle; `out_ds` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_generate(cfg: *const AmConfig, out_ds: *mut *mut AmDataset) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let slot = unsafe { out(out_ds, "out_ds") }?;
        boxed(slot, AmDataset(generate_dataset(&cfg.0)?));
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated path; `out_ds` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_read(file: *const c_char, out_ds: *mut *mut AmDataset) -> AmStatus {
    guard(|| {
        let p = unsafe { path(file, "file") }?;
        let slot = unsafe { out(out_ds, "out_ds") }?;
        boxed(slot, AmDataset(Dataset::read(&p)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_write(ds: *const AmDataset, file: *const c_char) -> AmStatus {
    guard(|| {
        let ds = unsafe { as_ref(ds, "ds") }?;
        let p = unsafe { path(file, "file") }?;
        ds.0.write(&p)?;
        Ok(())
    })
}

/// Sample count and infeasible-slot count.
///
/// # Safety
/// `ds` must be a live handle; both out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_counts(
    ds: *const AmDataset,
    out_samples: *mut usize,
    out_infeasible: *mut usize,
) -> AmStatus {
    guard(|| {
        let ds = unsafe { as_ref(ds, "ds") }?;
        let s = unsafe { out(out_samples, "out_samples") }?;
        let i = unsafe { out(out_infeasible, "out_infeasible") }?;
        *s = ds.0.samples.len();
        *i = ds.0.header.infeasible;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_free(ds: *mut AmDataset) {
    if !ds.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Symmetric phase from a fresh seeded model.
///
/// # Safety
/// `cfg` and `ds` must be live handles; `out_model` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_train_symmetric(
    cfg: *const AmConfig,
    ds: *const AmDataset,
    out_model: *mut *mut AmModel,
) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let ds = unsafe { as_ref(ds, "ds") }?;
        let slot = unsafe { out(out_model, "out_model") }?;
        ds.0.check_config(&cfg.0)?;
        let (m, _) = train_symmetric(&cfg.0, &ds.0)?;
        boxed(slot, AmModel(m));
        Ok(())
    })
}

/// Asymmetric retraining of a copy of `base` with the configured loss.
///
/// # Safety
/// `cfg`, `ds` and `base` must be live handles; `out_model` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_train_asymmetric(
    cfg: *const AmConfig,
    ds: *const AmDataset,
    base: *const AmModel,
    out_model: *mut *mut AmModel,
) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let ds = unsafe { as_ref(ds, "ds") }?;
        let base = unsafe { as_ref(base, "base") }?;
        let slot = unsafe { out(out_model, "out_model") }?;
        ds.0.check_config(&cfg.0)?;
        let (m, _) = train_asymmetric(&cfg.0, &ds.0, &base.0, &cfg.0.nam.loss)?;
        boxed(slot, AmModel(m));
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated path; `out_model` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_load(file: *const c_char, out_model: *mut *mut AmModel) -> AmStatus {
    guard(|| {
        let p = unsafe { path(file, "file") }?;
        let slot = unsafe { out(out_model, "out_model") }?;
        boxed(slot, AmModel(NamModel::load(&p)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_model_save(model: *const AmModel, file: *const c_char) -> AmStatus {
    guard(|| {
        let m = unsafe { as_ref(model, "model") }?;
        let p = unsafe { path(file, "file") }?;
        m.0.save(&p)?;
        Ok(())
    })
}

/// Input length expected by [`am_model_predict`].
///
/// # Safety
/// `model` must be a live handle; `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_input_len(model: *const AmModel, out_len: *mut usize) -> AmStatus {
    guard(|| {
        let m = unsafe { as_ref(model, "model") }?;
        *unsafe { out(out_len, "out_len") }? = m.0.input_len();
        Ok(())
    })
}

/// Predicted class for one feature tensor of `len` floats.
///
/// # Safety
/// `model` must be a live handle; `features` valid for `len` reads;
/// `out_class` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_predict(
    model: *const AmModel,
    features: *const f32,
    len: usize,
    out_class: *mut usize,
) -> AmStatus {
    guard(|| {
        let m = unsafe { as_ref(model, "model") }?;
        if features.is_null() {
            return Err(Fail::Null("features"));
        }
        // SAFETY: `features` is valid for `len` reads per the contract.
        let x = unsafe { std::slice::from_raw_parts(features, len) };
        *unsafe { out(out_class, "out_class") }? = m.0.predict(x)?;
        Ok(())
    })
}

/// # Safety
/// All handles must be live; `out_metrics` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_model_evaluate(
    cfg: *const AmConfig,
    ds: *const AmDataset,
    model: *const AmModel,
    split: AmSplit,
    out_metrics: *mut AmMetrics,
) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let ds = unsafe { as_ref(ds, "ds") }?;
        let m = unsafe { as_ref(model, "model") }?;
        let slot = unsafe { out(out_metrics, "out_metrics") }?;
        let e = evaluate_split(&cfg.0, &ds.0, &m.0, split.into())?;
        *slot = AmMetrics {
            samples: e.samples,
            accuracy: e.accuracy,
            qos_guarantee: e.qos_guarantee,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_model_free(model: *mut AmModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Runs the heuristic solvers, and the classifier when `model` is non-null.
///
/// # Safety
/// `cfg` must be live, `model` null or live, `out_run` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_heuristics_run(
    cfg: *const AmConfig,
    model: *const AmModel,
    out_run: *mut *mut AmHeuristicRun,
) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        // SAFETY: null or live per the contract.
        let m = unsafe { model.as_ref() }.map(|m| &m.0);
        let slot = unsafe { out(out_run, "out_run") }?;
        boxed(slot, AmHeuristicRun(run_heuristics(&cfg.0, m)?));
        Ok(())
    })
}

/// Slot count, mean active elements and energy saving of one solver.
///
/// # Safety
/// `cfg` and `run` must be live handles; out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_heuristics_summary(
    cfg: *const AmConfig,
    run: *const AmHeuristicRun,
    solver: AmSolver,
    out_slots: *mut usize,
    out_mean_active: *mut f64,
    out_saving: *mut f64,
) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let run = unsafe { as_ref(run, "run") }?;
        let slots = unsafe { out(out_slots, "out_slots") }?;
        let mean = unsafe { out(out_mean_active, "out_mean_active") }?;
        let saving = unsafe { out(out_saving, "out_saving") }?;
        let counts: Vec<usize> = run.0.outcomes(solver.into()).iter().map(|o| o.active_elements).collect();
        if counts.is_empty() {
            return Err(Fail::Arg(format!("no outcomes for solver {solver:?}")));
        }
        let e = energy_report_from_counts(&counts, &cfg.0.geometry, &cfg.0.power)?;
        *slots = e.slots;
        *mean = e.mean_active;
        *saving = e.saving_fraction;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_heuristics_free(run: *mut AmHeuristicRun) {
    if !run.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(run) });
    }
}

/// FPOs of one beamforming-plus-rate evaluation with `m_i` active antennas.
///
/// # Safety
/// `out_fpo` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_fpo_iteration(
    m_i: usize,
    users: usize,
    rx_antennas: usize,
    streams: usize,
    n_prb: usize,
    out_fpo: *mut f64,
) -> AmStatus {
    guard(|| {
        *unsafe { out(out_fpo, "out_fpo") }? = fpo_iteration(m_i, users, rx_antennas, streams, n_prb);
        Ok(())
    })
}

/// Analytic per-slot FPOs for the configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out_summary` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn am_fpo_summary(cfg: *const AmConfig, out_summary: *mut AmFpoSummary) -> AmStatus {
    guard(|| {
        let cfg = unsafe { as_ref(cfg, "cfg") }?;
        let slot = unsafe { out(out_summary, "out_summary") }?;
        let r = fpo_report(&cfg.0.fpo_params(), &cfg.0.nam.architecture, cfg.0.fpo_mode)?;
        let get = |alg: Algorithm| {
            r.algorithms
                .iter()
                .find(|a| a.algorithm == alg)
                .map(|a| a.fpos_per_slot)
                .ok_or_else(|| Fail::Arg(format!("report lacks {}", alg.name())))
        };
        *slot = AmFpoSummary {
            greedy: get(Algorithm::Greedy)?,
            sequential: get(Algorithm::Sequential)?,
            fixed_column: get(Algorithm::FixedColumn)?,
            nn: r.nn.total,
        };
        Ok(())
    })
}
