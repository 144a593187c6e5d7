//! C ABI over the doormpc scenario runner and receding-horizon planner.
//!
//! Objects are opaque heap handles created by `dm_*_new`/`dm_*_load` and
//! released by the matching `dm_*_free`. Every fallible call returns a
//! [`DmErrorCode`]; on failure the message is available from
//! [`dm_last_error_message`] on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use doormpc::constraints::CONSTRAINT_COUNT;
use doormpc::kinematics::EulerZYX;
use doormpc::mpc::{Measurement, MpcPlanner, Setpoint, TrackingController};
use doormpc::scenario::{load_config, parse_config, run_scenario, write_log, LogFormat, RunLog, ScenarioConfig};
use doormpc::Error;
use nalgebra::{Vector3, Vector4};

/// Number of constraint rows in [`DmTickRecord::constraints`].
pub const DM_CONSTRAINT_COUNT: usize = 6;
const _: () = assert!(DM_CONSTRAINT_COUNT == CONSTRAINT_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmErrorCode {
    DmOk = 0,
    DmNullPointer = 1,
    DmInvalidArgument = 2,
    DmConfig = 3,
    DmIo = 4,
    DmDivergence = 5,
    DmAttachmentLost = 6,
    DmNumerical = 7,
    DmOutOfRange = 8,
    DmPanic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmLogFormat {
    DmLogCsv = 0,
    DmLogJsonLines = 1,
}

/// Opaque scenario configuration.
pub struct DmConfig(ScenarioConfig);

/// Opaque closed-loop run log.
pub struct DmRunLog(RunLog);

/// Opaque planner plus tracking controller.
pub struct DmPlanner {
    planner: MpcPlanner,
    controller: TrackingController,
}

/// Vehicle measurement. Angles in rad, body rate in the body frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DmMeasurement {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Roll, pitch, yaw (ZYX).
    pub attitude: [f64; 3],
    pub body_rate: [f64; 3],
    pub joints: [f64; 4],
    pub joint_rates: [f64; 4],
}

/// Setpoint emitted by one planner tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DmSetpoint {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub yaw: f64,
    pub joint_rates: [f64; 4],
    /// Planned thrust vector, world frame (N).
    pub force: [f64; 3],
    pub body_rate: [f64; 3],
    /// Planned state at the setpoint knot.
    pub planned: [f64; 9],
    pub residual: f64,
    pub iterations: u32,
    pub converged: bool,
    pub degraded: bool,
}

/// Summary of one logged tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DmTickRecord {
    pub time: f64,
    pub plant: [f64; 12],
    pub planner: [f64; 9],
    pub input: [f64; 8],
    pub constraints: [f64; DM_CONSTRAINT_COUNT],
    pub iterations: u32,
    pub converged: bool,
    pub degraded: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_for(e: &Error) -> DmErrorCode {
    match e {
        Error::ConfigParse { .. } | Error::ConfigValidation { .. } => DmErrorCode::DmConfig,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::LogFormat(_) | Error::Plot(_) => DmErrorCode::DmIo,
        Error::Divergence { .. } => DmErrorCode::DmDivergence,
        Error::AttachmentLost { .. } => DmErrorCode::DmAttachmentLost,
        Error::EulerSingularity { .. } | Error::IllConditioned { .. } => DmErrorCode::DmNumerical,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => DmErrorCode::DmInvalidArgument,
    }
}

struct Failure(DmErrorCode, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_for(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DmErrorCode::DmNullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmErrorCode {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            DmErrorCode::DmOk
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            DmErrorCode::DmPanic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DmErrorCode::DmInvalidArgument, format!("{what} is not valid UTF-8")))
}

fn give<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before building `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `dm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in door-opening scenario.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dm_config_bundled(out: *mut *mut DmConfig) -> DmErrorCode {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        give(out, DmConfig(ScenarioConfig::bundled()));
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_config_load(path: *const c_char, out: *mut *mut DmConfig) -> DmErrorCode {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_config(str_arg(path, "path")?)?;
        give(out, DmConfig(cfg));
        Ok(())
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_config_parse(text: *const c_char, out: *mut *mut DmConfig) -> DmErrorCode {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config(str_arg(text, "text")?, "<string>")?;
        give(out, DmConfig(cfg));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_config_set_duration(cfg: *mut DmConfig, seconds: f64) -> DmErrorCode {
    guard(|| {
        let cfg = borrow_mut(cfg, "config")?;
        let mut next = cfg.0.clone();
        next.sim.duration = seconds;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_config_set_seed(cfg: *mut DmConfig, seed: u64) -> DmErrorCode {
    guard(|| {
        borrow_mut(cfg, "config")?.0.sim.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_config_free(cfg: *mut DmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the closed loop described by `cfg`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_run_scenario(cfg: *const DmConfig, out: *mut *mut DmRunLog) -> DmErrorCode {
    guard(|| {
        let cfg = borrow(cfg, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let log = run_scenario(&cfg.0)?;
        give(out, DmRunLog(log));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_log_len(log: *const DmRunLog, len: *mut usize) -> DmErrorCode {
    guard(|| {
        let log = borrow(log, "log")?;
        *borrow_mut(len, "len")? = log.0.records.len();
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_log_record(log: *const DmRunLog, index: usize, out: *mut DmTickRecord) -> DmErrorCode {
    guard(|| {
        let log = borrow(log, "log")?;
        let out = borrow_mut(out, "out")?;
        let r = log.0.records.get(index).ok_or_else(|| {
            Failure(
                DmErrorCode::DmOutOfRange,
                format!("record {index} out of range (log has {})", log.0.records.len()),
            )
        })?;
        *out = DmTickRecord {
            time: r.time,
            plant: r.plant,
            planner: r.planner,
            input: r.input,
            constraints: r.constraints,
            iterations: r.iterations,
            converged: r.converged,
            degraded: r.degraded,
        };
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dm_log_write(log: *const DmRunLog, path: *const c_char, format: DmLogFormat) -> DmErrorCode {
    guard(|| {
        let log = borrow(log, "log")?;
        let format = match format {
            DmLogFormat::DmLogCsv => LogFormat::Csv,
            DmLogFormat::DmLogJsonLines => LogFormat::JsonLines,
        };
        write_log(&log.0, str_arg(path, "path")?, format)?;
        Ok(())
    })
}

/// # Safety
/// `log` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_log_free(log: *mut DmRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Planner and controller built from a scenario configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_planner_new(cfg: *const DmConfig, out: *mut *mut DmPlanner) -> DmErrorCode {
    guard(|| {
        let cfg = &borrow(cfg, "config")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let planner = MpcPlanner::new(cfg.model.clone(), cfg.mpc.clone(), cfg.target)?;
        let controller = TrackingController::new(cfg.controller.clone(), cfg.model.clone());
        give(out, DmPlanner { planner, controller });
        Ok(())
    })
}

fn to_measurement(m: &DmMeasurement) -> Measurement {
    Measurement {
        position: Vector3::from(m.position),
        velocity: Vector3::from(m.velocity),
        attitude: EulerZYX::new(m.attitude[0], m.attitude[1], m.attitude[2]),
        body_rate: Vector3::from(m.body_rate),
        joints: Vector4::from(m.joints),
        joint_rates: Vector4::from(m.joint_rates),
    }
}

fn from_setpoint(sp: &DmSetpoint) -> Setpoint {
    Setpoint {
        position: Vector3::from(sp.position),
        velocity: Vector3::from(sp.velocity),
        yaw: sp.yaw,
        joint_rates: Vector4::from(sp.joint_rates),
        force: Vector3::from(sp.force),
        body_rate: Vector3::from(sp.body_rate),
        planned: sp.planned.into(),
    }
}

/// One receding-horizon tick: convert, solve warm-started, emit a setpoint.
///
/// # Safety
/// `planner` must be a live handle; `m` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_planner_tick(
    planner: *mut DmPlanner,
    m: *const DmMeasurement,
    out: *mut DmSetpoint,
) -> DmErrorCode {
    guard(|| {
        let p = borrow_mut(planner, "planner")?;
        let m = to_measurement(borrow(m, "measurement")?);
        let out = borrow_mut(out, "out")?;
        let t = p.planner.tick(&m)?;
        let sp = &t.setpoint;
        *out = DmSetpoint {
            position: sp.position.into(),
            velocity: sp.velocity.into(),
            yaw: sp.yaw,
            joint_rates: sp.joint_rates.into(),
            force: sp.force.into(),
            body_rate: sp.body_rate.into(),
            planned: sp.planned.into(),
            residual: t.residual,
            iterations: t.solve.iterations as u32,
            converged: t.solve.converged,
            degraded: t.degraded,
        };
        Ok(())
    })
}

/// Tracking-controller command for a setpoint: thrust (N), body torque (N m)
/// and four joint rates (rad/s), written to `input[0..8]`.
///
/// # Safety
/// `planner` must be a live handle; `sp` and `m` readable; `input` must point
/// to eight writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_planner_command(
    planner: *const DmPlanner,
    sp: *const DmSetpoint,
    m: *const DmMeasurement,
    input: *mut f64,
) -> DmErrorCode {
    guard(|| {
        let p = borrow(planner, "planner")?;
        let sp = borrow(sp, "setpoint")?;
        let m = to_measurement(borrow(m, "measurement")?);
        if input.is_null() {
            return Err(null("input"));
        }
        let out = p.controller.compute(&from_setpoint(sp), &m)?;
        ptr::copy_nonoverlapping(out.input.as_ptr(), input, 8);
        Ok(())
    })
}

/// Forgets the previous plan so the next tick starts cold.
///
/// # Safety
/// `planner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_planner_reset(planner: *mut DmPlanner) -> DmErrorCode {
    guard(|| {
        borrow_mut(planner, "planner")?.planner.reset();
        Ok(())
    })
}

/// # Safety
/// `planner` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_planner_free(planner: *mut DmPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}
