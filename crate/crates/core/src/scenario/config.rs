//! Scenario files: one TOML tree, SI units and radians throughout.
//!
//! `vehicle.mass`, `door.d_v`, `door.width` and `door.inertia` are required;
//! everything else has a default, and each default that gets applied is
//! logged and listed in [`ScenarioConfig::applied_defaults`].

use std::fmt::Debug;
use std::path::Path;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::Deserialize;

use crate::ddp::SolverSettings;
use crate::error::{Error, Result};
use crate::kinematics::{ArmGeometry, DoorGeometry};
use crate::model::{planner_input, SystemModel, VehicleParams, INPUT_DIM, STATE_DIM};
use crate::mpc::{MpcConfig, TargetSpec, TrackingGains};

/// The door-opening scenario shipped with the crate.
pub const BUNDLED_SCENARIO: &str = include_str!("../../scenarios/door_opening.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    /// Plant and planner alternate on one thread.
    #[default]
    Stepped,
    /// Planner on its own thread, exchanging snapshots with the plant loop.
    Threaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub duration: f64,
    pub plant_dt: f64,
    pub seed: u64,
    /// Amplitude of the uniform generalized disturbance force, held per tick.
    pub disturbance_scale: f64,
    pub mode: ExecutionMode,
    /// Wall-clock solve times make logs machine dependent, so this is opt-in.
    pub record_latency: bool,
    pub attachment_tolerance: f64,
    pub initial_yaw: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration: 30.0,
            plant_dt: 1e-3,
            seed: 0,
            disturbance_scale: 0.0,
            mode: ExecutionMode::Stepped,
            record_latency: false,
            attachment_tolerance: 0.05,
            initial_yaw: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub model: SystemModel,
    pub mpc: MpcConfig,
    pub target: TargetSpec,
    pub controller: TrackingGains,
    pub sim: SimSettings,
    pub applied_defaults: Vec<String>,
}

impl ScenarioConfig {
    pub fn bundled() -> Self {
        parse_config(BUNDLED_SCENARIO, "<bundled>").expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mpc.solver.validate()?;
        let m = &self.mpc;
        if m.horizon < 1 {
            return Err(Error::validation("mpc.horizon", "must be at least 1"));
        }
        if !(m.dt > 0.0) {
            return Err(Error::validation("mpc.dt", "must be positive"));
        }
        if m.q.iter().chain(m.terminal.iter()).any(|w| !(*w >= 0.0)) {
            return Err(Error::validation("cost.q / cost.terminal", "weights must be non-negative"));
        }
        if m.r.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::validation("cost.r", "weights must be positive"));
        }
        if !(m.constraint_margin >= 0.0) {
            return Err(Error::validation("mpc.constraint_margin", "must be non-negative"));
        }
        let s = &self.sim;
        if !(s.duration >= 0.0) {
            return Err(Error::validation("sim.duration", "must be non-negative"));
        }
        if !(s.plant_dt > 0.0 && s.plant_dt <= m.dt) {
            return Err(Error::validation("sim.plant_dt", "must be positive and no larger than mpc.dt"));
        }
        let ratio = m.dt / s.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::validation("sim.plant_dt", "must divide mpc.dt evenly"));
        }
        if !(s.disturbance_scale >= 0.0) {
            return Err(Error::validation("sim.disturbance_scale", "must be non-negative"));
        }
        if !(s.attachment_tolerance > 0.0) {
            return Err(Error::validation("sim.attachment_tolerance", "must be positive"));
        }
        let g = &self.controller;
        let gains = g.position_kp.iter().chain(g.position_kd.iter()).chain(g.attitude_kp.iter()).chain(g.rate_kp.iter());
        if gains.copied().any(|v| !(v > 0.0)) {
            return Err(Error::validation("controller", "gains must be positive"));
        }
        if !(g.max_tilt > 0.0 && g.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err(Error::validation("controller.max_tilt", "must lie in (0, pi/2)"));
        }
        if !(g.max_thrust > 0.0 && g.max_joint_rate > 0.0) {
            return Err(Error::validation("controller", "thrust and joint-rate limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    vehicle: Option<RawVehicle>,
    door: Option<RawDoor>,
    arm: Option<RawArm>,
    cost: Option<RawCost>,
    target: Option<RawTarget>,
    mpc: Option<RawMpc>,
    solver: Option<RawSolver>,
    controller: Option<RawController>,
    sim: Option<RawSim>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVehicle {
    mass: Option<f64>,
    gravity: Option<f64>,
    inertia: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoor {
    hinge: Option<[f64; 3]>,
    d_v: Option<f64>,
    d_h: Option<f64>,
    width: Option<f64>,
    height: Option<f64>,
    inertia: Option<f64>,
    vehicle_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArm {
    link_lengths: Option<[f64; 4]>,
    mount: Option<[f64; 3]>,
    joint_limits: Option<[[f64; 2]; 4]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    q: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    terminal: Option<Vec<f64>>,
    input_ref: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    final_state: Option<Vec<f64>>,
    alpha0: Option<f64>,
    alpha_dot0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpc {
    dt: Option<f64>,
    horizon: Option<usize>,
    constraint_margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_outer_iterations: Option<usize>,
    max_inner_iterations: Option<usize>,
    penalty_init: Option<f64>,
    penalty_growth: Option<f64>,
    penalty_max: Option<f64>,
    constraint_tolerance: Option<f64>,
    cost_tolerance: Option<f64>,
    regularization_init: Option<f64>,
    regularization_min: Option<f64>,
    regularization_max: Option<f64>,
    line_search_steps: Option<usize>,
    armijo: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    position_kp: Option<[f64; 3]>,
    position_kd: Option<[f64; 3]>,
    attitude_kp: Option<[f64; 3]>,
    rate_kp: Option<[f64; 3]>,
    max_tilt: Option<f64>,
    max_thrust: Option<f64>,
    max_joint_rate: Option<f64>,
    pivot_compensation: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    duration: Option<f64>,
    plant_dt: Option<f64>,
    seed: Option<u64>,
    disturbance_scale: Option<f64>,
    mode: Option<ExecutionMode>,
    record_latency: Option<bool>,
    attachment_tolerance: Option<f64>,
    initial_yaw: Option<f64>,
}

struct Defaults(Vec<String>);

impl Defaults {
    fn or<T: Debug>(&mut self, value: Option<T>, key: &str, default: T) -> T {
        value.unwrap_or_else(|| {
            log::info!("config: {key} not set, using default {default:?}");
            self.0.push(key.to_string());
            default
        })
    }
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::validation(field, "required field is missing"))
}

fn fixed<const N: usize>(v: Vec<f64>, field: &str) -> Result<SVector<f64, N>> {
    if v.len() != N {
        return Err(Error::validation(field, format!("expected {N} entries, found {}", v.len())));
    }
    Ok(SVector::from_column_slice(&v))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses scenario TOML; `origin` names the source in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let location = e.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
        Error::ConfigParse { path: origin.to_string(), message: format!("{location}{}", e.message()) }
    })?;
    build(raw)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

fn build(raw: RawScenario) -> Result<ScenarioConfig> {
    let mut d = Defaults(Vec::new());

    let v = raw.vehicle.unwrap_or_default();
    let vdef = VehicleParams::default();
    let inertia_diag = d.or(v.inertia, "vehicle.inertia", [vdef.inertia[(0, 0)], vdef.inertia[(1, 1)], vdef.inertia[(2, 2)]]);
    let vehicle = VehicleParams {
        mass: required(v.mass, "vehicle.mass (m_A)")?,
        gravity: d.or(v.gravity, "vehicle.gravity", vdef.gravity),
        inertia: Matrix3::from_diagonal(&Vector3::from(inertia_diag)),
    };

    let dr = raw.door.unwrap_or_default();
    let ddef = DoorGeometry::default();
    let door = DoorGeometry {
        hinge: Vector3::from(d.or(dr.hinge, "door.hinge", ddef.hinge.into())),
        d_v: required(dr.d_v, "door.d_v (D_V)")?,
        d_h: d.or(dr.d_h, "door.d_h", ddef.d_h),
        width: required(dr.width, "door.width (D_w)")?,
        height: d.or(dr.height, "door.height", ddef.height),
        inertia: required(dr.inertia, "door.inertia (I_D)")?,
        vehicle_radius: d.or(dr.vehicle_radius, "door.vehicle_radius", ddef.vehicle_radius),
    };

    let a = raw.arm.unwrap_or_default();
    let adef = ArmGeometry::default();
    let arm = ArmGeometry {
        link_lengths: d.or(a.link_lengths, "arm.link_lengths", adef.link_lengths),
        mount: Vector3::from(d.or(a.mount, "arm.mount", adef.mount.into())),
        joint_limits: d.or(a.joint_limits, "arm.joint_limits", adef.joint_limits),
    };
    let model = SystemModel { door, arm, vehicle };

    let mdef = MpcConfig::with_model(&model);
    let c = raw.cost.unwrap_or_default();
    let q = fixed::<STATE_DIM>(d.or(c.q, "cost.q", mdef.q.iter().copied().collect()), "cost.q")?;
    let r = fixed::<INPUT_DIM>(d.or(c.r, "cost.r", mdef.r.iter().copied().collect()), "cost.r")?;
    let terminal = fixed::<STATE_DIM>(d.or(c.terminal, "cost.terminal", q.iter().copied().collect()), "cost.terminal")?;
    let hover = planner_input(model.vehicle.hover_thrust(), &Vector3::zeros(), &nalgebra::Vector4::zeros());
    let input_ref = fixed::<INPUT_DIM>(d.or(c.input_ref, "cost.input_ref", hover.iter().copied().collect()), "cost.input_ref")?;

    let t = raw.target.unwrap_or_default();
    let tdef = TargetSpec::default();
    let target = TargetSpec {
        final_state: fixed::<STATE_DIM>(
            d.or(t.final_state, "target.final_state", tdef.final_state.iter().copied().collect()),
            "target.final_state",
        )?,
        alpha0: d.or(t.alpha0, "target.alpha0", tdef.alpha0),
        alpha_dot0: d.or(t.alpha_dot0, "target.alpha_dot0", tdef.alpha_dot0),
    };

    let s = raw.solver.unwrap_or_default();
    let sdef = SolverSettings::default();
    let solver = SolverSettings {
        max_outer_iterations: d.or(s.max_outer_iterations, "solver.max_outer_iterations", sdef.max_outer_iterations),
        max_inner_iterations: d.or(s.max_inner_iterations, "solver.max_inner_iterations", sdef.max_inner_iterations),
        penalty_init: d.or(s.penalty_init, "solver.penalty_init", sdef.penalty_init),
        penalty_growth: d.or(s.penalty_growth, "solver.penalty_growth", sdef.penalty_growth),
        penalty_max: d.or(s.penalty_max, "solver.penalty_max", sdef.penalty_max),
        constraint_tolerance: d.or(s.constraint_tolerance, "solver.constraint_tolerance", sdef.constraint_tolerance),
        cost_tolerance: d.or(s.cost_tolerance, "solver.cost_tolerance", sdef.cost_tolerance),
        regularization_init: d.or(s.regularization_init, "solver.regularization_init", sdef.regularization_init),
        regularization_min: d.or(s.regularization_min, "solver.regularization_min", sdef.regularization_min),
        regularization_max: d.or(s.regularization_max, "solver.regularization_max", sdef.regularization_max),
        line_search_steps: d.or(s.line_search_steps, "solver.line_search_steps", sdef.line_search_steps),
        armijo: d.or(s.armijo, "solver.armijo", sdef.armijo),
    };

    let m = raw.mpc.unwrap_or_default();
    let mpc = MpcConfig {
        horizon: d.or(m.horizon, "mpc.horizon", mdef.horizon),
        dt: d.or(m.dt, "mpc.dt", mdef.dt),
        q,
        r,
        terminal,
        input_ref,
        constraint_margin: d.or(m.constraint_margin, "mpc.constraint_margin", mdef.constraint_margin),
        solver,
    };

    let g = raw.controller.unwrap_or_default();
    let gdef = TrackingGains::default();
    let controller = TrackingGains {
        position_kp: Vector3::from(d.or(g.position_kp, "controller.position_kp", gdef.position_kp.into())),
        position_kd: Vector3::from(d.or(g.position_kd, "controller.position_kd", gdef.position_kd.into())),
        attitude_kp: Vector3::from(d.or(g.attitude_kp, "controller.attitude_kp", gdef.attitude_kp.into())),
        rate_kp: Vector3::from(d.or(g.rate_kp, "controller.rate_kp", gdef.rate_kp.into())),
        max_tilt: d.or(g.max_tilt, "controller.max_tilt", gdef.max_tilt),
        max_thrust: d.or(g.max_thrust, "controller.max_thrust", gdef.max_thrust),
        max_joint_rate: d.or(g.max_joint_rate, "controller.max_joint_rate", gdef.max_joint_rate),
        pivot_compensation: d.or(g.pivot_compensation, "controller.pivot_compensation", gdef.pivot_compensation),
    };

    let sm = raw.sim.unwrap_or_default();
    let simdef = SimSettings::default();
    let sim = SimSettings {
        duration: d.or(sm.duration, "sim.duration", simdef.duration),
        plant_dt: d.or(sm.plant_dt, "sim.plant_dt", simdef.plant_dt),
        seed: d.or(sm.seed, "sim.seed", simdef.seed),
        disturbance_scale: d.or(sm.disturbance_scale, "sim.disturbance_scale", simdef.disturbance_scale),
        mode: d.or(sm.mode, "sim.mode", simdef.mode),
        record_latency: d.or(sm.record_latency, "sim.record_latency", simdef.record_latency),
        attachment_tolerance: d.or(sm.attachment_tolerance, "sim.attachment_tolerance", simdef.attachment_tolerance),
        initial_yaw: d.or(sm.initial_yaw, "sim.initial_yaw", simdef.initial_yaw),
    };

    let cfg = ScenarioConfig { model, mpc, target, controller, sim, applied_defaults: d.0 };
    cfg.validate()?;
    Ok(cfg)
}
