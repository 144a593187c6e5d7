//! Nine-state planning model.
//!
//! Attitude follows commanded body rates, the door accelerates under the
//! quasi-static push of the tilted thrust vector, and the arm joints integrate
//! commanded servo rates. State layout `[roll, pitch, yaw, alpha, alpha_dot,
//! eta1..eta4]`, input layout `[thrust, omega_x, omega_y, omega_z,
//! eta1_dot..eta4_dot]`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    door_normal, euler_rate_map, euler_rate_map_partials, euler_to_rot, rot_partials, wrap_angle,
    ArmGeometry, DoorGeometry, EulerZYX,
};

pub const STATE_DIM: usize = 9;
pub const INPUT_DIM: usize = 8;

pub type PlannerState = SVector<f64, STATE_DIM>;
pub type PlannerInput = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Index helpers for [`PlannerState`] and [`PlannerInput`].
pub mod idx {
    pub const ROLL: usize = 0;
    pub const PITCH: usize = 1;
    pub const YAW: usize = 2;
    pub const ALPHA: usize = 3;
    pub const ALPHA_DOT: usize = 4;
    pub const JOINTS: usize = 5;

    pub const THRUST: usize = 0;
    pub const BODY_RATE: usize = 1;
    pub const JOINT_RATES: usize = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub gravity: f64,
    /// Body-frame inertia about the center of mass. Only the plant uses it.
    pub inertia: Matrix3<f64>,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.75,
            gravity: 9.81,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.0075, 0.0075, 0.013)),
        }
    }
}

impl VehicleParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::validation("vehicle.mass (m_A)", "must be positive"));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::validation("vehicle.gravity", "must be positive"));
        }
        let i = &self.inertia;
        if (i - i.transpose()).abs().max() > 1e-12 * i.abs().max() {
            return Err(Error::validation("vehicle.inertia (I_A)", "must be symmetric"));
        }
        if i.cholesky().is_none() {
            return Err(Error::validation("vehicle.inertia (I_A)", "must be positive definite"));
        }
        Ok(())
    }
}

/// Everything the models need to know about the physical system.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemModel {
    pub door: DoorGeometry,
    pub arm: ArmGeometry,
    pub vehicle: VehicleParams,
}

impl SystemModel {
    pub fn validate(&self) -> Result<()> {
        self.door.validate()?;
        self.arm.validate()?;
        self.vehicle.validate()
    }
}

pub fn attitude(x: &PlannerState) -> EulerZYX {
    EulerZYX::new(x[idx::ROLL], x[idx::PITCH], x[idx::YAW])
}

pub fn joints(x: &PlannerState) -> Vector4<f64> {
    x.fixed_rows::<4>(idx::JOINTS).into_owned()
}

pub fn planner_state(att: EulerZYX, alpha: f64, alpha_dot: f64, joints: &Vector4<f64>) -> PlannerState {
    let mut x = PlannerState::zeros();
    x[idx::ROLL] = att.roll;
    x[idx::PITCH] = att.pitch;
    x[idx::YAW] = att.yaw;
    x[idx::ALPHA] = alpha;
    x[idx::ALPHA_DOT] = alpha_dot;
    x.fixed_rows_mut::<4>(idx::JOINTS).copy_from(joints);
    x
}

pub fn planner_input(thrust: f64, body_rate: &Vector3<f64>, joint_rates: &Vector4<f64>) -> PlannerInput {
    let mut u = PlannerInput::zeros();
    u[idx::THRUST] = thrust;
    u.fixed_rows_mut::<3>(idx::BODY_RATE).copy_from(body_rate);
    u.fixed_rows_mut::<4>(idx::JOINT_RATES).copy_from(joint_rates);
    u
}

/// Door angular acceleration per newton of thrust, `alpha_ddot = g * f_t`.
///
/// Only the horizontal part of the thrust pushes along the door normal, so
/// gravity drops out.
pub fn door_torque_gain(att: EulerZYX, alpha: f64, door: &DoorGeometry) -> f64 {
    let thrust_dir = euler_to_rot(att).column(2).into_owned();
    -(door.d_v / door.inertia) * door_normal(alpha).dot(&thrust_dir)
}

/// Gradient of [`door_torque_gain`] with respect to (roll, pitch, yaw, alpha).
pub fn door_torque_gain_gradient(att: EulerZYX, alpha: f64, door: &DoorGeometry) -> Vector4<f64> {
    let k = -(door.d_v / door.inertia);
    let n = door_normal(alpha);
    let partials = rot_partials(att);
    let (s, c) = alpha.sin_cos();
    let dn = Vector3::new(c, s, 0.0);
    let thrust_dir = euler_to_rot(att).column(2).into_owned();
    Vector4::new(
        k * n.dot(&partials[0].column(2)),
        k * n.dot(&partials[1].column(2)),
        k * n.dot(&partials[2].column(2)),
        k * dn.dot(&thrust_dir),
    )
}

pub fn dyn_continuous(x: &PlannerState, u: &PlannerInput, door: &DoorGeometry) -> Result<PlannerState> {
    let att = attitude(x);
    let w = euler_rate_map(att)?;
    let body_rate = u.fixed_rows::<3>(idx::BODY_RATE);
    let mut dx = PlannerState::zeros();
    dx.fixed_rows_mut::<3>(idx::ROLL).copy_from(&(w * body_rate));
    dx[idx::ALPHA] = x[idx::ALPHA_DOT];
    dx[idx::ALPHA_DOT] = door_torque_gain(att, x[idx::ALPHA], door) * u[idx::THRUST];
    dx.fixed_rows_mut::<4>(idx::JOINTS)
        .copy_from(&u.fixed_rows::<4>(idx::JOINT_RATES));
    Ok(dx)
}

fn wrap_state(x: &mut PlannerState) {
    for i in [idx::ROLL, idx::PITCH, idx::YAW, idx::ALPHA] {
        x[i] = wrap_angle(x[i]);
    }
}

/// Explicit-Euler discretization used by the solver.
pub fn step_discrete(x: &PlannerState, u: &PlannerInput, dt: f64, door: &DoorGeometry) -> Result<PlannerState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mut next = x + dyn_continuous(x, u, door)? * dt;
    wrap_state(&mut next);
    Ok(next)
}

/// Analytic Jacobians of [`step_discrete`] (ignoring angle wrapping).
pub fn linearize(
    x: &PlannerState,
    u: &PlannerInput,
    dt: f64,
    door: &DoorGeometry,
) -> Result<(StateMatrix, InputMatrix)> {
    let att = attitude(x);
    let w = euler_rate_map(att)?;
    let dw = euler_rate_map_partials(att)?;
    let body_rate = u.fixed_rows::<3>(idx::BODY_RATE).into_owned();
    let thrust = u[idx::THRUST];
    let grad = door_torque_gain_gradient(att, x[idx::ALPHA], door);

    let mut a = StateMatrix::identity();
    for k in 0..3 {
        let col = dw[k] * body_rate * dt;
        for r in 0..3 {
            a[(r, k)] += col[r];
        }
    }
    a[(idx::ALPHA, idx::ALPHA_DOT)] += dt;
    for k in 0..4 {
        a[(idx::ALPHA_DOT, k)] += grad[k] * thrust * dt;
    }

    let mut b = InputMatrix::zeros();
    b.fixed_view_mut::<3, 3>(idx::ROLL, idx::BODY_RATE)
        .copy_from(&(w * dt));
    b[(idx::ALPHA_DOT, idx::THRUST)] = door_torque_gain(att, x[idx::ALPHA], door) * dt;
    for k in 0..4 {
        b[(idx::JOINTS + k, idx::JOINT_RATES + k)] = dt;
    }
    Ok((a, b))
}

/// Classical RK4 step of the planning model; used as an accuracy reference.
pub fn step_rk4(x: &PlannerState, u: &PlannerInput, dt: f64, door: &DoorGeometry) -> Result<PlannerState> {
    let k1 = dyn_continuous(x, u, door)?;
    let k2 = dyn_continuous(&(x + k1 * (dt / 2.0)), u, door)?;
    let k3 = dyn_continuous(&(x + k2 * (dt / 2.0)), u, door)?;
    let k4 = dyn_continuous(&(x + k3 * dt), u, door)?;
    let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    wrap_state(&mut next);
    Ok(next)
}

/// The planning model bound to a door and a time step.
#[derive(Debug, Clone)]
pub struct PlanningModel {
    pub door: DoorGeometry,
    pub dt: f64,
}

impl PlanningModel {
    pub fn new(door: DoorGeometry, dt: f64) -> Self {
        Self { door, dt }
    }
}

impl crate::ddp::Dynamics<STATE_DIM, INPUT_DIM> for PlanningModel {
    fn step(&self, x: &PlannerState, u: &PlannerInput) -> Result<PlannerState> {
        step_discrete(x, u, self.dt, &self.door)
    }

    fn linearize(&self, x: &PlannerState, u: &PlannerInput) -> Result<(StateMatrix, InputMatrix)> {
        linearize(x, u, self.dt, &self.door)
    }
}
