//! Receding-horizon runtime: measurement conversion, the per-tick planner,
//! setpoint extraction and the position/attitude tracking controller.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::constraints::DoorConstraints;
use crate::ddp::{DdpSolver, OcpProblem, SolveResult, SolverSettings, WarmStart};
use crate::error::{Error, Result};
use crate::kinematics::{
    arm_fk, arm_fk_vel, body_rate_map, door_contact_point, euler_rate_map, euler_to_rot, jacobians,
    uam_position_from_door, wrap_angle, EulerZYX,
};
use crate::model::{
    attitude, idx, joints, planner_input, planner_state, PlannerInput, PlannerState, PlanningModel, SystemModel,
    INPUT_DIM, STATE_DIM,
};
use crate::plant::{attitude_holding_torque, plant_input, plant_state, split_state, PlantInput, PlantState};

/// Closure residual above which the end-effector is reported as detached (m).
pub const ATTACHMENT_WARNING: f64 = 0.05;
/// Below this `|sin(alpha)|` the door rate comes from the y-row of the closure.
pub const BRANCH_THRESHOLD: f64 = 0.1;

/// What the vehicle can observe about itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: EulerZYX,
    /// Body frame.
    pub body_rate: Vector3<f64>,
    pub joints: Vector4<f64>,
    pub joint_rates: Vector4<f64>,
}

impl Measurement {
    /// Observation of an attached plant state; servo rates are whatever the
    /// arm was last commanded.
    pub fn from_plant(x: &PlantState, joint_rates: &Vector4<f64>, model: &SystemModel) -> Self {
        let (q, q_dot, h) = split_state(x);
        let att = EulerZYX::new(q[0], q[1], q[2]);
        let jac = jacobians(&q, &h, &model.door, &model.arm);
        let tip_rate = arm_fk_vel(&h, joint_rates, &model.arm);
        Self {
            position: uam_position_from_door(q[3], att, &h, &model.door, &model.arm),
            velocity: jac.translational * q_dot - euler_to_rot(att) * tip_rate,
            attitude: att,
            body_rate: jac.rotational.fixed_columns::<3>(0) * q_dot.fixed_rows::<3>(0),
            joints: h,
            joint_rates: *joint_rates,
        }
    }

    /// Measurement consistent with a planner state moving under `u`.
    pub fn synthetic(x: &PlannerState, u: &PlannerInput, model: &SystemModel) -> Self {
        let sp = setpoint_at(x, u, model);
        Self {
            position: sp.position,
            velocity: sp.velocity,
            attitude: attitude(x),
            body_rate: u.fixed_rows::<3>(idx::BODY_RATE).into_owned(),
            joints: joints(x),
            joint_rates: sp.joint_rates,
        }
    }
}

/// Planner state recovered from a measurement, with the closure residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Converted {
    pub state: PlannerState,
    pub residual: f64,
}

/// Terms of the differentiated closure: the world-frame tip offset and the
/// velocity of the contact point implied by the measurement.
fn contact_velocity(m: &Measurement, model: &SystemModel) -> Vector3<f64> {
    let r = euler_to_rot(m.attitude);
    let d = arm_fk(&m.joints, &model.arm).tip;
    let d_rot = r * m.body_rate.cross(&d);
    let d_arm = r * arm_fk_vel(&m.joints, &m.joint_rates, &model.arm);
    m.velocity + d_rot + d_arm
}

/// Door rate from the x-row and the y-row of the differentiated closure.
/// Either row is singular where its denominator vanishes.
pub fn door_rate_rows(m: &Measurement, alpha: f64, model: &SystemModel) -> (f64, f64) {
    let v = contact_velocity(m, model);
    let d_v = model.door.d_v;
    (v.x / (-d_v * alpha.sin()), v.y / (d_v * alpha.cos()))
}

pub fn convert_measurements(m: &Measurement, model: &SystemModel) -> Converted {
    let r = euler_to_rot(m.attitude);
    let d = arm_fk(&m.joints, &model.arm).tip;
    let contact = m.position + r * d - model.door.hinge;
    let alpha = contact.y.atan2(contact.x);
    let (x_row, y_row) = door_rate_rows(m, alpha, model);
    let alpha_dot = if alpha.sin().abs() > BRANCH_THRESHOLD { x_row } else { y_row };
    let residual = (m.position + r * d - door_contact_point(alpha, &model.door)).norm();
    if residual > ATTACHMENT_WARNING {
        log::warn!("end-effector closure residual {residual:.3} m exceeds {ATTACHMENT_WARNING} m");
    }
    Converted {
        state: planner_state(m.attitude, alpha, alpha_dot, &m.joints),
        residual,
    }
}

/// Desired vehicle motion derived from one planned knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub joint_rates: Vector4<f64>,
    /// Planned thrust vector, world frame (N).
    pub force: Vector3<f64>,
    pub body_rate: Vector3<f64>,
    pub planned: PlannerState,
}

impl Setpoint {
    /// Free-flight hold at `position` with hover thrust.
    pub fn hover(position: Vector3<f64>, yaw: f64, model: &SystemModel) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            yaw,
            joint_rates: Vector4::zeros(),
            force: Vector3::z() * model.vehicle.hover_thrust(),
            body_rate: Vector3::zeros(),
            planned: PlannerState::zeros(),
        }
    }
}

fn setpoint_at(x: &PlannerState, u: &PlannerInput, model: &SystemModel) -> Setpoint {
    let att = attitude(x);
    let h = joints(x);
    let alpha = x[idx::ALPHA];
    let r = euler_to_rot(att);
    let d = arm_fk(&h, &model.arm).tip;
    let body_rate = u.fixed_rows::<3>(idx::BODY_RATE).into_owned();
    let joint_rates = u.fixed_rows::<4>(idx::JOINT_RATES).into_owned();
    let contact_rate = Vector3::new(-alpha.sin(), alpha.cos(), 0.0) * (model.door.d_v * x[idx::ALPHA_DOT]);
    let velocity = contact_rate - r * body_rate.cross(&d) - r * arm_fk_vel(&h, &joint_rates, &model.arm);
    Setpoint {
        position: uam_position_from_door(alpha, att, &h, &model.door, &model.arm),
        velocity,
        yaw: att.yaw,
        joint_rates,
        force: r.column(2) * u[idx::THRUST],
        body_rate,
        planned: *x,
    }
}

/// One setpoint per planned knot; the last knot reuses the last input.
pub fn extract_setpoints(
    states: &[PlannerState],
    inputs: &[PlannerInput],
    model: &SystemModel,
) -> Result<Vec<Setpoint>> {
    if states.is_empty() || inputs.is_empty() {
        return Err(Error::InvalidArgument("planned trajectory is empty".into()));
    }
    Ok(states
        .iter()
        .enumerate()
        .map(|(i, x)| setpoint_at(x, &inputs[i.min(inputs.len() - 1)], model))
        .collect())
}

/// Final target of the door-opening task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub final_state: PlannerState,
    pub alpha0: f64,
    pub alpha_dot0: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            final_state: PlannerState::from([0.0, 0.0, -7.0 * PI / 18.0, PI / 9.0, 0.0, 0.0, PI / 2.0, -PI / 2.0, 0.0]),
            alpha0: PI / 2.0,
            alpha_dot0: 0.0,
        }
    }
}

/// Cost weights, horizon and solver knobs of the receding-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q: SVector<f64, STATE_DIM>,
    pub r: SVector<f64, INPUT_DIM>,
    pub terminal: SVector<f64, STATE_DIM>,
    pub input_ref: PlannerInput,
    pub constraint_margin: f64,
    pub solver: SolverSettings,
}

impl MpcConfig {
    pub fn with_model(model: &SystemModel) -> Self {
        let q = SVector::<f64, STATE_DIM>::from([5.0, 5.0, 3.0, 9.0, 8.0, 0.05, 0.1, 0.1, 0.1]);
        Self {
            horizon: 20,
            dt: 0.05,
            q,
            r: SVector::<f64, INPUT_DIM>::from([0.1, 5.0, 5.0, 13.5, 10.0, 10.0, 10.0, 10.0]),
            terminal: q,
            input_ref: planner_input(model.vehicle.hover_thrust(), &Vector3::zeros(), &Vector4::zeros()),
            constraint_margin: 0.02,
            solver: SolverSettings::default(),
        }
    }
}

/// Result of one receding-horizon tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub setpoint: Setpoint,
    pub state: PlannerState,
    pub residual: f64,
    pub solve: SolveResult<STATE_DIM, INPUT_DIM>,
    /// The solver failed; the setpoint comes from the previous plan.
    pub degraded: bool,
}

/// Owns the solver workspace and the previous plan.
pub struct MpcPlanner {
    pub model: SystemModel,
    pub config: MpcConfig,
    problem: OcpProblem<STATE_DIM, INPUT_DIM>,
    solver: DdpSolver,
    previous: Option<SolveResult<STATE_DIM, INPUT_DIM>>,
    target: TargetSpec,
}

impl MpcPlanner {
    pub fn new(model: SystemModel, config: MpcConfig, target: TargetSpec) -> Result<Self> {
        model.validate()?;
        let problem = OcpProblem::regulator(
            config.horizon,
            config.dt,
            Arc::new(PlanningModel::new(model.door.clone(), config.dt)),
            Arc::new(DoorConstraints { model: model.clone(), margin: config.constraint_margin }),
            (config.q, config.r, config.terminal),
            target.final_state,
            config.input_ref,
        );
        problem.validate()?;
        let solver = DdpSolver::new(config.solver.clone())?;
        Ok(Self { model, config, problem, solver, previous: None, target })
    }

    pub fn problem(&self) -> &OcpProblem<STATE_DIM, INPUT_DIM> {
        &self.problem
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// Inputs for the next solve: the previous plan advanced one knot with its
    /// last input repeated, or the reference input on a cold start.
    pub fn warm_start(&self) -> (Vec<PlannerInput>, Option<WarmStart>) {
        match &self.previous {
            Some(prev) => {
                let mut u: Vec<_> = prev.inputs[1..].to_vec();
                u.push(*prev.inputs.last().unwrap());
                let mut lam: Vec<_> = prev.multipliers[1..].to_vec();
                lam.push(prev.multipliers.last().unwrap().clone());
                (u, Some(WarmStart { multipliers: lam, penalty: prev.penalty }))
            }
            None => (vec![self.config.input_ref; self.config.horizon], None),
        }
    }

    /// Solve from an already converted planner state.
    pub fn solve_from(&mut self, x0: &PlannerState) -> Result<SolveResult<STATE_DIM, INPUT_DIM>> {
        let (u, lam) = self.warm_start();
        self.solver.solve_warm(&self.problem, x0, &u, lam)
    }

    pub fn tick(&mut self, m: &Measurement) -> Result<TickOutput> {
        let converted = convert_measurements(m, &self.model);
        let x0 = converted.state;
        let attempt = self.solve_from(&x0);
        let tolerance = self.config.solver.constraint_tolerance;
        let fresh = match attempt {
            Ok(res) if res.max_violation <= tolerance || res.converged => Some(res),
            Ok(res) if self.previous.is_none() => Some(res),
            Ok(res) => {
                log::debug!("solver left violation {:.2e}; reusing previous plan", res.max_violation);
                None
            }
            Err(e) if self.previous.is_some() => {
                log::debug!("solver failed ({e}); reusing previous plan");
                None
            }
            Err(e) => return Err(e),
        };
        let (solve, degraded) = match fresh {
            Some(res) => (res, false),
            None => (self.shifted_previous()?, true),
        };
        let setpoint = setpoint_at(&solve.states[1], &solve.inputs[1.min(solve.inputs.len() - 1)], &self.model);
        self.previous = Some(solve.clone());
        Ok(TickOutput { setpoint, state: x0, residual: converted.residual, solve, degraded })
    }

    fn shifted_previous(&self) -> Result<SolveResult<STATE_DIM, INPUT_DIM>> {
        let prev = self.previous.as_ref().expect("caller checked a previous plan exists");
        let mut next = prev.clone();
        let (u, lam) = self.warm_start();
        next.states = self.problem.rollout(&prev.states[1], &u)?;
        next.inputs = u;
        if let Some(w) = lam {
            next.multipliers = w.multipliers;
            next.penalty = w.penalty;
        }
        next.converged = false;
        next.iterations = 0;
        next.outer_iterations = 0;
        next.cost_trace.clear();
        Ok(next)
    }
}

/// Gains of the tracking controller; rates in 1/s, position gains per unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingGains {
    pub position_kp: Vector3<f64>,
    pub position_kd: Vector3<f64>,
    pub attitude_kp: Vector3<f64>,
    pub rate_kp: Vector3<f64>,
    pub max_tilt: f64,
    pub max_thrust: f64,
    pub max_joint_rate: f64,
    /// Treat the vehicle as pinned at the end-effector: inertia about the tip
    /// and a feedforward torque cancelling the static load of the attached system.
    pub pivot_compensation: bool,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            position_kp: Vector3::repeat(6.25),
            position_kd: Vector3::repeat(4.5),
            attitude_kp: Vector3::new(10.0, 10.0, 6.0),
            rate_kp: Vector3::new(40.0, 40.0, 25.0),
            max_tilt: 35f64.to_radians(),
            max_thrust: 20.0,
            max_joint_rate: 2.0,
            pivot_compensation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub input: PlantInput,
    pub desired_attitude: EulerZYX,
    pub thrust_saturated: bool,
}

/// Roll and pitch that point body z along `dir` at the given yaw.
pub fn attitude_from_thrust_direction(dir: &Vector3<f64>, yaw: f64) -> EulerZYX {
    let (s, c) = yaw.sin_cos();
    let v = Vector3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z).normalize();
    EulerZYX::new((-v.y).asin(), v.x.atan2(v.z), yaw)
}

/// PD position loop with cascaded attitude and rate loops.
#[derive(Debug, Clone)]
pub struct TrackingController {
    pub gains: TrackingGains,
    pub model: SystemModel,
}

impl TrackingController {
    pub fn new(gains: TrackingGains, model: SystemModel) -> Self {
        Self { gains, model }
    }

    fn effective_inertia(&self, joints: &Vector4<f64>) -> Matrix3<f64> {
        let inertia = self.model.vehicle.inertia;
        if !self.gains.pivot_compensation {
            return inertia;
        }
        let d = arm_fk(joints, &self.model.arm).tip;
        inertia + (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * self.model.vehicle.mass
    }

    fn attached_state(&self, m: &Measurement) -> Result<PlantState> {
        let door = convert_measurements(m, &self.model).state;
        let euler_rates = euler_rate_map(m.attitude)? * m.body_rate;
        Ok(plant_state(
            &Vector4::new(m.attitude.roll, m.attitude.pitch, m.attitude.yaw, door[idx::ALPHA]),
            &Vector4::new(euler_rates.x, euler_rates.y, euler_rates.z, door[idx::ALPHA_DOT]),
            &m.joints,
        ))
    }

    fn limit_tilt(&self, force: Vector3<f64>) -> Vector3<f64> {
        let min_vertical = 0.1 * self.model.vehicle.hover_thrust();
        let fz = force.z.max(min_vertical);
        let horizontal = force.xy();
        let cap = fz * self.gains.max_tilt.tan();
        let scale = if horizontal.norm() > cap { cap / horizontal.norm() } else { 1.0 };
        Vector3::new(horizontal.x * scale, horizontal.y * scale, fz)
    }

    pub fn compute(&self, sp: &Setpoint, m: &Measurement) -> Result<ControlOutput> {
        let g = &self.gains;
        let mass = self.model.vehicle.mass;
        let e_p = sp.position - m.position;
        let e_v = sp.velocity - m.velocity;
        let force = self.limit_tilt(sp.force + (g.position_kp.component_mul(&e_p) + g.position_kd.component_mul(&e_v)) * mass);

        let r = euler_to_rot(m.attitude);
        let raw_thrust = force.dot(&r.column(2));
        let thrust = raw_thrust.clamp(0.0, g.max_thrust);
        let desired = attitude_from_thrust_direction(&force, sp.yaw);

        let e_att = Vector3::new(
            wrap_angle(desired.roll - m.attitude.roll),
            wrap_angle(desired.pitch - m.attitude.pitch),
            wrap_angle(desired.yaw - m.attitude.yaw),
        );
        let rate_cmd = body_rate_map(m.attitude) * g.attitude_kp.component_mul(&e_att) + sp.body_rate;
        let inertia = self.model.vehicle.inertia;
        let feedback = self.effective_inertia(&m.joints) * g.rate_kp.component_mul(&(rate_cmd - m.body_rate));
        let torque = if g.pivot_compensation {
            feedback + attitude_holding_torque(&self.attached_state(m)?, thrust, &self.model)?.0
        } else {
            feedback + m.body_rate.cross(&(inertia * m.body_rate))
        };

        let joint_rates = sp.joint_rates.map(|v| v.clamp(-g.max_joint_rate, g.max_joint_rate));
        Ok(ControlOutput {
            input: plant_input(thrust, &torque, &joint_rates),
            desired_attitude: desired,
            thrust_saturated: thrust != raw_thrust,
        })
    }
}
