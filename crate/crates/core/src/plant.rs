//! Full coupled vehicle/door dynamics in the generalized coordinates
//! `q = [roll, pitch, yaw, alpha]`, driven by thrust, body torque and servo
//! rates.
//!
//! The arm is massless and slow: joint angles enter the mass matrix and the
//! potential as parameters, and their rates are dropped from the kinetic
//! energy. Coriolis terms come from Christoffel symbols of a finite-difference
//! derivative of the mass matrix.

use nalgebra::{Matrix3, Matrix4, SVector, SymmetricEigen, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::kinematics::{
    attitude_of, body_rate_map, euler_rate_map, euler_to_rot, jacobians, uam_position_from_door, wrap_angle,
    EulerZYX,
};
use crate::model::SystemModel;

pub const PLANT_STATE_DIM: usize = 12;
pub const PLANT_INPUT_DIM: usize = 8;

/// `[roll, pitch, yaw, alpha, roll_dot, pitch_dot, yaw_dot, alpha_dot, eta1..eta4]`.
pub type PlantState = SVector<f64, PLANT_STATE_DIM>;
/// `[thrust, torque_x, torque_y, torque_z, eta1_dot..eta4_dot]`.
pub type PlantInput = SVector<f64, PLANT_INPUT_DIM>;

/// Step for the finite-difference mass-matrix derivative.
pub const MASS_MATRIX_FD_STEP: f64 = 1e-6;
/// Condition number above which the mass matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn split_state(x: &PlantState) -> (Vector4<f64>, Vector4<f64>, Vector4<f64>) {
    (
        x.fixed_rows::<4>(0).into_owned(),
        x.fixed_rows::<4>(4).into_owned(),
        x.fixed_rows::<4>(8).into_owned(),
    )
}

pub fn plant_state(q: &Vector4<f64>, q_dot: &Vector4<f64>, joints: &Vector4<f64>) -> PlantState {
    let mut x = PlantState::zeros();
    x.fixed_rows_mut::<4>(0).copy_from(q);
    x.fixed_rows_mut::<4>(4).copy_from(q_dot);
    x.fixed_rows_mut::<4>(8).copy_from(joints);
    x
}

pub fn plant_input(thrust: f64, torque: &Vector3<f64>, joint_rates: &Vector4<f64>) -> PlantInput {
    let mut u = PlantInput::zeros();
    u[0] = thrust;
    u.fixed_rows_mut::<3>(1).copy_from(torque);
    u.fixed_rows_mut::<4>(4).copy_from(joint_rates);
    u
}

pub fn mass_matrix(q: &Vector4<f64>, joints: &Vector4<f64>, model: &SystemModel) -> Matrix4<f64> {
    let jac = jacobians(q, joints, &model.door, &model.arm);
    let jt = &jac.translational;
    let jr = &jac.rotational;
    let mut m = jt.transpose() * jt * model.vehicle.mass + jr.transpose() * model.vehicle.inertia * jr;
    m[(3, 3)] += model.door.inertia;
    // Exact symmetry regardless of round-off in the products above.
    (m + m.transpose()) * 0.5
}

/// `dM/dq_k` for k = 0..4 by central differences.
pub fn mass_matrix_partials(q: &Vector4<f64>, joints: &Vector4<f64>, model: &SystemModel) -> [Matrix4<f64>; 4] {
    let h = MASS_MATRIX_FD_STEP;
    std::array::from_fn(|k| {
        let mut dq = Vector4::zeros();
        dq[k] = h;
        (mass_matrix(&(q + dq), joints, model) - mass_matrix(&(q - dq), joints, model)) / (2.0 * h)
    })
}

fn coriolis_from_partials(partials: &[Matrix4<f64>; 4], q_dot: &Vector4<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| {
        (0..4)
            .map(|k| 0.5 * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * q_dot[k])
            .sum()
    })
}

/// Coriolis matrix built from Christoffel symbols of the first kind.
pub fn coriolis(q: &Vector4<f64>, q_dot: &Vector4<f64>, joints: &Vector4<f64>, model: &SystemModel) -> Matrix4<f64> {
    coriolis_from_partials(&mass_matrix_partials(q, joints, model), q_dot)
}

pub fn gravity_vector(q: &Vector4<f64>, joints: &Vector4<f64>, model: &SystemModel) -> Vector4<f64> {
    let jac = jacobians(q, joints, &model.door, &model.arm);
    jac.translational.row(2).transpose() * (model.vehicle.mass * model.vehicle.gravity)
}

/// Thrust along body z and body torque mapped to the generalized coordinates.
pub fn generalized_forces(q: &Vector4<f64>, joints: &Vector4<f64>, u: &PlantInput, model: &SystemModel) -> Vector4<f64> {
    let jac = jacobians(q, joints, &model.door, &model.arm);
    let thrust = euler_to_rot(attitude_of(q)).column(2) * u[0];
    let torque = u.fixed_rows::<3>(1);
    jac.translational.transpose() * thrust + jac.rotational.transpose() * torque
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

pub fn energy(q: &Vector4<f64>, q_dot: &Vector4<f64>, joints: &Vector4<f64>, model: &SystemModel) -> Energy {
    let jac = jacobians(q, joints, &model.door, &model.arm);
    let p_dot = jac.translational * q_dot;
    let omega = jac.rotational * q_dot;
    let alpha_dot = q_dot[3];
    let kinetic = 0.5
        * (model.vehicle.mass * p_dot.norm_squared()
            + omega.dot(&(model.vehicle.inertia * omega))
            + model.door.inertia * alpha_dot * alpha_dot);
    let position = uam_position_from_door(q[3], attitude_of(q), joints, &model.door, &model.arm);
    Energy {
        kinetic,
        potential: model.vehicle.mass * model.vehicle.gravity * position.z,
    }
}

fn check_conditioning(m: &Matrix4<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    Ok(())
}

/// Generalized accelerations for the given external generalized force.
pub fn generalized_acceleration(
    x: &PlantState,
    u: &PlantInput,
    model: &SystemModel,
    tau_ext: &Vector4<f64>,
) -> Result<Vector4<f64>> {
    let (q, q_dot, joints) = split_state(x);
    let m = mass_matrix(&q, &joints, model);
    check_conditioning(&m)?;
    let c = coriolis(&q, &q_dot, &joints, model);
    let g = gravity_vector(&q, &joints, model);
    let tau = generalized_forces(&q, &joints, u, model) + tau_ext;
    let rhs = tau - (c * q_dot + g);
    m.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })
}

pub fn plant_deriv(x: &PlantState, u: &PlantInput, model: &SystemModel) -> Result<PlantState> {
    plant_deriv_with(x, u, model, &Vector4::zeros())
}

pub fn plant_deriv_with(
    x: &PlantState,
    u: &PlantInput,
    model: &SystemModel,
    tau_ext: &Vector4<f64>,
) -> Result<PlantState> {
    let q_ddot = generalized_acceleration(x, u, model, tau_ext)?;
    let mut dx = PlantState::zeros();
    dx.fixed_rows_mut::<4>(0).copy_from(&x.fixed_rows::<4>(4));
    dx.fixed_rows_mut::<4>(4).copy_from(&q_ddot);
    dx.fixed_rows_mut::<4>(8).copy_from(&u.fixed_rows::<4>(4));
    Ok(dx)
}

/// One classical Runge-Kutta step of `x_dot = f(x)`.
pub fn rk4<const N: usize, F>(x: &SVector<f64, N>, dt: f64, mut f: F) -> Result<SVector<f64, N>>
where
    F: FnMut(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (dt / 2.0)))?;
    let k3 = f(&(x + k2 * (dt / 2.0)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

pub fn rk4_step(x: &PlantState, u: &PlantInput, dt: f64, model: &SystemModel) -> Result<PlantState> {
    rk4_step_with(x, u, dt, model, &Vector4::zeros())
}

/// RK4 step with a generalized disturbance force held over the step.
pub fn rk4_step_with(
    x: &PlantState,
    u: &PlantInput,
    dt: f64,
    model: &SystemModel,
    tau_ext: &Vector4<f64>,
) -> Result<PlantState> {
    let mut next = rk4(x, dt, |s| plant_deriv_with(s, u, model, tau_ext))?;
    for i in 0..4 {
        next[i] = wrap_angle(next[i]);
    }
    Ok(next)
}

/// Body torque that keeps the attitude from accelerating at the current
/// state, and the door acceleration that results.
///
/// The door row of the equations of motion does not involve the body torque,
/// so the door acceleration is fixed by thrust and state alone; the torque
/// then cancels whatever the attitude rows would otherwise do.
pub fn attitude_holding_torque(x: &PlantState, thrust: f64, model: &SystemModel) -> Result<(Vector3<f64>, f64)> {
    let (q, q_dot, joints) = split_state(x);
    let m = mass_matrix(&q, &joints, model);
    let h = coriolis(&q, &q_dot, &joints, model) * q_dot + gravity_vector(&q, &joints, model);
    let tau_thrust = generalized_forces(&q, &joints, &plant_input(thrust, &Vector3::zeros(), &Vector4::zeros()), model);
    let door_accel = (tau_thrust[3] - h[3]) / m[(3, 3)];
    let needed: Vector3<f64> = (h + m.column(3) * door_accel - tau_thrust).fixed_rows::<3>(0).into_owned();
    let e_t = body_rate_map(attitude_of(&q)).transpose();
    let torque = e_t
        .lu()
        .solve(&needed)
        .ok_or(Error::EulerSingularity { pitch: q[1] })?;
    Ok((torque, door_accel))
}

/// Rigid-body multirotor without the door, for tuning the tracking loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeFlightState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: EulerZYX,
    pub body_rate: Vector3<f64>,
}

impl FreeFlightState {
    pub fn at(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: EulerZYX::new(0.0, 0.0, yaw),
            body_rate: Vector3::zeros(),
        }
    }

    fn pack(&self) -> SVector<f64, 12> {
        let mut v = SVector::<f64, 12>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.attitude.to_vector());
        v.fixed_rows_mut::<3>(9).copy_from(&self.body_rate);
        v
    }

    fn unpack(v: &SVector<f64, 12>) -> Self {
        Self {
            position: v.fixed_rows::<3>(0).into_owned(),
            velocity: v.fixed_rows::<3>(3).into_owned(),
            attitude: EulerZYX::from_vector(&v.fixed_rows::<3>(6).into_owned()),
            body_rate: v.fixed_rows::<3>(9).into_owned(),
        }
    }
}

pub fn free_flight_step(
    state: &FreeFlightState,
    thrust: f64,
    torque: &Vector3<f64>,
    dt: f64,
    model: &SystemModel,
) -> Result<FreeFlightState> {
    let mass = model.vehicle.mass;
    let inertia: Matrix3<f64> = model.vehicle.inertia;
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("vehicle inertia is singular".into()))?;
    let next = rk4(&state.pack(), dt, |v| {
        let s = FreeFlightState::unpack(v);
        let r = euler_to_rot(s.attitude);
        let accel = r.column(2) * (thrust / mass) - Vector3::z() * model.vehicle.gravity;
        let euler_rates = euler_rate_map(s.attitude)? * s.body_rate;
        let omega_dot = inertia_inv * (torque - s.body_rate.cross(&(inertia * s.body_rate)));
        let mut d = SVector::<f64, 12>::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&s.velocity);
        d.fixed_rows_mut::<3>(3).copy_from(&accel);
        d.fixed_rows_mut::<3>(6).copy_from(&euler_rates);
        d.fixed_rows_mut::<3>(9).copy_from(&omega_dot);
        Ok(d)
    })?;
    let mut s = FreeFlightState::unpack(&next);
    s.attitude = s.attitude.wrapped();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::door_torque_gain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_q(rng: &mut impl Rng) -> Vector4<f64> {
        Vector4::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
        )
    }

    fn random_joints(rng: &mut impl Rng) -> Vector4<f64> {
        Vector4::from_fn(|_, _| rng.random_range(-PI..PI))
    }

    fn random_rates(rng: &mut impl Rng) -> Vector4<f64> {
        Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    fn target_joints() -> Vector4<f64> {
        Vector4::new(0.0, PI / 2.0, -PI / 2.0, 0.0)
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite_and_bounded_below() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            let joints = random_joints(&mut rng);
            let m = mass_matrix(&q, &joints, &model);
            assert!((m - m.transpose()).abs().max() < 1e-12);
            assert!(SymmetricEigen::new(m).eigenvalues.min() > 0.0);
            assert!(m[(3, 3)] >= model.door.inertia);
        }
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = random_q(&mut rng);
        let c = coriolis(&q, &Vector4::zeros(), &random_joints(&mut rng), &model);
        assert!((c * Vector4::<f64>::zeros()).norm() == 0.0);
        assert!(c.abs().max() == 0.0);
    }

    #[test]
    fn mass_matrix_derivative_minus_twice_coriolis_is_skew() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..500 {
            let q = random_q(&mut rng);
            let q_dot = random_rates(&mut rng);
            let joints = random_joints(&mut rng);
            let partials = mass_matrix_partials(&q, &joints, &model);
            let m_dot: Matrix4<f64> = (0..4).map(|k| partials[k] * q_dot[k]).sum();
            let c = coriolis(&q, &q_dot, &joints, &model);
            let n = m_dot - c * 2.0;
            assert!(q_dot.dot(&(n * q_dot)).abs() <= 1e-6);
            assert!((n + n.transpose()).abs().max() <= 1e-6);
        }
    }

    #[test]
    fn co_rotating_yaw_and_door_leaves_mass_matrix_constant() {
        let model = SystemModel::default();
        let dir = Vector4::new(0.0, 0.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let q = random_q(&mut rng);
            let joints = random_joints(&mut rng);
            let partials = mass_matrix_partials(&q, &joints, &model);
            let along: Matrix4<f64> = (0..4).map(|k| partials[k] * dir[k]).sum();
            assert!(along.abs().max() < 1e-8);

            // Momentum along the symmetry direction sees no velocity-dependent force.
            let q_dot = random_rates(&mut rng);
            let m_dot: Matrix4<f64> = (0..4).map(|k| partials[k] * q_dot[k]).sum();
            let c = coriolis(&q, &q_dot, &joints, &model);
            assert!(dir.dot(&((m_dot - c) * q_dot)).abs() < 1e-7);
            let c_dir = coriolis(&q, &dir, &joints, &model);
            assert!(dir.dot(&(c_dir * dir)).abs() < 1e-7);
        }
    }

    #[test]
    fn gravity_examples() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let q = Vector4::new(0.0, 0.0, 0.0, rng.random_range(-PI..PI));
            assert_eq!(gravity_vector(&q, &random_joints(&mut rng), &model)[3], 0.0);
        }
        let h = 1e-6;
        for _ in 0..500 {
            let q = random_q(&mut rng);
            let joints = random_joints(&mut rng);
            let g = gravity_vector(&q, &joints, &model);
            for k in 0..4 {
                let mut dq = Vector4::zeros();
                dq[k] = h;
                let fd = (energy(&(q + dq), &Vector4::zeros(), &joints, &model).potential
                    - energy(&(q - dq), &Vector4::zeros(), &joints, &model).potential)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g.norm().max(1e-3));
            }
            let mut heavy = model.clone();
            heavy.vehicle.mass *= 2.0;
            assert!((gravity_vector(&q, &joints, &heavy) - g * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn generalized_force_examples() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let q = random_q(&mut rng);
        let joints = random_joints(&mut rng);
        assert_eq!(generalized_forces(&q, &joints, &PlantInput::zeros(), &model), Vector4::zeros());

        let level = Vector4::new(0.0, 0.0, 0.0, 0.9);
        let torque = Vector3::new(0.3, -0.2, 0.1);
        let tau = generalized_forces(&level, &joints, &plant_input(0.0, &torque, &Vector4::zeros()), &model);
        assert!((tau - Vector4::new(0.3, -0.2, 0.1, 0.0)).norm() < 1e-15);

        for _ in 0..500 {
            let q = random_q(&mut rng);
            let q_dot = random_rates(&mut rng);
            let joints = random_joints(&mut rng);
            let torque = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let thrust = rng.random_range(0.0..15.0);
            let u = plant_input(thrust, &torque, &Vector4::zeros());
            let tau = generalized_forces(&q, &joints, &u, &model);
            let jac = jacobians(&q, &joints, &model.door, &model.arm);
            let r = euler_to_rot(attitude_of(&q));
            let work = (r.column(2) * thrust).dot(&(jac.translational * q_dot)) + torque.dot(&(jac.rotational * q_dot));
            assert!((tau.dot(&q_dot) - work).abs() <= 1e-10 * work.abs().max(1.0));
        }
    }

    #[test]
    fn level_hover_thrust_is_an_equilibrium() {
        let model = SystemModel::default();
        for alpha in [0.3, PI / 2.0, 2.0] {
            let x = plant_state(&Vector4::new(0.0, 0.0, alpha - PI / 2.0, alpha), &Vector4::zeros(), &target_joints());
            let u = plant_input(model.vehicle.hover_thrust(), &Vector3::zeros(), &Vector4::zeros());
            let dx = plant_deriv(&x, &u, &model).unwrap();
            assert!(dx.norm() < 1e-12, "{dx}");
        }
    }

    #[test]
    fn energy_rate_equals_generalized_power() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let h = 1e-6;
        for _ in 0..300 {
            let x = plant_state(&random_q(&mut rng), &random_rates(&mut rng), &random_joints(&mut rng));
            let torque = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let u = plant_input(rng.random_range(0.0..12.0), &torque, &Vector4::zeros());
            let dx = plant_deriv(&x, &u, &model).unwrap();
            let total = |s: &PlantState| {
                let (q, qd, j) = split_state(s);
                energy(&q, &qd, &j, &model).total()
            };
            let rate = (total(&(x + dx * h)) - total(&(x - dx * h))) / (2.0 * h);
            let (q, q_dot, joints) = split_state(&x);
            let power = generalized_forces(&q, &joints, &u, &model).dot(&q_dot);
            assert!((rate - power).abs() <= 1e-6 * power.abs().max(1.0), "{rate} vs {power}");
        }
    }

    #[test]
    fn kinetic_energy_is_the_mass_matrix_quadratic_form() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..500 {
            let q = random_q(&mut rng);
            let q_dot = random_rates(&mut rng);
            let joints = random_joints(&mut rng);
            let k = energy(&q, &q_dot, &joints, &model).kinetic;
            let quad = 0.5 * q_dot.dot(&(mass_matrix(&q, &joints, &model) * q_dot));
            assert!((k - quad).abs() <= 1e-12 * k.max(1e-12));
            assert_eq!(energy(&q, &Vector4::zeros(), &joints, &model).kinetic, 0.0);
            let k2 = energy(&q, &(q_dot * 2.0), &joints, &model).kinetic;
            assert!((k2 - 4.0 * k).abs() <= 1e-12 * k2.max(1e-12));
        }
    }

    #[test]
    fn kinetic_energy_is_conserved_without_gravity_or_input() {
        let mut model = SystemModel::default();
        model.vehicle.gravity = 1e-300;
        let mut x = plant_state(
            &Vector4::new(0.1, -0.2, 0.3, 1.2),
            &Vector4::new(0.4, -0.3, 0.5, -0.6),
            &target_joints(),
        );
        let k0 = {
            let (q, qd, j) = split_state(&x);
            energy(&q, &qd, &j, &model).kinetic
        };
        for _ in 0..1000 {
            x = rk4_step(&x, &PlantInput::zeros(), 1e-3, &model).unwrap();
        }
        let (q, qd, j) = split_state(&x);
        let k1 = energy(&q, &qd, &j, &model).kinetic;
        assert!((k1 - k0).abs() <= 1e-5, "{k0} -> {k1}");
    }

    fn taylor_expm<const N: usize>(a: &nalgebra::SMatrix<f64, N, N>) -> nalgebra::SMatrix<f64, N, N> {
        let mut term = nalgebra::SMatrix::<f64, N, N>::identity();
        let mut sum = term;
        for k in 1..40 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn rk4_matches_matrix_exponential_to_fifth_order() {
        let a = nalgebra::Matrix3::new(-0.5, 1.0, 0.0, -1.0, -0.2, 0.3, 0.1, 0.0, -1.0);
        let x0 = Vector3::new(1.0, -0.5, 0.25);
        let mut errors = Vec::new();
        for dt in [0.1, 0.05] {
            let step = rk4(&x0, dt, |x| Ok(a * x)).unwrap();
            let exact = taylor_expm(&(a * dt)) * x0;
            errors.push((step - exact).norm());
        }
        // Local error O(dt^5): halving dt divides it by about 32.
        let ratio = errors[0] / errors[1];
        assert!(ratio > 25.0 && ratio < 40.0, "ratio {ratio}");
        assert!(errors[0] < 1e-6);
    }

    #[test]
    fn rk4_zero_dynamics_is_identity() {
        let model = SystemModel::default();
        let x = plant_state(&Vector4::new(0.0, 0.0, 0.0, 1.0), &Vector4::zeros(), &target_joints());
        let u = plant_input(model.vehicle.hover_thrust(), &Vector3::zeros(), &Vector4::zeros());
        let next = rk4_step(&x, &u, 0.01, &model).unwrap();
        assert!((next - x).norm() < 1e-12);
        assert!(rk4_step(&x, &u, -0.01, &model).is_err());
    }

    #[test]
    fn halving_step_cuts_global_error_sixteenfold() {
        let model = SystemModel::default();
        let x0 = plant_state(
            &Vector4::new(0.05, 0.1, -0.2, 1.3),
            &Vector4::new(0.2, -0.1, 0.3, -0.2),
            &target_joints(),
        );
        let u = plant_input(model.vehicle.hover_thrust(), &Vector3::new(0.01, -0.02, 0.0), &Vector4::zeros());
        let run = |dt: f64, n: usize| {
            let mut x = x0;
            for _ in 0..n {
                x = rk4_step(&x, &u, dt, &model).unwrap();
            }
            x
        };
        let reference = run(0.0025, 400);
        let coarse = (run(0.04, 25) - reference).norm();
        let fine = (run(0.02, 50) - reference).norm();
        let ratio = coarse / fine;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn work_energy_balance_over_one_second() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..5 {
            let mut x = plant_state(
                &Vector4::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0, PI / 2.0),
                &(random_rates(&mut rng) * 0.2),
                &target_joints(),
            );
            let torque = Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
            let u = plant_input(model.vehicle.hover_thrust() * rng.random_range(0.9..1.1), &torque, &Vector4::zeros());
            let dt = 1e-3;
            let total = |s: &PlantState| {
                let (q, qd, j) = split_state(s);
                energy(&q, &qd, &j, &model).total()
            };
            let power = |s: &PlantState| {
                let (q, qd, j) = split_state(s);
                generalized_forces(&q, &j, &u, &model).dot(&qd)
            };
            let e0 = total(&x);
            let mut work = 0.0;
            for _ in 0..1000 {
                let p0 = power(&x);
                x = rk4_step(&x, &u, dt, &model).unwrap();
                work += 0.5 * (p0 + power(&x)) * dt;
            }
            assert!((total(&x) - e0 - work).abs() <= 1e-3);
        }
    }

    #[test]
    fn held_attitude_door_acceleration_matches_planning_gain() {
        let model = SystemModel::default();
        let x = plant_state(&Vector4::new(0.0, 0.15, 0.0, PI / 2.0), &Vector4::zeros(), &target_joints());
        let thrust = model.vehicle.hover_thrust();
        let (torque, door_accel) = attitude_holding_torque(&x, thrust, &model).unwrap();
        let q_ddot = generalized_acceleration(&x, &plant_input(thrust, &torque, &Vector4::zeros()), &model, &Vector4::zeros()).unwrap();
        assert!(q_ddot.fixed_rows::<3>(0).norm() < 1e-9);
        assert!((q_ddot[3] - door_accel).abs() < 1e-12);
        // Pitching toward the door pushes it open (alpha decreasing).
        let planned = door_torque_gain(EulerZYX::new(0.0, 0.15, 0.0), PI / 2.0, &model.door) * thrust;
        assert!(door_accel < 0.0 && planned < 0.0);
        assert!((door_accel - planned).abs() <= 0.1 * planned.abs());
    }

    #[test]
    fn free_flight_hover_stays_put() {
        let model = SystemModel::default();
        let mut s = FreeFlightState::at(Vector3::new(1.0, 2.0, 3.0), 0.4);
        for _ in 0..1000 {
            s = free_flight_step(&s, model.vehicle.hover_thrust(), &Vector3::zeros(), 1e-3, &model).unwrap();
        }
        assert!((s.position - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-10);
    }

    #[test]
    fn ill_conditioned_mass_matrix_is_reported() {
        let mut model = SystemModel::default();
        model.door.inertia = 1e13;
        let x = plant_state(&Vector4::new(0.0, 0.0, 0.0, 1.0), &Vector4::zeros(), &target_joints());
        let err = plant_deriv(&x, &PlantInput::zeros(), &model);
        assert!(err.is_err());
    }
}
