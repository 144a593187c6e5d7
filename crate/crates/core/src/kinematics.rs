//! Rigid-body kinematics of the vehicle, the arm and the door.
//!
//! Conventions: world z points up, thrust acts along body +z, attitude is
//! ZYX Euler (`R = Rz(yaw) Ry(pitch) Rx(roll)`), and the door angle `alpha`
//! is measured counterclockwise about world z from the world x axis.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x4, RowVector4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard band around `|pitch| = pi/2` where the Euler-rate map is refused.
pub const EULER_SINGULARITY_EPS: f64 = 1e-3;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerZYX {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerZYX {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    pub fn wrapped(self) -> Self {
        Self::new(wrap_angle(self.roll), wrap_angle(self.pitch), wrap_angle(self.yaw))
    }

    pub fn is_singular(self) -> bool {
        self.pitch.abs() >= PI / 2.0 - EULER_SINGULARITY_EPS
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-world rotation.
pub fn euler_to_rot(e: EulerZYX) -> Matrix3<f64> {
    rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll)
}

/// Partial derivatives of [`euler_to_rot`] with respect to roll, pitch, yaw.
pub fn rot_partials(e: EulerZYX) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(e.roll), rot_y(e.pitch), rot_z(e.yaw));
    [
        rz * ry * d_rot_x(e.roll),
        rz * d_rot_y(e.pitch) * rx,
        d_rot_z(e.yaw) * ry * rx,
    ]
}

/// Maps Euler-angle rates to body rates: `Omega = E(Phi) * Phi_dot`.
pub fn body_rate_map(e: EulerZYX) -> Matrix3<f64> {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp)
}

/// Maps body rates to Euler-angle rates: `Phi_dot = W(Phi) * Omega`.
pub fn euler_rate_map(e: EulerZYX) -> Result<Matrix3<f64>> {
    if e.is_singular() {
        return Err(Error::EulerSingularity { pitch: e.pitch });
    }
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let tp = sp / cp;
    Ok(Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    ))
}

/// Partials of `W(Phi)` with respect to roll, pitch, yaw (the last is zero).
pub fn euler_rate_map_partials(e: EulerZYX) -> Result<[Matrix3<f64>; 3]> {
    if e.is_singular() {
        return Err(Error::EulerSingularity { pitch: e.pitch });
    }
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let tp = sp / cp;
    let c2 = cp * cp;
    let d_roll = Matrix3::new(
        0.0,
        cr * tp,
        -sr * tp,
        0.0,
        -sr,
        -cr,
        0.0,
        cr / cp,
        -sr / cp,
    );
    let d_pitch = Matrix3::new(
        0.0,
        sr / c2,
        cr / c2,
        0.0,
        0.0,
        0.0,
        0.0,
        sr * sp / c2,
        cr * sp / c2,
    );
    Ok([d_roll, d_pitch, Matrix3::zeros()])
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Door geometry plus the vehicle radius that the clearance rows need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorGeometry {
    /// Lower end of the hinge axis, world frame (m).
    pub hinge: Vector3<f64>,
    /// Horizontal hinge-to-contact distance (m).
    pub d_v: f64,
    /// Vertical hinge-base-to-contact offset (m).
    pub d_h: f64,
    pub width: f64,
    pub height: f64,
    /// Door inertia about the hinge axis (kg m^2).
    pub inertia: f64,
    /// Vehicle radius including propellers, body xy plane (m).
    pub vehicle_radius: f64,
}

impl Default for DoorGeometry {
    fn default() -> Self {
        Self {
            hinge: Vector3::zeros(),
            d_v: 0.8,
            d_h: 0.8,
            width: 1.2,
            height: 1.6,
            inertia: 5.28,
            vehicle_radius: 0.35,
        }
    }
}

impl DoorGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_v > 0.0) {
            return Err(Error::validation("door.d_v (D_V)", "must be positive"));
        }
        if !(self.inertia > 0.0) {
            return Err(Error::validation("door.inertia (I_D)", "must be positive"));
        }
        if !(self.width > 0.0) {
            return Err(Error::validation("door.width (D_w)", "must be positive"));
        }
        if !(self.height > 0.0) {
            return Err(Error::validation("door.height (D_h)", "must be positive"));
        }
        if !(self.vehicle_radius > 0.0 && self.vehicle_radius < self.width / 2.0) {
            return Err(Error::validation(
                "door.vehicle_radius (R_A)",
                "must satisfy 0 < R_A < D_w/2",
            ));
        }
        if !self.d_h.is_finite() || self.hinge.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("door", "non-finite hinge position or D_H"));
        }
        Ok(())
    }
}

/// Four-joint arm hanging below the airframe.
///
/// Joint 1 yaws about body z at `mount`; link 1 runs straight down along that
/// axis. Joints 2-4 pitch about the yawed body-y axis; a positive angle swings
/// the distal links toward body +x. All-zero angles hang the arm straight down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub link_lengths: [f64; 4],
    /// Joint-1 location in the body frame (m).
    pub mount: Vector3<f64>,
    pub joint_limits: [[f64; 2]; 4],
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            link_lengths: [0.077, 0.128, 0.124, 0.126],
            mount: Vector3::new(0.30, 0.0, -0.05),
            joint_limits: [[-PI, PI]; 4],
        }
    }
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::validation("arm.link_lengths", "every link length must be positive"));
        }
        if self.mount.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("arm.mount", "must be finite"));
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::validation(
                    format!("arm.joint_limits[{i}]"),
                    "lower limit must be below upper limit",
                ));
            }
        }
        Ok(())
    }

    pub fn within_limits(&self, joints: &Vector4<f64>) -> bool {
        joints
            .iter()
            .zip(&self.joint_limits)
            .all(|(q, [lo, hi])| *q >= *lo && *q <= *hi)
    }

    pub fn total_length(&self) -> f64 {
        self.link_lengths.iter().sum()
    }
}

/// Body-frame positions of the third and fourth servos and of the tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPoints {
    pub servo3: Vector3<f64>,
    pub servo4: Vector3<f64>,
    pub tip: Vector3<f64>,
}

fn link_direction(yaw: &Matrix3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    yaw * Vector3::new(s, 0.0, -c)
}

fn link_direction_rate(yaw: &Matrix3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    yaw * Vector3::new(c, 0.0, s)
}

pub fn arm_fk(joints: &Vector4<f64>, arm: &ArmGeometry) -> ArmPoints {
    let [l1, l2, l3, l4] = arm.link_lengths;
    let yaw = rot_z(joints[0]);
    let s2 = joints[1];
    let s3 = s2 + joints[2];
    let s4 = s3 + joints[3];
    let servo2 = arm.mount - Vector3::z() * l1;
    let servo3 = servo2 + link_direction(&yaw, s2) * l2;
    let servo4 = servo3 + link_direction(&yaw, s3) * l3;
    let tip = servo4 + link_direction(&yaw, s4) * l4;
    ArmPoints {
        servo3,
        servo4,
        tip,
    }
}

/// Jacobian of the tip position with respect to the joint angles.
pub fn arm_jacobian(joints: &Vector4<f64>, arm: &ArmGeometry) -> Matrix3x4<f64> {
    let [_, l2, l3, l4] = arm.link_lengths;
    let yaw = rot_z(joints[0]);
    let s2 = joints[1];
    let s3 = s2 + joints[2];
    let s4 = s3 + joints[3];
    let tip = arm_fk(joints, arm).tip;
    let t4 = link_direction_rate(&yaw, s4) * l4;
    let t3 = link_direction_rate(&yaw, s3) * l3 + t4;
    let t2 = link_direction_rate(&yaw, s2) * l2 + t3;
    let t1 = Vector3::z().cross(&(tip - arm.mount));
    Matrix3x4::from_columns(&[t1, t2, t3, t4])
}

/// Tip velocity in the body frame.
pub fn arm_fk_vel(joints: &Vector4<f64>, rates: &Vector4<f64>, arm: &ArmGeometry) -> Vector3<f64> {
    arm_jacobian(joints, arm) * rates
}

/// Contact point on the door, world frame.
pub fn door_contact_point(alpha: f64, door: &DoorGeometry) -> Vector3<f64> {
    let (s, c) = alpha.sin_cos();
    door.hinge + Vector3::new(door.d_v * c, door.d_v * s, door.d_h)
}

/// Vehicle position implied by the rigid attachment to the door.
pub fn uam_position_from_door(
    alpha: f64,
    attitude: EulerZYX,
    joints: &Vector4<f64>,
    door: &DoorGeometry,
    arm: &ArmGeometry,
) -> Vector3<f64> {
    door_contact_point(alpha, door) - euler_to_rot(attitude) * arm_fk(joints, arm).tip
}

/// Unit door normal pointing away from the vehicle.
pub fn door_normal(alpha: f64) -> Vector3<f64> {
    let (s, c) = alpha.sin_cos();
    Vector3::new(s, -c, 0.0)
}

/// Generalized coordinates `q = [roll, pitch, yaw, alpha]` with rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Configuration {
    pub q: Vector4<f64>,
    pub q_dot: Vector4<f64>,
    pub joints: Vector4<f64>,
}

impl Configuration {
    pub fn attitude(&self) -> EulerZYX {
        attitude_of(&self.q)
    }

    pub fn alpha(&self) -> f64 {
        self.q[3]
    }
}

pub(crate) fn attitude_of(q: &Vector4<f64>) -> EulerZYX {
    EulerZYX::new(q[0], q[1], q[2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians {
    /// `P_dot = J_t q_dot - R d_dot`.
    pub translational: Matrix3x4<f64>,
    /// `Omega = J_r q_dot`.
    pub rotational: Matrix3x4<f64>,
    /// `alpha_dot = J_alpha q_dot`.
    pub door: RowVector4<f64>,
}

pub fn jacobians(
    q: &Vector4<f64>,
    joints: &Vector4<f64>,
    door: &DoorGeometry,
    arm: &ArmGeometry,
) -> Jacobians {
    let att = attitude_of(q);
    let tip = arm_fk(joints, arm).tip;
    let partials = rot_partials(att);
    let (s, c) = q[3].sin_cos();
    let translational = Matrix3x4::from_columns(&[
        -(partials[0] * tip),
        -(partials[1] * tip),
        -(partials[2] * tip),
        Vector3::new(-door.d_v * s, door.d_v * c, 0.0),
    ]);
    let mut rotational = Matrix3x4::zeros();
    rotational
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&body_rate_map(att));
    Jacobians {
        translational,
        rotational,
        door: RowVector4::new(0.0, 0.0, 0.0, 1.0),
    }
}
