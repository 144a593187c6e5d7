//! Collision-avoidance state constraints, feasible when `c <= 0`.
//!
//! Rows, in stack order: third servo, fourth servo and tip heights in the body
//! frame; airframe disc versus door plane; vehicle center versus the two sides
//! of the doorframe.

use nalgebra::{SMatrix, SVector, Vector2, Vector3, Vector4};

use crate::ddp::{ConstraintEval, StateConstraints};
use crate::kinematics::{arm_fk, arm_jacobian, door_normal, euler_to_rot, rot_partials, ArmGeometry, DoorGeometry, EulerZYX};
use crate::model::{attitude, joints, idx, PlannerState, SystemModel, STATE_DIM};

pub const CONSTRAINT_COUNT: usize = 6;

pub const LABELS: [&str; CONSTRAINT_COUNT] = [
    "self_servo3",
    "self_servo4",
    "self_tip",
    "door",
    "frame_hinge_side",
    "frame_latch_side",
];

/// Body-frame heights of servo 3, servo 4 and the tip; the arm must stay
/// below the airframe.
pub fn self_collision(joints: &Vector4<f64>, arm: &ArmGeometry) -> Vector3<f64> {
    let pts = arm_fk(joints, arm);
    Vector3::new(pts.servo3.z, pts.servo4.z, pts.tip.z)
}

/// Door-plane clearance of the airframe disc.
///
/// The tip's reach along the door normal must exceed the farthest point of the
/// radius-`R_A` disc in the body xy plane along that normal, which is
/// `R_A * |xy part of the body-frame normal|`.
pub fn door_clearance(att: EulerZYX, joints: &Vector4<f64>, alpha: f64, door: &DoorGeometry, arm: &ArmGeometry) -> f64 {
    let normal_body = euler_to_rot(att).transpose() * door_normal(alpha);
    let tip = arm_fk(joints, arm).tip;
    door.vehicle_radius * normal_body.xy().norm() - normal_body.dot(&tip)
}

/// Lateral offset of the vehicle center from the hinge line, `P_y - P_hy`.
pub fn hinge_offset(att: EulerZYX, joints: &Vector4<f64>, alpha: f64, door: &DoorGeometry, arm: &ArmGeometry) -> f64 {
    let tip_world = euler_to_rot(att) * arm_fk(joints, arm).tip;
    door.d_v * alpha.sin() - tip_world.y
}

/// The vehicle disc must fit inside the doorframe opening of width `D_w`.
pub fn doorframe_clearance(
    att: EulerZYX,
    joints: &Vector4<f64>,
    alpha: f64,
    door: &DoorGeometry,
    arm: &ArmGeometry,
) -> Vector2<f64> {
    let offset = hinge_offset(att, joints, alpha, door, arm);
    Vector2::new(
        door.vehicle_radius - offset,
        offset - (door.width - door.vehicle_radius),
    )
}

pub fn constraint_values(x: &PlannerState, model: &SystemModel) -> SVector<f64, CONSTRAINT_COUNT> {
    let att = attitude(x);
    let h = joints(x);
    let alpha = x[idx::ALPHA];
    let selfc = self_collision(&h, &model.arm);
    let frame = doorframe_clearance(att, &h, alpha, &model.door, &model.arm);
    SVector::from([
        selfc.x,
        selfc.y,
        selfc.z,
        door_clearance(att, &h, alpha, &model.door, &model.arm),
        frame.x,
        frame.y,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintStack {
    pub values: SVector<f64, CONSTRAINT_COUNT>,
    pub jacobian: SMatrix<f64, CONSTRAINT_COUNT, STATE_DIM>,
}

impl ConstraintStack {
    pub fn labels(&self) -> &'static [&'static str; CONSTRAINT_COUNT] {
        &LABELS
    }

    pub fn max_violation(&self) -> f64 {
        self.values.max().max(0.0)
    }
}

/// Analytic Jacobian of [`constraint_values`] over the planner state.
pub fn constraint_jacobian(x: &PlannerState, model: &SystemModel) -> SMatrix<f64, CONSTRAINT_COUNT, STATE_DIM> {
    let att = attitude(x);
    let h = joints(x);
    let alpha = x[idx::ALPHA];
    let (door, arm) = (&model.door, &model.arm);
    let r = euler_to_rot(att);
    let dr = rot_partials(att);
    let tip = arm_fk(&h, arm).tip;
    let tip_jac = arm_jacobian(&h, arm);
    let n = door_normal(alpha);
    let nb = r.transpose() * n;
    let nxy = nb.xy().norm();
    let door_row = |dnb: Vector3<f64>, dtip: Vector3<f64>| {
        let disc = if nxy > 0.0 { door.vehicle_radius * (nb.x * dnb.x + nb.y * dnb.y) / nxy } else { 0.0 };
        disc - dnb.dot(&tip) - nb.dot(&dtip)
    };

    let mut j = SMatrix::<f64, CONSTRAINT_COUNT, STATE_DIM>::zeros();
    let [_, l2, l3, _] = arm.link_lengths;
    let s2 = h[1];
    let s3 = s2 + h[2];
    let servo3 = l2 * s2.sin();
    let servo4 = l3 * s3.sin();
    j[(0, idx::JOINTS + 1)] = servo3;
    j[(1, idx::JOINTS + 1)] = servo3 + servo4;
    j[(1, idx::JOINTS + 2)] = servo4;
    for k in 0..4 {
        j[(2, idx::JOINTS + k)] = tip_jac[(2, k)];
    }

    for k in 0..3 {
        j[(3, k)] = door_row(dr[k].transpose() * n, Vector3::zeros());
        let d_offset = -(dr[k] * tip).y;
        j[(4, k)] = -d_offset;
        j[(5, k)] = d_offset;
    }
    let dn = Vector3::new(alpha.cos(), alpha.sin(), 0.0);
    j[(3, idx::ALPHA)] = door_row(r.transpose() * dn, Vector3::zeros());
    j[(4, idx::ALPHA)] = -door.d_v * alpha.cos();
    j[(5, idx::ALPHA)] = door.d_v * alpha.cos();
    for k in 0..4 {
        let dtip = tip_jac.column(k).into_owned();
        j[(3, idx::JOINTS + k)] = door_row(Vector3::zeros(), dtip);
        let d_offset = -(r * dtip).y;
        j[(4, idx::JOINTS + k)] = -d_offset;
        j[(5, idx::JOINTS + k)] = d_offset;
    }
    j
}

pub fn stack(x: &PlannerState, model: &SystemModel) -> ConstraintStack {
    ConstraintStack {
        values: constraint_values(x, model),
        jacobian: constraint_jacobian(x, model),
    }
}

/// The door-opening constraint stack as seen by the solver, tightened by
/// `margin` so that tracking error stays inside the true feasible set.
#[derive(Debug, Clone)]
pub struct DoorConstraints {
    pub model: SystemModel,
    pub margin: f64,
}

impl StateConstraints<STATE_DIM> for DoorConstraints {
    fn count(&self) -> usize {
        CONSTRAINT_COUNT
    }

    fn evaluate(&self, x: &PlannerState) -> ConstraintEval<STATE_DIM> {
        let s = stack(x, &self.model);
        ConstraintEval {
            values: s.values.iter().map(|v| v + self.margin).collect(),
            gradients: (0..CONSTRAINT_COUNT).map(|r| s.jacobian.row(r).transpose()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::planner_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn target_joints() -> Vector4<f64> {
        Vector4::new(0.0, PI / 2.0, -PI / 2.0, 0.0)
    }

    fn random_state(rng: &mut impl Rng) -> PlannerState {
        planner_state(
            EulerZYX::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-PI..PI)),
            rng.random_range(-PI..PI),
            rng.random_range(-1.0..1.0),
            &Vector4::from_fn(|_, _| rng.random_range(-PI..PI)),
        )
    }

    #[test]
    fn self_collision_examples() {
        let arm = ArmGeometry::default();
        assert!(self_collision(&target_joints(), &arm).iter().all(|z| *z < 0.0));
        let folded_up = Vector4::new(0.0, PI, 0.0, 0.0);
        assert!(self_collision(&folded_up, &arm).iter().any(|z| *z > 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..100 {
            let mut h = Vector4::from_fn(|_, _| rng.random_range(-PI..PI));
            let before = self_collision(&h, &arm);
            h[0] += rng.random_range(-PI..PI);
            assert!((self_collision(&h, &arm) - before).abs().max() < 1e-15);
        }
    }

    #[test]
    fn door_clearance_examples() {
        let door = DoorGeometry::default();
        let arm = ArmGeometry::default();
        let tip = arm_fk(&target_joints(), &arm).tip;
        let c = door_clearance(EulerZYX::default(), &target_joints(), PI / 2.0, &door, &arm);
        assert!((c - (door.vehicle_radius - tip.x)).abs() < 1e-15);
        assert!(c < 0.0);

        let stub = ArmGeometry {
            link_lengths: [1e-300; 4],
            mount: Vector3::zeros(),
            ..ArmGeometry::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let att = EulerZYX::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-PI..PI));
            assert!(door_clearance(att, &Vector4::zeros(), rng.random_range(-PI..PI), &door, &stub) > 0.0);
        }
    }

    #[test]
    fn door_clearance_matches_sampled_disc_maximum() {
        let door = DoorGeometry::default();
        let arm = ArmGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..500 {
            let att = EulerZYX::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-PI..PI));
            let alpha = rng.random_range(-PI..PI);
            let h = Vector4::from_fn(|_, _| rng.random_range(-PI..PI));
            let r = euler_to_rot(att);
            let n = door_normal(alpha);
            let reach = n.dot(&(r * arm_fk(&h, &arm).tip));
            let disc = (0..720)
                .map(|k| {
                    let th = k as f64 * 2.0 * PI / 720.0;
                    n.dot(&(r * Vector3::new(th.cos(), th.sin(), 0.0)))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let sampled = door.vehicle_radius * disc - reach;
            let closed = door_clearance(att, &h, alpha, &door, &arm);
            assert!((sampled - closed).abs() < 1e-3);
            assert!(sampled <= closed + 1e-15);
        }
    }

    #[test]
    fn door_clearance_co_rotates_with_yaw_and_door() {
        let door = DoorGeometry::default();
        let arm = ArmGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..500 {
            let att = EulerZYX::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-PI..PI));
            let alpha = rng.random_range(-PI..PI);
            let h = Vector4::from_fn(|_, _| rng.random_range(-PI..PI));
            let delta = rng.random_range(-PI..PI);
            let turned = EulerZYX::new(att.roll, att.pitch, att.yaw + delta);
            let a = door_clearance(att, &h, alpha, &door, &arm);
            let b = door_clearance(turned, &h, alpha + delta, &door, &arm);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn doorframe_examples() {
        let door = DoorGeometry::default();
        let arm = ArmGeometry::default();
        let h = target_joints();
        let c = doorframe_clearance(EulerZYX::default(), &h, PI / 2.0, &door, &arm);
        assert!((c - Vector2::new(0.35 - 0.8, 0.8 - 0.85)).norm() < 1e-12);
        assert!(c.iter().all(|v| *v <= 0.0));

        let alpha = (door.vehicle_radius / door.d_v).asin();
        let boundary = doorframe_clearance(EulerZYX::default(), &h, alpha, &door, &arm);
        assert!(boundary.x.abs() < 1e-15);

        let yawed = doorframe_clearance(EulerZYX::new(0.0, 0.0, -PI / 2.0), &h, PI / 2.0, &door, &arm);
        assert!(yawed.y > 0.0);
    }

    #[test]
    fn initial_state_is_strictly_feasible() {
        let model = SystemModel::default();
        let x0 = planner_state(EulerZYX::default(), PI / 2.0, 0.0, &target_joints());
        let s = stack(&x0, &model);
        assert!(s.values.iter().all(|v| *v < 0.0), "{}", s.values);
        assert_eq!(s.max_violation(), 0.0);
        assert_eq!(s.labels().len(), CONSTRAINT_COUNT);
    }

    fn central_difference(x: &PlannerState, model: &SystemModel, h: f64) -> SMatrix<f64, CONSTRAINT_COUNT, STATE_DIM> {
        let mut jac = SMatrix::<f64, CONSTRAINT_COUNT, STATE_DIM>::zeros();
        for k in 0..STATE_DIM {
            let mut e = PlannerState::zeros();
            e[k] = h;
            jac.set_column(k, &((constraint_values(&(x + e), model) - constraint_values(&(x - e), model)) / (2.0 * h)));
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = SystemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..1000 {
            let x = random_state(&mut rng);
            let exact = constraint_jacobian(&x, &model);
            assert!(exact.column(idx::ALPHA_DOT).iter().all(|v| *v == 0.0));
            let fd = central_difference(&x, &model, 1e-6);
            for r in 0..CONSTRAINT_COUNT {
                let (a, b) = (exact.row(r).into_owned(), fd.row(r).into_owned());
                assert!((a - b).norm() <= 1e-4 * a.norm().max(1e-2), "row {r}: {a} vs {b}");
            }
        }
    }
}
