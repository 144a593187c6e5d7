//! Constrained DDP model-predictive control for a multirotor aerial
//! manipulator pushing a hinged door open.
//!
//! The crate is split bottom-up:
//!
//! * [`kinematics`]: rotations, Euler-rate maps, arm forward kinematics and the
//!   vehicle/door closure with its configuration Jacobians.
//! * [`model`]: the 9-state planning model and its analytic linearization.
//! * [`plant`]: the 12-state Lagrangian plant used as simulator and oracle.
//! * [`constraints`]: self-collision, door and doorframe clearance rows.
//! * [`ddp`]: augmented-Lagrangian iLQR solver.
//! * [`mpc`]: state converter, receding-horizon planner and tracking controller.
//! * [`scenario`]: configuration, closed-loop runs, logs and plots.

pub mod constraints;
pub mod ddp;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod mpc;
pub mod plant;
pub mod scenario;

pub use error::{Error, Result};
