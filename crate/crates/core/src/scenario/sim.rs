use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use nalgebra::{SVector, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{constraint_values, CONSTRAINT_COUNT};
use crate::error::{Error, Result};
use crate::mpc::{Measurement, MpcPlanner, TickOutput, TrackingController};
use crate::model::{planner_state, PlannerState};
use crate::kinematics::EulerZYX;
use crate::plant::{plant_state, rk4_step_with, split_state, PlantInput, PlantState};

use super::config::{ExecutionMode, ScenarioConfig};

/// Any plant state component beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// One MPC tick. Constraint values are the per-row maxima over the plant
/// steps since the previous record (the current state for the first record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub plant: [f64; 12],
    pub planner: [f64; 9],
    /// Planned state one knot ahead.
    pub predicted: [f64; 9],
    pub setpoint_position: [f64; 3],
    pub setpoint_velocity: [f64; 3],
    pub setpoint_yaw: f64,
    pub setpoint_joint_rates: [f64; 4],
    pub input: [f64; 8],
    pub constraints: [f64; CONSTRAINT_COUNT],
    pub iterations: u32,
    pub outer_iterations: u32,
    pub latency_ms: Option<f64>,
    pub violation: f64,
    pub cost: f64,
    pub converged: bool,
    pub degraded: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<TickRecord>,
}

impl RunLog {
    /// Largest value of each constraint row over the whole run.
    pub fn constraint_peaks(&self) -> [f64; CONSTRAINT_COUNT] {
        let mut peaks = [f64::NEG_INFINITY; CONSTRAINT_COUNT];
        for r in &self.records {
            for (p, c) in peaks.iter_mut().zip(&r.constraints) {
                *p = p.max(*c);
            }
        }
        peaks
    }

    pub fn latencies_ms(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.latency_ms).collect()
    }
}

fn to_array<const N: usize>(v: &SVector<f64, N>) -> [f64; N] {
    std::array::from_fn(|i| v[i])
}

/// Plant state at the start of the scenario: level attitude, door at
/// `alpha0` with rate `alpha_dot0`, arm at the target pose.
pub fn initial_plant_state(cfg: &ScenarioConfig) -> PlantState {
    let xf = &cfg.target.final_state;
    let joints = Vector4::new(xf[5], xf[6], xf[7], xf[8]);
    plant_state(
        &Vector4::new(0.0, 0.0, cfg.sim.initial_yaw, cfg.target.alpha0),
        &Vector4::new(0.0, 0.0, 0.0, cfg.target.alpha_dot0),
        &joints,
    )
}

/// Planner view of a plant state, straight from the generalized coordinates.
pub fn plant_to_planner(x: &PlantState) -> PlannerState {
    let (q, q_dot, h) = split_state(x);
    planner_state(EulerZYX::new(q[0], q[1], q[2]), q[3], q_dot[3], &h)
}

struct TickStats {
    out: TickOutput,
    latency_ms: Option<f64>,
}

trait Planning {
    fn plan(&mut self, m: Measurement) -> Result<TickStats>;
}

struct Inline {
    planner: MpcPlanner,
    record_latency: bool,
}

fn timed_tick(planner: &mut MpcPlanner, m: &Measurement, record_latency: bool) -> Result<TickStats> {
    let start = Instant::now();
    let out = planner.tick(m)?;
    let latency_ms = record_latency.then(|| start.elapsed().as_secs_f64() * 1e3);
    Ok(TickStats { out, latency_ms })
}

impl Planning for Inline {
    fn plan(&mut self, m: Measurement) -> Result<TickStats> {
        timed_tick(&mut self.planner, &m, self.record_latency)
    }
}

/// The planner on its own thread; measurements go in and tick results come
/// back through rendezvous channels, so the loop stays in lockstep.
struct Threaded {
    to_planner: Option<mpsc::SyncSender<Measurement>>,
    from_planner: mpsc::Receiver<Result<TickStats>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Threaded {
    fn spawn(mut planner: MpcPlanner, record_latency: bool) -> Self {
        let (tx_m, rx_m) = mpsc::sync_channel::<Measurement>(0);
        let (tx_o, rx_o) = mpsc::sync_channel::<Result<TickStats>>(0);
        let handle = thread::spawn(move || {
            for m in rx_m {
                if tx_o.send(timed_tick(&mut planner, &m, record_latency)).is_err() {
                    break;
                }
            }
        });
        Self { to_planner: Some(tx_m), from_planner: rx_o, handle: Some(handle) }
    }
}

impl Planning for Threaded {
    fn plan(&mut self, m: Measurement) -> Result<TickStats> {
        let lost = || Error::InvalidArgument("planner task stopped".into());
        self.to_planner.as_ref().ok_or_else(lost)?.send(m).map_err(|_| lost())?;
        self.from_planner.recv().map_err(|_| lost())?
    }
}

impl Drop for Threaded {
    fn drop(&mut self) {
        self.to_planner.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Runs the closed loop for the configured duration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let planner = MpcPlanner::new(cfg.model.clone(), cfg.mpc.clone(), cfg.target)?;
    let mut planning: Box<dyn Planning> = match cfg.sim.mode {
        ExecutionMode::Stepped => Box::new(Inline { planner, record_latency: cfg.sim.record_latency }),
        ExecutionMode::Threaded => Box::new(Threaded::spawn(planner, cfg.sim.record_latency)),
    };
    let controller = TrackingController::new(cfg.controller.clone(), cfg.model.clone());
    let model = &cfg.model;
    let dt = cfg.mpc.dt;
    let substeps = (dt / cfg.sim.plant_dt).round() as usize;
    let ticks = (cfg.sim.duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);

    let mut x = initial_plant_state(cfg);
    let mut joint_rates = Vector4::zeros();
    let mut peaks = to_array(&constraint_values(&plant_to_planner(&x), model));
    let mut records = Vec::with_capacity(ticks + 1);

    for k in 0..=ticks {
        let time = k as f64 * dt;
        let m = Measurement::from_plant(&x, &joint_rates, model);
        let stats = planning.plan(m)?;
        let out = &stats.out;
        if out.residual > cfg.sim.attachment_tolerance {
            return Err(Error::AttachmentLost { time, residual: out.residual });
        }
        let first: PlantInput = controller.compute(&out.setpoint, &m)?.input;
        let sp = &out.setpoint;
        records.push(TickRecord {
            time,
            plant: to_array(&x),
            planner: to_array(&out.state),
            predicted: to_array(&out.solve.states[1]),
            setpoint_position: to_array(&sp.position),
            setpoint_velocity: to_array(&sp.velocity),
            setpoint_yaw: sp.yaw,
            setpoint_joint_rates: to_array(&sp.joint_rates),
            input: to_array(&first),
            constraints: peaks,
            iterations: out.solve.iterations as u32,
            outer_iterations: out.solve.outer_iterations as u32,
            latency_ms: stats.latency_ms,
            violation: out.solve.max_violation,
            cost: out.solve.cost,
            converged: out.solve.converged,
            degraded: out.degraded,
            residual: out.residual,
        });
        if k == ticks {
            break;
        }

        let tau_ext = if cfg.sim.disturbance_scale > 0.0 {
            Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)) * cfg.sim.disturbance_scale
        } else {
            Vector4::zeros()
        };
        peaks = [f64::NEG_INFINITY; CONSTRAINT_COUNT];
        let setpoint = out.setpoint;
        for s in 0..substeps {
            let u = if s == 0 {
                first
            } else {
                controller.compute(&setpoint, &Measurement::from_plant(&x, &joint_rates, model))?.input
            };
            joint_rates = u.fixed_rows::<4>(4).into_owned();
            x = rk4_step_with(&x, &u, cfg.sim.plant_dt, model, &tau_ext)?;
            let magnitude = x.amax();
            if !(magnitude <= DIVERGENCE_LIMIT) {
                let t = time + (s + 1) as f64 * cfg.sim.plant_dt;
                return Err(Error::Divergence { time: t, magnitude });
            }
            let c = constraint_values(&plant_to_planner(&x), model);
            for (p, v) in peaks.iter_mut().zip(c.iter()) {
                *p = p.max(*v);
            }
        }
    }
    Ok(RunLog { records })
}

/// Vehicle position over the run, from the logged plant states.
pub fn vehicle_track(log: &RunLog, cfg: &ScenarioConfig) -> Vec<Vector3<f64>> {
    log.records
        .iter()
        .map(|r| {
            let x = PlantState::from(r.plant);
            Measurement::from_plant(&x, &Vector4::zeros(), &cfg.model).position
        })
        .collect()
}
