//! Augmented-Lagrangian iLQR for finite-horizon problems with state
//! inequality constraints `c(x) <= 0`.
//!
//! The inner loop is Gauss-Newton DDP on the augmented objective; the outer
//! loop updates per-timestep multipliers and the penalty weight.

use std::sync::Arc;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub trait Dynamics<const N: usize, const M: usize>: Send + Sync {
    fn step(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> Result<SVector<f64, N>>;

    /// Jacobians `(df/dx, df/du)` of [`Dynamics::step`].
    fn linearize(
        &self,
        x: &SVector<f64, N>,
        u: &SVector<f64, M>,
    ) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, M>)>;
}

/// Constraint values at one state with one gradient per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval<const N: usize> {
    pub values: Vec<f64>,
    pub gradients: Vec<SVector<f64, N>>,
}

pub trait StateConstraints<const N: usize>: Send + Sync {
    fn count(&self) -> usize;
    fn evaluate(&self, x: &SVector<f64, N>) -> ConstraintEval<N>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoConstraints;

impl<const N: usize> StateConstraints<N> for NoConstraints {
    fn count(&self) -> usize {
        0
    }

    fn evaluate(&self, _x: &SVector<f64, N>) -> ConstraintEval<N> {
        ConstraintEval { values: Vec::new(), gradients: Vec::new() }
    }
}

/// `x' = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics<const N: usize, const M: usize> {
    pub a: SMatrix<f64, N, N>,
    pub b: SMatrix<f64, N, M>,
}

impl<const N: usize, const M: usize> Dynamics<N, M> for LinearDynamics<N, M> {
    fn step(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> Result<SVector<f64, N>> {
        Ok(self.a * x + self.b * u)
    }

    fn linearize(
        &self,
        _x: &SVector<f64, N>,
        _u: &SVector<f64, M>,
    ) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, M>)> {
        Ok((self.a, self.b))
    }
}

/// Box constraints `lower <= x_k <= upper` on chosen components.
#[derive(Debug, Clone)]
pub struct StateBounds<const N: usize> {
    pub rows: Vec<(usize, f64, f64)>,
}

impl<const N: usize> StateConstraints<N> for StateBounds<N> {
    fn count(&self) -> usize {
        2 * self.rows.len()
    }

    fn evaluate(&self, x: &SVector<f64, N>) -> ConstraintEval<N> {
        let mut values = Vec::with_capacity(self.count());
        let mut gradients = Vec::with_capacity(self.count());
        for &(k, lo, hi) in &self.rows {
            let mut e = SVector::<f64, N>::zeros();
            e[k] = 1.0;
            values.push(lo - x[k]);
            gradients.push(-e);
            values.push(x[k] - hi);
            gradients.push(e);
        }
        ConstraintEval { values, gradients }
    }
}

/// Finite-horizon problem with diagonal quadratic tracking cost
/// `J = 1/2 |x_N - xd_N|^2_L + sum_i (1/2 |x_i - xd_i|^2_Q + 1/2 |u_i - ud_i|^2_R) dt`.
#[derive(Clone)]
pub struct OcpProblem<const N: usize, const M: usize> {
    pub horizon: usize,
    pub dt: f64,
    pub dynamics: Arc<dyn Dynamics<N, M>>,
    pub constraints: Arc<dyn StateConstraints<N>>,
    pub q: SVector<f64, N>,
    pub r: SVector<f64, M>,
    pub terminal: SVector<f64, N>,
    /// `horizon + 1` state references; the last one is the terminal target.
    pub x_ref: Vec<SVector<f64, N>>,
    pub u_ref: Vec<SVector<f64, M>>,
}

impl<const N: usize, const M: usize> OcpProblem<N, M> {
    /// Constant references over the whole horizon.
    pub fn regulator(
        horizon: usize,
        dt: f64,
        dynamics: Arc<dyn Dynamics<N, M>>,
        constraints: Arc<dyn StateConstraints<N>>,
        weights: (SVector<f64, N>, SVector<f64, M>, SVector<f64, N>),
        x_target: SVector<f64, N>,
        u_target: SVector<f64, M>,
    ) -> Self {
        Self {
            horizon,
            dt,
            dynamics,
            constraints,
            q: weights.0,
            r: weights.1,
            terminal: weights.2,
            x_ref: vec![x_target; horizon + 1],
            u_ref: vec![u_target; horizon],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.q.iter().chain(self.terminal.iter()).any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("state weights must be non-negative".into()));
        }
        if self.r.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("input weights must be positive".into()));
        }
        check_len("x_ref", self.horizon + 1, self.x_ref.len())?;
        check_len("u_ref", self.horizon, self.u_ref.len())
    }

    pub fn rollout(&self, x0: &SVector<f64, N>, inputs: &[SVector<f64, M>]) -> Result<Vec<SVector<f64, N>>> {
        check_len("input trajectory", self.horizon, inputs.len())?;
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(*x0);
        for u in inputs {
            let next = self.dynamics.step(states.last().unwrap(), u)?;
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("rollout produced a non-finite state".into()));
            }
            states.push(next);
        }
        Ok(states)
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub constraint_tolerance: f64,
    /// Relative to `max(1, |J|)`.
    pub cost_tolerance: f64,
    pub regularization_init: f64,
    pub regularization_min: f64,
    pub regularization_max: f64,
    /// Line search tries `beta = 2^-k` for `k = 0..line_search_steps`.
    pub line_search_steps: usize,
    pub armijo: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_outer_iterations: 8,
            max_inner_iterations: 30,
            penalty_init: 1.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            constraint_tolerance: 1e-3,
            cost_tolerance: 1e-4,
            regularization_init: 1e-6,
            regularization_min: 1e-8,
            regularization_max: 1e8,
            line_search_steps: 11,
            armijo: 1e-4,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
            ("regularization_min", self.regularization_min),
            ("regularization_max", self.regularization_max),
            ("armijo", self.armijo),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::validation(format!("solver.{name}"), "must be positive"));
            }
        }
        for (name, v) in [("constraint_tolerance", self.constraint_tolerance), ("cost_tolerance", self.cost_tolerance)] {
            if !(v >= 0.0) {
                return Err(Error::validation(format!("solver.{name}"), "must be non-negative"));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::validation("solver.penalty_growth", "must exceed 1"));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 || self.line_search_steps == 0 {
            return Err(Error::validation("solver", "iteration counts must be positive"));
        }
        if !(self.regularization_min <= self.regularization_init && self.regularization_init <= self.regularization_max) {
            return Err(Error::validation(
                "solver.regularization_init",
                "must lie within [regularization_min, regularization_max]",
            ));
        }
        Ok(())
    }
}

/// Multipliers indexed `[time][row]`, one row set per knot `0..=horizon`.
/// Knot 0 is the fixed initial state and never carries a penalty.
pub type Multipliers = Vec<Vec<f64>>;

/// Dual state carried from a previous solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub multipliers: Multipliers,
    pub penalty: f64,
}

pub fn zero_multipliers<const N: usize, const M: usize>(problem: &OcpProblem<N, M>) -> Multipliers {
    vec![vec![0.0; problem.constraints.count()]; problem.horizon + 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSample {
    pub outer: usize,
    pub augmented: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult<const N: usize, const M: usize> {
    pub states: Vec<SVector<f64, N>>,
    pub inputs: Vec<SVector<f64, M>>,
    pub cost: f64,
    pub max_violation: f64,
    /// Inner iterations over all outer passes.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Accepted iterates, starting with the initial guess of each outer pass.
    pub cost_trace: Vec<CostSample>,
    pub multipliers: Multipliers,
    pub penalty: f64,
}

pub fn eval_cost<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    problem: &OcpProblem<N, M>,
) -> Result<f64> {
    check_len("state trajectory", problem.horizon + 1, states.len())?;
    check_len("input trajectory", problem.horizon, inputs.len())?;
    let h = problem.horizon;
    let mut j = 0.0;
    for i in 0..h {
        let dx = states[i] - problem.x_ref[i];
        let du = inputs[i] - problem.u_ref[i];
        j += 0.5 * (dx.dot(&dx.component_mul(&problem.q)) + du.dot(&du.component_mul(&problem.r))) * problem.dt;
    }
    let dx = states[h] - problem.x_ref[h];
    Ok(j + 0.5 * dx.dot(&dx.component_mul(&problem.terminal)))
}

fn penalty_term(lambda: f64, mu: f64, c: f64) -> f64 {
    let s = (lambda + mu * c).max(0.0);
    (s * s - lambda * lambda) / (2.0 * mu)
}

/// Cost plus the augmented-Lagrangian penalty, and the largest violation.
pub fn augmented_cost<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    problem: &OcpProblem<N, M>,
    multipliers: &Multipliers,
    mu: f64,
) -> Result<(f64, f64, f64)> {
    let cost = eval_cost(states, inputs, problem)?;
    let mut pen = 0.0;
    let mut viol = 0.0f64;
    for (i, x) in states.iter().enumerate().skip(1) {
        let ev = problem.constraints.evaluate(x);
        for (j, c) in ev.values.iter().enumerate() {
            pen += penalty_term(multipliers[i][j], mu, *c);
            viol = viol.max(*c);
        }
    }
    Ok((cost + pen, cost, viol))
}

#[derive(Debug, Clone)]
pub struct Gains<const N: usize, const M: usize> {
    pub feedforward: Vec<SVector<f64, M>>,
    pub feedback: Vec<SMatrix<f64, M, N>>,
    /// Linear and quadratic coefficients of the predicted change, `dJ(beta) = beta d1 + beta^2 d2`.
    pub expected: (f64, f64),
}

impl<const N: usize, const M: usize> Gains<N, M> {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            feedforward: vec![SVector::zeros(); horizon],
            feedback: vec![SMatrix::zeros(); horizon],
            expected: (0.0, 0.0),
        }
    }

    fn expected_decrease(&self, beta: f64) -> f64 {
        -(beta * self.expected.0 + beta * beta * self.expected.1)
    }
}

type Linearization<const N: usize, const M: usize> = Vec<(SMatrix<f64, N, N>, SMatrix<f64, N, M>)>;

fn linearize_all<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    problem: &OcpProblem<N, M>,
) -> Result<Linearization<N, M>> {
    inputs
        .iter()
        .zip(states)
        .map(|(u, x)| problem.dynamics.linearize(x, u))
        .collect()
}

/// Adds the Gauss-Newton penalty gradient and Hessian at one knot.
fn add_penalty<const N: usize>(
    ev: &ConstraintEval<N>,
    lambda: &[f64],
    mu: f64,
    grad: &mut SVector<f64, N>,
    hess: &mut SMatrix<f64, N, N>,
) {
    for (j, (c, g)) in ev.values.iter().zip(&ev.gradients).enumerate() {
        let s = lambda[j] + mu * c;
        if s > 0.0 {
            *grad += g * s;
            *hess += g * g.transpose() * mu;
        }
    }
}

/// Riccati-style recursion on the augmented objective.
///
/// Fails with [`Error::InvalidArgument`] when `Q_uu + rho I` is not positive
/// definite; callers raise `rho` and retry.
pub fn backward_pass<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    problem: &OcpProblem<N, M>,
    multipliers: &Multipliers,
    mu: f64,
    regularization: f64,
) -> Result<Gains<N, M>> {
    check_len("state trajectory", problem.horizon + 1, states.len())?;
    check_len("input trajectory", problem.horizon, inputs.len())?;
    let lin = linearize_all(states, inputs, problem)?;
    backward_with(states, inputs, &lin, problem, multipliers, mu, regularization)
}

fn backward_with<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    lin: &Linearization<N, M>,
    problem: &OcpProblem<N, M>,
    multipliers: &Multipliers,
    mu: f64,
    regularization: f64,
) -> Result<Gains<N, M>> {
    let h = problem.horizon;
    let dt = problem.dt;
    let q = SMatrix::<f64, N, N>::from_diagonal(&problem.q) * dt;
    let r = SMatrix::<f64, M, M>::from_diagonal(&problem.r) * dt;

    let mut v_x = (states[h] - problem.x_ref[h]).component_mul(&problem.terminal);
    let mut v_xx = SMatrix::<f64, N, N>::from_diagonal(&problem.terminal);
    let ev = problem.constraints.evaluate(&states[h]);
    add_penalty(&ev, &multipliers[h], mu, &mut v_x, &mut v_xx);

    let mut gains = Gains::zeros(h);
    let (mut d1, mut d2) = (0.0, 0.0);
    for i in (0..h).rev() {
        let (a, b) = &lin[i];
        let mut l_x = q * (states[i] - problem.x_ref[i]);
        let mut l_xx = q;
        if i > 0 {
            let ev = problem.constraints.evaluate(&states[i]);
            add_penalty(&ev, &multipliers[i], mu, &mut l_x, &mut l_xx);
        }
        let l_u = r * (inputs[i] - problem.u_ref[i]);

        let q_x = l_x + a.transpose() * v_x;
        let q_u = l_u + b.transpose() * v_x;
        let vb = v_xx * b;
        let q_xx = l_xx + a.transpose() * v_xx * a;
        let q_uu = r + b.transpose() * vb;
        let q_ux = vb.transpose() * a;

        let q_uu_reg = q_uu + SMatrix::<f64, M, M>::identity() * regularization;
        let chol = q_uu_reg.cholesky().ok_or_else(|| {
            Error::InvalidArgument(format!("Q_uu not positive definite at step {i}"))
        })?;
        let k = -chol.solve(&q_u);
        let kk = -chol.solve(&q_ux);

        d1 += k.dot(&q_u);
        d2 += 0.5 * k.dot(&(q_uu * k));

        let kt_quu = kk.transpose() * q_uu;
        v_x = q_x + kt_quu * k + kk.transpose() * q_u + q_ux.transpose() * k;
        v_xx = q_xx + kt_quu * kk + kk.transpose() * q_ux + q_ux.transpose() * kk;
        v_xx = (v_xx + v_xx.transpose()) * 0.5;

        gains.feedforward[i] = k;
        gains.feedback[i] = kk;
    }
    gains.expected = (d1, d2);
    Ok(gains)
}

#[derive(Debug, Clone)]
pub struct ForwardResult<const N: usize, const M: usize> {
    pub states: Vec<SVector<f64, N>>,
    pub inputs: Vec<SVector<f64, M>>,
    pub augmented: f64,
    pub cost: f64,
    pub max_violation: f64,
    pub step: f64,
}

fn rollout_with_gains<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    gains: &Gains<N, M>,
    problem: &OcpProblem<N, M>,
    beta: f64,
) -> Result<(Vec<SVector<f64, N>>, Vec<SVector<f64, M>>)> {
    let mut xs = Vec::with_capacity(states.len());
    let mut us = Vec::with_capacity(inputs.len());
    xs.push(states[0]);
    for i in 0..problem.horizon {
        let x = xs[i];
        let u = inputs[i] + gains.feedforward[i] * beta + gains.feedback[i] * (x - states[i]);
        let next = problem.dynamics.step(&x, &u)?;
        if !next.iter().chain(u.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("forward rollout diverged".into()));
        }
        us.push(u);
        xs.push(next);
    }
    Ok((xs, us))
}

/// Backtracking line search over `beta = 1, 1/2, ...`.
///
/// Returns `Ok(None)` when no step gives sufficient decrease.
pub fn forward_pass<const N: usize, const M: usize>(
    states: &[SVector<f64, N>],
    inputs: &[SVector<f64, M>],
    gains: &Gains<N, M>,
    problem: &OcpProblem<N, M>,
    multipliers: &Multipliers,
    mu: f64,
    settings: &SolverSettings,
) -> Result<Option<ForwardResult<N, M>>> {
    let (current, _, _) = augmented_cost(states, inputs, problem, multipliers, mu)?;
    let mut beta = 1.0;
    for _ in 0..settings.line_search_steps {
        if let Ok((xs, us)) = rollout_with_gains(states, inputs, gains, problem, beta) {
            let (aug, cost, viol) = augmented_cost(&xs, &us, problem, multipliers, mu)?;
            let expected = gains.expected_decrease(beta);
            let actual = current - aug;
            let accept = if expected > 0.0 {
                actual >= settings.armijo * expected
            } else {
                actual >= 0.0
            };
            if accept && aug.is_finite() {
                return Ok(Some(ForwardResult {
                    states: xs,
                    inputs: us,
                    augmented: aug,
                    cost,
                    max_violation: viol,
                    step: beta,
                }));
            }
        }
        beta *= 0.5;
    }
    Ok(None)
}

fn multiplier_shift(a: &Multipliers, b: &Multipliers) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// `lambda' = max(0, lambda + mu c)`; the penalty grows while the worst
/// violation exceeds `settings.constraint_tolerance`.
pub fn al_update(
    multipliers: &Multipliers,
    mu: f64,
    values: &[Vec<f64>],
    settings: &SolverSettings,
) -> (Multipliers, f64) {
    let mut worst = 0.0f64;
    let updated = multipliers
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (lam, cs))| {
            lam.iter()
                .zip(cs)
                .map(|(l, c)| {
                    if i == 0 {
                        return *l;
                    }
                    worst = worst.max(*c);
                    (l + mu * c).max(0.0)
                })
                .collect()
        })
        .collect();
    let mu_next = if worst > settings.constraint_tolerance {
        (mu * settings.penalty_growth).min(settings.penalty_max)
    } else {
        mu
    };
    (updated, mu_next)
}

/// Solver with its own regularization state; one instance per planning task.
#[derive(Debug, Clone)]
pub struct DdpSolver {
    pub settings: SolverSettings,
}

impl DdpSolver {
    pub fn new(settings: SolverSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self { settings })
    }

    pub fn solve<const N: usize, const M: usize>(
        &mut self,
        problem: &OcpProblem<N, M>,
        x0: &SVector<f64, N>,
        u_init: &[SVector<f64, M>],
    ) -> Result<SolveResult<N, M>> {
        self.solve_warm(problem, x0, u_init, None)
    }

    /// Like [`DdpSolver::solve`], optionally seeding multipliers and penalty.
    pub fn solve_warm<const N: usize, const M: usize>(
        &mut self,
        problem: &OcpProblem<N, M>,
        x0: &SVector<f64, N>,
        u_init: &[SVector<f64, M>],
        warm: Option<WarmStart>,
    ) -> Result<SolveResult<N, M>> {
        problem.validate()?;
        let s = &self.settings;
        let (mut lambda, mut mu) = match warm {
            Some(w) => {
                check_len("multiplier knots", problem.horizon + 1, w.multipliers.len())?;
                (w.multipliers, w.penalty.clamp(s.penalty_init, s.penalty_max))
            }
            None => (zero_multipliers(problem), s.penalty_init),
        };
        let mut states = problem.rollout(x0, u_init)?;
        let mut inputs = u_init.to_vec();
        let mut rho = s.regularization_init;
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let mut outer = 0;
        let (mut cost, mut viol) = (0.0, 0.0);

        while outer < s.max_outer_iterations {
            outer += 1;
            let (aug0, c0, v0) = augmented_cost(&states, &inputs, problem, &lambda, mu)?;
            let mut aug = aug0;
            cost = c0;
            viol = v0;
            trace.push(CostSample { outer, augmented: aug, cost });
            let mut inner_converged = false;
            for _ in 0..s.max_inner_iterations {
                iterations += 1;
                let lin = linearize_all(&states, &inputs, problem)?;
                let gains = loop {
                    match backward_with(&states, &inputs, &lin, problem, &lambda, mu, rho) {
                        Ok(g) => break Some(g),
                        Err(_) if rho < s.regularization_max => rho = (rho * 10.0).min(s.regularization_max),
                        Err(_) => break None,
                    }
                };
                let Some(gains) = gains else { break };
                let scale = aug.abs().max(1.0);
                if gains.expected_decrease(1.0) <= s.cost_tolerance * scale * 1e-3 {
                    if let Ok((xs, us)) = rollout_with_gains(&states, &inputs, &gains, problem, 1.0) {
                        let (a, c, v) = augmented_cost(&xs, &us, problem, &lambda, mu)?;
                        if a <= aug {
                            states = xs;
                            inputs = us;
                            cost = c;
                            viol = v;
                        }
                    }
                    inner_converged = true;
                    break;
                }
                match forward_pass(&states, &inputs, &gains, problem, &lambda, mu, s)? {
                    Some(fw) => {
                        let change = aug - fw.augmented;
                        states = fw.states;
                        inputs = fw.inputs;
                        aug = fw.augmented;
                        cost = fw.cost;
                        viol = fw.max_violation;
                        trace.push(CostSample { outer, augmented: aug, cost });
                        rho = (rho / 2.0).max(s.regularization_min);
                        if change < s.cost_tolerance * scale {
                            inner_converged = true;
                            break;
                        }
                    }
                    None => {
                        if rho >= s.regularization_max {
                            break;
                        }
                        rho = (rho * 10.0).min(s.regularization_max);
                    }
                }
            }
            if problem.constraints.count() == 0 {
                converged = inner_converged;
                break;
            }
            let values: Vec<Vec<f64>> = states.iter().map(|x| problem.constraints.evaluate(x).values).collect();
            let (l, m) = al_update(&lambda, mu, &values, s);
            let shift = multiplier_shift(&lambda, &l);
            lambda = l;
            if inner_converged && viol <= s.constraint_tolerance && shift <= mu * s.constraint_tolerance {
                converged = true;
                break;
            }
            mu = m;
        }
        Ok(SolveResult {
            states,
            inputs,
            cost,
            max_violation: viol.max(0.0),
            iterations,
            outer_iterations: outer,
            converged,
            cost_trace: trace,
            multipliers: lambda,
            penalty: mu,
        })
    }
}

/// Convenience wrapper around a fresh [`DdpSolver`].
pub fn solve<const N: usize, const M: usize>(
    problem: &OcpProblem<N, M>,
    x0: &SVector<f64, N>,
    u_init: &[SVector<f64, M>],
    settings: &SolverSettings,
) -> Result<SolveResult<N, M>> {
    DdpSolver::new(settings.clone())?.solve(problem, x0, u_init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const N: usize = 9;
    const M: usize = 8;

    struct Lq {
        problem: OcpProblem<N, M>,
        x0: SVector<f64, N>,
    }

    fn random_lq(seed: u64, horizon: usize) -> Lq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SMatrix::<f64, N, N>::identity() + SMatrix::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let b = SMatrix::<f64, N, M>::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let q = SVector::<f64, N>::from_fn(|_, _| rng.random_range(0.1..5.0));
        let r = SVector::<f64, M>::from_fn(|_, _| rng.random_range(0.1..5.0));
        let l = SVector::<f64, N>::from_fn(|_, _| rng.random_range(0.1..5.0));
        let x0 = SVector::<f64, N>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let problem = OcpProblem::regulator(
            horizon,
            0.05,
            Arc::new(LinearDynamics { a, b }),
            Arc::new(NoConstraints),
            (q, r, l),
            SVector::zeros(),
            SVector::zeros(),
        );
        Lq { problem, x0 }
    }

    fn dynamics_matrices(p: &OcpProblem<N, M>) -> (SMatrix<f64, N, N>, SMatrix<f64, N, M>) {
        p.dynamics.linearize(&SVector::zeros(), &SVector::zeros()).unwrap()
    }

    /// Textbook finite-horizon Riccati recursion: feedback gains and cost-to-go at 0.
    fn riccati(p: &OcpProblem<N, M>) -> (Vec<SMatrix<f64, M, N>>, SMatrix<f64, N, N>) {
        let (a, b) = dynamics_matrices(p);
        let q = SMatrix::<f64, N, N>::from_diagonal(&p.q) * p.dt;
        let r = SMatrix::<f64, M, M>::from_diagonal(&p.r) * p.dt;
        let mut pm = SMatrix::<f64, N, N>::from_diagonal(&p.terminal);
        let mut gains = vec![SMatrix::zeros(); p.horizon];
        for i in (0..p.horizon).rev() {
            let s = r + b.transpose() * pm * b;
            let k = -s.try_inverse().unwrap() * b.transpose() * pm * a;
            pm = q + a.transpose() * pm * a + a.transpose() * pm * b * k;
            pm = (pm + pm.transpose()) * 0.5;
            gains[i] = k;
        }
        (gains, pm)
    }

    #[test]
    fn cost_examples() {
        let lq = random_lq(1, 3);
        let p = &lq.problem;
        let xs = vec![SVector::zeros(); 4];
        let us = vec![SVector::zeros(); 3];
        assert_eq!(eval_cost(&xs, &us, p).unwrap(), 0.0);

        let mut one = OcpProblem::regulator(
            1,
            0.5,
            p.dynamics.clone(),
            Arc::new(NoConstraints),
            (SVector::repeat(2.0), SVector::repeat(4.0), SVector::repeat(6.0)),
            SVector::zeros(),
            SVector::zeros(),
        );
        let mut x = vec![SVector::zeros(); 2];
        x[0][0] = 1.0;
        x[1][2] = -3.0;
        let mut u = vec![SVector::zeros(); 1];
        u[0][5] = 0.5;
        // 0.5*2*1*0.5 + 0.5*4*0.25*0.5 + 0.5*6*9
        assert!((eval_cost(&x, &u, &one).unwrap() - (0.5 + 0.25 + 27.0)).abs() < 1e-14);

        let shift = SVector::<f64, N>::repeat(0.7);
        one.x_ref = one.x_ref.iter().map(|r| r + shift).collect();
        let shifted: Vec<_> = x.iter().map(|v| v + shift).collect();
        assert!((eval_cost(&shifted, &u, &one).unwrap() - (0.5 + 0.25 + 27.0)).abs() < 1e-12);

        assert!(matches!(
            eval_cost(&x[..1], &u, &one),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_pass_reproduces_riccati_gains() {
        for seed in 0..5 {
            let lq = random_lq(seed, 20);
            let p = &lq.problem;
            let us = vec![SVector::zeros(); p.horizon];
            let xs = p.rollout(&lq.x0, &us).unwrap();
            let g = backward_pass(&xs, &us, p, &zero_multipliers(p), 1.0, 0.0).unwrap();
            let (oracle, _) = riccati(p);
            for i in 0..p.horizon {
                let scale = oracle[i].norm().max(1.0);
                assert!((g.feedback[i] - oracle[i]).norm() < 1e-8 * scale, "step {i}");
                // From a zero-input rollout the feedforward term equals K (x_i - 0) applied to x_i.
                let expected_k = oracle[i] * xs[i];
                assert!((g.feedforward[i] - expected_k).norm() < 1e-8 * expected_k.norm().max(1.0));
            }
        }
    }

    #[test]
    fn regularization_damps_gains() {
        let lq = random_lq(7, 10);
        let p = &lq.problem;
        let us = vec![SVector::zeros(); p.horizon];
        let xs = p.rollout(&lq.x0, &us).unwrap();
        let g = backward_pass(&xs, &us, p, &zero_multipliers(p), 1.0, 1e12).unwrap();
        assert!(g.feedback.iter().all(|k| k.norm() < 1e-9));
        assert!(g.feedforward.iter().all(|k| k.norm() < 1e-9));
    }

    #[test]
    fn zero_gains_leave_trajectory_unchanged() {
        let lq = random_lq(8, 10);
        let p = &lq.problem;
        let us: Vec<_> = (0..p.horizon).map(|i| SVector::repeat(0.01 * i as f64)).collect();
        let xs = p.rollout(&lq.x0, &us).unwrap();
        let fw = forward_pass(&xs, &us, &Gains::zeros(p.horizon), p, &zero_multipliers(p), 1.0, &SolverSettings::default())
            .unwrap()
            .unwrap();
        assert_eq!(fw.states, xs);
        assert_eq!(fw.inputs, us);
        assert_eq!(fw.cost, eval_cost(&xs, &us, p).unwrap());
        assert_eq!(fw.step, 1.0);
    }

    #[test]
    fn exact_gains_reach_optimum_in_one_step() {
        let lq = random_lq(9, 20);
        let p = &lq.problem;
        let us = vec![SVector::zeros(); p.horizon];
        let xs = p.rollout(&lq.x0, &us).unwrap();
        let g = backward_pass(&xs, &us, p, &zero_multipliers(p), 1.0, 0.0).unwrap();
        let fw = forward_pass(&xs, &us, &g, p, &zero_multipliers(p), 1.0, &SolverSettings::default())
            .unwrap()
            .unwrap();
        assert_eq!(fw.step, 1.0);
        let (_, p0) = riccati(p);
        let optimum = 0.5 * lq.x0.dot(&(p0 * lq.x0));
        assert!((fw.cost - optimum).abs() < 1e-9 * optimum);
    }

    #[test]
    fn solve_matches_riccati_optimum() {
        for seed in 10..15 {
            let lq = random_lq(seed, 20);
            let p = &lq.problem;
            let res = solve(p, &lq.x0, &vec![SVector::zeros(); 20], &SolverSettings::default()).unwrap();
            let (_, p0) = riccati(p);
            let optimum = 0.5 * lq.x0.dot(&(p0 * lq.x0));
            assert!(res.converged);
            assert!(res.iterations <= 3, "{} iterations", res.iterations);
            assert!(((res.cost - optimum) / optimum).abs() < 1e-6);
            assert_eq!(res.states[0], lq.x0);
            for i in 0..20 {
                assert_eq!(res.states[i + 1], p.dynamics.step(&res.states[i], &res.inputs[i]).unwrap());
            }
        }
    }

    #[test]
    fn optimal_warm_start_is_a_fixed_point() {
        let lq = random_lq(20, 20);
        let p = &lq.problem;
        let settings = SolverSettings::default();
        let first = solve(p, &lq.x0, &vec![SVector::zeros(); 20], &settings).unwrap();
        let second = solve(p, &lq.x0, &first.inputs, &settings).unwrap();
        assert!(second.converged);
        assert!(second.outer_iterations <= 2);
        for (a, b) in first.states.iter().zip(&second.states) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn al_update_rules() {
        let s = SolverSettings::default();
        let lam = vec![vec![0.0, 0.0], vec![0.0, 2.0]];
        let c = vec![vec![5.0, 5.0], vec![-1.0, 0.5]];
        let (l2, mu2) = al_update(&lam, 1.0, &c, &s);
        assert_eq!(l2[0], vec![0.0, 0.0]);
        assert_eq!(l2[1][0], 0.0);
        assert!(l2[1][1] > 2.0);
        assert_eq!(mu2, 10.0);

        let mut lam = vec![vec![0.0], vec![0.0]];
        let mut mu = 1.0;
        let c = vec![vec![0.0], vec![0.1]];
        let mut last = 0.0;
        for _ in 0..6 {
            let (l, m) = al_update(&lam, mu, &c, &s);
            lam = l;
            mu = m;
            let pen = penalty_term(lam[1][0], mu, 0.1);
            assert!(pen > last);
            last = pen;
        }
        assert!(last > 1e3);

        let (_, mu_ok) = al_update(&vec![vec![0.0]; 2], 3.0, &vec![vec![-1.0]; 2], &s);
        assert_eq!(mu_ok, 3.0);
    }

    #[test]
    fn bounded_problem_is_feasible_with_monotone_trace() {
        let lq = random_lq(30, 20);
        let mut p = lq.problem.clone();
        let free = solve(&p, &lq.x0, &vec![SVector::zeros(); 20], &SolverSettings::default()).unwrap();
        // Tighten a bound that the unconstrained optimum violates.
        let k = 0;
        let peak = free.states.iter().skip(1).map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
        let bound = peak - 0.2;
        p.constraints = Arc::new(StateBounds::<N> { rows: vec![(k, -10.0, bound)] });
        let mut x0 = lq.x0;
        x0[k] = x0[k].min(bound - 0.05);
        let res = solve(&p, &x0, &vec![SVector::zeros(); 20], &SolverSettings::default()).unwrap();
        assert!(res.max_violation < 1e-3, "violation {}", res.max_violation);
        assert!(res.converged);
        for w in res.cost_trace.windows(2) {
            if w[0].outer == w[1].outer {
                assert!(w[1].augmented <= w[0].augmented);
            }
        }
    }

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::default().validate().is_ok());
        let bad = SolverSettings { penalty_growth: 1.0, ..SolverSettings::default() };
        assert!(bad.validate().is_err());
        let bad = SolverSettings { regularization_init: 1e9, ..SolverSettings::default() };
        assert!(bad.validate().is_err());
    }
}
