//! Box-FDDP trajectory optimizer: Riccati backward sweep with a
//! box-constrained control subproblem, feasibility-driven forward pass with
//! defect (gap) contraction, and the regularization / line-search schedules.
//!
//! The solver is generic over [`NodeModel`] so the same sweep runs on exact
//! linear-quadratic nodes (used by the test oracles) and on the robot knot
//! models built from the contact dynamics.

pub mod boxqp;
mod knot;

pub use knot::{KnotKind, KnotModel};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::costs::CostEvaluation;
use crate::math::Force;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dynamics evaluation failed at knot {knot}: {reason}")]
    Dynamics { knot: usize, reason: String },
    #[error("backward pass failed at the regularization cap")]
    RegularizationCap,
    #[error("trajectory dimensions do not match the problem: {0}")]
    Dimensions(String),
}

/// Derivatives of one node: dynamics Jacobians over the state tangent and
/// control, plus the cost quadratic model.
#[derive(Debug, Clone)]
pub struct NodeDerivatives {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub cost: CostEvaluation,
}

/// One stage of the shooting problem.
///
/// Running nodes provide the discrete dynamics, its derivatives and the
/// running cost; the terminal node only provides the cost (its `step` is
/// never called). States live on a manifold accessed through
/// `state_integrate` / `state_difference`.
pub trait NodeModel {
    type State: Clone;

    fn ndx(&self) -> usize;
    fn nu(&self) -> usize;

    /// Discrete dynamics `x_{i+1} = f(x_i, u_i)`.
    fn step(&self, x: &Self::State, u: &DVector<f64>) -> Result<Self::State, SolverError>;

    fn cost(&self, x: &Self::State, u: &DVector<f64>) -> Result<f64, SolverError>;

    fn derivatives(&self, x: &Self::State, u: &DVector<f64>)
        -> Result<NodeDerivatives, SolverError>;

    /// Tangent-space difference `to ⊖ from` at `from`.
    fn state_difference(&self, from: &Self::State, to: &Self::State) -> DVector<f64>;

    /// Manifold retraction `x ⊞ dx`.
    fn state_integrate(&self, x: &Self::State, dx: &DVector<f64>) -> Self::State;

    /// Per-actuator control bounds, `None` for an unconstrained node.
    fn control_bounds(&self) -> Option<(DVector<f64>, DVector<f64>)>;

    fn state_is_finite(&self, _x: &Self::State) -> bool {
        true
    }

    /// Contact wrenches realized at `(x, u)`, for solution reporting.
    fn wrenches(&self, _x: &Self::State, _u: &DVector<f64>) -> Vec<Force> {
        Vec::new()
    }
}

/// Optimal control problem over a fixed horizon.
pub struct ShootingProblem<M: NodeModel> {
    pub initial_state: M::State,
    pub nodes: Vec<M>,
    pub terminal: M,
}

impl<M: NodeModel> ShootingProblem<M> {
    pub fn horizon(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when `|Δ₁|` falls below this and the gaps are closed.
    pub tol: f64,
    pub gap_tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub alpha_min: f64,
    /// Goldstein acceptance ratio on actual vs expected improvement.
    pub acceptance_ratio: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 500,
            tol: 1e-9,
            gap_tol: 1e-9,
            reg_init: 1e-9,
            reg_min: 1e-9,
            reg_max: 1e9,
            alpha_min: 2.0_f64.powi(-10),
            acceptance_ratio: 0.1,
        }
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `|Δ₁| < tol` with closed gaps.
    Converged,
    MaxIterations,
    /// No step accepted and no backward pass possible at the regularization
    /// cap; the best iterate so far is returned.
    RegularizationCap,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_cost: f64,
    /// `|Δ₁|` at the last backward pass.
    pub stop_value: f64,
    /// Gap infinity norm of each accepted iterate (index 0 = warm start).
    pub gap_norms: Vec<f64>,
    /// Cost of each accepted iterate (index 0 = warm start).
    pub costs: Vec<f64>,
    /// Accepted step lengths.
    pub steps: Vec<f64>,
    /// Regularization after each accepted iterate.
    pub regularizations: Vec<f64>,
    /// `(Δ₁, Δ₂)` of the backward pass behind each accepted iterate.
    pub model_decrease: Vec<(f64, f64)>,
    pub stop_reason: StopReason,
}

/// Optimized trajectory with the local feedback policy and diagnostics.
pub struct Solution<S> {
    pub states: Vec<S>,
    pub controls: Vec<DVector<f64>>,
    /// Feedforward terms of the last backward pass.
    pub feedforward: Vec<DVector<f64>>,
    /// Feedback gains (nu x ndx) of the last backward pass.
    pub gains: Vec<DMatrix<f64>>,
    /// Contact wrenches per knot per active contact.
    pub wrenches: Vec<Vec<Force>>,
    pub diagnostics: Diagnostics,
}

impl<S> Solution<S> {
    pub fn converged(&self) -> bool {
        self.diagnostics.stop_reason == StopReason::Converged
    }
}

/// Model decrease of the quadratic cost model at step length `alpha`.
pub fn expected_improvement(d1: f64, d2: f64, alpha: f64) -> f64 {
    alpha * d1 + 0.5 * alpha * alpha * d2
}

struct BackwardPassResult {
    feedforward: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
}

/// Expected improvement coefficients `(Δ₁, Δ₂)` of the policy `(k, K)` under
/// the gap-contracting rollout, evaluated on the linear-quadratic model.
///
/// The search direction is propagated through the linearized dynamics with
/// the full defect injection (`ê₀ = f̄₀`, `ê_{i+1} = fx ê_i + fu δû_i +
/// f̄_{i+1}`, `δû_i = k_i + K_i ê_i`); the cost model along `(ê, δû)` then
/// gives the exact first and second derivative of the trial cost in the step
/// length for linear dynamics, and the true directional derivative in the
/// nonlinear case. Folding the gap terms into the value recursion instead
/// (via `Vx·f̄`) books the full gap-closure benefit into the slope, which
/// overstates `Δ₁` badly whenever the defects are large, e.g. across
/// contact-free phases where the base is uncontrollable.
fn model_decrease(
    derivs: &[NodeDerivatives],
    gaps: &[DVector<f64>],
    feedforward: &[DVector<f64>],
    gains: &[DMatrix<f64>],
) -> (f64, f64) {
    let n = feedforward.len();
    let mut e = gaps[0].clone();
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for i in 0..n {
        let nd = &derivs[i];
        let du = &feedforward[i] + &gains[i] * &e;
        d1 += nd.cost.lx.dot(&e) + nd.cost.lu.dot(&du);
        d2 += e.dot(&(&nd.cost.lxx * &e))
            + 2.0 * e.dot(&(&nd.cost.lxu * &du))
            + du.dot(&(&nd.cost.luu * &du));
        e = &nd.fx * e + &nd.fu * du + &gaps[i + 1];
    }
    let terminal = &derivs[n];
    d1 += terminal.cost.lx.dot(&e);
    d2 += e.dot(&(&terminal.cost.lxx * &e));
    (d1, d2)
}

/// Runs Box-FDDP from the warm start `(init_xs, init_us)`.
///
/// The warm start may be dynamically infeasible; the defects between rolled
/// out and given states are contracted by `(1 − α)` each accepted step.
pub fn solve<M: NodeModel>(
    problem: &ShootingProblem<M>,
    init_xs: &[M::State],
    init_us: &[DVector<f64>],
    options: &SolverOptions,
) -> Result<Solution<M::State>, SolverError> {
    let n = problem.horizon();
    if init_xs.len() != n + 1 {
        return Err(SolverError::Dimensions(format!(
            "{} states for horizon {n}",
            init_xs.len()
        )));
    }
    if init_us.len() != n {
        return Err(SolverError::Dimensions(format!(
            "{} controls for horizon {n}",
            init_us.len()
        )));
    }
    for (i, (node, u)) in problem.nodes.iter().zip(init_us).enumerate() {
        if u.len() != node.nu() {
            return Err(SolverError::Dimensions(format!(
                "control {i} has {} entries, node expects {}",
                u.len(),
                node.nu()
            )));
        }
    }

    let mut xs: Vec<M::State> = init_xs.to_vec();
    let mut us: Vec<DVector<f64>> = init_us.to_vec();
    clamp_controls(problem, &mut us);
    let mut gaps = compute_gaps(problem, &xs, &us)?;
    let mut cost = total_cost(problem, &xs, &us)?;
    let mut reg = options.reg_init;

    let mut diagnostics = Diagnostics {
        iterations: 0,
        final_cost: cost,
        stop_value: f64::INFINITY,
        gap_norms: vec![gap_inf_norm(&gaps)],
        costs: vec![cost],
        steps: Vec::new(),
        regularizations: Vec::new(),
        model_decrease: Vec::new(),
        stop_reason: StopReason::MaxIterations,
    };
    let mut best_bp: Option<BackwardPassResult> = None;

    'outer: for iter in 0..options.max_iters {
        diagnostics.iterations = iter + 1;
        let derivs = compute_derivatives(problem, &xs, &us)?;

        // Backward pass, escalating the regularization on PD failures.
        let bp = loop {
            match backward_pass(problem, &derivs, &gaps, &us, reg, options) {
                Ok(bp) => break bp,
                Err(_) => {
                    reg *= 10.0;
                    if reg > options.reg_max {
                        diagnostics.stop_reason = StopReason::RegularizationCap;
                        break 'outer;
                    }
                }
            }
        };
        let (d1, d2) = model_decrease(&derivs, &gaps, &bp.feedforward, &bp.gains);
        diagnostics.stop_value = d1.abs();
        if d1.abs() < options.tol && gap_inf_norm(&gaps) <= options.gap_tol {
            best_bp = Some(bp);
            diagnostics.stop_reason = StopReason::Converged;
            break;
        }

        // Line search over the geometric step set.
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= options.alpha_min {
            let fp = forward_pass(problem, &xs, &us, &gaps, &bp, alpha);
            if let Ok((try_xs, try_us, try_cost)) = fp {
                let expected = expected_improvement(bp.d1, bp.d2, alpha);
                let actual = try_cost - cost;
                if std::env::var("HDDP_TRACE").is_ok() {
                    eprintln!(
                        "iter {iter} alpha {alpha:.4e} cost {cost:.6e} try {try_cost:.6e} d1 {:.3e} d2 {:.3e} exp {expected:.3e}",
                        bp.d1, bp.d2
                    );
                }
                // When gaps have to close, the quadratic model may predict a
                // cost increase; such steps are still admitted as long as
                // the increase stays within twice the prediction.
                let ok = if expected < 0.0 {
                    actual <= options.acceptance_ratio * expected
                } else {
                    actual <= 2.0 * expected
                };
                if ok {
                    xs = try_xs;
                    us = try_us;
                    cost = try_cost;
                    gaps = compute_gaps(problem, &xs, &us)?;
                    reg = (reg / 10.0).max(options.reg_min);
                    diagnostics.gap_norms.push(gap_inf_norm(&gaps));
                    diagnostics.costs.push(cost);
                    diagnostics.steps.push(alpha);
                    diagnostics.regularizations.push(reg);
                    diagnostics.model_decrease.push((bp.d1, bp.d2));
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        best_bp = Some(bp);
        if !accepted {
            reg *= 10.0;
            if reg > options.reg_max {
                diagnostics.stop_reason = StopReason::RegularizationCap;
                break;
            }
        }
    }

    diagnostics.final_cost = cost;
    let (feedforward, gains) = match best_bp {
        Some(bp) => (bp.feedforward, bp.gains),
        None => (
            problem.nodes.iter().map(|m| DVector::zeros(m.nu())).collect(),
            problem
                .nodes
                .iter()
                .map(|m| DMatrix::zeros(m.nu(), m.ndx()))
                .collect(),
        ),
    };
    let wrenches = problem
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| node.wrenches(&xs[i], &us[i]))
        .collect();
    Ok(Solution {
        states: xs,
        controls: us,
        feedforward,
        gains,
        wrenches,
        diagnostics,
    })
}

fn clamp_controls<M: NodeModel>(problem: &ShootingProblem<M>, us: &mut [DVector<f64>]) {
    for (node, u) in problem.nodes.iter().zip(us.iter_mut()) {
        if let Some((lower, upper)) = node.control_bounds() {
            for i in 0..u.len() {
                u[i] = u[i].max(lower[i]).min(upper[i]);
            }
        }
    }
}

/// Defects `f̄_0 = x_0 ⊖ x̃_0` and `f̄_{i+1} = f(x̃_i, ũ_i) ⊖ x̃_{i+1}`.
fn compute_gaps<M: NodeModel>(
    problem: &ShootingProblem<M>,
    xs: &[M::State],
    us: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, SolverError> {
    let n = problem.horizon();
    let mut gaps = Vec::with_capacity(n + 1);
    gaps.push(problem.nodes[0].state_difference(&xs[0], &problem.initial_state));
    for i in 0..n {
        let next = problem.nodes[i].step(&xs[i], &us[i])?;
        gaps.push(problem.nodes[i].state_difference(&xs[i + 1], &next));
    }
    Ok(gaps)
}

fn gap_inf_norm(gaps: &[DVector<f64>]) -> f64 {
    gaps.iter()
        .map(|g| g.amax())
        .fold(0.0, f64::max)
}

fn total_cost<M: NodeModel>(
    problem: &ShootingProblem<M>,
    xs: &[M::State],
    us: &[DVector<f64>],
) -> Result<f64, SolverError> {
    let mut cost = 0.0;
    for (i, node) in problem.nodes.iter().enumerate() {
        cost += node.cost(&xs[i], &us[i])?;
    }
    cost += problem
        .terminal
        .cost(&xs[problem.horizon()], &DVector::zeros(0))?;
    Ok(cost)
}

fn compute_derivatives<M: NodeModel>(
    problem: &ShootingProblem<M>,
    xs: &[M::State],
    us: &[DVector<f64>],
) -> Result<Vec<NodeDerivatives>, SolverError> {
    let mut derivs = Vec::with_capacity(problem.horizon() + 1);
    for (i, node) in problem.nodes.iter().enumerate() {
        derivs.push(node.derivatives(&xs[i], &us[i])?);
    }
    derivs.push(
        problem
            .terminal
            .derivatives(&xs[problem.horizon()], &DVector::zeros(0))?,
    );
    Ok(derivs)
}

fn backward_pass<M: NodeModel>(
    problem: &ShootingProblem<M>,
    derivs: &[NodeDerivatives],
    gaps: &[DVector<f64>],
    us: &[DVector<f64>],
    reg: f64,
    options: &SolverOptions,
) -> Result<BackwardPassResult, boxqp::BoxQpError> {
    let n = problem.horizon();
    let terminal = &derivs[n];
    let mut vx = terminal.cost.lx.clone();
    let mut vxx = terminal.cost.lxx.clone();
    let mut feedforward = vec![DVector::zeros(0); n];
    let mut gains = vec![DMatrix::zeros(0, 0); n];

    for i in (0..n).rev() {
        let nd = &derivs[i];
        let nu = problem.nodes[i].nu();
        // Gradient of the value at the gap-shifted linearization point.
        let vx_shift = &vx + &vxx * &gaps[i + 1];
        let qx = &nd.cost.lx + nd.fx.transpose() * &vx_shift;
        let qu = &nd.cost.lu + nd.fu.transpose() * &vx_shift;
        let vxx_fx = &vxx * &nd.fx;
        let qxx = &nd.cost.lxx + nd.fx.transpose() * &vxx_fx;
        let qux = nd.cost.lxu.transpose() + nd.fu.transpose() * &vxx_fx;
        let mut quu = &nd.cost.luu + nd.fu.transpose() * &vxx * &nd.fu;
        for k in 0..nu {
            quu[(k, k)] += reg;
        }

        let (k_ff, k_fb) = if nu == 0 {
            (DVector::zeros(0), DMatrix::zeros(0, problem.nodes[i].ndx()))
        } else {
            match problem.nodes[i].control_bounds() {
                Some((lower, upper)) => {
                    let dl = &lower - &us[i];
                    let du = &upper - &us[i];
                    let qp = boxqp::solve_boxqp(
                        &quu,
                        &qu,
                        &dl,
                        &du,
                        &DVector::zeros(nu),
                        boxqp::DEFAULT_MAX_ITERS,
                        options.tol,
                    )?;
                    let mut k_fb = DMatrix::zeros(nu, qux.ncols());
                    let idx: Vec<usize> = (0..nu).filter(|&j| qp.free[j]).collect();
                    if let Some(chol) = &qp.free_hessian {
                        let qux_free = qux.select_rows(&idx);
                        let sol = -chol.solve(&qux_free);
                        for (kf, &j) in idx.iter().enumerate() {
                            k_fb.row_mut(j).copy_from(&sol.row(kf));
                        }
                    }
                    (qp.x, k_fb)
                }
                None => {
                    let chol = nalgebra::Cholesky::new(quu.clone())
                        .ok_or(boxqp::BoxQpError::NotPositiveDefinite)?;
                    (-chol.solve(&qu), -chol.solve(&qux))
                }
            }
        };

        // Value function update with the policy (k, K).
        let quu_k = &quu * &k_ff;
        vx = &qx + k_fb.transpose() * (&quu_k + &qu) + qux.transpose() * &k_ff;
        vxx = &qxx
            + k_fb.transpose() * &quu * &k_fb
            + k_fb.transpose() * &qux
            + qux.transpose() * &k_fb;
        vxx = 0.5 * (&vxx + vxx.transpose());

        feedforward[i] = k_ff;
        gains[i] = k_fb;
    }

    Ok(BackwardPassResult { feedforward, gains })
}

/// Nonlinear rollout at step length `alpha`, contracting the defects by
/// `(1 − alpha)`.
fn forward_pass<M: NodeModel>(
    problem: &ShootingProblem<M>,
    xs: &[M::State],
    us: &[DVector<f64>],
    gaps: &[DVector<f64>],
    bp: &BackwardPassResult,
    alpha: f64,
) -> Result<(Vec<M::State>, Vec<DVector<f64>>, f64), SolverError> {
    let n = problem.horizon();
    let mut try_xs = Vec::with_capacity(n + 1);
    let mut try_us = Vec::with_capacity(n);
    let mut cost = 0.0;
    try_xs.push(problem.nodes[0].state_integrate(&xs[0], &(alpha * &gaps[0])));
    for i in 0..n {
        let node = &problem.nodes[i];
        let dx = node.state_difference(&xs[i], &try_xs[i]);
        let mut u = &us[i] + alpha * &bp.feedforward[i] + &bp.gains[i] * dx;
        if let Some((lower, upper)) = node.control_bounds() {
            let mut clamped = 0;
            for j in 0..u.len() {
                let c = u[j].max(lower[j]).min(upper[j]);
                if c != u[j] {
                    clamped += 1;
                }
                u[j] = c;
            }
            if clamped > 0 && std::env::var("HDDP_TRACE_FP").is_ok() {
                eprintln!("fp knot {i} alpha {alpha:.3e}: {clamped} clamped");
            }
        }
        let next = node.step(&try_xs[i], &u)?;
        if !node.state_is_finite(&next) {
            return Err(SolverError::Dynamics {
                knot: i,
                reason: "non-finite state in rollout".into(),
            });
        }
        cost += node.cost(&try_xs[i], &u)?;
        // Keep a (1 − alpha) fraction of the previous defect open.
        try_xs.push(node.state_integrate(&next, &(-(1.0 - alpha) * &gaps[i + 1])));
        try_us.push(u);
    }
    cost += problem.terminal.cost(&try_xs[n], &DVector::zeros(0))?;
    Ok((try_xs, try_us, cost))
}
