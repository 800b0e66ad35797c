//! Robot knot models: the discrete dynamics and cost of one trajectory node,
//! implementing [`NodeModel`] for the Box-FDDP sweep.
//!
//! Running knots integrate the contact-constrained forward dynamics with a
//! semi-implicit Euler step; impulse knots apply the zero-restitution impact
//! map at contact switches. Dynamics derivatives come from a central
//! finite-difference sweep over the state tangent and the controls; the same
//! sweep yields the contact wrench sensitivities the stability cost terms
//! chain through.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::costs::{compose_node_cost, CostTerm, NodeWrenches};
use crate::dynamics::{
    integrate_state, state_difference, state_integrate, ContactSet, State, Workspace,
};
use crate::math::Force;
use crate::model::RobotModel;
use crate::solver::{NodeDerivatives, NodeModel, SolverError};

/// Role of a knot in the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotKind {
    /// Semi-implicit Euler step of the contact dynamics over `dt`.
    Running { dt: f64 },
    /// Contact-switch node applying the impulse dynamics (`dt = 0`).
    Impulse,
    /// Cost-only terminal node.
    Terminal,
}

pub struct KnotModel {
    pub model: Arc<RobotModel>,
    pub kind: KnotKind,
    pub contacts: ContactSet,
    pub cost_terms: Vec<CostTerm>,
    /// Elementwise torque bounds; `None` leaves the node unconstrained.
    pub bounds: Option<(DVector<f64>, DVector<f64>)>,
    /// Central-difference step for the dynamics derivatives.
    pub fd_step: f64,
    workspace: RefCell<Workspace>,
}

impl KnotModel {
    pub fn new(
        model: Arc<RobotModel>,
        kind: KnotKind,
        contacts: ContactSet,
        cost_terms: Vec<CostTerm>,
        bounds: Option<(DVector<f64>, DVector<f64>)>,
    ) -> Self {
        let workspace = RefCell::new(Workspace::new(&model));
        KnotModel {
            model,
            kind,
            contacts,
            cost_terms,
            bounds,
            fd_step: 1e-6,
            workspace,
        }
    }

    /// Running knot with bounds from the model's effort limits.
    pub fn running(
        model: Arc<RobotModel>,
        dt: f64,
        contacts: ContactSet,
        cost_terms: Vec<CostTerm>,
    ) -> Self {
        let limit = model.effort_limits();
        let bounds = Some((-&limit, limit));
        KnotModel::new(model, KnotKind::Running { dt }, contacts, cost_terms, bounds)
    }

    pub fn impulse(model: Arc<RobotModel>, contacts: ContactSet, cost_terms: Vec<CostTerm>) -> Self {
        KnotModel::new(model, KnotKind::Impulse, contacts, cost_terms, None)
    }

    pub fn terminal(model: Arc<RobotModel>, cost_terms: Vec<CostTerm>) -> Self {
        KnotModel::new(
            model,
            KnotKind::Terminal,
            ContactSet::empty(),
            cost_terms,
            None,
        )
    }

    /// Cost weighting of this node: running costs integrate over `dt`.
    fn cost_scale(&self) -> f64 {
        match self.kind {
            KnotKind::Running { dt } => dt,
            KnotKind::Impulse | KnotKind::Terminal => 1.0,
        }
    }

    /// Next state and realized contact wrenches at `(x, u)`.
    fn eval(&self, x: &State, u: &DVector<f64>) -> Result<(State, Vec<Force>), SolverError> {
        let mut ws = self.workspace.borrow_mut();
        match self.kind {
            KnotKind::Running { dt } => {
                let r = ws
                    .contact_forward_dynamics(&self.model, x, &self.contacts, u)
                    .map_err(|e| SolverError::Dynamics {
                        knot: 0,
                        reason: e.to_string(),
                    })?;
                Ok((integrate_state(&self.model, x, &r.vdot, dt), r.wrenches))
            }
            KnotKind::Impulse => {
                let r = ws
                    .impulse_dynamics(&self.model, x, &self.contacts)
                    .map_err(|e| SolverError::Dynamics {
                        knot: 0,
                        reason: e.to_string(),
                    })?;
                Ok((State::new(x.q.clone(), r.v_plus), r.impulses))
            }
            KnotKind::Terminal => Ok((x.clone(), Vec::new())),
        }
    }

    fn needs_wrench(&self) -> bool {
        self.cost_terms.iter().any(|t| t.needs_wrench())
    }
}

impl NodeModel for KnotModel {
    type State = State;

    fn ndx(&self) -> usize {
        2 * self.model.nv
    }

    fn nu(&self) -> usize {
        match self.kind {
            KnotKind::Terminal => 0,
            _ => self.model.nu,
        }
    }

    fn step(&self, x: &State, u: &DVector<f64>) -> Result<State, SolverError> {
        Ok(self.eval(x, u)?.0)
    }

    fn cost(&self, x: &State, u: &DVector<f64>) -> Result<f64, SolverError> {
        let wrenches = if self.needs_wrench() {
            self.eval(x, u)?.1
        } else {
            Vec::new()
        };
        let node = NodeWrenches {
            wrenches: &wrenches,
            wrench_dx: None,
            wrench_du: None,
        };
        let mut ws = self.workspace.borrow_mut();
        let eval = compose_node_cost(&self.cost_terms, &self.model, &mut ws, x, u, &node)
            .map_err(|e| SolverError::Dynamics {
                knot: 0,
                reason: e.to_string(),
            })?;
        Ok(self.cost_scale() * eval.value)
    }

    fn derivatives(&self, x: &State, u: &DVector<f64>) -> Result<NodeDerivatives, SolverError> {
        let ndx = self.ndx();
        let nu = self.nu();
        let model = &self.model;
        if self.kind == KnotKind::Terminal {
            let mut ws = self.workspace.borrow_mut();
            let mut cost = compose_node_cost(
                &self.cost_terms,
                model,
                &mut ws,
                x,
                u,
                &NodeWrenches::none(),
            )
            .map_err(|e| SolverError::Dynamics {
                knot: 0,
                reason: e.to_string(),
            })?;
            cost.value *= self.cost_scale();
            return Ok(NodeDerivatives {
                fx: DMatrix::zeros(0, 0),
                fu: DMatrix::zeros(0, 0),
                cost,
            });
        }

        let (_, wrenches) = self.eval(x, u)?;
        let nc = wrenches.len();
        let h = self.fd_step;
        let mut fx = DMatrix::zeros(ndx, ndx);
        let mut fu = DMatrix::zeros(ndx, nu);
        let mut wx = DMatrix::zeros(6 * nc, ndx);
        let mut wu = DMatrix::zeros(6 * nc, nu);

        for k in 0..ndx {
            let mut d = DVector::zeros(ndx);
            d[k] = h;
            let (xp, wp) = self.eval(&state_integrate(model, x, &d), u)?;
            d[k] = -h;
            let (xm, wm) = self.eval(&state_integrate(model, x, &d), u)?;
            let col = state_difference(model, &xm, &xp) / (2.0 * h);
            fx.set_column(k, &col);
            for c in 0..nc {
                for i in 0..6 {
                    wx[(6 * c + i, k)] = (wp[c][i] - wm[c][i]) / (2.0 * h);
                }
            }
        }
        if self.kind == KnotKind::Impulse {
            // The impact map ignores the control.
        } else {
            for k in 0..nu {
                let mut up = u.clone();
                up[k] += h;
                let mut um = u.clone();
                um[k] -= h;
                let (xp, wp) = self.eval(x, &up)?;
                let (xm, wm) = self.eval(x, &um)?;
                let col = state_difference(model, &xm, &xp) / (2.0 * h);
                fu.set_column(k, &col);
                for c in 0..nc {
                    for i in 0..6 {
                        wu[(6 * c + i, k)] = (wp[c][i] - wm[c][i]) / (2.0 * h);
                    }
                }
            }
        }

        let node = NodeWrenches {
            wrenches: &wrenches,
            wrench_dx: if nc > 0 { Some(&wx) } else { None },
            wrench_du: if nc > 0 { Some(&wu) } else { None },
        };
        let mut ws = self.workspace.borrow_mut();
        let mut cost = compose_node_cost(&self.cost_terms, model, &mut ws, x, u, &node)
            .map_err(|e| SolverError::Dynamics {
                knot: 0,
                reason: e.to_string(),
            })?;
        let s = self.cost_scale();
        cost.value *= s;
        cost.lx *= s;
        cost.lu *= s;
        cost.lxx *= s;
        cost.lxu *= s;
        cost.luu *= s;
        Ok(NodeDerivatives { fx, fu, cost })
    }

    fn state_difference(&self, from: &State, to: &State) -> DVector<f64> {
        state_difference(&self.model, from, to)
    }

    fn state_integrate(&self, x: &State, dx: &DVector<f64>) -> State {
        state_integrate(&self.model, x, dx)
    }

    fn control_bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        self.bounds.clone()
    }

    fn state_is_finite(&self, x: &State) -> bool {
        x.q.iter().all(|v| v.is_finite()) && x.v.iter().all(|v| v.is_finite())
    }

    fn wrenches(&self, x: &State, u: &DVector<f64>) -> Vec<Force> {
        self.eval(x, u).map(|(_, w)| w).unwrap_or_default()
    }
}
