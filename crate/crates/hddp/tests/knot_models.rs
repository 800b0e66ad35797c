//! End-to-end solves on small robot problems: the knot models driving the
//! optimizer through the contact dynamics, and the weight-scaling argmin
//! invariance.

mod common;

use std::sync::Arc;

use common::*;
use hddp::costs::CostTerm;
use hddp::dynamics::{ContactSet, State};
use hddp::model::RobotModel;
use hddp::solver::{solve, KnotModel, NodeModel, ShootingProblem, SolverOptions};
use nalgebra::DVector;

fn posture_terms(
    model: &RobotModel,
    target: &State,
    posture_weight: f64,
    control_weight: f64,
) -> Vec<CostTerm> {
    let mut terms = vec![CostTerm::PostureReg {
        weight: posture_weight,
        reference: target.clone(),
        element_weights: DVector::from_element(2 * model.nv, 1.0),
    }];
    if control_weight > 0.0 {
        terms.push(CostTerm::ControlReg {
            weight: control_weight,
        });
    }
    terms
}

fn pendulum_problem(scale: f64) -> (ShootingProblem<KnotModel>, Vec<State>, Vec<DVector<f64>>) {
    let model = Arc::new(pendulum());
    let target = State::new(
        DVector::from_element(1, 1.0),
        DVector::zeros(1),
    );
    let n = 40;
    let dt = 0.05;
    let nodes: Vec<KnotModel> = (0..n)
        .map(|_| {
            KnotModel::running(
                model.clone(),
                dt,
                ContactSet::empty(),
                posture_terms(&model, &target, scale * 10.0, scale * 1e-3),
            )
        })
        .collect();
    let terminal = KnotModel::terminal(
        model.clone(),
        posture_terms(&model, &target, scale * 1e3, 0.0),
    );
    let x0 = State::new(DVector::zeros(1), DVector::zeros(1));
    let xs = vec![x0.clone(); n + 1];
    let us = vec![DVector::zeros(1); n];
    let problem = ShootingProblem {
        initial_state: x0,
        nodes,
        terminal,
    };
    (problem, xs, us)
}

#[test]
fn pendulum_reaches_the_posture_target() {
    let (problem, xs, us) = pendulum_problem(1.0);
    let sol = solve(&problem, &xs, &us, &SolverOptions::default()).unwrap();
    assert!(sol.converged(), "stopped: {:?}", sol.diagnostics.stop_reason);
    let q_final = sol.states.last().unwrap().q[0];
    assert!(
        (q_final - 1.0).abs() < 1e-2,
        "final angle {q_final:.4} missed the 1.0 rad target"
    );
    assert!(*sol.diagnostics.gap_norms.last().unwrap() <= 1e-9);
}

#[test]
fn scaling_all_weights_leaves_the_argmin_unchanged() {
    let (p1, xs, us) = pendulum_problem(1.0);
    let (p5, _, _) = pendulum_problem(5.0);
    let sol1 = solve(&p1, &xs, &us, &SolverOptions::default()).unwrap();
    let sol5 = solve(&p5, &xs, &us, &SolverOptions::default()).unwrap();
    assert!(sol1.converged() && sol5.converged());
    for (a, b) in sol1.states.iter().zip(&sol5.states) {
        let d = hddp::dynamics::state_difference(&p1.nodes[0].model, a, b);
        assert!(d.amax() < 1e-8, "argmin moved by {:.2e}", d.amax());
    }
}

#[test]
fn biped_standing_stays_put_under_contact_dynamics() {
    let model = Arc::new(rh5());
    let contacts = ContactSet::from_frames(&[
        model.frame_id("left_foot").unwrap(),
        model.frame_id("right_foot").unwrap(),
    ]);
    let x0 = model.neutral_state();
    let n = 10;
    let dt = 0.03;
    let nodes: Vec<KnotModel> = (0..n)
        .map(|_| {
            KnotModel::running(
                model.clone(),
                dt,
                contacts.clone(),
                posture_terms(&model, &x0, 1.0, 1e-4),
            )
        })
        .collect();
    let terminal = KnotModel::terminal(model.clone(), posture_terms(&model, &x0, 100.0, 0.0));
    let problem = ShootingProblem {
        initial_state: x0.clone(),
        nodes,
        terminal,
    };
    let xs = vec![x0.clone(); n + 1];
    let us = vec![DVector::zeros(model.nu); n];
    let sol = solve(&problem, &xs, &us, &SolverOptions::default()).unwrap();
    assert!(sol.converged(), "stopped: {:?}", sol.diagnostics.stop_reason);
    // The posture target is the initial state: the optimum barely moves and
    // the stance feet carry the weight throughout.
    for x in &sol.states {
        let d = hddp::dynamics::state_difference(&model, &x0, x);
        assert!(d.amax() < 0.05, "drifted {:.3} from the stance", d.amax());
    }
    let weight = model.total_mass() * hddp::dynamics::GRAVITY;
    for knot in &sol.wrenches {
        let fz: f64 = knot.iter().map(|w| w[2]).sum();
        assert!(
            (fz - weight).abs() < 0.15 * weight,
            "vertical support {fz:.1} N far from the weight {weight:.1} N"
        );
    }
    // Torque bounds hold exactly on the returned controls.
    let limits = model.effort_limits();
    for u in &sol.controls {
        for j in 0..u.len() {
            assert!(u[j].abs() <= limits[j] + 1e-12);
        }
    }
}
