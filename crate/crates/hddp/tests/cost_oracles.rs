//! Finite-difference oracles and algebraic properties for the cost library:
//! gradients checked against central differences (including through the
//! contact dynamics for wrench-dependent terms), PSD Hessian blocks, and
//! weight linearity.

mod common;

use approx::assert_relative_eq;
use common::*;
use hddp::costs::{compose_node_cost, CostEvaluation, CostTerm, NodeWrenches, WrenchConeSpec};
use hddp::dynamics::{state_integrate, ContactSet, State, Workspace};
use hddp::model::RobotModel;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

fn kinematic_terms(model: &RobotModel, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<CostTerm> {
    let frame_id = model.frames.len() - 1;
    let reference = model.neutral_state();
    let ndx = 2 * model.nv;
    vec![
        CostTerm::ComTracking {
            weight: 1.3,
            reference: Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.2..1.0),
            ),
        },
        CostTerm::FramePlacement {
            weight: 0.7,
            frame_id,
            reference: nalgebra::Isometry3::new(
                Vector3::new(0.1, -0.05, 0.4),
                Vector3::new(0.1, 0.2, -0.1),
            ),
        },
        CostTerm::PostureReg {
            weight: 0.4,
            reference,
            element_weights: DVector::from_fn(ndx, |i, _| 0.2 + 0.05 * i as f64),
        },
        CostTerm::JointLimitBarrier { weight: 2.0 },
        CostTerm::ControlReg { weight: 0.05 },
    ]
}

fn eval_at(
    terms: &[CostTerm],
    model: &RobotModel,
    ws: &mut Workspace,
    x: &State,
    u: &DVector<f64>,
) -> CostEvaluation {
    compose_node_cost(terms, model, ws, x, u, &NodeWrenches::none()).unwrap()
}

#[test]
fn kinematic_term_gradients_match_finite_differences() {
    let mut rng = rng(31);
    for (name, model) in zoo() {
        let mut ws = Workspace::new(&model);
        for _ in 0..5 {
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(model.nu, |_, _| rng.gen_range(-2.0..2.0));
            let terms = kinematic_terms(&model, &mut rng);
            let eval = eval_at(&terms, &model, &mut ws, &x, &u);

            let gx = fd_gradient_x(
                &model,
                &x,
                |xs| eval_at(&terms, &model, &mut Workspace::new(&model), xs, &u).value,
                1e-6,
            );
            let ex = (&eval.lx - &gx).norm() / (1.0 + gx.norm());
            assert!(ex < 1e-5, "{name}: state gradient FD mismatch {ex:.2e}");

            let mut gu = DVector::zeros(model.nu);
            for k in 0..model.nu {
                let mut up = u.clone();
                up[k] += 1e-6;
                let mut um = u.clone();
                um[k] -= 1e-6;
                gu[k] = (eval_at(&terms, &model, &mut ws, &x, &up).value
                    - eval_at(&terms, &model, &mut ws, &x, &um).value)
                    / 2e-6;
            }
            let eu = (&eval.lu - &gu).norm() / (1.0 + gu.norm());
            assert!(eu < 1e-6, "{name}: control gradient FD mismatch {eu:.2e}");
        }
    }
}

/// Contact wrenches of the node plus finite-difference sensitivities, for
/// chaining wrench-dependent costs.
fn wrench_with_fd_sensitivities(
    model: &RobotModel,
    contacts: &ContactSet,
    x: &State,
    u: &DVector<f64>,
) -> (Vec<nalgebra::Vector6<f64>>, DMatrix<f64>, DMatrix<f64>) {
    let mut ws = Workspace::new(model);
    let ndx = 2 * model.nv;
    let nc = contacts.len();
    let wrenches = ws
        .contact_forward_dynamics(model, x, contacts, u)
        .unwrap()
        .wrenches;
    let h = 1e-6;
    let mut wx = DMatrix::zeros(6 * nc, ndx);
    for k in 0..ndx {
        let mut d = DVector::zeros(ndx);
        d[k] = h;
        let wp = ws
            .contact_forward_dynamics(model, &state_integrate(model, x, &d), contacts, u)
            .unwrap()
            .wrenches;
        d[k] = -h;
        let wm = ws
            .contact_forward_dynamics(model, &state_integrate(model, x, &d), contacts, u)
            .unwrap()
            .wrenches;
        for c in 0..nc {
            for i in 0..6 {
                wx[(6 * c + i, k)] = (wp[c][i] - wm[c][i]) / (2.0 * h);
            }
        }
    }
    let mut wu = DMatrix::zeros(6 * nc, model.nu);
    for k in 0..model.nu {
        let mut up = u.clone();
        up[k] += h;
        let mut um = u.clone();
        um[k] -= h;
        let wp = ws.contact_forward_dynamics(model, x, contacts, &up).unwrap().wrenches;
        let wm = ws.contact_forward_dynamics(model, x, contacts, &um).unwrap().wrenches;
        for c in 0..nc {
            for i in 0..6 {
                wu[(6 * c + i, k)] = (wp[c][i] - wm[c][i]) / (2.0 * h);
            }
        }
    }
    (wrenches, wx, wu)
}

#[test]
fn wrench_term_gradients_match_fd_through_contact_dynamics() {
    let model = rh5();
    let contacts = ContactSet::from_frames(&[
        model.frame_id("left_foot").unwrap(),
        model.frame_id("right_foot").unwrap(),
    ]);
    let mut rng = rng(57);
    let spec = WrenchConeSpec::new(0.7, 0.1, 0.04, 0.5);
    let terms = vec![
        CostTerm::FrictionConeBarrier { weight: 1.0, spec },
        CostTerm::CopBarrier { weight: 1.0, spec },
    ];
    let mut checked = 0;
    for _ in 0..8 {
        // Small perturbations about the neutral stance keep both feet loaded.
        let mut dx = DVector::zeros(2 * model.nv);
        for k in 0..dx.len() {
            dx[k] = rng.gen_range(-0.05..0.05);
        }
        let x = state_integrate(&model, &model.neutral_state(), &dx);
        let u = DVector::from_fn(model.nu, |_, _| rng.gen_range(-5.0..5.0));
        let (wrenches, wx, wu) = wrench_with_fd_sensitivities(&model, &contacts, &x, &u);
        if wrenches.iter().any(|w| w[2] < 5.0) {
            continue;
        }
        let node = NodeWrenches {
            wrenches: &wrenches,
            wrench_dx: Some(&wx),
            wrench_du: Some(&wu),
        };
        let mut ws = Workspace::new(&model);
        let eval = compose_node_cost(&terms, &model, &mut ws, &x, &u, &node).unwrap();

        let value_of = |xs: &State, us: &DVector<f64>| {
            let w = Workspace::new(&model)
                .contact_forward_dynamics(&model, xs, &contacts, us)
                .unwrap()
                .wrenches;
            let node = NodeWrenches {
                wrenches: &w,
                wrench_dx: None,
                wrench_du: None,
            };
            compose_node_cost(&terms, &model, &mut Workspace::new(&model), xs, us, &node)
                .unwrap()
                .value
        };
        let gx = fd_gradient_x(&model, &x, |xs| value_of(xs, &u), 1e-6);
        let ex = (&eval.lx - &gx).norm() / (1.0 + gx.norm());
        assert!(ex < 1e-4, "state gradient FD mismatch {ex:.2e}");
        let mut gu = DVector::zeros(model.nu);
        for k in 0..model.nu {
            let mut up = u.clone();
            up[k] += 1e-6;
            let mut um = u.clone();
            um[k] -= 1e-6;
            gu[k] = (value_of(&x, &up) - value_of(&x, &um)) / 2e-6;
        }
        let eu = (&eval.lu - &gu).norm() / (1.0 + gu.norm());
        assert!(eu < 1e-4, "control gradient FD mismatch {eu:.2e}");
        checked += 1;
    }
    assert!(checked >= 4, "too few loaded-stance samples: {checked}");
}

#[test]
fn evaluations_are_nonnegative_with_psd_hessians() {
    let mut rng = rng(92);
    for (name, model) in zoo() {
        let mut ws = Workspace::new(&model);
        for _ in 0..10 {
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(model.nu, |_, _| rng.gen_range(-3.0..3.0));
            let terms = kinematic_terms(&model, &mut rng);
            let eval = eval_at(&terms, &model, &mut ws, &x, &u);
            assert!(eval.value >= 0.0, "{name}: negative cost value");
            assert_relative_eq!(eval.lxx, eval.lxx.transpose(), epsilon = 1e-12);
            assert_relative_eq!(eval.luu, eval.luu.transpose(), epsilon = 1e-12);
            let min_x = eval.lxx.symmetric_eigen().eigenvalues.min();
            assert!(min_x >= -1e-10, "{name}: Lxx eigmin {min_x:.2e}");
            if model.nu > 0 {
                let min_u = eval.luu.symmetric_eigen().eigenvalues.min();
                assert!(min_u >= -1e-10, "{name}: Luu eigmin {min_u:.2e}");
            }
        }
    }
}

#[test]
fn composition_is_linear_in_the_weights() {
    let model = planar_biped();
    let mut rng = rng(7);
    let mut ws = Workspace::new(&model);
    let x = random_state(&model, &mut rng);
    let u = DVector::from_fn(model.nu, |_, _| rng.gen_range(-3.0..3.0));
    let terms = kinematic_terms(&model, &mut rng);
    let one = eval_at(&terms, &model, &mut ws, &x, &u);
    let mut scaled = terms.clone();
    for t in &mut scaled {
        *t.weight_mut() *= 2.5;
    }
    let s = eval_at(&scaled, &model, &mut ws, &x, &u);
    assert_relative_eq!(s.value, 2.5 * one.value, epsilon = 1e-12);
    assert_relative_eq!(s.lx, 2.5 * &one.lx, epsilon = 1e-12);
    assert_relative_eq!(s.lxx, 2.5 * &one.lxx, epsilon = 1e-12);
    assert_relative_eq!(s.luu, 2.5 * &one.luu, epsilon = 1e-12);

    // Two identical half-weight copies equal one full-weight term.
    let halves: Vec<CostTerm> = terms
        .iter()
        .chain(terms.iter())
        .cloned()
        .map(|mut t| {
            *t.weight_mut() *= 0.5;
            t
        })
        .collect();
    let h = eval_at(&halves, &model, &mut ws, &x, &u);
    assert_relative_eq!(h.value, one.value, epsilon = 1e-12);
    assert_relative_eq!(h.lx, one.lx, epsilon = 1e-12);
}
