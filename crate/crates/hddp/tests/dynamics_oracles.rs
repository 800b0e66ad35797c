//! Independent oracles for the rigid-body algorithms: RNEA unit-vector
//! reconstruction of the inertia matrix, finite-difference Jacobians,
//! Lagrangian energy balances, KKT substitution residuals, and impulse
//! energy dissipation, quantified over the whole model zoo.

mod common;

use common::*;
use hddp::dynamics::{
    bias_forces, contact_forward_dynamics, forward_kinematics, frame_jacobian, impulse_dynamics,
    integrate_state, mass_matrix, ContactSet, State, Workspace, GRAVITY,
};
use hddp::math::quat_log;
use nalgebra::{DMatrix, DVector, Vector3};

#[test]
fn mass_matrix_symmetric_positive_definite() {
    for (name, model) in zoo() {
        let mut r = rng(1);
        for _ in 0..100 {
            let s = random_state(&model, &mut r);
            let m = mass_matrix(&model, &s.q);
            let asym = (&m - m.transpose()).amax();
            assert!(asym < 1e-10, "{name}: M not symmetric ({asym})");
            assert!(
                m.clone().cholesky().is_some(),
                "{name}: M not positive definite"
            );
            let eig = m.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "{name}: non-positive eigenvalue");
        }
    }
}

#[test]
fn mass_matrix_columns_match_rnea() {
    // Column i of M equals the inverse dynamics of the unit acceleration
    // e_i minus the gravity bias.
    for (name, model) in zoo() {
        let mut r = rng(2);
        for _ in 0..10 {
            let s = random_state(&model, &mut r);
            let m = mass_matrix(&model, &s.q);
            let mut ws = Workspace::new(&model);
            let zero_v = DVector::zeros(model.nv);
            let bias = ws.rnea(&model, &s.q, &zero_v, &DVector::zeros(model.nv), &[]);
            for i in 0..model.nv {
                let mut ei = DVector::zeros(model.nv);
                ei[i] = 1.0;
                let col = ws.rnea(&model, &s.q, &zero_v, &ei, &[]) - &bias;
                let err = (m.column(i) - &col).amax();
                assert!(err < 1e-9, "{name}: column {i} mismatch ({err})");
            }
        }
    }
}

#[test]
fn frame_jacobians_match_finite_differences() {
    for (name, model) in zoo() {
        let mut r = rng(3);
        let frames: Vec<String> = model.frames.iter().map(|f| f.name.clone()).collect();
        for _ in 0..20 {
            let s = random_state(&model, &mut r);
            for fname in frames.iter().take(4) {
                let frame_id = model.frame_id(fname).unwrap();
                let jac = frame_jacobian(&model, &s.q, fname).unwrap();
                let h = 1e-6;
                // FD of the frame placement through the configuration
                // retraction: linear rows against the origin, angular rows
                // against the world-side rotation log.
                let fd = fd_jacobian_x(
                    &model,
                    &s,
                    |x: &State| {
                        let placement = forward_kinematics(&model, &x.q)[frame_id];
                        let mut out = DVector::zeros(6);
                        out.rows_mut(0, 3)
                            .copy_from(&placement.translation.vector);
                        // Encode rotation relative to the unperturbed one.
                        let base = forward_kinematics(&model, &s.q)[frame_id];
                        let dw = quat_log(&(placement.rotation * base.rotation.inverse()));
                        out.rows_mut(3, 3).copy_from(&dw);
                        out
                    },
                    h,
                );
                let fd_q = fd.columns(0, model.nv).into_owned();
                let err = rel_err(&jac, &fd_q);
                assert!(err < 1e-5, "{name}/{fname}: Jacobian FD error {err}");
            }
        }
    }
}

#[test]
fn pendulum_energy_balance() {
    // Gravity work accumulated from h(q, 0) along the discrete path must
    // equal the potential-energy drop measured by forward kinematics.
    let model = pendulum();
    let mut state = State::new(DVector::from_vec(vec![1.2]), DVector::from_vec(vec![0.0]));
    let dt = 1e-4;
    let mut work = 0.0;
    let com_height = |q: &DVector<f64>| {
        // CoM is 0.5 m along the link; tip frame is at 1.0 m.
        let tip = forward_kinematics(&model, q)[0].translation.vector;
        0.5 * tip.z
    };
    let z0 = com_height(&state.q);
    let mut ws = Workspace::new(&model);
    for _ in 0..10_000 {
        let h = ws.bias_forces(&model, &state.q, &state.v);
        let vdot = DVector::from_vec(vec![-h[0] / mass_matrix(&model, &state.q)[(0, 0)]]);
        let next = integrate_state(&model, &state, &vdot, dt);
        let dq = next.q[0] - state.q[0];
        let qmid = DVector::from_vec(vec![0.5 * (next.q[0] + state.q[0])]);
        let tau_gravity = -ws.bias_forces(&model, &qmid, &DVector::zeros(1))[0];
        work += tau_gravity * dq;
        state = next;
    }
    let dpe = 1.5 * GRAVITY * (com_height(&state.q) - z0);
    assert!(
        (work + dpe).abs() < 1e-6,
        "gravity work {work} vs potential drop {}",
        -dpe
    );
}

#[test]
fn two_link_bias_matches_lagrangian_finite_differences() {
    // Independent Lagrangian: kinetic and potential energy from plain
    // trigonometry, bias via FD of L (with qddot = 0):
    //   h_i = sum_j d2L/(dqdot_i dq_j) qdot_j - dL/dq_i
    let model = two_link();
    let (m1, m2) = (1.2, 0.8);
    let (l1, lc1, lc2) = (0.5, 0.25, 0.2);
    let (i1, i2) = (0.03, 0.015);
    let lagrangian = |q: &DVector<f64>, v: &DVector<f64>| {
        let (t1, t2) = (q[0], q[1]);
        let (w1, w2) = (v[0], v[1] + v[0]);
        // Links rotate about +y; a point at distance d hangs at
        // (-d sin(phi), 0, -d cos(phi)).
        let v1_sq = lc1 * lc1 * w1 * w1;
        let v2_sq = l1 * l1 * w1 * w1
            + lc2 * lc2 * w2 * w2
            + 2.0 * l1 * lc2 * w1 * w2 * t2.cos();
        let ke = 0.5 * (m1 * v1_sq + i1 * w1 * w1 + m2 * v2_sq + i2 * w2 * w2);
        let z1 = -lc1 * t1.cos();
        let z2 = -l1 * t1.cos() - lc2 * (t1 + t2).cos();
        ke - GRAVITY * (m1 * z1 + m2 * z2)
    };
    let mut r = rng(4);
    for _ in 0..20 {
        let s = random_state(&model, &mut r);
        let h = bias_forces(&model, &s.q, &s.v);
        let fd = 1e-5;
        let mut h_oracle = DVector::zeros(2);
        for i in 0..2 {
            let mut dl_dqi = {
                let mut qp = s.q.clone();
                qp[i] += fd;
                let mut qm = s.q.clone();
                qm[i] -= fd;
                (lagrangian(&qp, &s.v) - lagrangian(&qm, &s.v)) / (2.0 * fd)
            };
            let mut acc = 0.0;
            for j in 0..2 {
                // d2L/(dqdot_i dq_j) by nested central differences.
                let mut qp = s.q.clone();
                qp[j] += fd;
                let mut qm = s.q.clone();
                qm[j] -= fd;
                let dldv = |q: &DVector<f64>| {
                    let mut vp = s.v.clone();
                    vp[i] += fd;
                    let mut vm = s.v.clone();
                    vm[i] -= fd;
                    (lagrangian(q, &vp) - lagrangian(q, &vm)) / (2.0 * fd)
                };
                acc += (dldv(&qp) - dldv(&qm)) / (2.0 * fd) * s.v[j];
            }
            dl_dqi = acc - dl_dqi;
            h_oracle[i] = dl_dqi;
        }
        let err = (&h - &h_oracle).norm() / (1.0 + h_oracle.norm());
        assert!(err < 1e-4, "bias vs Lagrangian FD: {err} ({h} vs {h_oracle})");
    }
}

fn contact_cases(name: &str, model: &RobotModel) -> Vec<ContactSet> {
    use hddp::model::RobotModel;
    let _ = model as &RobotModel;
    match name {
        "point_mass" => vec![ContactSet::from_frames(&[0])],
        "planar_biped" => vec![ContactSet::from_frames(&[
            model.frame_id("foot_l").unwrap()
        ])],
        "rh5" => vec![
            ContactSet::from_frames(&[model.frame_id("left_foot").unwrap()]),
            ContactSet::from_frames(&[
                model.frame_id("left_foot").unwrap(),
                model.frame_id("right_foot").unwrap(),
            ]),
        ],
        _ => vec![],
    }
}

use hddp::model::RobotModel;

#[test]
fn kkt_substitution_residual() {
    for (name, model) in zoo() {
        let cases = contact_cases(name, &model);
        if cases.is_empty() {
            continue;
        }
        let mut r = rng(5);
        for contacts in &cases {
            for _ in 0..100 {
                let s = random_state(&model, &mut r);
                let tau = DVector::from_fn(model.nu, |_, _| {
                    use rand::Rng;
                    r.gen_range(-20.0..20.0)
                });
                let res = contact_forward_dynamics(&model, &s, contacts, &tau).unwrap();
                // Substitute back into the equation of motion.
                let m = mass_matrix(&model, &s.q);
                let h = bias_forces(&model, &s.q, &s.v);
                let mut ws = Workspace::new(&model);
                ws.fk(&model, &s.q);
                ws.velocities(&model, &s.q, &s.v);
                let mut force = ws.selection_apply(&model, &tau) - &h - &m * &res.vdot;
                for (cf, w) in contacts.frames.iter().zip(&res.wrenches) {
                    let jc = ws.frame_jacobian_local(&model, cf.frame_id);
                    force += jc.transpose() * w;
                }
                assert!(
                    force.amax() < 1e-9,
                    "{name}: EoM residual {}",
                    force.amax()
                );
                // Acceleration-level constraint via FD of J(q(t)) v(t).
                let fd_h = 1e-7;
                let constraint = |x: &State| {
                    let mut ws2 = Workspace::new(&model);
                    ws2.fk(&model, &x.q);
                    let mut out = DVector::zeros(6 * contacts.len());
                    for (c, cf) in contacts.frames.iter().enumerate() {
                        let jc = ws2.frame_jacobian_local(&model, cf.frame_id);
                        out.rows_mut(6 * c, 6).copy_from(&(jc * &x.v));
                    }
                    out
                };
                let xp = integrate_state(&model, &s, &res.vdot, fd_h);
                let xm = integrate_state(&model, &s, &res.vdot, -fd_h);
                let dcdt = (constraint(&xp) - constraint(&xm)) / (2.0 * fd_h);
                assert!(
                    dcdt.amax() < 1e-6,
                    "{name}: acceleration-level constraint drift {}",
                    dcdt.amax()
                );
            }
        }
    }
}

#[test]
fn impulse_dynamics_dissipates_energy() {
    for (name, model) in zoo() {
        let cases = contact_cases(name, &model);
        if cases.is_empty() {
            continue;
        }
        let mut r = rng(6);
        for contacts in &cases {
            for _ in 0..100 {
                let s = random_state(&model, &mut r);
                let res = impulse_dynamics(&model, &s, contacts).unwrap();
                let m = mass_matrix(&model, &s.q);
                let ke = |v: &DVector<f64>| 0.5 * (v.transpose() * &m * v)[0];
                assert!(
                    ke(&res.v_plus) <= ke(&s.v) + 1e-10,
                    "{name}: impulse increased kinetic energy"
                );
                // Post-impact contact velocity must vanish.
                let mut ws = Workspace::new(&model);
                ws.fk(&model, &s.q);
                for cf in &contacts.frames {
                    let jc = ws.frame_jacobian_local(&model, cf.frame_id);
                    assert!((jc * &res.v_plus).amax() < 1e-8, "{name}: J v+ != 0");
                }
            }
        }
    }
}

#[test]
fn rh5_standing_static_equilibrium() {
    // Straight-leg stance, gravity-compensating torques solved from the
    // base rows of the EoM: accelerations vanish and the summed vertical
    // contact forces recover the robot weight.
    let model = rh5();
    let mut s = model.neutral_state();
    for k in 7..model.nq {
        s.q[k] = 0.0;
    }
    s.q[2] = 0.93;
    let feet = [
        model.frame_id("left_foot").unwrap(),
        model.frame_id("right_foot").unwrap(),
    ];
    let contacts = ContactSet::from_frames(&feet);
    let mut ws = Workspace::new(&model);
    ws.fk(&model, &s.q);
    ws.velocities(&model, &s.q, &s.v);
    let h = ws.bias_forces(&model, &s.q, &s.v);
    let mut jt = DMatrix::zeros(model.nv, 12);
    for (c, f) in feet.iter().enumerate() {
        jt.view_mut((0, 6 * c), (model.nv, 6))
            .copy_from(&ws.frame_jacobian_local(&model, *f).transpose());
    }
    // Least-norm wrench distribution solving the 6 base equations.
    let base_rows = jt.rows(0, 6).into_owned();
    let lambda = base_rows
        .svd(true, true)
        .solve(&h.rows(0, 6).into_owned(), 1e-12)
        .unwrap();
    let full = &h - &jt * &lambda;
    let mut tau = DVector::zeros(model.nu);
    let mut iu = 0;
    for (i, j) in model.joints.iter().enumerate() {
        if j.actuated {
            // v-index of joint i is 6 + (revolute count before i) for this
            // fully-actuated fixture.
            tau[iu] = full[6 + (i - 1)];
            iu += 1;
        }
    }
    let res = contact_forward_dynamics(&model, &s, &contacts, &tau).unwrap();
    assert!(res.vdot.amax() < 1e-6, "standing vdot {}", res.vdot.amax());
    let total_fz: f64 = res.wrenches.iter().map(|w| w[2]).sum();
    let weight = model.total_mass() * GRAVITY;
    assert!(
        (total_fz - weight).abs() < 1e-6,
        "sum of normal forces {total_fz} vs weight {weight}"
    );
}

#[test]
fn rh5_geometry_matches_published_dimensions() {
    let model = rh5();
    assert!((model.total_mass() - 62.5).abs() < 2.0);
    let mut s = model.neutral_state();
    for k in 7..model.nq {
        s.q[k] = 0.0;
    }
    s.q[2] = 0.93;
    let placements = forward_kinematics(&model, &s.q);
    let at = |name: &str| placements[model.frame_id(name).unwrap()].translation.vector;
    // Hip axes intersection height and spacing.
    assert!((at("left_hip").z - 0.93).abs() < 1e-9);
    assert!((at("left_hip") - at("right_hip")).norm() - 0.22 < 1e-9);
    // Segment lengths.
    assert!(((at("left_hip") - at("left_knee")).norm() - 0.41).abs() < 1e-9);
    assert!(((at("left_knee") - at("left_ankle")).norm() - 0.42).abs() < 1e-9);
    // Ankle 100 mm above the sole.
    assert!(((at("left_ankle") - at("left_foot")).norm() - 0.10).abs() < 1e-9);
    // Soles on the ground with straight legs, symmetric about XZ.
    assert!(at("left_foot").z.abs() < 1e-9);
    assert!((at("left_foot").z - at("right_foot").z).abs() < 1e-12);
    assert_eq!(model.nv, 6 + 23);
    assert_eq!(model.nu, 23);
}

#[test]
fn rh5_foot_corners_span_rectangle_for_any_configuration() {
    let model = rh5();
    let mut r = rng(7);
    for _ in 0..20 {
        let s = random_state(&model, &mut r);
        let placements = forward_kinematics(&model, &s.q);
        let at = |name: &str| placements[model.frame_id(name).unwrap()].translation.vector;
        for side in ["left", "right"] {
            let fl = at(&format!("{side}_foot_front_left"));
            let fr = at(&format!("{side}_foot_front_right"));
            let bl = at(&format!("{side}_foot_back_left"));
            let br = at(&format!("{side}_foot_back_right"));
            assert!(((fl - fr).norm() - 0.08).abs() < 1e-12);
            assert!(((fl - bl).norm() - 0.20).abs() < 1e-12);
            assert!(((br - bl).norm() - 0.08).abs() < 1e-12);
        }
    }
}

#[test]
fn base_translation_equivariance() {
    let model = rh5();
    let mut r = rng(8);
    let s = random_state(&model, &mut r);
    let p1 = forward_kinematics(&model, &s.q);
    let mut q2 = s.q.clone();
    q2[0] += 1.0;
    let p2 = forward_kinematics(&model, &q2);
    for (a, b) in p1.iter().zip(&p2) {
        let d = b.translation.vector - a.translation.vector;
        assert!((d - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }
}
