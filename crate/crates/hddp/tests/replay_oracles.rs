//! Replay oracles on the biped: equilibrium tracking of a static stance,
//! collapse without control, and determinism of the stepping loop.

mod common;

use common::*;
use hddp::dynamics::Workspace;
use hddp::gaitplan::{gravity_compensation, stance_state, NOMINAL_HIP_HEIGHT};
use hddp::replay::{replay, GroundPlane, PDGains};
use hddp::trajio::{model_hash, TrajectoryFile};
use nalgebra::Vector6;

/// Static standing trajectory with exact gravity-compensation controls.
fn standing_traj(duration: f64) -> (hddp::model::RobotModel, TrajectoryFile) {
    let model = rh5();
    let x = stance_state(&model, NOMINAL_HIP_HEIGHT).unwrap();
    let feet = vec![
        model.frame_id("left_foot").unwrap(),
        model.frame_id("right_foot").unwrap(),
    ];
    let mut ws = Workspace::new(&model);
    let u = gravity_compensation(&model, &mut ws, &x, &feet);
    let dt = 0.03;
    let n = (duration / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| dt * i as f64).collect();
    let weight = model.total_mass() * hddp::dynamics::GRAVITY;
    let w = Vector6::new(0.0, 0.0, weight / 2.0, 0.0, 0.0, 0.0);
    let traj = TrajectoryFile {
        model_hash: model_hash(&model),
        knot_dt: dt,
        nq: model.nq,
        nv: model.nv,
        nu: model.nu,
        contact_names: vec!["left_foot".into(), "right_foot".into()],
        times,
        states: vec![x; n + 1],
        controls: vec![u; n],
        wrenches: vec![vec![Some(w), Some(w)]; n],
    };
    (model, traj)
}

#[test]
fn standing_with_gravity_feedforward_barely_moves() {
    let (model, traj) = standing_traj(1.0);
    let dense = traj.interpolate(1000.0).unwrap();
    let gains = PDGains::default_for(&model);
    let report = replay(&model, &traj, &dense, &gains, &GroundPlane::default()).unwrap();
    assert!(!report.fell);
    assert!(
        report.base_deviation.amax() < 1e-4,
        "base deviation {:?}",
        report.base_deviation
    );
    assert!(
        report.joint_tracking_rms < 1e-3,
        "joint rms {:.2e}",
        report.joint_tracking_rms
    );
    // Unilaterality: every logged ground reaction pushes.
    for step in &report.steps {
        for w in step.wrenches.iter().flatten() {
            assert!(w[2] >= 0.0, "pulling contact at t = {}", step.time);
        }
    }
}

#[test]
fn no_control_and_no_feedforward_falls() {
    let (model, traj) = standing_traj(2.0);
    let dense = traj.interpolate(1000.0).unwrap();
    let gains = PDGains::zero(&model);
    let report = replay(&model, &traj, &dense, &gains, &GroundPlane::default()).unwrap();
    assert!(report.fell, "limp robot stayed up");
    assert!(report.fall_step.is_some());
}

#[test]
fn replay_is_deterministic() {
    let (model, traj) = standing_traj(0.5);
    let dense = traj.interpolate(1000.0).unwrap();
    let gains = PDGains::default_for(&model);
    let a = replay(&model, &traj, &dense, &gains, &GroundPlane::default()).unwrap();
    let b = replay(&model, &traj, &dense, &gains, &GroundPlane::default()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn model_mismatch_is_rejected_before_stepping() {
    let (model, mut traj) = standing_traj(0.5);
    traj.model_hash = "deadbeefdeadbeef".into();
    let dense = traj.interpolate(1000.0).unwrap();
    let gains = PDGains::default_for(&model);
    assert!(replay(&model, &traj, &dense, &gains, &GroundPlane::default()).is_err());
}

#[test]
fn report_csv_has_one_row_per_tick() {
    let (model, traj) = standing_traj(0.5);
    let dense = traj.interpolate(1000.0).unwrap();
    let gains = PDGains::default_for(&model);
    let report = replay(&model, &traj, &dense, &gains, &GroundPlane::default()).unwrap();
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), report.steps.len() + 1);
    assert_eq!(report.steps.len(), dense.times.len() - 1);
    // A state is logged at every tick with finite values.
    assert!(report
        .steps
        .iter()
        .all(|s| s.base_position.iter().all(|v| v.is_finite())));
}
