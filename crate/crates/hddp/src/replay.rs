//! Replay verification: re-integrates the robot under a joint-space PD
//! controller tracking the interpolated trajectory, with the floating base
//! uncontrolled. References advance at the control rate; the PD law is
//! evaluated at every physics substep against the held reference sample.
//! The ground is the same rigid KKT contact model the planner uses, so
//! deviations isolate controller error from contact-model error. Produces
//! base-deviation and tracking statistics.

use nalgebra::{DVector, Isometry3, Vector3};
use thiserror::Error;

use crate::dynamics::{
    integrate_state, ContactFrame, ContactSet, DynamicsError, State, Workspace,
};
use crate::math::Force;
use crate::model::RobotModel;
use crate::trajio::{InterpolatedTrajectory, TrajError, TrajectoryFile};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("replay needs a floating-base model")]
    FixedBase,
    #[error("trajectory has no samples")]
    Empty,
    #[error("unknown contact frame '{0}'")]
    UnknownFrame(String),
}

/// Joint-space PD gains, one entry per actuated joint.
#[derive(Debug, Clone)]
pub struct PDGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    /// Add the planned control as feedforward.
    pub feedforward: bool,
}

impl PDGains {
    /// Defaults: kp = 1000 N·m/rad and critical damping against a reflected
    /// inertia estimate from the mass-matrix diagonal at the neutral pose.
    pub fn default_for(model: &RobotModel) -> Self {
        let kp_val = 1000.0;
        let neutral = model.neutral_state();
        let mut ws = Workspace::new(model);
        let m = ws.mass_matrix(model, &neutral.q);
        let base = if model.has_free_base() { 6 } else { 0 };
        let mut kp = DVector::zeros(model.nu);
        let mut kd = DVector::zeros(model.nu);
        let mut iu = 0;
        for (k, j) in model.revolute_joints().enumerate() {
            if j.actuated {
                let inertia = m[(base + k, base + k)].max(1e-3);
                kp[iu] = kp_val;
                kd[iu] = 2.0 * (kp_val * inertia).sqrt();
                iu += 1;
            }
        }
        PDGains {
            kp,
            kd,
            feedforward: true,
        }
    }

    pub fn zero(model: &RobotModel) -> Self {
        PDGains {
            kp: DVector::zeros(model.nu),
            kd: DVector::zeros(model.nu),
            feedforward: false,
        }
    }
}

/// Rigid unilateral ground plane at a fixed height.
#[derive(Debug, Clone, Copy)]
pub struct GroundPlane {
    pub height: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        GroundPlane { height: 0.0 }
    }
}

/// Fall threshold: actual base this far below the planned base height.
pub const FALL_THRESHOLD: f64 = 0.3;
/// Hysteresis band of the contact event detector.
pub const HYSTERESIS: f64 = 2e-3;
/// Physics substeps per control tick.
pub const SUBSTEPS: usize = 4;
/// Baumgarte gains of the replay ground contacts (critically damped,
/// omega = 50 rad/s).
const GROUND_ALPHA: f64 = 100.0;
const GROUND_BETA: f64 = 2500.0;

/// One logged control tick.
#[derive(Debug, Clone)]
pub struct ReplayStep {
    pub time: f64,
    pub base_position: Vector3<f64>,
    pub planned_base: Vector3<f64>,
    /// Max joint tracking error magnitude this tick (rad).
    pub tracking_error: f64,
    /// Per contact column: wrench if active this tick.
    pub wrenches: Vec<Option<Force>>,
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    /// Per-axis max |actual - planned| base position (m).
    pub base_deviation: Vector3<f64>,
    pub joint_tracking_rms: f64,
    pub fell: bool,
    pub fall_step: Option<usize>,
    pub contact_names: Vec<String>,
    pub steps: Vec<ReplayStep>,
}

impl ReplayReport {
    /// Per-step CSV (base pose, tracking error, contact forces) for the
    /// plot pipeline.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("t,base_x,base_y,base_z,plan_x,plan_y,plan_z,tracking_error");
        for c in &self.contact_names {
            for k in 0..6 {
                out.push_str(&format!(",w_{c}_{k}"));
            }
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                s.time,
                s.base_position.x,
                s.base_position.y,
                s.base_position.z,
                s.planned_base.x,
                s.planned_base.y,
                s.planned_base.z,
                s.tracking_error
            ));
            for w in &s.wrenches {
                match w {
                    Some(w) => {
                        for k in 0..6 {
                            out.push_str(&format!(",{}", w[k]));
                        }
                    }
                    None => out.push_str(",,,,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-foot contact state machine with a 2 mm hysteresis band.
struct FootContact {
    frame_id: usize,
    active: bool,
    /// Re-armed once the sole rises above the hysteresis band; prevents
    /// chattering at the ground level.
    armed: bool,
    reference: Isometry3<f64>,
}

/// Event rule on one foot, separated out for direct testing: returns the
/// new (active, armed) pair.
pub fn contact_event(
    active: bool,
    armed: bool,
    sole_height: f64,
    sole_velocity_z: f64,
    planned_stance: bool,
    normal_force: f64,
) -> (bool, bool) {
    let mut active = active;
    let mut armed = armed;
    if !active {
        if sole_height > HYSTERESIS {
            armed = true;
        }
        if armed && sole_height <= 0.0 && sole_velocity_z < 0.0 {
            active = true;
            armed = false;
        }
    } else if !planned_stance && normal_force <= 0.0 {
        active = false;
    }
    (active, armed)
}

/// Re-integrates the trajectory under PD tracking and reports deviations.
/// `dense` must be the interpolation of `traj` at the control rate.
pub fn replay(
    model: &RobotModel,
    traj: &TrajectoryFile,
    dense: &InterpolatedTrajectory,
    gains: &PDGains,
    ground: &GroundPlane,
) -> Result<ReplayReport, ReplayError> {
    traj.verify_model(model)?;
    if !model.has_free_base() {
        return Err(ReplayError::FixedBase);
    }
    if dense.states.is_empty() {
        return Err(ReplayError::Empty);
    }
    let mut ws = Workspace::new(model);
    let tick = 1.0 / dense.sample_rate;
    let sub_dt = tick / SUBSTEPS as f64;
    let effort = model.effort_limits();

    let mut feet: Vec<FootContact> = Vec::new();
    for name in &traj.contact_names {
        let id = model
            .frame_id(name)
            .map_err(|_| ReplayError::UnknownFrame(name.clone()))?;
        feet.push(FootContact {
            frame_id: id,
            active: false,
            armed: false,
            reference: Isometry3::identity(),
        });
    }

    let mut x = dense.states[0].clone();
    // Feet planned in stance at the start begin active at their initial
    // placements, pinned to the ground height.
    ws.fk(model, &x.q);
    for (c, foot) in feet.iter_mut().enumerate() {
        if planned_stance(traj, dense, 0, c) {
            foot.active = true;
            foot.reference = grounded(ws.frame_placement(model, foot.frame_id), ground);
        }
    }

    let mut steps = Vec::with_capacity(dense.states.len());
    let mut base_deviation: Vector3<f64> = Vector3::zeros();
    let mut sq_sum = 0.0;
    let mut sq_count = 0usize;
    let mut fell = false;
    let mut fall_step = None;

    let n_ticks = dense.states.len() - 1;
    for s in 0..n_ticks {
        let x_ref = &dense.states[s];

        let mut tick_wrenches: Vec<Option<Force>> = vec![None; feet.len()];
        for _ in 0..SUBSTEPS {
            let tau = pd_torques(model, gains, x_ref, &x, &dense.controls[s], &effort);
            ws.fk(model, &x.q);
            ws.velocities(model, &x.q, &x.v);
            // Touchdown events first: resolve impacts before the continuous
            // step.
            let mut impacted = false;
            for (c, foot) in feet.iter_mut().enumerate() {
                let pose = ws.frame_placement(model, foot.frame_id);
                let vel = ws.frame_velocity_local(model, foot.frame_id);
                let vz_world = (pose.rotation * Vector3::new(vel[0], vel[1], vel[2])).z;
                let height = pose.translation.vector.z - ground.height;
                let was_active = foot.active;
                let (active, armed) = contact_event(
                    foot.active,
                    foot.armed,
                    height,
                    vz_world,
                    planned_stance(traj, dense, s, c),
                    tick_wrenches[c].map_or(1.0, |w| w[2]),
                );
                foot.active = active;
                foot.armed = armed;
                if active && !was_active {
                    foot.reference = grounded(pose, ground);
                    impacted = true;
                }
            }
            let contacts = active_set(&feet);
            if impacted && !contacts.frames.is_empty() {
                let imp = ws.impulse_dynamics(model, &x, &contacts)?;
                x = State::new(x.q.clone(), imp.v_plus);
                ws.fk(model, &x.q);
                ws.velocities(model, &x.q, &x.v);
            }
            let result = ws.contact_forward_dynamics(model, &x, &contacts, &tau)?;
            // Deactivation: planned swing and the ground pulling.
            let mut idx = 0;
            let mut released = false;
            for (c, foot) in feet.iter_mut().enumerate() {
                if !foot.active {
                    continue;
                }
                let w = result.wrenches[idx];
                tick_wrenches[c] = Some(w);
                if !planned_stance(traj, dense, s, c) && w[2] <= 0.0 {
                    foot.active = false;
                    tick_wrenches[c] = None;
                    released = true;
                }
                idx += 1;
            }
            let vdot = if released {
                let contacts = active_set(&feet);
                ws.contact_forward_dynamics(model, &x, &contacts, &tau)?.vdot
            } else {
                result.vdot
            };
            x = integrate_state(model, &x, &vdot, sub_dt);
        }

        // Statistics for this tick, measured after integration against the
        // next reference sample.
        let x_ref_next = &dense.states[s + 1];
        let planned_base = Vector3::new(x_ref_next.q[0], x_ref_next.q[1], x_ref_next.q[2]);
        let base = Vector3::new(x.q[0], x.q[1], x.q[2]);
        let finite = x.q.iter().chain(x.v.iter()).all(|v| v.is_finite());
        let mut worst = 0.0f64;
        if finite {
            for j in 7..model.nq {
                let e = x.q[j] - x_ref_next.q[j];
                worst = worst.max(e.abs());
                sq_sum += e * e;
                sq_count += 1;
            }
            for k in 0..3 {
                base_deviation[k] = base_deviation[k].max((base[k] - planned_base[k]).abs());
            }
        }
        steps.push(ReplayStep {
            time: dense.times[s + 1],
            base_position: base,
            planned_base,
            tracking_error: worst,
            wrenches: tick_wrenches,
        });
        if !finite || base.z < planned_base.z - FALL_THRESHOLD {
            fell = true;
            fall_step = Some(s);
            break;
        }
    }

    Ok(ReplayReport {
        base_deviation,
        joint_tracking_rms: if sq_count > 0 {
            (sq_sum / sq_count as f64).sqrt()
        } else {
            0.0
        },
        fell,
        fall_step,
        contact_names: traj.contact_names.clone(),
        steps,
    })
}

fn pd_torques(
    model: &RobotModel,
    gains: &PDGains,
    x_ref: &State,
    x: &State,
    u_ref: &DVector<f64>,
    effort: &DVector<f64>,
) -> DVector<f64> {
    let mut tau = DVector::zeros(model.nu);
    let mut iu = 0;
    for (k, j) in model.revolute_joints().enumerate() {
        if j.actuated {
            let qe = x_ref.q[7 + k] - x.q[7 + k];
            let ve = x_ref.v[6 + k] - x.v[6 + k];
            tau[iu] = gains.kp[iu] * qe + gains.kd[iu] * ve;
            if gains.feedforward {
                tau[iu] += u_ref[iu];
            }
            tau[iu] = tau[iu].clamp(-effort[iu], effort[iu]);
            iu += 1;
        }
    }
    tau
}

/// Planned stance of contact column `c` at dense sample `s`: the knot the
/// sample falls into carries a wrench for that contact.
fn planned_stance(traj: &TrajectoryFile, dense: &InterpolatedTrajectory, s: usize, c: usize) -> bool {
    let k = dense.knot_index[s].min(traj.wrenches.len() - 1);
    traj.wrenches[k][c].is_some()
}

fn grounded(pose: Isometry3<f64>, ground: &GroundPlane) -> Isometry3<f64> {
    let mut p = pose;
    p.translation.vector.z = ground.height;
    p
}

fn active_set(feet: &[FootContact]) -> ContactSet {
    ContactSet {
        frames: feet
            .iter()
            .filter(|f| f.active)
            .map(|f| ContactFrame {
                frame_id: f.frame_id,
                reference: Some(f.reference),
            })
            .collect(),
        baumgarte_alpha: GROUND_ALPHA,
        baumgarte_beta: GROUND_BETA,
    }
}
