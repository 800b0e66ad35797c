//! Experiment planning: builds shooting problems for the motion families
//! (walking, fast walking, squatting, vertical and obstacle jumps) from a
//! declarative experiment file. Handles contact phase schedules, swing-foot
//! and CoM references, warm starts, limit checking and the design scaling
//! search.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DVector, Isometry3, Matrix3, Translation3, Vector3};
use thiserror::Error;

use crate::costs::{CostTerm, WrenchConeSpec};
use crate::dynamics::{ContactSet, State, Workspace};
use crate::model::{JointType, RobotModel};
use crate::solver::{KnotKind, KnotModel, NodeModel, ShootingProblem, SolverOptions};

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("model is missing frame '{0}'")]
    MissingFrame(String),
    #[error("model is missing joint '{0}'")]
    MissingJoint(String),
    #[error("timing: {0}")]
    Timing(String),
    #[error("stance geometry: {0}")]
    Stance(String),
    #[error("design scaling: no factor up to {cap} satisfies the limits")]
    ScalingCapExceeded { cap: f64 },
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The supported motion families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Walk,
    FastWalk,
    Squat,
    VerticalJump,
    ObstacleJump,
}

impl Motion {
    pub fn parse(s: &str) -> Option<Motion> {
        match s {
            "walk" => Some(Motion::Walk),
            "fast_walk" => Some(Motion::FastWalk),
            "squat" => Some(Motion::Squat),
            "vertical_jump" => Some(Motion::VerticalJump),
            "obstacle_jump" => Some(Motion::ObstacleJump),
            _ => None,
        }
    }
}

/// Which cost families are active, one flag per column of the motion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintFlags {
    pub foot: bool,
    pub com: bool,
    pub friction: bool,
    pub cop: bool,
    pub joint: bool,
    pub posture: bool,
    pub torque: bool,
}

/// Default flag set of each motion family.
pub fn default_flags(motion: Motion) -> ConstraintFlags {
    match motion {
        Motion::Walk => ConstraintFlags {
            foot: true,
            com: false,
            friction: true,
            cop: true,
            joint: true,
            posture: true,
            torque: true,
        },
        Motion::FastWalk => ConstraintFlags {
            foot: true,
            com: true,
            friction: false,
            cop: false,
            joint: true,
            posture: true,
            torque: true,
        },
        Motion::Squat => ConstraintFlags {
            foot: true,
            com: true,
            friction: true,
            cop: true,
            joint: true,
            posture: true,
            torque: true,
        },
        Motion::VerticalJump => ConstraintFlags {
            foot: true,
            com: false,
            friction: true,
            cop: true,
            joint: true,
            posture: true,
            torque: true,
        },
        Motion::ObstacleJump => ConstraintFlags {
            foot: true,
            com: false,
            friction: true,
            cop: true,
            joint: true,
            posture: false,
            torque: true,
        },
    }
}

/// Scalar weights of the cost families (tunable defaults).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub task: f64,
    pub barrier: f64,
    pub posture: f64,
    pub torque: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            task: 1e3,
            barrier: 1e2,
            posture: 1e-1,
            torque: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    QuasiStatic,
    ComInterpolated,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub motion: Motion,
    /// Travel distance (m); zero for in-place motions.
    pub length: f64,
    /// Step/squat/jump height (m), per the motion table.
    pub height: f64,
    pub total_time: f64,
    pub knot_dt: f64,
    /// Point mass rigidly attached to each hand frame (kg).
    pub payload_kg: f64,
    pub flags: ConstraintFlags,
    pub weights: Weights,
    pub cone: WrenchConeSpec,
    pub warm_start: WarmStart,
    pub solver: SolverOptions,
}

impl ExperimentSpec {
    pub fn new(motion: Motion) -> Self {
        ExperimentSpec {
            name: String::new(),
            motion,
            length: 0.0,
            height: 0.0,
            total_time: 1.0,
            knot_dt: 0.02,
            payload_kg: 0.0,
            flags: default_flags(motion),
            weights: Weights::default(),
            cone: WrenchConeSpec::default(),
            warm_start: WarmStart::QuasiStatic,
            solver: SolverOptions::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GaitError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the sectioned key-value experiment format.
    pub fn parse(text: &str, file: &str) -> Result<Self, GaitError> {
        let err = |line: usize, msg: String| GaitError::Parse {
            file: file.to_string(),
            line,
            msg,
        };
        let mut section = String::new();
        let mut spec: Option<ExperimentSpec> = None;
        // Non-motion keys are deferred so [motion] can appear anywhere.
        let mut pending: Vec<(usize, String, String, String)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| err(line, format!("expected 'key = value', got '{s}'")))?;
            if section == "motion" && key == "kind" {
                let motion = Motion::parse(&value)
                    .ok_or_else(|| err(line, format!("unknown motion '{value}'")))?;
                spec = Some(ExperimentSpec::new(motion));
            } else {
                pending.push((line, section.clone(), key, value));
            }
        }
        let mut spec =
            spec.ok_or_else(|| err(0, "missing [motion] section with 'kind'".into()))?;
        spec.name = Path::new(file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for (line, section, key, value) in pending {
            let fval = || -> Result<f64, GaitError> {
                value
                    .parse::<f64>()
                    .map_err(|_| err(line, format!("invalid number '{value}' for '{key}'")))
            };
            let bval = || -> Result<bool, GaitError> {
                value
                    .parse::<bool>()
                    .map_err(|_| err(line, format!("invalid bool '{value}' for '{key}'")))
            };
            match (section.as_str(), key.as_str()) {
                ("motion", "length") => spec.length = fval()?,
                ("motion", "height") => spec.height = fval()?,
                ("timing", "total_time") => spec.total_time = fval()?,
                ("timing", "knot_dt") => spec.knot_dt = fval()?,
                ("constraints", "foot") => spec.flags.foot = bval()?,
                ("constraints", "com") => spec.flags.com = bval()?,
                ("constraints", "friction") => spec.flags.friction = bval()?,
                ("constraints", "cop") => spec.flags.cop = bval()?,
                ("constraints", "joint") => spec.flags.joint = bval()?,
                ("constraints", "posture") => spec.flags.posture = bval()?,
                ("constraints", "torque") => spec.flags.torque = bval()?,
                ("weights", "task") => spec.weights.task = fval()?,
                ("weights", "barrier") => spec.weights.barrier = fval()?,
                ("weights", "posture") => spec.weights.posture = fval()?,
                ("weights", "torque") => spec.weights.torque = fval()?,
                ("weights", "mu") => spec.cone.mu = fval()?,
                ("weights", "cop_coverage") => spec.cone.coverage = fval()?,
                ("warm_start", "kind") => {
                    spec.warm_start = match value.as_str() {
                        "quasi_static" => WarmStart::QuasiStatic,
                        "com_interpolated" => WarmStart::ComInterpolated,
                        _ => return Err(err(line, format!("unknown warm start '{value}'"))),
                    }
                }
                ("payload", "hand_mass") => spec.payload_kg = fval()?,
                ("solver", "max_iters") => spec.solver.max_iters = fval()? as usize,
                ("solver", "tol") => spec.solver.tol = fval()?,
                ("solver", "reg_init") => spec.solver.reg_init = fval()?,
                ("solver", "alpha_min") => spec.solver.alpha_min = fval()?,
                ("solver", "acceptance_ratio") => spec.solver.acceptance_ratio = fval()?,
                _ => return Err(err(line, format!("unknown key '[{section}] {key}'"))),
            }
        }
        spec.validate(file)?;
        Ok(spec)
    }

    fn validate(&self, file: &str) -> Result<(), GaitError> {
        let knots = self.total_time / self.knot_dt;
        if (knots - knots.round()).abs() > 1e-9 {
            return Err(GaitError::Timing(format!(
                "{file}: total_time {} is not an integer multiple of knot_dt {}",
                self.total_time, self.knot_dt
            )));
        }
        if knots.round() as usize > 10_000 {
            return Err(GaitError::Timing(format!(
                "{file}: {} knots exceed the 10000 cap",
                knots.round()
            )));
        }
        Ok(())
    }

    pub fn knot_count(&self) -> usize {
        (self.total_time / self.knot_dt).round() as usize
    }
}

/// One contact phase: knot count, stance frames and swing-foot references.
#[derive(Debug, Clone)]
pub struct SwingSpec {
    pub frame: String,
    pub start: Isometry3<f64>,
    pub goal: Isometry3<f64>,
    pub apex: f64,
}

#[derive(Debug, Clone)]
pub struct Phase {
    pub knots: usize,
    pub stance: Vec<String>,
    pub swings: Vec<SwingSpec>,
    /// Touchdown boundary: an impulse knot follows this phase.
    pub impulse_after: bool,
}

#[derive(Debug, Clone)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
    pub knot_dt: f64,
}

impl PhaseSchedule {
    pub fn running_knots(&self) -> usize {
        self.phases.iter().map(|p| p.knots).sum()
    }
}

/// Swing-foot reference: smoothstep planar interpolation with a cosine-bump
/// vertical profile peaking `apex` above the higher endpoint at `t = 0.5`.
/// Both profiles have zero slope at the endpoints, so the foot lifts off and
/// touches down with zero reference velocity.
pub fn swing_reference(
    start: &Isometry3<f64>,
    goal: &Isometry3<f64>,
    apex: f64,
    t: f64,
) -> Isometry3<f64> {
    let t = t.clamp(0.0, 1.0);
    let s = t * t * (3.0 - 2.0 * t);
    let p0 = start.translation.vector;
    let p1 = goal.translation.vector;
    let mut p = (1.0 - s) * p0 + s * p1;
    let z_apex = p0.z.max(p1.z) + apex;
    let bump = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t).cos());
    p.z += bump * (z_apex - 0.5 * (p0.z + p1.z));
    let rot = start.rotation.slerp(&goal.rotation, s);
    Isometry3::from_parts(Translation3::from(p), rot)
}

/// Solves the symmetric stance geometry of the leg for a given hip height:
/// hip pitch `alpha` and knee angle `kappa` with the ankle directly below
/// the hip and the foot flat.
///
/// `thigh`, `shank`: segment lengths; `hip_height` excludes the ankle-sole
/// offset. The constraint is `thigh·sin α = shank·sin(κ − α)`.
pub fn leg_stance_angles(
    thigh: f64,
    shank: f64,
    hip_height: f64,
) -> Result<(f64, f64), GaitError> {
    if hip_height >= thigh + shank {
        return Err(GaitError::Stance(format!(
            "hip height {hip_height} not reachable with legs {}",
            thigh + shank
        )));
    }
    let height = |alpha: f64| {
        let beta = (thigh * alpha.sin() / shank).asin();
        thigh * alpha.cos() + shank * beta.cos()
    };
    // height(alpha) decreases monotonically from full extension.
    let (mut lo, mut hi) = (1e-9, std::f64::consts::FRAC_PI_2 - 1e-6);
    if height(lo) < hip_height {
        return Err(GaitError::Stance(format!(
            "hip height {hip_height} above the straight-leg height"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if height(mid) > hip_height {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let beta = (thigh * alpha.sin() / shank).asin();
    Ok((alpha, alpha + beta))
}

/// Frame and joint names the planner relies on; defaults match the shipped
/// robot description.
#[derive(Debug, Clone)]
pub struct PlannerNames {
    pub left_foot: String,
    pub right_foot: String,
    pub left_hand: String,
    pub right_hand: String,
}

impl Default for PlannerNames {
    fn default() -> Self {
        PlannerNames {
            left_foot: "left_foot".into(),
            right_foot: "right_foot".into(),
            left_hand: "left_hand".into(),
            right_hand: "right_hand".into(),
        }
    }
}

/// Geometry constants of the leg chain used by the stance solver.
const THIGH_LEN: f64 = 0.41;
const SHANK_LEN: f64 = 0.42;
const ANKLE_SOLE: f64 = 0.10;
/// Default standing hip height above the ankle (slightly bent knees; the
/// leg chain extends to 0.83).
pub const NOMINAL_HIP_HEIGHT: f64 = 0.82;

/// Symmetric stance state with the soles flat on the ground plane and the
/// hips at `hip_height + ANKLE_SOLE`.
pub fn stance_state(model: &RobotModel, hip_height: f64) -> Result<State, GaitError> {
    let (alpha, kappa) = leg_stance_angles(THIGH_LEN, SHANK_LEN, hip_height)?;
    let mut state = State::new(
        DVector::zeros(model.nq),
        DVector::zeros(model.nv),
    );
    state.q[3] = 1.0;
    state.q[2] = hip_height + ANKLE_SOLE;
    let mut set = |name: &str, value: f64| -> Result<(), GaitError> {
        let k = model
            .revolute_index(name)
            .ok_or_else(|| GaitError::MissingJoint(name.to_string()))?;
        state.q[7 + k] = value;
        Ok(())
    };
    for s in ["l", "r"] {
        set(&format!("hip_{s}_pitch"), alpha)?;
        set(&format!("knee_{s}"), kappa)?;
        set(&format!("ankle_{s}_pitch"), kappa - alpha)?;
    }
    Ok(state)
}

/// Clone of `model` with a point mass rigidly attached to each hand frame.
pub fn apply_hand_payload(
    model: &RobotModel,
    names: &PlannerNames,
    mass_per_hand: f64,
) -> Result<RobotModel, GaitError> {
    let mut out = model.clone();
    if mass_per_hand <= 0.0 {
        return Ok(out);
    }
    for hand in [&names.left_hand, &names.right_hand] {
        let frame_id = out
            .frame_id(hand)
            .map_err(|_| GaitError::MissingFrame(hand.clone()))?;
        let frame = out.frames[frame_id].clone();
        let body = &mut out.bodies[frame.body];
        let p = frame.placement.translation.vector;
        let m0 = body.mass;
        let m1 = mass_per_hand;
        let com = (m0 * body.com_offset + m1 * p) / (m0 + m1);
        // Parallel-axis shift of both contributions onto the combined CoM.
        let shift = |m: f64, c: Vector3<f64>| -> Matrix3<f64> {
            m * (c.norm_squared() * Matrix3::identity() - c * c.transpose())
        };
        body.rotational_inertia = body.rotational_inertia
            + shift(m0, body.com_offset - com)
            + shift(m1, p - com);
        body.com_offset = com;
        body.mass = m0 + m1;
    }
    Ok(out)
}

/// A built experiment: the shooting problem plus the references and
/// bookkeeping the CLI and replay layers need.
pub struct GaitProblem {
    pub problem: ShootingProblem<KnotModel>,
    pub schedule: PhaseSchedule,
    /// Model with payload applied; all knots reference this instance.
    pub model: Arc<RobotModel>,
    pub spec: ExperimentSpec,
    pub names: PlannerNames,
    /// Start time of every node (impulse nodes share the touchdown time).
    pub node_times: Vec<f64>,
    /// Active contact frame names per node.
    pub node_contacts: Vec<Vec<String>>,
    /// Nominal stance used for posture references and warm starts.
    pub nominal: State,
    /// Forward travel of the reference at each node time (m).
    pub node_progress: Vec<f64>,
    /// Ballistic (base height offset, vertical velocity) of the reference
    /// at each node; zero outside flight phases.
    pub node_lift: Vec<(f64, f64)>,
}

fn frame_id(model: &RobotModel, name: &str) -> Result<usize, GaitError> {
    model
        .frame_id(name)
        .map_err(|_| GaitError::MissingFrame(name.to_string()))
}

/// Builds the phase schedule of a motion family.
pub fn build_schedule(
    spec: &ExperimentSpec,
    foot_poses: &HashMap<String, Isometry3<f64>>,
    names: &PlannerNames,
) -> Result<PhaseSchedule, GaitError> {
    let n = spec.knot_count();
    let dt = spec.knot_dt;
    let advance = |pose: &Isometry3<f64>, dx: f64| {
        Isometry3::from_parts(
            Translation3::new(
                pose.translation.vector.x + dx,
                pose.translation.vector.y,
                pose.translation.vector.z,
            ),
            pose.rotation,
        )
    };
    let left = foot_poses[&names.left_foot];
    let right = foot_poses[&names.right_foot];
    let both = vec![names.left_foot.clone(), names.right_foot.clone()];
    let mut phases = Vec::new();
    match spec.motion {
        Motion::Walk | Motion::FastWalk => {
            // (double 15%, single 35%) x 2 of the total time.
            let ds = ((0.15 * n as f64).round() as usize).max(1);
            let ss = n / 2 - ds;
            if ss < 2 || 2 * (ds + ss) > n {
                return Err(GaitError::Timing(format!(
                    "horizon of {n} knots too short for two steps"
                )));
            }
            let trail = n - 2 * (ds + ss);
            phases.push(Phase {
                knots: ds,
                stance: both.clone(),
                swings: vec![],
                impulse_after: false,
            });
            phases.push(Phase {
                knots: ss,
                stance: vec![names.left_foot.clone()],
                swings: vec![SwingSpec {
                    frame: names.right_foot.clone(),
                    start: right,
                    goal: advance(&right, spec.length),
                    apex: spec.height,
                }],
                impulse_after: true,
            });
            phases.push(Phase {
                knots: ds,
                stance: both.clone(),
                swings: vec![],
                impulse_after: false,
            });
            phases.push(Phase {
                knots: ss + trail,
                stance: vec![names.right_foot.clone()],
                swings: vec![SwingSpec {
                    frame: names.left_foot.clone(),
                    start: left,
                    goal: advance(&left, spec.length),
                    apex: spec.height,
                }],
                impulse_after: true,
            });
        }
        Motion::Squat => {
            phases.push(Phase {
                knots: n,
                stance: both.clone(),
                swings: vec![],
                impulse_after: false,
            });
        }
        Motion::VerticalJump => {
            let t_flight = 2.0 * (2.0 * spec.height / crate::dynamics::GRAVITY).sqrt();
            let n_flight = ((t_flight / dt).round() as usize).max(1);
            if n_flight + 4 > n {
                return Err(GaitError::Timing(format!(
                    "flight of {n_flight} knots does not fit in {n}"
                )));
            }
            let rest = n - n_flight;
            let n_crouch = (rest * 11) / 20;
            let n_recover = rest - n_crouch;
            phases.push(Phase {
                knots: n_crouch,
                stance: both.clone(),
                swings: vec![],
                impulse_after: false,
            });
            phases.push(Phase {
                knots: n_flight,
                stance: vec![],
                swings: vec![
                    SwingSpec {
                        frame: names.left_foot.clone(),
                        start: left,
                        goal: left,
                        apex: spec.height,
                    },
                    SwingSpec {
                        frame: names.right_foot.clone(),
                        start: right,
                        goal: right,
                        apex: spec.height,
                    },
                ],
                impulse_after: true,
            });
            phases.push(Phase {
                knots: n_recover,
                stance: both.clone(),
                swings: vec![],
                impulse_after: false,
            });
        }
        Motion::ObstacleJump => {
            // Two forward jumps covering half the length each.
            let t_flight = 2.0 * (2.0 * spec.height / crate::dynamics::GRAVITY).sqrt();
            let n_flight = ((t_flight / dt).round() as usize).max(1);
            if 2 * n_flight + 6 > n {
                return Err(GaitError::Timing(format!(
                    "two flights of {n_flight} knots do not fit in {n}"
                )));
            }
            let rest = n - 2 * n_flight;
            let n_ds = rest / 3;
            let n_last = rest - 2 * n_ds;
            let hop = spec.length / 2.0;
            let mut lpos = left;
            let mut rpos = right;
            for j in 0..2 {
                phases.push(Phase {
                    knots: n_ds,
                    stance: both.clone(),
                    swings: vec![],
                    impulse_after: false,
                });
                let lgoal = advance(&lpos, hop);
                let rgoal = advance(&rpos, hop);
                phases.push(Phase {
                    knots: n_flight,
                    stance: vec![],
                    swings: vec![
                        SwingSpec {
                            frame: names.left_foot.clone(),
                            start: lpos,
                            goal: lgoal,
                            apex: spec.height,
                        },
                        SwingSpec {
                            frame: names.right_foot.clone(),
                            start: rpos,
                            goal: rgoal,
                            apex: spec.height,
                        },
                    ],
                    impulse_after: true,
                });
                lpos = lgoal;
                rpos = rgoal;
                if j == 1 {
                    phases.push(Phase {
                        knots: n_last,
                        stance: both.clone(),
                        swings: vec![],
                        impulse_after: false,
                    });
                }
            }
        }
    }
    Ok(PhaseSchedule {
        phases,
        knot_dt: dt,
    })
}

/// CoM reference at time `t`, when the CoM task is active.
fn com_reference(
    spec: &ExperimentSpec,
    com0: &Vector3<f64>,
    t: f64,
) -> Vector3<f64> {
    let mut c = *com0;
    match spec.motion {
        Motion::Walk | Motion::FastWalk => {
            c.x += spec.length * (t / spec.total_time).clamp(0.0, 1.0);
        }
        Motion::Squat => {
            let phase = 2.0 * std::f64::consts::PI * (t / spec.total_time).clamp(0.0, 1.0);
            c.z -= 0.5 * spec.height * (1.0 - phase.cos());
        }
        Motion::VerticalJump | Motion::ObstacleJump => {}
    }
    c
}

/// Forward travel of the reference posture at time `t`.
fn progress(spec: &ExperimentSpec, t: f64) -> f64 {
    match spec.motion {
        Motion::Walk | Motion::FastWalk | Motion::ObstacleJump => {
            spec.length * (t / spec.total_time).clamp(0.0, 1.0)
        }
        Motion::Squat | Motion::VerticalJump => 0.0,
    }
}

/// Nominal stance shifted forward by `dx` and, during flight, lifted along
/// the ballistic arc: `lift` is the (base height offset, vertical velocity)
/// pair of the phase profile.
fn guided_state(nominal: &State, dx: f64, lift: (f64, f64)) -> State {
    let mut s = nominal.clone();
    s.q[0] += dx;
    s.q[2] += lift.0;
    s.v[2] = lift.1;
    s
}

/// Per-element posture weights: free base x/y, torso joints scaled by
/// `torso_scale`, everything else unit.
fn posture_weights(model: &RobotModel, torso_scale: f64) -> DVector<f64> {
    let nv = model.nv;
    let base = if model.has_free_base() { 6 } else { 0 };
    let mut w = DVector::from_element(2 * nv, 1.0);
    w[0] = 0.0;
    w[1] = 0.0;
    for (k, j) in model.revolute_joints().enumerate() {
        if j.name.starts_with("torso_") {
            w[base + k] = torso_scale;
            w[nv + base + k] = torso_scale;
        }
    }
    w
}

/// Builds the shooting problem of an experiment.
pub fn build_problem(
    base_model: &RobotModel,
    spec: &ExperimentSpec,
) -> Result<GaitProblem, GaitError> {
    let names = PlannerNames::default();
    let model = Arc::new(apply_hand_payload(base_model, &names, spec.payload_kg)?);
    let nominal = stance_state(&model, NOMINAL_HIP_HEIGHT)?;

    let mut ws = Workspace::new(&model);
    ws.fk(&model, &nominal.q);
    let lf = frame_id(&model, &names.left_foot)?;
    let rf = frame_id(&model, &names.right_foot)?;
    let mut foot_poses = HashMap::new();
    foot_poses.insert(names.left_foot.clone(), ws.frame_placement(&model, lf));
    foot_poses.insert(names.right_foot.clone(), ws.frame_placement(&model, rf));
    let com0 = ws.com(&model);

    let schedule = build_schedule(spec, &foot_poses, &names)?;
    let w = spec.weights;
    // Squatting must come from the legs; a soft torso would fold over to
    // lower the CoM instead and run into its pitch limit.
    let torso_scale = if spec.motion == Motion::Squat { 20.0 } else { 1.0 };
    let pw = posture_weights(&model, torso_scale);

    let mut nodes: Vec<KnotModel> = Vec::new();
    let mut node_times = Vec::new();
    let mut node_contacts = Vec::new();
    let mut node_progress = Vec::new();
    let mut node_lift = Vec::new();
    // Feet positions pinned by the current phase, advanced at touchdowns.
    let mut pinned = foot_poses.clone();
    let mut t = 0.0;

    for phase in &schedule.phases {
        let stance_ids: Vec<usize> = phase
            .stance
            .iter()
            .map(|f| frame_id(&model, f))
            .collect::<Result<_, _>>()?;
        // Ballistic base profile of a flight phase: take-off velocity that
        // brings the base back to the ground when the phase ends.
        let t_flight = phase.knots as f64 * spec.knot_dt;
        let v_takeoff = 0.5 * crate::dynamics::GRAVITY * t_flight;
        for k in 0..phase.knots {
            let frac = (k as f64 + 1.0) / phase.knots as f64;
            let lift = if stance_ids.is_empty() {
                let tau = (k as f64 + 1.0) * spec.knot_dt;
                (
                    v_takeoff * tau - 0.5 * crate::dynamics::GRAVITY * tau * tau,
                    v_takeoff - crate::dynamics::GRAVITY * tau,
                )
            } else {
                (0.0, 0.0)
            };
            let mut terms = Vec::new();
            if spec.flags.foot {
                for f in &phase.stance {
                    terms.push(CostTerm::FramePlacement {
                        weight: w.task,
                        frame_id: frame_id(&model, f)?,
                        reference: pinned[f],
                    });
                }
                for s in &phase.swings {
                    terms.push(CostTerm::FramePlacement {
                        weight: w.task,
                        frame_id: frame_id(&model, &s.frame)?,
                        reference: swing_reference(&s.start, &s.goal, s.apex, frac),
                    });
                }
            }
            if spec.flags.com {
                terms.push(CostTerm::ComTracking {
                    weight: w.task,
                    reference: com_reference(spec, &com0, t + spec.knot_dt),
                });
            }
            if spec.flags.friction && !stance_ids.is_empty() {
                terms.push(CostTerm::FrictionConeBarrier {
                    weight: w.barrier,
                    spec: spec.cone,
                });
            }
            if spec.flags.cop && !stance_ids.is_empty() {
                terms.push(CostTerm::CopBarrier {
                    weight: w.barrier,
                    spec: spec.cone,
                });
            }
            if spec.flags.joint {
                terms.push(CostTerm::JointLimitBarrier { weight: w.barrier });
            }
            let prog = progress(spec, t + spec.knot_dt);
            if spec.flags.posture {
                terms.push(CostTerm::PostureReg {
                    weight: w.posture,
                    reference: guided_state(&nominal, prog, lift),
                    element_weights: pw.clone(),
                });
            }
            if spec.flags.torque {
                terms.push(CostTerm::ControlReg { weight: w.torque });
            }
            let mut contacts = ContactSet::from_frames(&stance_ids);
            for (cf, f) in contacts.frames.iter_mut().zip(&phase.stance) {
                cf.reference = Some(pinned[f]);
            }
            nodes.push(KnotModel::running(
                model.clone(),
                spec.knot_dt,
                contacts,
                terms,
            ));
            node_times.push(t);
            node_contacts.push(phase.stance.clone());
            node_progress.push(prog);
            node_lift.push(lift);
            t += spec.knot_dt;
        }
        // Touchdown: pin the swung feet at their goals, then an impulse knot
        // over the full new contact set.
        if phase.impulse_after {
            for s in &phase.swings {
                pinned.insert(s.frame.clone(), s.goal);
            }
            let all: Vec<String> = pinned.keys().cloned().collect();
            let ids: Vec<usize> = all
                .iter()
                .map(|f| frame_id(&model, f))
                .collect::<Result<_, _>>()?;
            let mut terms = Vec::new();
            if spec.flags.foot {
                for f in &all {
                    terms.push(CostTerm::FramePlacement {
                        weight: w.task,
                        frame_id: frame_id(&model, f)?,
                        reference: pinned[f],
                    });
                }
            }
            if spec.flags.joint {
                terms.push(CostTerm::JointLimitBarrier { weight: w.barrier });
            }
            let prog = progress(spec, t);
            if spec.flags.posture {
                terms.push(CostTerm::PostureReg {
                    weight: w.posture,
                    reference: guided_state(&nominal, prog, (0.0, 0.0)),
                    element_weights: pw.clone(),
                });
            }
            let mut contacts = ContactSet::from_frames(&ids);
            for (cf, f) in contacts.frames.iter_mut().zip(&all) {
                cf.reference = Some(pinned[f]);
            }
            nodes.push(KnotModel::impulse(model.clone(), contacts, terms));
            node_times.push(t);
            node_contacts.push(all);
            node_progress.push(prog);
            node_lift.push((0.0, 0.0));
        } else {
            for s in &phase.swings {
                pinned.insert(s.frame.clone(), s.goal);
            }
        }
    }

    // Terminal: feet at their final placements, posture at rest.
    let mut terminal_terms = Vec::new();
    for f in [&names.left_foot, &names.right_foot] {
        terminal_terms.push(CostTerm::FramePlacement {
            weight: w.task,
            frame_id: frame_id(&model, f)?,
            reference: pinned[f],
        });
    }
    if spec.flags.com {
        terminal_terms.push(CostTerm::ComTracking {
            weight: w.task,
            reference: com_reference(spec, &com0, spec.total_time),
        });
    }
    terminal_terms.push(CostTerm::PostureReg {
        weight: 10.0 * w.posture.max(1e-2),
        reference: guided_state(&nominal, progress(spec, spec.total_time), (0.0, 0.0)),
        element_weights: DVector::from_element(2 * model.nv, 1.0),
    });
    let terminal = KnotModel::terminal(model.clone(), terminal_terms);

    let problem = ShootingProblem {
        initial_state: nominal.clone(),
        nodes,
        terminal,
    };
    Ok(GaitProblem {
        problem,
        schedule,
        model,
        spec: spec.clone(),
        names,
        node_times,
        node_contacts,
        nominal,
        node_progress,
        node_lift,
    })
}

/// Gravity-compensation torques of a static pose under the given contacts:
/// least-norm contact wrenches from the unactuated rows, torques from the
/// actuated rows.
pub fn gravity_compensation(
    model: &RobotModel,
    ws: &mut Workspace,
    state: &State,
    contact_ids: &[usize],
) -> DVector<f64> {
    let nv = model.nv;
    let zero_v = DVector::zeros(nv);
    let h = ws.bias_forces(model, &state.q, &zero_v);
    if contact_ids.is_empty() || !model.has_free_base() {
        // Fixed base or flight: torques equal the actuated bias rows.
        let mut tau = DVector::zeros(model.nu);
        let mut iu = 0;
        let mut iv = if model.has_free_base() { 6 } else { 0 };
        for j in model.joints.iter().filter(|j| j.joint_type == JointType::Revolute) {
            if j.actuated {
                tau[iu] = if contact_ids.is_empty() && model.has_free_base() {
                    0.0
                } else {
                    h[iv]
                };
                iu += 1;
            }
            iv += 1;
        }
        return tau;
    }
    ws.fk(model, &state.q);
    let mut jac = nalgebra::DMatrix::zeros(6 * contact_ids.len(), nv);
    for (c, &f) in contact_ids.iter().enumerate() {
        jac.view_mut((6 * c, 0), (6, nv))
            .copy_from(&ws.frame_jacobian_local(model, f));
    }
    let jt = jac.transpose();
    let base_rows = jt.rows(0, 6).into_owned();
    let svd = base_rows.svd(true, true);
    let lambda = svd
        .solve(&h.rows(0, 6).into_owned(), 1e-10)
        .unwrap_or_else(|_| DVector::zeros(6 * contact_ids.len()));
    let full = &jt * &lambda;
    let mut tau = DVector::zeros(model.nu);
    let mut iu = 0;
    for (i, j) in model.joints.iter().enumerate() {
        if j.actuated {
            let iv = 6 + (i - 1); // revolute joints follow the free root
            tau[iu] = (h[iv] - full[iv]).clamp(-j.effort_limit, j.effort_limit);
            iu += 1;
        }
    }
    tau
}

/// Warm-start trajectories per the experiment's warm-start policy.
pub fn warm_start(gait: &GaitProblem) -> (Vec<State>, Vec<DVector<f64>>) {
    let model = &gait.model;
    let mut ws = Workspace::new(model);
    let n = gait.problem.nodes.len();
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    for i in 0..=n {
        let t_progress = if gait.spec.warm_start == WarmStart::ComInterpolated {
            if i < n {
                gait.node_progress[i]
            } else {
                progress(&gait.spec, gait.spec.total_time)
            }
        } else {
            0.0
        };
        // The ballistic lift stays in the posture references only; seeding
        // the states with it opens velocity defects the rollout cannot
        // close without detours through high-cost regions.
        xs.push(guided_state(&gait.nominal, t_progress, (0.0, 0.0)));
    }
    for i in 0..n {
        let node = &gait.problem.nodes[i];
        let u = match node.kind {
            KnotKind::Running { .. } => {
                let ids: Vec<usize> = node.contacts.frames.iter().map(|c| c.frame_id).collect();
                gravity_compensation(model, &mut ws, &xs[i], &ids)
            }
            _ => DVector::zeros(node.nu()),
        };
        us.push(u);
    }
    (xs, us)
}

/// The solved trajectory on the regular knot grid: zero-duration impulse
/// rows are dropped (the state after a touchdown is the next knot's state),
/// and wrenches are mapped onto the `[left_foot, right_foot]` columns.
pub fn knot_trajectory(
    gait: &GaitProblem,
    sol: &crate::solver::Solution<State>,
) -> KnotTrajectory {
    let contact_names = vec![gait.names.left_foot.clone(), gait.names.right_foot.clone()];
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut wrenches = Vec::new();
    let n = gait.problem.nodes.len();
    for i in 0..n {
        if matches!(gait.problem.nodes[i].kind, crate::solver::KnotKind::Impulse) {
            continue;
        }
        times.push(gait.node_times[i]);
        states.push(sol.states[i].clone());
        controls.push(sol.controls[i].clone());
        let mut row = vec![None; contact_names.len()];
        for (k, frame) in gait.node_contacts[i].iter().enumerate() {
            if let Some(col) = contact_names.iter().position(|f| f == frame) {
                row[col] = Some(sol.wrenches[i][k]);
            }
        }
        wrenches.push(row);
    }
    times.push(gait.spec.total_time);
    states.push(sol.states[n].clone());
    KnotTrajectory {
        contact_names,
        times,
        states,
        controls,
        wrenches,
    }
}

/// See [`knot_trajectory`].
pub struct KnotTrajectory {
    pub contact_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    pub wrenches: Vec<Vec<Option<crate::math::Force>>>,
}

/// Which limit family a design-scaling search targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Position,
    Velocity,
    Torque,
}

impl LimitKind {
    pub fn parse(s: &str) -> Option<LimitKind> {
        match s {
            "position" | "pos" => Some(LimitKind::Position),
            "velocity" | "vel" => Some(LimitKind::Velocity),
            "torque" | "tau" => Some(LimitKind::Torque),
            _ => None,
        }
    }
}

/// Worst limit ratios of one joint over a trajectory (ratio ≤ 1 passes).
#[derive(Debug, Clone)]
pub struct LimitRow {
    pub joint: String,
    pub pos_ratio: f64,
    pub vel_ratio: f64,
    pub torque_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct LimitReport {
    pub rows: Vec<LimitRow>,
}

impl LimitReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| {
            r.pos_ratio <= 1.0 + 1e-9 && r.vel_ratio <= 1.0 + 1e-9 && r.torque_ratio <= 1.0 + 1e-9
        })
    }

    pub fn violations(&self) -> Vec<(String, LimitKind, f64)> {
        let mut v = Vec::new();
        for r in &self.rows {
            if r.pos_ratio > 1.0 + 1e-9 {
                v.push((r.joint.clone(), LimitKind::Position, r.pos_ratio));
            }
            if r.torque_ratio > 1.0 + 1e-9 {
                v.push((r.joint.clone(), LimitKind::Torque, r.torque_ratio));
            }
            if r.vel_ratio > 1.0 + 1e-9 {
                v.push((r.joint.clone(), LimitKind::Velocity, r.vel_ratio));
            }
        }
        v
    }
}

/// Per-joint worst position/velocity/torque ratios of a trajectory.
pub fn check_limits(
    model: &RobotModel,
    states: &[State],
    controls: &[DVector<f64>],
) -> LimitReport {
    let base = if model.has_free_base() { 6 } else { 0 };
    let qoff = if model.has_free_base() { 7 } else { 0 };
    let mut rows = Vec::new();
    let mut iu = 0;
    for (k, j) in model.revolute_joints().enumerate() {
        let [lo, hi] = j.position_limits;
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut pos: f64 = 0.0;
        let mut vel: f64 = 0.0;
        let mut tau: f64 = 0.0;
        for s in states {
            if half.is_finite() && half > 0.0 {
                pos = pos.max((s.q[qoff + k] - mid).abs() / half);
            }
            if j.velocity_limit.is_finite() {
                vel = vel.max(s.v[base + k].abs() / j.velocity_limit);
            }
        }
        if j.actuated {
            for u in controls {
                if u.len() > iu && j.effort_limit.is_finite() {
                    tau = tau.max(u[iu].abs() / j.effort_limit);
                }
            }
        }
        rows.push(LimitRow {
            joint: j.name.clone(),
            pos_ratio: pos,
            vel_ratio: vel,
            torque_ratio: tau,
        });
        if j.actuated {
            iu += 1;
        }
    }
    LimitReport { rows }
}

/// Result of one design-scaling probe.
#[derive(Debug, Clone)]
pub struct ScalingProbe {
    pub factor: f64,
    pub converged: bool,
    pub feasible: bool,
    pub worst_ratio: f64,
}

/// Scales the named joints' limit of the given kind step by step until the
/// solved trajectory respects all limits.
pub fn design_scaling_search(
    base_model: &RobotModel,
    spec: &ExperimentSpec,
    joint_pattern: &str,
    kind: LimitKind,
    factor_step: f64,
    cap: f64,
) -> Result<(f64, Vec<ScalingProbe>), GaitError> {
    let mut probes = Vec::new();
    let mut factor = 1.0;
    while factor <= cap + 1e-9 {
        let mut model = base_model.clone();
        for j in model.joints.iter_mut() {
            if j.joint_type == JointType::Revolute && j.name.contains(joint_pattern) {
                match kind {
                    LimitKind::Position => {
                        let mid = 0.5 * (j.position_limits[0] + j.position_limits[1]);
                        let half = 0.5 * (j.position_limits[1] - j.position_limits[0]);
                        j.position_limits = [mid - factor * half, mid + factor * half];
                    }
                    LimitKind::Velocity => j.velocity_limit *= factor,
                    LimitKind::Torque => j.effort_limit *= factor,
                }
            }
        }
        let gait = build_problem(&model, spec)?;
        let (xs, us) = warm_start(&gait);
        let sol = crate::solver::solve(&gait.problem, &xs, &us, &spec.solver)?;
        let knots = knot_trajectory(&gait, &sol);
        let report = check_limits(&gait.model, &knots.states, &knots.controls);
        let worst = report
            .rows
            .iter()
            .map(|r| r.pos_ratio.max(r.vel_ratio).max(r.torque_ratio))
            .fold(0.0, f64::max);
        let feasible = sol.converged() && report.passes();
        probes.push(ScalingProbe {
            factor,
            converged: sol.converged(),
            feasible,
            worst_ratio: worst,
        });
        if feasible {
            return Ok((factor, probes));
        }
        factor += factor_step;
    }
    Err(GaitError::ScalingCapExceeded { cap })
}
