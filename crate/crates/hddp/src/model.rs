//! Robot model definition and the declarative model-file loader.
//!
//! A model is a rooted kinematic tree of rigid bodies connected by joints
//! (one optional free-floating root plus revolute joints), with named fixed
//! frames attached to bodies. Models are immutable after loading.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Vector3};
use thiserror::Error;

use crate::dynamics::State;
use crate::math::isometry_from_xyz_rpy;

/// Parent index of the root joint.
pub const WORLD: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    FreeFloating,
}

#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub joint_type: JointType,
    /// Rotation axis in the child body frame (revolute joints).
    pub axis: Vector3<f64>,
    /// Placement of the joint frame in the parent body frame.
    pub parent_frame_transform: Isometry3<f64>,
    pub position_limits: [f64; 2],
    pub velocity_limit: f64,
    pub effort_limit: f64,
    pub actuated: bool,
    /// Parent body index, or [`WORLD`] for the root joint.
    pub parent_body: usize,
    pub child_body: usize,
}

#[derive(Debug, Clone)]
pub struct BodySpec {
    pub name: String,
    pub mass: f64,
    pub com_offset: Vector3<f64>,
    /// Rotational inertia about the body CoM, in body frame.
    pub rotational_inertia: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub name: String,
    pub body: usize,
    /// Placement of the frame in its body frame.
    pub placement: Isometry3<f64>,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub bodies: Vec<BodySpec>,
    /// Joints in file order; joint `i` is the unique joint whose child is
    /// body `i` (the loader enforces this alignment).
    pub joints: Vec<JointSpec>,
    pub frames: Vec<FrameSpec>,
    pub nq: usize,
    pub nv: usize,
    pub nu: usize,
    frame_index: HashMap<String, usize>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("invariant violation in {entity}.{field}: {msg}")]
    Invariant {
        entity: String,
        field: String,
        msg: String,
    },
    #[error("unknown frame '{0}'")]
    UnknownFrame(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RobotModel {
    /// Loads a model from the line-oriented declarative format.
    pub fn load(path: impl AsRef<Path>) -> Result<RobotModel, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses model text. `origin` is used in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<RobotModel, ModelError> {
        let mut bodies: Vec<BodySpec> = Vec::new();
        let mut raw_joints: Vec<(usize, RawJoint)> = Vec::new();
        let mut raw_frames: Vec<(usize, RawFrame)> = Vec::new();
        let mut body_index: HashMap<String, usize> = HashMap::new();

        for (lineno, raw_line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = match raw_line.find('#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ModelError::Parse {
                path: origin.to_string(),
                line: lineno,
                msg,
            };
            let mut tokens = line.split_whitespace();
            let kind = tokens.next().unwrap();
            let name = tokens
                .next()
                .ok_or_else(|| err("missing name".into()))?
                .to_string();
            let mut attrs: HashMap<&str, &str> = HashMap::new();
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got '{tok}'")))?;
                attrs.insert(k, v);
            }
            match kind {
                "body" => {
                    if body_index.contains_key(&name) {
                        return Err(err(format!("duplicate body '{name}'")));
                    }
                    let mass = parse_scalar(attrs.get("mass"), "mass").map_err(&err)?;
                    let com = parse_vec3(attrs.get("com"), "com").map_err(&err)?;
                    let i6 = parse_vecn::<6>(attrs.get("inertia"), "inertia").map_err(&err)?;
                    let inertia = Matrix3::new(
                        i6[0], i6[3], i6[4], i6[3], i6[1], i6[5], i6[4], i6[5], i6[2],
                    );
                    body_index.insert(name.clone(), bodies.len());
                    bodies.push(BodySpec {
                        name,
                        mass,
                        com_offset: com,
                        rotational_inertia: inertia,
                    });
                }
                "joint" => {
                    let jt = match *attrs.get("type").ok_or_else(|| err("missing type".into()))? {
                        "revolute" => JointType::Revolute,
                        "free" => JointType::FreeFloating,
                        other => return Err(err(format!("unknown joint type '{other}'"))),
                    };
                    let parent = attrs
                        .get("parent")
                        .ok_or_else(|| err("missing parent".into()))?
                        .to_string();
                    let child = attrs
                        .get("child")
                        .ok_or_else(|| err("missing child".into()))?
                        .to_string();
                    let xyz = parse_vec3_or(attrs.get("xyz"), Vector3::zeros()).map_err(&err)?;
                    let rpy = parse_vec3_or(attrs.get("rpy"), Vector3::zeros()).map_err(&err)?;
                    let raw = RawJoint {
                        name,
                        joint_type: jt,
                        axis: parse_vec3_or(attrs.get("axis"), Vector3::z()).map_err(&err)?,
                        transform: isometry_from_xyz_rpy(xyz, rpy),
                        limits: match attrs.get("limits") {
                            Some(_) => parse_vecn::<2>(attrs.get("limits"), "limits")
                                .map_err(&err)?
                                .into(),
                            None => [f64::NEG_INFINITY, f64::INFINITY],
                        },
                        vmax: parse_scalar_or(attrs.get("vmax"), f64::INFINITY).map_err(&err)?,
                        taumax: parse_scalar_or(attrs.get("taumax"), f64::INFINITY).map_err(&err)?,
                        actuated: match attrs.get("actuated") {
                            Some(&"true") | None => jt == JointType::Revolute,
                            Some(&"false") => false,
                            Some(other) => {
                                return Err(err(format!("bad actuated value '{other}'")))
                            }
                        },
                        parent,
                        child,
                    };
                    raw_joints.push((lineno, raw));
                }
                "frame" => {
                    let body = attrs
                        .get("body")
                        .ok_or_else(|| err("missing body".into()))?
                        .to_string();
                    let xyz = parse_vec3_or(attrs.get("xyz"), Vector3::zeros()).map_err(&err)?;
                    let rpy = parse_vec3_or(attrs.get("rpy"), Vector3::zeros()).map_err(&err)?;
                    raw_frames.push((
                        lineno,
                        RawFrame {
                            name,
                            body,
                            placement: isometry_from_xyz_rpy(xyz, rpy),
                        },
                    ));
                }
                other => return Err(err(format!("unknown entity '{other}'"))),
            }
        }

        Self::assemble(origin, bodies, body_index, raw_joints, raw_frames)
    }

    fn assemble(
        origin: &str,
        bodies: Vec<BodySpec>,
        body_index: HashMap<String, usize>,
        raw_joints: Vec<(usize, RawJoint)>,
        raw_frames: Vec<(usize, RawFrame)>,
    ) -> Result<RobotModel, ModelError> {
        if raw_joints.len() != bodies.len() {
            return Err(ModelError::Topology(format!(
                "{} bodies but {} joints; every body needs exactly one parent joint",
                bodies.len(),
                raw_joints.len()
            )));
        }

        // Resolve and align: joint i must be the parent joint of body i.
        let mut joints: Vec<Option<JointSpec>> = vec![None; bodies.len()];
        let mut roots = 0usize;
        let mut free_count = 0usize;
        for (lineno, raw) in raw_joints {
            let parent = if raw.parent == "world" {
                roots += 1;
                WORLD
            } else {
                *body_index.get(&raw.parent).ok_or_else(|| ModelError::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("unknown parent body '{}'", raw.parent),
                })?
            };
            let child = *body_index.get(&raw.child).ok_or_else(|| ModelError::Parse {
                path: origin.to_string(),
                line: lineno,
                msg: format!("unknown child body '{}'", raw.child),
            })?;
            if joints[child].is_some() {
                return Err(ModelError::Topology(format!(
                    "body '{}' has more than one parent joint",
                    raw.child
                )));
            }
            if raw.joint_type == JointType::FreeFloating {
                free_count += 1;
                if parent != WORLD {
                    return Err(ModelError::Topology(format!(
                        "free-floating joint '{}' must be the root",
                        raw.name
                    )));
                }
            }
            joints[child] = Some(JointSpec {
                name: raw.name,
                joint_type: raw.joint_type,
                axis: raw.axis,
                parent_frame_transform: raw.transform,
                position_limits: raw.limits,
                velocity_limit: raw.vmax,
                effort_limit: raw.taumax,
                actuated: raw.actuated,
                parent_body: parent,
                child_body: child,
            });
        }
        let joints: Vec<JointSpec> = joints.into_iter().map(|j| j.unwrap()).collect();

        if roots != 1 {
            return Err(ModelError::Topology(format!(
                "expected exactly one root joint, found {roots}"
            )));
        }
        if free_count > 1 {
            return Err(ModelError::Topology(format!(
                "at most one free-floating joint allowed, found {free_count}"
            )));
        }

        // Tree check: walking parents from every body must reach the world
        // without revisiting (no cycles), and parents must precede children
        // in file order so the recursions can run in index order.
        for j in &joints {
            if j.parent_body != WORLD && j.parent_body >= j.child_body {
                return Err(ModelError::Topology(format!(
                    "joint '{}': parent body must be declared before its child",
                    j.name
                )));
            }
        }
        if free_count == 1 && joints[0].joint_type != JointType::FreeFloating {
            return Err(ModelError::Topology(
                "the free-floating joint must be the first joint".into(),
            ));
        }

        let mut frames = Vec::new();
        let mut frame_index = HashMap::new();
        for (lineno, raw) in raw_frames {
            let body = *body_index.get(&raw.body).ok_or_else(|| ModelError::Parse {
                path: origin.to_string(),
                line: lineno,
                msg: format!("unknown body '{}' for frame '{}'", raw.body, raw.name),
            })?;
            if frame_index.contains_key(&raw.name) {
                return Err(ModelError::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("duplicate frame '{}'", raw.name),
                });
            }
            frame_index.insert(raw.name.clone(), frames.len());
            frames.push(FrameSpec {
                name: raw.name,
                body,
                placement: raw.placement,
            });
        }

        let n_rev = joints
            .iter()
            .filter(|j| j.joint_type == JointType::Revolute)
            .count();
        let has_free = free_count == 1;
        let model = RobotModel {
            nq: if has_free { 7 + n_rev } else { n_rev },
            nv: if has_free { 6 + n_rev } else { n_rev },
            nu: joints.iter().filter(|j| j.actuated).count(),
            bodies,
            joints,
            frames,
            frame_index,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        for b in &self.bodies {
            let inv = |field: &str, msg: String| ModelError::Invariant {
                entity: b.name.clone(),
                field: field.into(),
                msg,
            };
            if b.mass < 0.0 {
                return Err(inv("mass", format!("negative mass {}", b.mass)));
            }
            let i = &b.rotational_inertia;
            if (i - i.transpose()).norm() > 1e-12 {
                return Err(inv("inertia", "not symmetric".into()));
            }
            let eig = i.symmetric_eigenvalues();
            let mut p = [eig[0], eig[1], eig[2]];
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if p[0] < -1e-12 {
                return Err(inv("inertia", format!("not PSD (eigenvalue {})", p[0])));
            }
            if p[0] + p[1] < p[2] - 1e-9 {
                return Err(inv(
                    "inertia",
                    "principal moments violate the triangle inequality".into(),
                ));
            }
        }
        for j in &self.joints {
            let inv = |field: &str, msg: String| ModelError::Invariant {
                entity: j.name.clone(),
                field: field.into(),
                msg,
            };
            if j.joint_type == JointType::Revolute {
                if (j.axis.norm() - 1.0).abs() > 1e-12 {
                    return Err(inv("axis", format!("not unit norm ({})", j.axis.norm())));
                }
                if !(j.position_limits[0] < j.position_limits[1]) {
                    return Err(inv("limits", "lower must be < upper".into()));
                }
                if !(j.velocity_limit > 0.0) {
                    return Err(inv("vmax", "must be > 0".into()));
                }
                if j.actuated && !(j.effort_limit > 0.0) {
                    return Err(inv("taumax", "must be > 0 for actuated joints".into()));
                }
            }
        }
        Ok(())
    }

    pub fn has_free_base(&self) -> bool {
        !self.joints.is_empty() && self.joints[0].joint_type == JointType::FreeFloating
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn frame_id(&self, name: &str) -> Result<usize, ModelError> {
        self.frame_index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn body_id(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Revolute joints in q-layout order (skipping the free root if present).
    pub fn revolute_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints
            .iter()
            .filter(|j| j.joint_type == JointType::Revolute)
    }

    /// Index into `q`/`v` joint section for a revolute joint name.
    pub fn revolute_index(&self, name: &str) -> Option<usize> {
        self.revolute_joints().position(|j| j.name == name)
    }

    /// Neutral state: identity base pose, mid-range joint angles, zero
    /// velocity. Unbounded joints sit at zero.
    pub fn neutral_state(&self) -> State {
        let mut q = nalgebra::DVector::zeros(self.nq);
        let mut off = 0;
        if self.has_free_base() {
            q[3] = 1.0; // unit quaternion (w, x, y, z)
            off = 7;
        }
        for j in self.revolute_joints() {
            let [lo, hi] = j.position_limits;
            q[off] = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                0.0
            };
            off += 1;
        }
        State::new(q, nalgebra::DVector::zeros(self.nv))
    }

    /// Effort limits for actuated joints, in control-vector order.
    pub fn effort_limits(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.nu,
            self.joints
                .iter()
                .filter(|j| j.actuated)
                .map(|j| j.effort_limit),
        )
    }
}

struct RawJoint {
    name: String,
    joint_type: JointType,
    axis: Vector3<f64>,
    transform: Isometry3<f64>,
    limits: [f64; 2],
    vmax: f64,
    taumax: f64,
    actuated: bool,
    parent: String,
    child: String,
}

struct RawFrame {
    name: String,
    body: String,
    placement: Isometry3<f64>,
}

fn parse_scalar(v: Option<&&str>, key: &str) -> Result<f64, String> {
    let v = v.ok_or_else(|| format!("missing {key}"))?;
    v.parse().map_err(|_| format!("bad number '{v}' for {key}"))
}

fn parse_scalar_or(v: Option<&&str>, default: f64) -> Result<f64, String> {
    match v {
        Some(s) => s.parse().map_err(|_| format!("bad number '{s}'")),
        None => Ok(default),
    }
}

fn parse_vecn<const N: usize>(v: Option<&&str>, key: &str) -> Result<[f64; N], String> {
    let v = v.ok_or_else(|| format!("missing {key}"))?;
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != N {
        return Err(format!("{key} needs {N} comma-separated numbers"));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.parse().map_err(|_| format!("bad number '{p}' in {key}"))?;
    }
    Ok(out)
}

fn parse_vec3(v: Option<&&str>, key: &str) -> Result<Vector3<f64>, String> {
    parse_vecn::<3>(v, key).map(|a| Vector3::new(a[0], a[1], a[2]))
}

fn parse_vec3_or(v: Option<&&str>, default: Vector3<f64>) -> Result<Vector3<f64>, String> {
    match v {
        Some(_) => parse_vec3(v, ""),
        None => Ok(default),
    }
}
