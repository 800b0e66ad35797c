//! Rigid-body algorithms on the kinematic tree: forward kinematics, frame
//! Jacobians, joint-space inertia (CRBA), bias forces (RNEA), contact-
//! constrained forward dynamics via the KKT system, impulse dynamics, and
//! manifold integration of the state.
//!
//! All quantities follow the conventions of [`crate::math`]: 6D vectors are
//! `[linear; angular]`, per-body quantities are expressed in body-local
//! coordinates at the body origin.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::math::{
    act_force, act_motion_inv, cross_force, cross_motion, motion, quat_exp, quat_log, Force,
    Motion, SpatialInertia,
};
use crate::model::{JointType, RobotModel, WORLD};

pub const GRAVITY: f64 = 9.81;

/// Floating-base state: configuration `q` and tangent velocity `v`.
///
/// Layout with a free base: `q = [p(3), quat(w,x,y,z), joint angles]`,
/// `v = [linear(3), angular(3), joint rates]` with the base velocity in
/// body-local coordinates. Fixed-base models drop the first 7/6 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl State {
    /// Builds a state, renormalizing the base quaternion if present.
    pub fn new(mut q: DVector<f64>, v: DVector<f64>) -> Self {
        if q.len() >= 7 && q.len() == v.len() + 1 {
            let n = (q[3] * q[3] + q[4] * q[4] + q[5] * q[5] + q[6] * q[6]).sqrt();
            if n > 0.0 {
                for k in 3..7 {
                    q[k] /= n;
                }
            }
        }
        State { q, v }
    }

    pub fn base_pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.q[0], self.q[1], self.q[2]),
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                self.q[3], self.q[4], self.q[5], self.q[6],
            )),
        )
    }
}

/// Set of frames in rigid 6D contact, with optional reference placements and
/// Baumgarte stabilization gains (both default to the pure constraint).
#[derive(Debug, Clone, Default)]
pub struct ContactSet {
    pub frames: Vec<ContactFrame>,
    pub baumgarte_alpha: f64,
    pub baumgarte_beta: f64,
}

#[derive(Debug, Clone)]
pub struct ContactFrame {
    pub frame_id: usize,
    pub reference: Option<Isometry3<f64>>,
}

impl ContactSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_frames(ids: &[usize]) -> Self {
        ContactSet {
            frames: ids
                .iter()
                .map(|&frame_id| ContactFrame {
                    frame_id,
                    reference: None,
                })
                .collect(),
            baumgarte_alpha: 0.0,
            baumgarte_beta: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Result of the contact-constrained forward dynamics.
#[derive(Debug, Clone)]
pub struct ContactDynamicsResult {
    pub vdot: DVector<f64>,
    /// One 6-vector `[force; torque]` per active contact, in contact frame.
    pub wrenches: Vec<Force>,
}

/// Result of the impulse dynamics at a contact switch.
#[derive(Debug, Clone)]
pub struct ImpulseResult {
    pub v_plus: DVector<f64>,
    /// Contact impulses (N s / N m s), in contact frame.
    pub impulses: Vec<Force>,
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("contact Jacobian stack is rank deficient (rank {rank} of {rows} rows)")]
    SingularContact { rank: usize, rows: usize },
    #[error("inertia matrix is not positive definite")]
    SingularInertia,
}

/// Reusable per-call buffers plus model index tables. Single-threaded;
/// distinct workspaces may run in parallel over different knots.
pub struct Workspace {
    nb: usize,
    nv: usize,
    parent: Vec<usize>,
    /// Velocity-layout start index per joint.
    idx_v: Vec<usize>,
    ndof: Vec<usize>,
    inertias: Vec<SpatialInertia>,
    // Per-body buffers, filled by the kinematics passes.
    x_parent: Vec<Isometry3<f64>>,
    pub placements: Vec<Isometry3<f64>>,
    v_loc: Vec<Motion>,
    a_loc: Vec<Motion>,
    f_loc: Vec<Force>,
    ic: Vec<SpatialInertia>,
}

impl Workspace {
    pub fn new(model: &RobotModel) -> Self {
        let nb = model.bodies.len();
        let mut idx_v = Vec::with_capacity(nb);
        let mut ndof = Vec::with_capacity(nb);
        let mut off = 0;
        for j in &model.joints {
            let n = match j.joint_type {
                JointType::FreeFloating => 6,
                JointType::Revolute => 1,
            };
            idx_v.push(off);
            ndof.push(n);
            off += n;
        }
        debug_assert_eq!(off, model.nv);
        Workspace {
            nb,
            nv: model.nv,
            parent: model.joints.iter().map(|j| j.parent_body).collect(),
            idx_v,
            ndof,
            inertias: model
                .bodies
                .iter()
                .map(|b| {
                    SpatialInertia::from_com_inertia(b.mass, b.com_offset, b.rotational_inertia)
                })
                .collect(),
            x_parent: vec![Isometry3::identity(); nb],
            placements: vec![Isometry3::identity(); nb],
            v_loc: vec![Motion::zeros(); nb],
            a_loc: vec![Motion::zeros(); nb],
            f_loc: vec![Force::zeros(); nb],
            ic: vec![SpatialInertia::zero(); nb],
        }
    }

    /// Motion subspace column `a` of joint `i`, in child body coordinates.
    fn subspace_col(&self, model: &RobotModel, i: usize, a: usize) -> Motion {
        match model.joints[i].joint_type {
            JointType::FreeFloating => {
                let mut m = Motion::zeros();
                m[a] = 1.0;
                m
            }
            JointType::Revolute => motion(Vector3::zeros(), model.joints[i].axis),
        }
    }

    /// Joint transform and local joint velocity from `q`, `v` slices.
    fn joint_kinematics(
        &self,
        model: &RobotModel,
        i: usize,
        q: &DVector<f64>,
        v: Option<&DVector<f64>>,
    ) -> (Isometry3<f64>, Motion) {
        let iv = self.idx_v[i];
        match model.joints[i].joint_type {
            JointType::FreeFloating => {
                let pose = Isometry3::from_parts(
                    Translation3::new(q[0], q[1], q[2]),
                    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        q[3], q[4], q[5], q[6],
                    )),
                );
                let vj = match v {
                    Some(v) => motion(
                        Vector3::new(v[0], v[1], v[2]),
                        Vector3::new(v[3], v[4], v[5]),
                    ),
                    None => Motion::zeros(),
                };
                (pose, vj)
            }
            JointType::Revolute => {
                let qi = if model.has_free_base() { 7 + iv - 6 } else { iv };
                let rot = UnitQuaternion::from_scaled_axis(model.joints[i].axis * q[qi]);
                let vj = match v {
                    Some(v) => motion(Vector3::zeros(), model.joints[i].axis * v[iv]),
                    None => Motion::zeros(),
                };
                (Isometry3::from_parts(Translation3::identity(), rot), vj)
            }
        }
    }

    /// First kinematics pass: world placements (and per-joint transforms).
    pub fn fk(&mut self, model: &RobotModel, q: &DVector<f64>) {
        for i in 0..self.nb {
            let (xj, _) = self.joint_kinematics(model, i, q, None);
            let xp = model.joints[i].parent_frame_transform * xj;
            self.x_parent[i] = xp;
            self.placements[i] = if self.parent[i] == WORLD {
                xp
            } else {
                self.placements[self.parent[i]] * xp
            };
        }
    }

    /// Velocity pass (requires `fk`). Fills body-local velocities.
    pub fn velocities(&mut self, model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) {
        for i in 0..self.nb {
            let (_, vj) = self.joint_kinematics(model, i, q, Some(v));
            let vp = if self.parent[i] == WORLD {
                Motion::zeros()
            } else {
                act_motion_inv(&self.x_parent[i], &self.v_loc[self.parent[i]])
            };
            self.v_loc[i] = vp + vj;
        }
    }

    /// Bias-acceleration pass with zero joint accelerations and no gravity
    /// (requires `fk` and `velocities`). Used for the contact drift.
    fn bias_accelerations(&mut self, model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) {
        for i in 0..self.nb {
            let (_, vj) = self.joint_kinematics(model, i, q, Some(v));
            let ap = if self.parent[i] == WORLD {
                Motion::zeros()
            } else {
                act_motion_inv(&self.x_parent[i], &self.a_loc[self.parent[i]])
            };
            self.a_loc[i] = ap + cross_motion(&self.v_loc[i], &vj);
        }
    }

    /// World placement of a named frame (requires `fk`).
    pub fn frame_placement(&self, model: &RobotModel, frame_id: usize) -> Isometry3<f64> {
        let f = &model.frames[frame_id];
        self.placements[f.body] * f.placement
    }

    /// Local-world-aligned frame Jacobian: `J v` is the 6D spatial velocity
    /// of the frame with world-aligned axes at the frame origin.
    pub fn frame_jacobian_lwa(&self, model: &RobotModel, frame_id: usize) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6, self.nv);
        let p_f = self.frame_placement(model, frame_id).translation.vector;
        let mut body = model.frames[frame_id].body;
        loop {
            let iv = self.idx_v[body];
            let r = self.placements[body].rotation;
            let p_b = self.placements[body].translation.vector;
            match model.joints[body].joint_type {
                JointType::FreeFloating => {
                    for k in 0..3 {
                        let axis = r * Vector3::ith(k, 1.0);
                        // Linear base coordinates.
                        jac.fixed_view_mut::<3, 1>(0, iv + k).copy_from(&axis);
                        // Angular base coordinates.
                        let w = axis;
                        let l = w.cross(&(p_f - p_b));
                        jac.fixed_view_mut::<3, 1>(0, iv + 3 + k).copy_from(&l);
                        jac.fixed_view_mut::<3, 1>(3, iv + 3 + k).copy_from(&w);
                    }
                }
                JointType::Revolute => {
                    let w = r * model.joints[body].axis;
                    let l = w.cross(&(p_f - p_b));
                    jac.fixed_view_mut::<3, 1>(0, iv).copy_from(&l);
                    jac.fixed_view_mut::<3, 1>(3, iv).copy_from(&w);
                }
            }
            if self.parent[body] == WORLD {
                break;
            }
            body = self.parent[body];
        }
        jac
    }

    /// Frame Jacobian in the frame's own coordinates.
    pub fn frame_jacobian_local(&self, model: &RobotModel, frame_id: usize) -> DMatrix<f64> {
        let mut jac = self.frame_jacobian_lwa(model, frame_id);
        let rt = self
            .frame_placement(model, frame_id)
            .rotation
            .inverse()
            .to_rotation_matrix();
        for c in 0..self.nv {
            let l = rt * Vector3::new(jac[(0, c)], jac[(1, c)], jac[(2, c)]);
            let a = rt * Vector3::new(jac[(3, c)], jac[(4, c)], jac[(5, c)]);
            jac.fixed_view_mut::<3, 1>(0, c).copy_from(&l);
            jac.fixed_view_mut::<3, 1>(3, c).copy_from(&a);
        }
        jac
    }

    /// Frame spatial velocity in frame coordinates (requires `velocities`).
    pub fn frame_velocity_local(&self, model: &RobotModel, frame_id: usize) -> Motion {
        let f = &model.frames[frame_id];
        act_motion_inv(&f.placement, &self.v_loc[f.body])
    }

    /// Contact drift `Jdot v` of a frame in frame coordinates (requires the
    /// bias-acceleration pass).
    fn frame_drift_local(&self, model: &RobotModel, frame_id: usize) -> Motion {
        let f = &model.frames[frame_id];
        act_motion_inv(&f.placement, &self.a_loc[f.body])
    }

    /// Joint-space inertia matrix via the composite-rigid-body algorithm.
    pub fn mass_matrix(&mut self, model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
        self.fk(model, q);
        let mut m = DMatrix::zeros(self.nv, self.nv);
        for i in 0..self.nb {
            self.ic[i] = self.inertias[i];
        }
        for i in (0..self.nb).rev() {
            let ndof_i = self.ndof[i];
            // Force columns generated by the composite inertia of subtree i.
            let mut fcols: Vec<Force> = (0..ndof_i)
                .map(|a| self.ic[i].apply(&self.subspace_col(model, i, a)))
                .collect();
            for a in 0..ndof_i {
                for b in 0..ndof_i {
                    m[(self.idx_v[i] + b, self.idx_v[i] + a)] =
                        self.subspace_col(model, i, b).dot(&fcols[a]);
                }
            }
            let mut j = i;
            while self.parent[j] != WORLD {
                for f in fcols.iter_mut() {
                    *f = act_force(&self.x_parent[j], f);
                }
                j = self.parent[j];
                for a in 0..ndof_i {
                    for b in 0..self.ndof[j] {
                        let val = self.subspace_col(model, j, b).dot(&fcols[a]);
                        m[(self.idx_v[j] + b, self.idx_v[i] + a)] = val;
                        m[(self.idx_v[i] + a, self.idx_v[j] + b)] = val;
                    }
                }
            }
            if self.parent[i] != WORLD {
                let contribution = self.ic[i].transformed(&self.x_parent[i]);
                self.ic[self.parent[i]].add(&contribution);
            }
        }
        m
    }

    /// Recursive Newton-Euler: generalized forces realizing acceleration `a`
    /// at state `(q, v)` under gravity, minus external frame wrenches.
    ///
    /// `f_ext` pairs a frame id with a wrench in that frame's coordinates.
    pub fn rnea(
        &mut self,
        model: &RobotModel,
        q: &DVector<f64>,
        v: &DVector<f64>,
        a: &DVector<f64>,
        f_ext: &[(usize, Force)],
    ) -> DVector<f64> {
        self.fk(model, q);
        let gravity_acc = motion(Vector3::new(0.0, 0.0, GRAVITY), Vector3::zeros());
        for i in 0..self.nb {
            let (_, vj) = self.joint_kinematics(model, i, q, Some(v));
            let iv = self.idx_v[i];
            let mut aj = Motion::zeros();
            for k in 0..self.ndof[i] {
                aj += self.subspace_col(model, i, k) * a[iv + k];
            }
            let (vp, ap) = if self.parent[i] == WORLD {
                (Motion::zeros(), act_motion_inv(&self.placements[i], &gravity_acc))
            } else {
                let p = self.parent[i];
                (
                    act_motion_inv(&self.x_parent[i], &self.v_loc[p]),
                    act_motion_inv(&self.x_parent[i], &self.a_loc[p]),
                )
            };
            self.v_loc[i] = vp + vj;
            self.a_loc[i] = ap + aj + cross_motion(&self.v_loc[i], &vj);
            let momentum = self.inertias[i].apply(&self.v_loc[i]);
            self.f_loc[i] =
                self.inertias[i].apply(&self.a_loc[i]) + cross_force(&self.v_loc[i], &momentum);
        }
        for &(frame_id, w) in f_ext {
            let f = &model.frames[frame_id];
            self.f_loc[f.body] -= act_force(&f.placement, &w);
        }
        let mut tau = DVector::zeros(self.nv);
        for i in (0..self.nb).rev() {
            for k in 0..self.ndof[i] {
                tau[self.idx_v[i] + k] = self.subspace_col(model, i, k).dot(&self.f_loc[i]);
            }
            if self.parent[i] != WORLD {
                let fp = act_force(&self.x_parent[i], &self.f_loc[i]);
                self.f_loc[self.parent[i]] += fp;
            }
        }
        tau
    }

    /// Nonlinear bias forces `h(q, v)` (Coriolis, centrifugal, gravity).
    pub fn bias_forces(
        &mut self,
        model: &RobotModel,
        q: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let zero = DVector::zeros(self.nv);
        self.rnea(model, q, v, &zero, &[])
    }

    /// Center of mass in world coordinates (requires `fk`).
    pub fn com(&self, model: &RobotModel) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        let mut mass = 0.0;
        for (i, b) in model.bodies.iter().enumerate() {
            c += b.mass * (self.placements[i] * nalgebra::Point3::from(b.com_offset)).coords;
            mass += b.mass;
        }
        c / mass
    }

    /// 3 x nv Jacobian of the center of mass (requires `fk`).
    pub fn com_jacobian(&self, model: &RobotModel) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, self.nv);
        let total: f64 = model.bodies.iter().map(|b| b.mass).sum();
        for (ib, b) in model.bodies.iter().enumerate() {
            if b.mass == 0.0 {
                continue;
            }
            let p_c = (self.placements[ib] * nalgebra::Point3::from(b.com_offset)).coords;
            let w = b.mass / total;
            let mut body = ib;
            loop {
                let iv = self.idx_v[body];
                let r = self.placements[body].rotation;
                let p_b = self.placements[body].translation.vector;
                match model.joints[body].joint_type {
                    JointType::FreeFloating => {
                        for k in 0..3 {
                            let axis = r * Vector3::ith(k, 1.0);
                            let mut col = jac.fixed_view_mut::<3, 1>(0, iv + k);
                            col += w * axis;
                            let l = axis.cross(&(p_c - p_b));
                            let mut col = jac.fixed_view_mut::<3, 1>(0, iv + 3 + k);
                            col += w * l;
                        }
                    }
                    JointType::Revolute => {
                        let wax = r * model.joints[body].axis;
                        let l = wax.cross(&(p_c - p_b));
                        let mut col = jac.fixed_view_mut::<3, 1>(0, iv);
                        col += w * l;
                    }
                }
                if self.parent[body] == WORLD {
                    break;
                }
                body = self.parent[body];
            }
        }
        jac
    }

    /// Stacked local-frame contact Jacobian and drift for an active set
    /// (requires `fk`, `velocities`, `bias_accelerations`).
    fn contact_jacobian_and_drift(
        &mut self,
        model: &RobotModel,
        contacts: &ContactSet,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let k = contacts.len();
        let mut jac = DMatrix::zeros(6 * k, self.nv);
        let mut gamma = DVector::zeros(6 * k);
        for (c, cf) in contacts.frames.iter().enumerate() {
            let jc = self.frame_jacobian_local(model, cf.frame_id);
            jac.view_mut((6 * c, 0), (6, self.nv)).copy_from(&jc);
            let mut drift = self.frame_drift_local(model, cf.frame_id);
            if contacts.baumgarte_alpha != 0.0 {
                drift += 2.0 * contacts.baumgarte_alpha
                    * self.frame_velocity_local(model, cf.frame_id);
            }
            if contacts.baumgarte_beta != 0.0 {
                if let Some(reference) = cf.reference {
                    let m_f = self.frame_placement(model, cf.frame_id);
                    let err = reference.inverse() * m_f;
                    let phi = motion(err.translation.vector, quat_log(&err.rotation));
                    drift += contacts.baumgarte_beta * phi;
                }
            }
            gamma.rows_mut(6 * c, 6).copy_from(&drift);
        }
        (jac, gamma)
    }

    /// Contact-constrained forward dynamics: solves the KKT system for the
    /// generalized acceleration and contact wrenches.
    ///
    /// `tau` has dimension `nu` (actuated joints only).
    pub fn contact_forward_dynamics(
        &mut self,
        model: &RobotModel,
        state: &State,
        contacts: &ContactSet,
        tau: &DVector<f64>,
    ) -> Result<ContactDynamicsResult, DynamicsError> {
        let m = self.mass_matrix(model, &state.q);
        let h = self.bias_forces(model, &state.q, &state.v);
        let rhs = self.selection_apply(model, tau) - h;
        let chol = m
            .clone()
            .cholesky()
            .ok_or(DynamicsError::SingularInertia)?;

        if contacts.is_empty() {
            return Ok(ContactDynamicsResult {
                vdot: chol.solve(&rhs),
                wrenches: Vec::new(),
            });
        }

        self.velocities(model, &state.q, &state.v);
        self.bias_accelerations(model, &state.q, &state.v);
        let (jac, gamma) = self.contact_jacobian_and_drift(model, contacts);

        let minv_jt = chol.solve(&jac.transpose());
        let a = &jac * &minv_jt;
        let a_chol = match a.clone().cholesky() {
            Some(c) => c,
            None => {
                let rank = jac.clone().svd(false, false).rank(1e-10);
                return Err(DynamicsError::SingularContact {
                    rank,
                    rows: jac.nrows(),
                });
            }
        };
        let lambda = -a_chol.solve(&(&jac * chol.solve(&rhs) + &gamma));
        let vdot = chol.solve(&(&rhs + jac.transpose() * &lambda));
        let wrenches = (0..contacts.len())
            .map(|c| Force::from(lambda.fixed_rows::<6>(6 * c)))
            .collect();
        Ok(ContactDynamicsResult { vdot, wrenches })
    }

    /// Impulse dynamics at contact activation: zero-restitution velocity
    /// reset `M (v+ - v-) = Jc^T L`, `Jc v+ = 0`.
    pub fn impulse_dynamics(
        &mut self,
        model: &RobotModel,
        state: &State,
        contacts: &ContactSet,
    ) -> Result<ImpulseResult, DynamicsError> {
        if contacts.is_empty() {
            return Ok(ImpulseResult {
                v_plus: state.v.clone(),
                impulses: Vec::new(),
            });
        }
        let m = self.mass_matrix(model, &state.q);
        let chol = m
            .clone()
            .cholesky()
            .ok_or(DynamicsError::SingularInertia)?;
        self.velocities(model, &state.q, &state.v);
        let k = contacts.len();
        let mut jac = DMatrix::zeros(6 * k, self.nv);
        for (c, cf) in contacts.frames.iter().enumerate() {
            let jc = self.frame_jacobian_local(model, cf.frame_id);
            jac.view_mut((6 * c, 0), (6, self.nv)).copy_from(&jc);
        }
        let minv_jt = chol.solve(&jac.transpose());
        let a = &jac * &minv_jt;
        let a_chol = match a.clone().cholesky() {
            Some(c) => c,
            None => {
                let rank = jac.clone().svd(false, false).rank(1e-10);
                return Err(DynamicsError::SingularContact {
                    rank,
                    rows: jac.nrows(),
                });
            }
        };
        let impulse = -a_chol.solve(&(&jac * &state.v));
        let v_plus = &state.v + chol.solve(&(jac.transpose() * &impulse));
        let impulses = (0..k)
            .map(|c| Force::from(impulse.fixed_rows::<6>(6 * c)))
            .collect();
        Ok(ImpulseResult { v_plus, impulses })
    }

    /// Maps actuated torques into the full nv-dimensional generalized force
    /// (the actuator selection).
    pub fn selection_apply(&self, model: &RobotModel, tau: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nv);
        let mut iu = 0;
        for (i, j) in model.joints.iter().enumerate() {
            if j.actuated {
                out[self.idx_v[i]] = tau[iu];
                iu += 1;
            }
        }
        out
    }
}

/// World placements of all named frames at configuration `q`.
pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Vec<Isometry3<f64>> {
    let mut ws = Workspace::new(model);
    ws.fk(model, q);
    (0..model.frames.len())
        .map(|f| ws.frame_placement(model, f))
        .collect()
}

/// Local-world-aligned Jacobian of a named frame.
pub fn frame_jacobian(model: &RobotModel, q: &DVector<f64>, frame: &str) -> Result<DMatrix<f64>, crate::model::ModelError> {
    let frame_id = model.frame_id(frame)?;
    let mut ws = Workspace::new(model);
    ws.fk(model, q);
    Ok(ws.frame_jacobian_lwa(model, frame_id))
}

/// Joint-space inertia matrix `M(q)`.
pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    Workspace::new(model).mass_matrix(model, q)
}

/// Bias forces `h(q, v)`.
pub fn bias_forces(model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    Workspace::new(model).bias_forces(model, q, v)
}

/// Contact-constrained forward dynamics (convenience wrapper).
pub fn contact_forward_dynamics(
    model: &RobotModel,
    state: &State,
    contacts: &ContactSet,
    tau: &DVector<f64>,
) -> Result<ContactDynamicsResult, DynamicsError> {
    Workspace::new(model).contact_forward_dynamics(model, state, contacts, tau)
}

/// Impulse dynamics (convenience wrapper).
pub fn impulse_dynamics(
    model: &RobotModel,
    state: &State,
    contacts: &ContactSet,
) -> Result<ImpulseResult, DynamicsError> {
    Workspace::new(model).impulse_dynamics(model, state, contacts)
}

/// Configuration retraction `q + dq` on the manifold: base translation steps
/// in the base frame, base orientation by the quaternion exponential.
pub fn integrate_config(model: &RobotModel, q: &DVector<f64>, dq: &DVector<f64>) -> DVector<f64> {
    let mut out = q.clone();
    let mut qo = 0;
    let mut vo = 0;
    if model.has_free_base() {
        let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[3], q[4], q[5], q[6],
        ));
        let dp = Vector3::new(dq[0], dq[1], dq[2]);
        let dw = Vector3::new(dq[3], dq[4], dq[5]);
        let p_new = Vector3::new(q[0], q[1], q[2]) + rot * dp;
        let rot_new = rot * quat_exp(&dw);
        out[0] = p_new.x;
        out[1] = p_new.y;
        out[2] = p_new.z;
        out[3] = rot_new.w;
        out[4] = rot_new.i;
        out[5] = rot_new.j;
        out[6] = rot_new.k;
        qo = 7;
        vo = 6;
    }
    for k in 0..(model.nv - vo) {
        out[qo + k] = q[qo + k] + dq[vo + k];
    }
    out
}

/// Semi-implicit Euler on the state manifold:
/// `v' = v + vdot dt`, `q' = q (+) v' dt`.
pub fn integrate_state(model: &RobotModel, state: &State, vdot: &DVector<f64>, dt: f64) -> State {
    let v_new = &state.v + vdot * dt;
    let q_new = integrate_config(model, &state.q, &(&v_new * dt));
    State::new(q_new, v_new)
}

/// Configuration difference `q2 (-) q1` in the tangent at `q1`.
pub fn difference_config(model: &RobotModel, q1: &DVector<f64>, q2: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(model.nv);
    let mut qo = 0;
    let mut vo = 0;
    if model.has_free_base() {
        let r1 = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q1[3], q1[4], q1[5], q1[6],
        ));
        let r2 = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q2[3], q2[4], q2[5], q2[6],
        ));
        let dp = r1.inverse() * Vector3::new(q2[0] - q1[0], q2[1] - q1[1], q2[2] - q1[2]);
        let dw = quat_log(&(r1.inverse() * r2));
        for k in 0..3 {
            out[k] = dp[k];
            out[3 + k] = dw[k];
        }
        qo = 7;
        vo = 6;
    }
    for k in 0..(model.nv - vo) {
        out[vo + k] = q2[qo + k] - q1[qo + k];
    }
    out
}

/// State difference `s2 (-) s1` as a 2 nv tangent vector
/// `[config log-difference; v2 - v1]`.
pub fn state_difference(model: &RobotModel, s1: &State, s2: &State) -> DVector<f64> {
    let dq = difference_config(model, &s1.q, &s2.q);
    let mut out = DVector::zeros(2 * model.nv);
    out.rows_mut(0, model.nv).copy_from(&dq);
    out.rows_mut(model.nv, model.nv).copy_from(&(&s2.v - &s1.v));
    out
}

/// State retraction: `s (+) [dq; dv]`.
pub fn state_integrate(model: &RobotModel, s: &State, dx: &DVector<f64>) -> State {
    let nv = model.nv;
    let q = integrate_config(model, &s.q, &dx.rows(0, nv).into_owned());
    let v = &s.v + dx.rows(nv, nv);
    State::new(q, v)
}
