//! Cost terms in Gauss-Newton form: quadratic tracking residuals, bounded
//! quadratic inequality penalties, and the contact-stability terms (friction
//! cone, unilaterality, center of pressure).
//!
//! Every operation returns a [`CostEvaluation`] holding the value, the
//! gradient over the (state tangent, control) pair, and PSD Hessian blocks
//! built as `JᵀJ` (residual curvature dropped). Wrench-dependent terms chain
//! through caller-supplied wrench sensitivities.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, SMatrix, Vector2, Vector3};
use thiserror::Error;

use crate::dynamics::{state_difference, State, Workspace};
use crate::math::{so3_right_jacobian_inv, Force};
use crate::model::RobotModel;

/// Normal-force threshold below which the center of pressure is undefined.
pub const COP_MIN_NORMAL_FORCE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("residual dimension mismatch: {actual} vs {expected}")]
    DimensionMismatch { actual: usize, expected: usize },
    #[error("bound ordering violated at index {index}: lower {lower} > upper {upper}")]
    BoundOrdering {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("center of pressure undefined: normal force {normal_force:.3} N below threshold")]
    UndefinedCop { normal_force: f64 },
    #[error("wrench-dependent cost term on a node without matching contact")]
    MissingWrench,
}

/// Friction cone and foot-geometry parameters for one rectangular contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchConeSpec {
    /// Static friction coefficient.
    pub mu: f64,
    /// Foot half-length along x (m).
    pub half_x: f64,
    /// Foot half-width along y (m).
    pub half_y: f64,
    /// Fraction of the foot the CoP must stay within, in (0, 1].
    pub coverage: f64,
}

impl WrenchConeSpec {
    pub fn new(mu: f64, half_x: f64, half_y: f64, coverage: f64) -> Self {
        assert!(mu > 0.0 && half_x > 0.0 && half_y > 0.0);
        assert!(coverage > 0.0 && coverage <= 1.0);
        WrenchConeSpec {
            mu,
            half_x,
            half_y,
            coverage,
        }
    }
}

impl Default for WrenchConeSpec {
    /// RH5 foot (200 x 80 mm sole), mu 0.7, CoP kept inside half the foot.
    fn default() -> Self {
        WrenchConeSpec::new(0.7, 0.100, 0.040, 0.5)
    }
}

/// One weighted cost term of a knot's running or terminal cost.
#[derive(Debug, Clone)]
pub enum CostTerm {
    /// Squared distance of the center of mass to a target point.
    ComTracking {
        weight: f64,
        reference: Vector3<f64>,
    },
    /// Squared log-difference of a frame placement to a target pose.
    FramePlacement {
        weight: f64,
        frame_id: usize,
        reference: Isometry3<f64>,
    },
    /// Regularization towards a nominal state, with per-element weights over
    /// the 2nv state tangent.
    PostureReg {
        weight: f64,
        reference: State,
        element_weights: DVector<f64>,
    },
    /// Quadratic control penalty about zero torque.
    ControlReg { weight: f64 },
    /// Bounded quadratic on stacked joint positions and velocities against
    /// the model limits.
    JointLimitBarrier { weight: f64 },
    /// Bounded quadratic on the per-contact friction cone residual.
    FrictionConeBarrier { weight: f64, spec: WrenchConeSpec },
    /// Bounded quadratic keeping each contact's CoP inside the covered sole.
    CopBarrier { weight: f64, spec: WrenchConeSpec },
}

impl CostTerm {
    pub fn weight(&self) -> f64 {
        match self {
            CostTerm::ComTracking { weight, .. }
            | CostTerm::FramePlacement { weight, .. }
            | CostTerm::PostureReg { weight, .. }
            | CostTerm::ControlReg { weight }
            | CostTerm::JointLimitBarrier { weight }
            | CostTerm::FrictionConeBarrier { weight, .. }
            | CostTerm::CopBarrier { weight, .. } => *weight,
        }
    }

    pub fn weight_mut(&mut self) -> &mut f64 {
        match self {
            CostTerm::ComTracking { weight, .. }
            | CostTerm::FramePlacement { weight, .. }
            | CostTerm::PostureReg { weight, .. }
            | CostTerm::ControlReg { weight }
            | CostTerm::JointLimitBarrier { weight }
            | CostTerm::FrictionConeBarrier { weight, .. }
            | CostTerm::CopBarrier { weight, .. } => weight,
        }
    }

    /// True for terms that need the contact wrenches of the node.
    pub fn needs_wrench(&self) -> bool {
        matches!(
            self,
            CostTerm::FrictionConeBarrier { .. } | CostTerm::CopBarrier { .. }
        )
    }
}

/// Value and Gauss-Newton derivatives of a cost over (state tangent, control).
#[derive(Debug, Clone, PartialEq)]
pub struct CostEvaluation {
    pub value: f64,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lxu: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl CostEvaluation {
    pub fn zeros(ndx: usize, nu: usize) -> Self {
        CostEvaluation {
            value: 0.0,
            lx: DVector::zeros(ndx),
            lu: DVector::zeros(nu),
            lxx: DMatrix::zeros(ndx, ndx),
            lxu: DMatrix::zeros(ndx, nu),
            luu: DMatrix::zeros(nu, nu),
        }
    }

    /// Accumulates `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &CostEvaluation, scale: f64) {
        self.value += scale * other.value;
        self.lx += scale * &other.lx;
        self.lu += scale * &other.lu;
        self.lxx += scale * &other.lxx;
        self.lxu += scale * &other.lxu;
        self.luu += scale * &other.luu;
    }
}

/// Chains residual-space derivatives through the residual Jacobians.
///
/// `grad_r` is dΦ/dr and `hess_r` the diagonal of the residual-space
/// Gauss-Newton Hessian; `rx` (dim r x ndx) and `ru` (dim r x nu) are the
/// residual Jacobians (pass an empty `ru` for state-only residuals).
fn chain(
    value: f64,
    grad_r: &DVector<f64>,
    hess_r: &DVector<f64>,
    rx: &DMatrix<f64>,
    ru: &DMatrix<f64>,
    ndx: usize,
    nu: usize,
) -> CostEvaluation {
    let mut eval = CostEvaluation::zeros(ndx, nu);
    eval.value = value;
    eval.lx = rx.transpose() * grad_r;
    // Scale rows of the Jacobians by the residual Hessian diagonal once.
    let mut wrx = rx.clone();
    for (i, mut row) in wrx.row_iter_mut().enumerate() {
        row *= hess_r[i];
    }
    eval.lxx = rx.transpose() * &wrx;
    if ru.ncols() > 0 {
        eval.lu = ru.transpose() * grad_r;
        eval.lxu = wrx.transpose() * ru;
        let mut wru = ru.clone();
        for (i, mut row) in wru.row_iter_mut().enumerate() {
            row *= hess_r[i];
        }
        eval.luu = ru.transpose() * &wru;
    }
    eval
}

/// Squared-norm tracking cost `||r||²` with Gauss-Newton derivatives.
///
/// `rx` and `ru` are the Jacobians of the residual with respect to the state
/// tangent and the control; pass `None` for `ru` when the residual does not
/// depend on the control.
pub fn quadratic_residual_cost(
    residual: &DVector<f64>,
    rx: &DMatrix<f64>,
    ru: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    if rx.nrows() != residual.len() {
        return Err(CostError::DimensionMismatch {
            actual: rx.nrows(),
            expected: residual.len(),
        });
    }
    let empty = DMatrix::zeros(residual.len(), 0);
    let ru = ru.unwrap_or(&empty);
    let grad = 2.0 * residual;
    let hess = DVector::from_element(residual.len(), 2.0);
    Ok(chain(
        residual.norm_squared(),
        &grad,
        &hess,
        rx,
        ru,
        rx.ncols(),
        nu,
    ))
}

/// As [`quadratic_residual_cost`] with per-element residual weights:
/// `Σ w_i r_i²`.
pub fn weighted_quadratic_residual_cost(
    residual: &DVector<f64>,
    element_weights: &DVector<f64>,
    rx: &DMatrix<f64>,
    ru: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    if element_weights.len() != residual.len() || rx.nrows() != residual.len() {
        return Err(CostError::DimensionMismatch {
            actual: element_weights.len().max(rx.nrows()),
            expected: residual.len(),
        });
    }
    let empty = DMatrix::zeros(residual.len(), 0);
    let ru = ru.unwrap_or(&empty);
    let value = residual
        .iter()
        .zip(element_weights.iter())
        .map(|(r, w)| w * r * r)
        .sum();
    let grad = 2.0 * element_weights.component_mul(residual);
    let hess = 2.0 * element_weights;
    Ok(chain(value, &grad, &hess, rx, ru, rx.ncols(), nu))
}

/// Bounded quadratic penalty: zero inside `[lower, upper]`, half the squared
/// violation outside. Value and gradient are continuous at the bounds.
pub fn bounded_quadratic(
    residual: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    rx: &DMatrix<f64>,
    ru: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    let n = residual.len();
    if lower.len() != n || upper.len() != n || rx.nrows() != n {
        return Err(CostError::DimensionMismatch {
            actual: lower.len().max(upper.len()).max(rx.nrows()),
            expected: n,
        });
    }
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(CostError::BoundOrdering {
                index: i,
                lower: lower[i],
                upper: upper[i],
            });
        }
    }
    let empty = DMatrix::zeros(n, 0);
    let ru = ru.unwrap_or(&empty);
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut hess = DVector::zeros(n);
    for i in 0..n {
        let violation = if residual[i] > upper[i] {
            residual[i] - upper[i]
        } else if residual[i] < lower[i] {
            residual[i] - lower[i]
        } else {
            continue;
        };
        value += 0.5 * violation * violation;
        grad[i] = violation;
        hess[i] = 1.0;
    }
    Ok(chain(value, &grad, &hess, rx, ru, rx.ncols(), nu))
}

/// Friction cone residual `(λ_z, μλ_z − |λ_x|, μλ_z − |λ_y|)` of a
/// contact-frame wrench `[force; torque]`, with its wrench Jacobian. All
/// three components carry lower bound zero.
pub fn friction_cone_residual(wrench: &Force, mu: f64) -> (Vector3<f64>, SMatrix<f64, 3, 6>) {
    let (fx, fy, fz) = (wrench[0], wrench[1], wrench[2]);
    let r = Vector3::new(fz, mu * fz - fx.abs(), mu * fz - fy.abs());
    let mut jac = SMatrix::<f64, 3, 6>::zeros();
    jac[(0, 2)] = 1.0;
    jac[(1, 0)] = -sign(fx);
    jac[(1, 2)] = mu;
    jac[(2, 1)] = -sign(fy);
    jac[(2, 2)] = mu;
    (r, jac)
}

fn dmat<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_iterator(R, C, m.iter().copied())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Center of pressure of a contact-frame wrench: `c_x = −τ_y/λ_z`,
/// `c_y = τ_x/λ_z`. Fails when the normal force is below
/// [`COP_MIN_NORMAL_FORCE`] (unloaded foot).
pub fn cop_from_wrench(wrench: &Force) -> Result<(f64, f64), CostError> {
    let fz = wrench[2];
    if fz <= COP_MIN_NORMAL_FORCE {
        return Err(CostError::UndefinedCop { normal_force: fz });
    }
    Ok((-wrench[4] / fz, wrench[3] / fz))
}

/// CoP coordinates with their wrench Jacobian.
pub fn cop_residual(wrench: &Force) -> Result<(Vector2<f64>, SMatrix<f64, 2, 6>), CostError> {
    let (cx, cy) = cop_from_wrench(wrench)?;
    let fz = wrench[2];
    let mut jac = SMatrix::<f64, 2, 6>::zeros();
    jac[(0, 4)] = -1.0 / fz;
    jac[(0, 2)] = wrench[4] / (fz * fz);
    jac[(1, 3)] = 1.0 / fz;
    jac[(1, 2)] = -wrench[3] / (fz * fz);
    Ok((Vector2::new(cx, cy), jac))
}

/// Friction cone penalty chained through the wrench sensitivities `wx`
/// (6 x ndx) and `wu` (6 x nu) of this contact's wrench.
pub fn friction_cone_barrier(
    wrench: &Force,
    spec: &WrenchConeSpec,
    wx: &DMatrix<f64>,
    wu: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    let (r, jac) = friction_cone_residual(wrench, spec.mu);
    let rx = dmat(&jac) * wx;
    let ru = wu.map(|wu| dmat(&jac) * wu);
    let residual = DVector::from_column_slice(r.as_slice());
    let lower = DVector::zeros(3);
    let upper = DVector::from_element(3, f64::INFINITY);
    bounded_quadratic(&residual, &lower, &upper, &rx, ru.as_ref(), nu)
}

/// CoP penalty keeping the contact's center of pressure inside the covered
/// fraction of the sole rectangle.
pub fn cop_barrier(
    wrench: &Force,
    spec: &WrenchConeSpec,
    wx: &DMatrix<f64>,
    wu: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    let (c, jac) = cop_residual(wrench)?;
    let rx = dmat(&jac) * wx;
    let ru = wu.map(|wu| dmat(&jac) * wu);
    let residual = DVector::from_column_slice(c.as_slice());
    let bx = spec.coverage * spec.half_x;
    let by = spec.coverage * spec.half_y;
    let lower = DVector::from_column_slice(&[-bx, -by]);
    let upper = DVector::from_column_slice(&[bx, by]);
    bounded_quadratic(&residual, &lower, &upper, &rx, ru.as_ref(), nu)
}

/// CoP condition in moment space: `|τ_y| ≤ b_x λ_z` and `|τ_x| ≤ b_y λ_z`
/// as four one-sided residuals `λ_z ∓ τ/b ≥ 0`, normalized to force units.
///
/// Equivalent to the CoP-space bound on a loaded foot but linear in the
/// wrench, so it stays defined and smooth as the foot unloads. The bounds
/// are shrunk by [`COP_MARGIN`] so the penalized optimum settles strictly
/// inside the covered region. This is the form the node costs compose;
/// [`cop_barrier`] keeps the metric CoP-space semantics for reporting.
pub fn cop_moment_barrier(
    wrench: &Force,
    spec: &WrenchConeSpec,
    wx: &DMatrix<f64>,
    wu: Option<&DMatrix<f64>>,
    nu: usize,
) -> Result<CostEvaluation, CostError> {
    let s = 1.0 - COP_MARGIN;
    let bx = s * spec.coverage * spec.half_x;
    let by = s * spec.coverage * spec.half_y;
    let (fz, tx, ty) = (wrench[2], wrench[3], wrench[4]);
    let residual =
        DVector::from_column_slice(&[fz - ty / bx, fz + ty / bx, fz - tx / by, fz + tx / by]);
    let mut jac = SMatrix::<f64, 4, 6>::zeros();
    for row in 0..4 {
        jac[(row, 2)] = 1.0;
    }
    jac[(0, 4)] = -1.0 / bx;
    jac[(1, 4)] = 1.0 / bx;
    jac[(2, 3)] = -1.0 / by;
    jac[(3, 3)] = 1.0 / by;
    let rx = dmat(&jac) * wx;
    let ru = wu.map(|wu| dmat(&jac) * wu);
    let lower = DVector::zeros(4);
    let upper = DVector::from_element(4, f64::INFINITY);
    bounded_quadratic(&residual, &lower, &upper, &rx, ru.as_ref(), nu)
}

/// Log-difference residual of a frame placement against a reference pose,
/// with its Jacobian with respect to the frame's local twist `[v; ω]`.
///
/// The residual is `[R_refᵀ(p − p_ref); log(R_refᵀ R)]`, so zero exactly at
/// the reference.
pub fn frame_placement_residual(
    placement: &Isometry3<f64>,
    reference: &Isometry3<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let r_ref_t = reference.rotation.inverse();
    let dp = r_ref_t * (placement.translation.vector - reference.translation.vector);
    let drot = r_ref_t * placement.rotation;
    let dtheta = drot.scaled_axis();
    let mut residual = DVector::zeros(6);
    residual.rows_mut(0, 3).copy_from(&dp);
    residual.rows_mut(3, 3).copy_from(&dtheta);
    // d(R_refᵀ p)/dt = R_refᵀ R v and d log(R_refᵀ R)/dt = Jr⁻¹(θ) ω.
    let mut jac = DMatrix::zeros(6, 6);
    jac.view_mut((0, 0), (3, 3))
        .copy_from(drot.to_rotation_matrix().matrix());
    jac.view_mut((3, 3), (3, 3))
        .copy_from(&so3_right_jacobian_inv(&dtheta));
    (residual, jac)
}

/// Rotation-only log residual with its Jacobian with respect to the frame's
/// local angular velocity.
pub fn rotation_residual(
    rotation: &nalgebra::UnitQuaternion<f64>,
    reference: &nalgebra::UnitQuaternion<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let dtheta = (reference.inverse() * rotation).scaled_axis();
    (dtheta, so3_right_jacobian_inv(&dtheta))
}

/// Interior margin of the moment-space CoP barrier: the penalty activates
/// this fraction of the covered bound before its edge, so the penalized
/// center of pressure settles strictly inside the covered region.
pub const COP_MARGIN: f64 = 0.2;

/// Interior margin of the joint limit barrier: the penalty activates this
/// fraction of the range before the hard limit, so the penalized optimum
/// settles strictly inside it.
pub const JOINT_LIMIT_MARGIN: f64 = 0.02;

/// Joint position and velocity bounds stacked as
/// `(q_lower, v_lower), (q_upper, v_upper)` over the revolute joints,
/// shrunk about their midpoints by [`JOINT_LIMIT_MARGIN`].
pub fn joint_limit_bounds(model: &RobotModel) -> (DVector<f64>, DVector<f64>) {
    let n = model.revolute_joints().count();
    let s = 1.0 - JOINT_LIMIT_MARGIN;
    let mut lower = DVector::zeros(2 * n);
    let mut upper = DVector::zeros(2 * n);
    for (k, j) in model.revolute_joints().enumerate() {
        let mid = 0.5 * (j.position_limits[0] + j.position_limits[1]);
        let half = 0.5 * (j.position_limits[1] - j.position_limits[0]);
        lower[k] = mid - s * half;
        upper[k] = mid + s * half;
        lower[n + k] = -s * j.velocity_limit;
        upper[n + k] = s * j.velocity_limit;
    }
    (lower, upper)
}

/// Wrenches of the active contacts at a node, with optional sensitivities.
///
/// `wrench_dx` / `wrench_du` stack the per-contact 6-row blocks in contact
/// order (`6c x ndx` and `6c x nu`); when absent, wrench-dependent terms are
/// evaluated with the wrench treated as fixed.
pub struct NodeWrenches<'a> {
    pub wrenches: &'a [Force],
    pub wrench_dx: Option<&'a DMatrix<f64>>,
    pub wrench_du: Option<&'a DMatrix<f64>>,
}

impl NodeWrenches<'_> {
    pub fn none() -> NodeWrenches<'static> {
        NodeWrenches {
            wrenches: &[],
            wrench_dx: None,
            wrench_du: None,
        }
    }
}

/// Weighted sum of the node's cost terms.
///
/// Kinematic quantities are computed with `ws` at the node state; wrench
/// terms draw on `wrenches` (one per active contact) and chain through the
/// supplied sensitivities.
pub fn compose_node_cost(
    terms: &[CostTerm],
    model: &RobotModel,
    ws: &mut Workspace,
    state: &State,
    control: &DVector<f64>,
    wrenches: &NodeWrenches,
) -> Result<CostEvaluation, CostError> {
    let ndx = 2 * model.nv;
    let nu = control.len();
    let nv = model.nv;
    let mut total = CostEvaluation::zeros(ndx, nu);
    ws.fk(model, &state.q);
    for term in terms {
        let eval = match term {
            CostTerm::ComTracking { reference, .. } => {
                let r = ws.com(model) - reference;
                let mut rx = DMatrix::zeros(3, ndx);
                rx.view_mut((0, 0), (3, nv)).copy_from(&ws.com_jacobian(model));
                quadratic_residual_cost(&DVector::from_column_slice(r.as_slice()), &rx, None, nu)?
            }
            CostTerm::FramePlacement {
                frame_id,
                reference,
                ..
            } => {
                let placement = ws.frame_placement(model, *frame_id);
                let (r, dr) = frame_placement_residual(&placement, reference);
                let mut rx = DMatrix::zeros(6, ndx);
                rx.view_mut((0, 0), (6, nv))
                    .copy_from(&(&dr * ws.frame_jacobian_local(model, *frame_id)));
                quadratic_residual_cost(&r, &rx, None, nu)?
            }
            CostTerm::PostureReg {
                reference,
                element_weights,
                ..
            } => {
                let r = state_difference(model, reference, state);
                // Jacobian of the manifold difference with respect to the
                // state tangent: identity except for the base pose block.
                let mut rx = DMatrix::identity(ndx, ndx);
                if model.has_free_base() {
                    let r_rel = reference.base_pose().rotation.inverse()
                        * state.base_pose().rotation;
                    rx.view_mut((0, 0), (3, 3))
                        .copy_from(r_rel.to_rotation_matrix().matrix());
                    let dtheta = r.fixed_rows::<3>(3).into_owned();
                    rx.view_mut((3, 3), (3, 3))
                        .copy_from(&so3_right_jacobian_inv(&dtheta));
                }
                weighted_quadratic_residual_cost(&r, element_weights, &rx, None, nu)?
            }
            CostTerm::ControlReg { .. } => {
                let rx = DMatrix::zeros(nu, ndx);
                let ru = DMatrix::identity(nu, nu);
                quadratic_residual_cost(control, &rx, Some(&ru), nu)?
            }
            CostTerm::JointLimitBarrier { .. } => {
                let njoint = model.revolute_joints().count();
                let base = if model.has_free_base() { 6 } else { 0 };
                let qoff = if model.has_free_base() { 7 } else { 0 };
                let mut r = DVector::zeros(2 * njoint);
                let mut rx = DMatrix::zeros(2 * njoint, ndx);
                for k in 0..njoint {
                    r[k] = state.q[qoff + k];
                    r[njoint + k] = state.v[base + k];
                    rx[(k, base + k)] = 1.0;
                    rx[(njoint + k, nv + base + k)] = 1.0;
                }
                let (lower, upper) = joint_limit_bounds(model);
                bounded_quadratic(&r, &lower, &upper, &rx, None, nu)?
            }
            CostTerm::FrictionConeBarrier { spec, .. } => {
                sum_wrench_terms(wrenches, ndx, nu, |w, wx, wu| {
                    friction_cone_barrier(w, spec, wx, wu, nu)
                })?
            }
            CostTerm::CopBarrier { spec, .. } => sum_wrench_terms(wrenches, ndx, nu, |w, wx, wu| {
                cop_moment_barrier(w, spec, wx, wu, nu)
            })?,
        };
        total.add_scaled(&eval, term.weight());
    }
    Ok(total)
}

fn sum_wrench_terms<F>(
    wrenches: &NodeWrenches,
    ndx: usize,
    nu: usize,
    mut per_contact: F,
) -> Result<CostEvaluation, CostError>
where
    F: FnMut(&Force, &DMatrix<f64>, Option<&DMatrix<f64>>) -> Result<CostEvaluation, CostError>,
{
    if wrenches.wrenches.is_empty() {
        return Err(CostError::MissingWrench);
    }
    let mut total = CostEvaluation::zeros(ndx, nu);
    for (c, w) in wrenches.wrenches.iter().enumerate() {
        let wx = match wrenches.wrench_dx {
            Some(m) => m.rows(6 * c, 6).into_owned(),
            None => DMatrix::zeros(6, ndx),
        };
        let wu = wrenches.wrench_du.map(|m| m.rows(6 * c, 6).into_owned());
        total.add_scaled(&per_contact(w, &wx, wu.as_ref())?, 1.0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    #[test]
    fn quadratic_zero_residual_is_zero() {
        let r = DVector::zeros(3);
        let rx = DMatrix::identity(3, 3);
        let e = quadratic_residual_cost(&r, &rx, None, 0).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.lx.norm(), 0.0);
    }

    #[test]
    fn quadratic_matches_hand_norm() {
        // com (0.1, 0, 0.9) against (0, 0, 0.9).
        let r = DVector::from_column_slice(&[0.1, 0.0, 0.0]);
        let rx = DMatrix::identity(3, 3);
        let e = quadratic_residual_cost(&r, &rx, None, 0).unwrap();
        assert_relative_eq!(e.value, 0.01, epsilon = 1e-15);
        assert_relative_eq!(e.lx[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn bounded_quadratic_inside_is_zero_and_scalar_violation_matches() {
        let lower = DVector::from_element(1, -1.0);
        let upper = DVector::from_element(1, 1.0);
        let rx = DMatrix::identity(1, 1);
        let inside =
            bounded_quadratic(&DVector::from_element(1, 0.3), &lower, &upper, &rx, None, 0)
                .unwrap();
        assert_eq!(inside.value, 0.0);
        assert_eq!(inside.lx[0], 0.0);
        let outside =
            bounded_quadratic(&DVector::from_element(1, 2.0), &lower, &upper, &rx, None, 0)
                .unwrap();
        assert_relative_eq!(outside.value, 0.5, epsilon = 1e-15);
        assert_relative_eq!(outside.lx[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bounded_quadratic_is_c1_at_the_boundary() {
        let lower = DVector::from_element(1, -1.0);
        let upper = DVector::from_element(1, 1.0);
        let rx = DMatrix::identity(1, 1);
        for r in [1.0 - 1e-6, 1.0, 1.0 + 1e-6] {
            let e = bounded_quadratic(&DVector::from_element(1, r), &lower, &upper, &rx, None, 0)
                .unwrap();
            assert!(e.value <= 0.5 * 1e-12 + 1e-18);
            assert!(e.lx[0].abs() <= 1e-6 + 1e-12);
        }
    }

    #[test]
    fn bounded_quadratic_rejects_crossed_bounds() {
        let lower = DVector::from_element(1, 1.0);
        let upper = DVector::from_element(1, -1.0);
        let rx = DMatrix::identity(1, 1);
        assert!(matches!(
            bounded_quadratic(&DVector::zeros(1), &lower, &upper, &rx, None, 0),
            Err(CostError::BoundOrdering { .. })
        ));
    }

    #[test]
    fn friction_cone_pure_normal_force_is_feasible() {
        let w = Vector6::new(0.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        let (r, _) = friction_cone_residual(&w, 0.7);
        assert!(r.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn friction_cone_detects_sliding_and_pulling() {
        let sliding = Vector6::new(80.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        let (r, _) = friction_cone_residual(&sliding, 0.7);
        assert_relative_eq!(r[1], -10.0, epsilon = 1e-12);
        let pulling = Vector6::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0);
        let (r, _) = friction_cone_residual(&pulling, 0.7);
        assert!(r[0] < 0.0);
    }

    #[test]
    fn friction_cone_is_positively_homogeneous() {
        let w = Vector6::new(12.0, -3.0, 40.0, 0.5, -0.2, 0.1);
        let (r1, _) = friction_cone_residual(&w, 0.7);
        let (r3, _) = friction_cone_residual(&(3.0 * w), 0.7);
        assert_relative_eq!(3.0 * r1, r3, epsilon = 1e-12);
    }

    #[test]
    fn cop_center_and_offset() {
        let centered = Vector6::new(0.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        assert_eq!(cop_from_wrench(&centered).unwrap(), (0.0, 0.0));
        let shifted = Vector6::new(0.0, 0.0, 100.0, 0.0, -2.0, 0.0);
        let (cx, cy) = cop_from_wrench(&shifted).unwrap();
        assert_relative_eq!(cx, 0.02, epsilon = 1e-15);
        assert_eq!(cy, 0.0);
        // Moment about the CoP along y must vanish: τ_y + c_x λ_z = 0.
        assert_relative_eq!(shifted[4] + cx * shifted[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cop_undefined_below_threshold() {
        let light = Vector6::new(0.0, 0.0, 0.5, 0.0, 0.0, 0.0);
        assert!(matches!(
            cop_from_wrench(&light),
            Err(CostError::UndefinedCop { .. })
        ));
    }

    #[test]
    fn cop_barrier_zero_inside_covered_region() {
        let spec = WrenchConeSpec::default();
        let wx = DMatrix::zeros(6, 4);
        // CoP (0.03, 0.01): τ_x = c_y λ_z, τ_y = −c_x λ_z.
        let w = Vector6::new(0.0, 0.0, 100.0, 1.0, -3.0, 0.0);
        let e = cop_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_eq!(e.value, 0.0);
        // CoP (0.08, 0): 0.03 beyond the covered 0.05 half-length.
        let w = Vector6::new(0.0, 0.0, 100.0, 0.0, -8.0, 0.0);
        let e = cop_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_relative_eq!(e.value, 0.5 * 0.03 * 0.03, epsilon = 1e-12);
        // Exactly on the boundary: zero cost and gradient.
        let w = Vector6::new(0.0, 0.0, 100.0, 0.0, -5.0, 0.0);
        let e = cop_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.lx.norm(), 0.0);
    }

    #[test]
    fn cop_moment_barrier_matches_the_cop_condition() {
        let spec = WrenchConeSpec::default();
        let wx = DMatrix::zeros(6, 4);
        // Unloaded foot with no moments: defined and free of cost.
        let w = Vector6::zeros();
        let e = cop_moment_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_eq!(e.value, 0.0);
        // CoP inside the margin-shrunk region: zero cost.
        let w = Vector6::new(0.0, 0.0, 100.0, 0.0, -3.0, 0.0);
        let e = cop_moment_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_eq!(e.value, 0.0);
        // CoP at 0.08 with the activation edge at 0.04: the normalized
        // residual violates by (0.08 - 0.04)/0.04 * 100 N.
        let w = Vector6::new(0.0, 0.0, 100.0, 0.0, -8.0, 0.0);
        let e = cop_moment_barrier(&w, &spec, &wx, None, 0).unwrap();
        assert_relative_eq!(e.value, 0.5 * 100.0 * 100.0, epsilon = 1e-9);
    }

    #[test]
    fn frame_placement_residual_zero_at_reference() {
        let pose = Isometry3::new(
            Vector3::new(0.3, -0.1, 0.8),
            Vector3::new(0.2, -0.4, 0.1),
        );
        let (r, jac) = frame_placement_residual(&pose, &pose);
        assert!(r.norm() < 1e-15);
        assert_relative_eq!(jac, DMatrix::identity(6, 6), epsilon = 1e-12);
    }
}
