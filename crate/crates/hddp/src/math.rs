//! Spatial algebra primitives used by the rigid-body algorithms.
//!
//! Conventions:
//! - 6D motion vectors are stacked `[linear; angular]`, expressed in the
//!   frame they are reported at (velocity of the body-fixed point coincident
//!   with the frame origin).
//! - 6D force vectors (wrenches) are stacked `[force; torque]` about the
//!   frame origin.
//! - A placement `X` of frame B in frame A maps points as `p_A = R p_B + t`.

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3, Vector6};

pub type Motion = Vector6<f64>;
pub type Force = Vector6<f64>;

#[inline]
pub fn motion(lin: Vector3<f64>, ang: Vector3<f64>) -> Motion {
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

#[inline]
pub fn lin(m: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(m[0], m[1], m[2])
}

#[inline]
pub fn ang(m: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(m[3], m[4], m[5])
}

/// Change of frame for a motion vector. `x` places the source frame in the
/// target frame; the motion keeps describing the same spatial velocity field.
pub fn act_motion(x: &Isometry3<f64>, m: &Motion) -> Motion {
    let r_ang = x.rotation * ang(m);
    let r_lin = x.rotation * lin(m) + x.translation.vector.cross(&r_ang);
    motion(r_lin, r_ang)
}

/// Inverse change of frame for a motion vector.
pub fn act_motion_inv(x: &Isometry3<f64>, m: &Motion) -> Motion {
    let rt = x.rotation.inverse();
    let a = rt * ang(m);
    let l = rt * (lin(m) - x.translation.vector.cross(&ang(m)));
    motion(l, a)
}

/// Change of frame for a force vector (same source/target convention as
/// [`act_motion`]; with the `[force; torque]` layout the formula coincides).
pub fn act_force(x: &Isometry3<f64>, f: &Force) -> Force {
    let f_lin = x.rotation * lin(f);
    let f_ang = x.rotation * ang(f) + x.translation.vector.cross(&f_lin);
    motion(f_lin, f_ang)
}

/// Inverse change of frame for a force vector.
pub fn act_force_inv(x: &Isometry3<f64>, f: &Force) -> Force {
    let rt = x.rotation.inverse();
    let fl = rt * lin(f);
    let tau = rt * (ang(f) - x.translation.vector.cross(&lin(f)));
    motion(fl, tau)
}

/// Motion cross product `m1 x m2`.
pub fn cross_motion(m1: &Motion, m2: &Motion) -> Motion {
    let w1 = ang(m1);
    let v1 = lin(m1);
    motion(
        w1.cross(&lin(m2)) + v1.cross(&ang(m2)),
        w1.cross(&ang(m2)),
    )
}

/// Motion-force cross product `m x* f` (dual of [`cross_motion`]).
pub fn cross_force(m: &Motion, f: &Force) -> Force {
    let w = ang(m);
    let v = lin(m);
    motion(w.cross(&lin(f)), w.cross(&ang(f)) + v.cross(&lin(f)))
}

/// Spatial inertia of a rigid body expressed at the body frame origin.
#[derive(Debug, Clone, Copy)]
pub struct SpatialInertia {
    pub mass: f64,
    /// First mass moment `m * c` with `c` the CoM offset in body frame.
    pub mcom: Vector3<f64>,
    /// Rotational inertia about the body frame origin.
    pub inertia_origin: Matrix3<f64>,
}

impl SpatialInertia {
    pub fn from_com_inertia(mass: f64, com: Vector3<f64>, inertia_com: Matrix3<f64>) -> Self {
        let io = inertia_com + mass * (Matrix3::identity() * com.norm_squared() - com * com.transpose());
        Self {
            mass,
            mcom: mass * com,
            inertia_origin: io,
        }
    }

    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            mcom: Vector3::zeros(),
            inertia_origin: Matrix3::zeros(),
        }
    }

    /// Momentum (or inertial force when applied to an acceleration).
    pub fn apply(&self, m: &Motion) -> Force {
        let v = lin(m);
        let w = ang(m);
        motion(
            self.mass * v + w.cross(&self.mcom),
            self.inertia_origin * w + self.mcom.cross(&v),
        )
    }

    pub fn add(&mut self, other: &SpatialInertia) {
        self.mass += other.mass;
        self.mcom += other.mcom;
        self.inertia_origin += other.inertia_origin;
    }

    /// Expresses this inertia in a new frame; `x` places the current frame in
    /// the target frame.
    pub fn transformed(&self, x: &Isometry3<f64>) -> SpatialInertia {
        if self.mass <= 0.0 {
            // Pure rotational inertia (not used in practice, but keep it sane).
            let r = x.rotation.to_rotation_matrix();
            return SpatialInertia {
                mass: 0.0,
                mcom: Vector3::zeros(),
                inertia_origin: r * self.inertia_origin * r.transpose(),
            };
        }
        let com = self.mcom / self.mass;
        let inertia_com = self.inertia_origin
            - self.mass * (Matrix3::identity() * com.norm_squared() - com * com.transpose());
        let com_new = x * nalgebra::Point3::from(com);
        let r = x.rotation.to_rotation_matrix();
        let inertia_com_new = r * inertia_com * r.transpose();
        SpatialInertia::from_com_inertia(self.mass, com_new.coords, inertia_com_new)
    }
}

/// Exponential map of SO(3): rotation vector to quaternion.
pub fn quat_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*w)
}

/// Logarithm of SO(3): quaternion to rotation vector (angle in [0, pi]).
pub fn quat_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3) at rotation vector `w`:
/// d/dε log(exp(w_hat) exp(ε_hat)) |_{ε=0} = Jr_inv(w) ε.
pub fn so3_right_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    if theta < 1e-8 {
        Matrix3::identity() + 0.5 * wx + wx * wx / 12.0
    } else {
        let c = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
        Matrix3::identity() + 0.5 * wx + c * (wx * wx)
    }
}

/// Right Jacobian of SO(3) at rotation vector `w`: maps rates of the
/// rotation vector to body angular velocity.
pub fn so3_right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    if theta < 1e-8 {
        Matrix3::identity() - 0.5 * wx + wx * wx / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity() - (1.0 - theta.cos()) / t2 * wx
            + (theta - theta.sin()) / (t2 * theta) * (wx * wx)
    }
}

/// Inverse of the left Jacobian of SO(3):
/// d/dε log(exp(ε_hat) exp(w_hat)) |_{ε=0} = Jl_inv(w) ε.
pub fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    so3_right_jacobian_inv(&(-w)).transpose()
}

/// Builds an isometry from translation and roll-pitch-yaw Euler angles
/// (extrinsic X-Y-Z, i.e. `R = Rz(y) Ry(p) Rx(r)`).
pub fn isometry_from_xyz_rpy(xyz: Vector3<f64>, rpy: Vector3<f64>) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z);
    Isometry3::from_parts(Translation3::from(xyz), rot)
}
