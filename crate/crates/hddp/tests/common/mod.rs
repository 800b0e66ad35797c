//! Shared test-zoo models and finite-difference utilities for the oracle
//! suites. Everything here is independent of the library's derivative paths.

#![allow(dead_code)]

use hddp::dynamics::{state_integrate, State};
use hddp::model::RobotModel;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POINT_MASS: &str = "\
body box mass=2.0 com=0,0,0 inertia=0.02,0.03,0.04,0,0,0
joint root type=free parent=world child=box
frame base body=box
frame probe body=box xyz=0.1,-0.05,0.2
";

pub const PENDULUM: &str = "\
body link mass=1.5 com=0,0,-0.5 inertia=0.05,0.05,0.001,0,0,0
joint pivot type=revolute parent=world child=link axis=0,1,0 limits=-3.1,3.1 vmax=10 taumax=50
frame tip body=link xyz=0,0,-1.0
";

pub const TWO_LINK: &str = "\
body link1 mass=1.2 com=0,0,-0.25 inertia=0.03,0.03,0.002,0,0,0
body link2 mass=0.8 com=0,0,-0.2 inertia=0.015,0.015,0.001,0,0,0
joint shoulder type=revolute parent=world child=link1 axis=0,1,0 limits=-3.1,3.1 vmax=10 taumax=50
joint elbow type=revolute parent=link1 child=link2 axis=0,1,0 xyz=0,0,-0.5 limits=-3.1,3.1 vmax=10 taumax=50
frame tip body=link2 xyz=0,0,-0.45
";

/// Planar 5-link biped: floating torso, two 2-dof legs, one torso pitch.
pub const PLANAR_BIPED: &str = "\
body torso mass=10 com=0,0,0.2 inertia=0.3,0.3,0.05,0,0,0
body thigh_l mass=2 com=0,0,-0.2 inertia=0.03,0.03,0.002,0,0,0
body shank_l mass=1.5 com=0,0,-0.2 inertia=0.02,0.02,0.001,0,0,0
body thigh_r mass=2 com=0,0,-0.2 inertia=0.03,0.03,0.002,0,0,0
body shank_r mass=1.5 com=0,0,-0.2 inertia=0.02,0.02,0.001,0,0,0
body head mass=3 com=0,0,0.1 inertia=0.02,0.02,0.02,0,0,0
joint root type=free parent=world child=torso
joint hip_l type=revolute parent=torso child=thigh_l axis=0,1,0 xyz=0,0.1,0 limits=-1.5,1.5 vmax=10 taumax=100
joint knee_l type=revolute parent=thigh_l child=shank_l axis=0,1,0 xyz=0,0,-0.4 limits=0,2.0 vmax=10 taumax=100
joint hip_r type=revolute parent=torso child=thigh_r axis=0,1,0 xyz=0,-0.1,0 limits=-1.5,1.5 vmax=10 taumax=100
joint knee_r type=revolute parent=thigh_r child=shank_r axis=0,1,0 xyz=0,0,-0.4 limits=0,2.0 vmax=10 taumax=100
joint neck type=revolute parent=torso child=head axis=0,1,0 xyz=0,0,0.4 limits=-1.0,1.0 vmax=10 taumax=50
frame foot_l body=shank_l xyz=0,0,-0.4
frame foot_r body=shank_r xyz=0,0,-0.4
";

pub fn point_mass() -> RobotModel {
    RobotModel::parse(POINT_MASS, "point_mass").unwrap()
}

pub fn pendulum() -> RobotModel {
    RobotModel::parse(PENDULUM, "pendulum").unwrap()
}

pub fn two_link() -> RobotModel {
    RobotModel::parse(TWO_LINK, "two_link").unwrap()
}

pub fn planar_biped() -> RobotModel {
    RobotModel::parse(PLANAR_BIPED, "planar_biped").unwrap()
}

pub fn rh5_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rh5.model")
}

pub fn rh5() -> RobotModel {
    RobotModel::load(rh5_path()).unwrap()
}

/// The full zoo, with names for per-model failure messages.
pub fn zoo() -> Vec<(&'static str, RobotModel)> {
    vec![
        ("point_mass", point_mass()),
        ("pendulum", pendulum()),
        ("two_link", two_link()),
        ("planar_biped", planar_biped()),
        ("rh5", rh5()),
    ]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random state with joint angles well inside their limits and bounded
/// velocities.
pub fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> State {
    let neutral = model.neutral_state();
    let mut dx = DVector::zeros(2 * model.nv);
    let mut k = 0;
    if model.has_free_base() {
        for _ in 0..6 {
            dx[k] = rng.gen_range(-0.5..0.5);
            k += 1;
        }
    }
    for j in model.revolute_joints() {
        let [lo, hi] = j.position_limits;
        let half = if lo.is_finite() && hi.is_finite() {
            0.4 * (hi - lo) / 2.0
        } else {
            1.0
        };
        dx[k] = rng.gen_range(-half..half);
        k += 1;
    }
    for k in model.nv..2 * model.nv {
        dx[k] = rng.gen_range(-1.0..1.0);
    }
    state_integrate(model, &neutral, &dx)
}

/// Central finite difference of a scalar function over the state tangent.
pub fn fd_gradient_x<F: FnMut(&State) -> f64>(
    model: &RobotModel,
    x: &State,
    mut f: F,
    h: f64,
) -> DVector<f64> {
    let ndx = 2 * model.nv;
    let mut g = DVector::zeros(ndx);
    for k in 0..ndx {
        let mut d = DVector::zeros(ndx);
        d[k] = h;
        let xp = state_integrate(model, x, &d);
        d[k] = -h;
        let xm = state_integrate(model, x, &d);
        g[k] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Central finite difference of a vector function over the state tangent.
pub fn fd_jacobian_x<F: FnMut(&State) -> DVector<f64>>(
    model: &RobotModel,
    x: &State,
    mut f: F,
    h: f64,
) -> nalgebra::DMatrix<f64> {
    let ndx = 2 * model.nv;
    let f0 = f(x);
    let mut jac = nalgebra::DMatrix::zeros(f0.len(), ndx);
    for k in 0..ndx {
        let mut d = DVector::zeros(ndx);
        d[k] = h;
        let xp = state_integrate(model, x, &d);
        d[k] = -h;
        let xm = state_integrate(model, x, &d);
        jac.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// Relative error with an absolute floor, for comparing against FD oracles.
pub fn rel_err(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}
