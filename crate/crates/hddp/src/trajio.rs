//! Trajectory file I/O and dense resampling.
//!
//! Solutions are serialized to a UTF-8 CSV with a `#`-prefixed metadata
//! header (model hash, knot spacing, contact frame names) so files are
//! auditable with standard tooling, and interpolated to the control rate
//! with clamped cubic Hermite splines that use the knot velocities as
//! derivative data. The base orientation is splined in the quaternion log
//! space so samples stay on the manifold.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, UnitQuaternion, Vector3, Vector6};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::State;
use crate::gaitplan::GaitProblem;
use crate::math::{quat_exp, quat_log, so3_right_jacobian, so3_right_jacobian_inv};
use crate::model::RobotModel;
use crate::solver::Solution;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("model hash mismatch: file has {found}, model is {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("trajectory shape: {0}")]
    Shape(String),
    #[error("degenerate horizon: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stable content hash of a robot model (16 hex chars of SHA-256 over a
/// canonical full-precision dump).
pub fn model_hash(model: &RobotModel) -> String {
    let mut text = String::new();
    for b in &model.bodies {
        let _ = write!(text, "body {} {:.17e}", b.name, b.mass);
        for k in 0..3 {
            let _ = write!(text, " {:.17e}", b.com_offset[k]);
        }
        for k in 0..9 {
            let _ = write!(text, " {:.17e}", b.rotational_inertia[k]);
        }
        text.push('\n');
    }
    for j in &model.joints {
        let _ = write!(
            text,
            "joint {} {:?} {} {}",
            j.name, j.joint_type, j.parent_body, j.child_body
        );
        for k in 0..3 {
            let _ = write!(text, " {:.17e}", j.axis[k]);
        }
        for k in 0..3 {
            let _ = write!(text, " {:.17e}", j.parent_frame_transform.translation.vector[k]);
        }
        let q = j.parent_frame_transform.rotation;
        let _ = write!(text, " {:.17e} {:.17e} {:.17e} {:.17e}", q.w, q.i, q.j, q.k);
        let _ = write!(
            text,
            " {:.17e} {:.17e} {:.17e} {:.17e} {}",
            j.position_limits[0], j.position_limits[1], j.velocity_limit, j.effort_limit, j.actuated
        );
        text.push('\n');
    }
    for f in &model.frames {
        let _ = write!(text, "frame {} {}", f.name, f.body);
        for k in 0..3 {
            let _ = write!(text, " {:.17e}", f.placement.translation.vector[k]);
        }
        let q = f.placement.rotation;
        let _ = write!(text, " {:.17e} {:.17e} {:.17e} {:.17e}", q.w, q.i, q.j, q.k);
        text.push('\n');
    }
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A solved trajectory at the knot resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub model_hash: String,
    pub knot_dt: f64,
    pub nq: usize,
    pub nv: usize,
    pub nu: usize,
    pub contact_names: Vec<String>,
    /// Knot times, strictly increasing; `N + 1` entries.
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// `N` entries.
    pub controls: Vec<DVector<f64>>,
    /// `N` rows, one optional wrench per contact column (`None` = inactive).
    pub wrenches: Vec<Vec<Option<Vector6<f64>>>>,
}

impl TrajectoryFile {
    /// Assembles the file from a solved gait problem. Impulse knots carry
    /// zero duration; the post-impulse state is kept at the touchdown time
    /// and the pre-impulse row is dropped so times stay strictly
    /// increasing.
    pub fn from_gait_solution(gait: &GaitProblem, sol: &Solution<State>) -> Self {
        let knots = crate::gaitplan::knot_trajectory(gait, sol);
        TrajectoryFile {
            model_hash: model_hash(&gait.model),
            knot_dt: gait.spec.knot_dt,
            nq: gait.model.nq,
            nv: gait.model.nv,
            nu: gait.model.nu,
            contact_names: knots.contact_names,
            times: knots.times,
            states: knots.states,
            controls: knots.controls,
            wrenches: knots.wrenches,
        }
    }

    pub fn verify_model(&self, model: &RobotModel) -> Result<(), TrajError> {
        let expected = model_hash(model);
        if self.model_hash != expected {
            return Err(TrajError::HashMismatch {
                expected,
                found: self.model_hash.clone(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), TrajError> {
        let n = self.controls.len();
        if self.states.len() != n + 1 || self.times.len() != n + 1 {
            return Err(TrajError::Shape(format!(
                "{} states / {} times for {} controls; want N+1 of each",
                self.states.len(),
                self.times.len(),
                n
            )));
        }
        if self.wrenches.len() != n {
            return Err(TrajError::Shape(format!(
                "{} wrench rows for {} controls",
                self.wrenches.len(),
                n
            )));
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(TrajError::Shape(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the CSV format. Deterministic: equal files give equal
    /// bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# hddp trajectory v1\n");
        let _ = writeln!(out, "# model_hash={}", self.model_hash);
        let _ = writeln!(out, "# knot_dt={}", fmt(self.knot_dt));
        let _ = writeln!(out, "# dims={},{},{}", self.nq, self.nv, self.nu);
        let _ = writeln!(out, "# contacts={}", self.contact_names.join(","));
        let mut header = vec!["t".to_string()];
        header.extend((0..self.nq).map(|i| format!("q{i}")));
        header.extend((0..self.nv).map(|i| format!("v{i}")));
        header.extend((0..self.nu).map(|i| format!("u{i}")));
        for c in &self.contact_names {
            for k in 0..6 {
                header.push(format!("w_{c}_{k}"));
            }
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.states.len() {
            let mut row = vec![fmt(self.times[i])];
            for k in 0..self.nq {
                row.push(fmt(self.states[i].q[k]));
            }
            for k in 0..self.nv {
                row.push(fmt(self.states[i].v[k]));
            }
            if i < self.controls.len() {
                for k in 0..self.nu {
                    row.push(fmt(self.controls[i][k]));
                }
                for w in &self.wrenches[i] {
                    match w {
                        Some(w) => row.extend((0..6).map(|k| fmt(w[k]))),
                        None => row.extend(std::iter::repeat(String::new()).take(6)),
                    }
                }
            } else {
                // Terminal row: no control or wrench entries.
                let pad = self.nu + 6 * self.contact_names.len();
                row.extend(std::iter::repeat(String::new()).take(pad));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TrajError> {
        self.validate()?;
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TrajError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self, TrajError> {
        let err = |line: usize, msg: String| TrajError::Parse {
            file: file.to_string(),
            line,
            msg,
        };
        let mut model_hash = None;
        let mut knot_dt = None;
        let mut dims = None;
        let mut contacts: Option<Vec<String>> = None;
        let mut rows: Vec<(usize, Vec<Option<f64>>)> = Vec::new();
        let mut saw_header_row = false;
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            if raw.is_empty() {
                continue;
            }
            if let Some(meta) = raw.strip_prefix('#') {
                let meta = meta.trim();
                if let Some((k, v)) = meta.split_once('=') {
                    match k {
                        "model_hash" => model_hash = Some(v.to_string()),
                        "knot_dt" => {
                            knot_dt = Some(v.parse::<f64>().map_err(|_| {
                                err(line, format!("bad knot_dt '{v}'"))
                            })?)
                        }
                        "dims" => {
                            let parts: Vec<usize> = v
                                .split(',')
                                .map(|p| p.parse())
                                .collect::<Result<_, _>>()
                                .map_err(|_| err(line, format!("bad dims '{v}'")))?;
                            if parts.len() != 3 {
                                return Err(err(line, "dims needs nq,nv,nu".into()));
                            }
                            dims = Some((parts[0], parts[1], parts[2]));
                        }
                        "contacts" => {
                            contacts = Some(if v.is_empty() {
                                Vec::new()
                            } else {
                                v.split(',').map(str::to_string).collect()
                            })
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header_row {
                saw_header_row = true; // column-name row
                continue;
            }
            let cells: Vec<Option<f64>> = raw
                .split(',')
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| err(line, format!("bad number '{c}'")))
                    }
                })
                .collect::<Result<_, _>>()?;
            rows.push((line, cells));
        }
        let model_hash = model_hash.ok_or_else(|| err(0, "missing model_hash header".into()))?;
        let knot_dt = knot_dt.ok_or_else(|| err(0, "missing knot_dt header".into()))?;
        let (nq, nv, nu) = dims.ok_or_else(|| err(0, "missing dims header".into()))?;
        let contact_names = contacts.ok_or_else(|| err(0, "missing contacts header".into()))?;
        let width = 1 + nq + nv + nu + 6 * contact_names.len();
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut wrenches = Vec::new();
        let total = rows.len();
        for (idx, (line, cells)) in rows.into_iter().enumerate() {
            if cells.len() != width {
                return Err(err(
                    line,
                    format!("row has {} cells, expected {}", cells.len(), width),
                ));
            }
            let need = |c: &Option<f64>| -> Result<f64, TrajError> {
                c.ok_or_else(|| err(line, "unexpected empty cell".into()))
            };
            times.push(need(&cells[0])?);
            let q = DVector::from_iterator(
                nq,
                cells[1..1 + nq].iter().map(|c| c.unwrap_or(f64::NAN)),
            );
            let v = DVector::from_iterator(
                nv,
                cells[1 + nq..1 + nq + nv].iter().map(|c| c.unwrap_or(f64::NAN)),
            );
            for c in &cells[1..1 + nq + nv] {
                need(c)?;
            }
            states.push(State::new(q, v));
            if idx + 1 < total {
                let off = 1 + nq + nv;
                let u = DVector::from_iterator(
                    nu,
                    cells[off..off + nu].iter().map(|c| c.unwrap_or(f64::NAN)),
                );
                for c in &cells[off..off + nu] {
                    need(c)?;
                }
                controls.push(u);
                let mut row = Vec::new();
                for c in 0..contact_names.len() {
                    let base = off + nu + 6 * c;
                    let block = &cells[base..base + 6];
                    if block.iter().all(|x| x.is_none()) {
                        row.push(None);
                    } else {
                        let mut w = Vector6::zeros();
                        for k in 0..6 {
                            w[k] = need(&block[k])?;
                        }
                        row.push(Some(w));
                    }
                }
                wrenches.push(row);
            }
        }
        let traj = TrajectoryFile {
            model_hash,
            knot_dt,
            nq,
            nv,
            nu,
            contact_names,
            times,
            states,
            controls,
            wrenches,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// Resamples to a dense rate with clamped cubic Hermite splines; see the
    /// module docs for the base-orientation treatment.
    pub fn interpolate(&self, rate: f64) -> Result<InterpolatedTrajectory, TrajError> {
        self.validate()?;
        if self.states.len() < 2 {
            return Err(TrajError::Degenerate("need at least 2 knots".into()));
        }
        if !(rate > 0.0) {
            return Err(TrajError::Degenerate(format!("bad sample rate {rate}")));
        }
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        let n_samples = ((t1 - t0) * rate).round() as usize + 1;
        let free_base = self.nq == self.nv + 1;
        let mut times = Vec::with_capacity(n_samples);
        let mut states = Vec::with_capacity(n_samples);
        let mut controls = Vec::with_capacity(n_samples);
        let mut knot_index = Vec::with_capacity(n_samples);
        let mut seg = 0usize;
        for s in 0..n_samples {
            let t = (t0 + s as f64 / rate).min(t1);
            while seg + 2 < self.times.len() && t >= self.times[seg + 1] {
                seg += 1;
            }
            let (ta, tb) = (self.times[seg], self.times[seg + 1]);
            let dt = tb - ta;
            let tau = ((t - ta) / dt).clamp(0.0, 1.0);
            let (xa, xb) = (&self.states[seg], &self.states[seg + 1]);
            let state = hermite_state(xa, xb, dt, tau, free_base);
            // Controls interpolate linearly within the segment; the terminal
            // sample holds the last control.
            let u = if self.nu == 0 {
                DVector::zeros(0)
            } else if seg + 1 < self.controls.len() {
                (1.0 - tau) * &self.controls[seg] + tau * &self.controls[seg + 1]
            } else {
                self.controls[seg].clone()
            };
            times.push(t);
            states.push(state);
            controls.push(u);
            knot_index.push(seg);
        }
        Ok(InterpolatedTrajectory {
            sample_rate: rate,
            times,
            states,
            controls,
            knot_index,
        })
    }
}

/// Densely resampled trajectory at the control rate.
#[derive(Debug, Clone)]
pub struct InterpolatedTrajectory {
    pub sample_rate: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    /// Knot segment each sample falls into.
    pub knot_index: Vec<usize>,
}

/// Shortest-float formatting that round-trips f64 exactly.
fn fmt(x: f64) -> String {
    let mut s = format!("{x:e}");
    if s.parse::<f64>() != Ok(x) {
        s = format!("{x:.17e}");
    }
    s
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

fn hermite_basis_dot(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    (
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    )
}

fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, dt: f64, tau: f64) -> (f64, f64) {
    let (h00, h10, h01, h11) = hermite_basis(tau);
    let (d00, d10, d01, d11) = hermite_basis_dot(tau);
    let value = h00 * p0 + h10 * m0 * dt + h01 * p1 + h11 * m1 * dt;
    let deriv = (d00 * p0 + d10 * m0 * dt + d01 * p1 + d11 * m1 * dt) / dt;
    (value, deriv)
}

/// One Hermite sample between two knots at local parameter `tau`.
fn hermite_state(xa: &State, xb: &State, dt: f64, tau: f64, free_base: bool) -> State {
    let nq = xa.q.len();
    let nv = xa.v.len();
    let mut q = DVector::zeros(nq);
    let mut v = DVector::zeros(nv);
    let (qoff, voff) = if free_base { (7, 6) } else { (0, 0) };

    if free_base {
        let qa = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            xa.q[3], xa.q[4], xa.q[5], xa.q[6],
        ));
        let qb = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            xb.q[3], xb.q[4], xb.q[5], xb.q[6],
        ));
        // Base translation: world-frame Hermite; the stored linear velocity
        // is body-local, so rotate it out and back.
        let pa = Vector3::new(xa.q[0], xa.q[1], xa.q[2]);
        let pb = Vector3::new(xb.q[0], xb.q[1], xb.q[2]);
        let va_w = qa * Vector3::new(xa.v[0], xa.v[1], xa.v[2]);
        let vb_w = qb * Vector3::new(xb.v[0], xb.v[1], xb.v[2]);
        let mut p = Vector3::zeros();
        let mut pd = Vector3::zeros();
        for k in 0..3 {
            let (val, der) = hermite(pa[k], pb[k], va_w[k], vb_w[k], dt, tau);
            p[k] = val;
            pd[k] = der;
        }
        // Orientation: q(tau) = qa * exp(c(tau)) with c Hermite in the log
        // space; derivative endpoints chosen so body angular velocity is
        // met exactly at both knots.
        let r = quat_log(&(qa.inverse() * qb));
        let wa = Vector3::new(xa.v[3], xa.v[4], xa.v[5]);
        let wb = Vector3::new(xb.v[3], xb.v[4], xb.v[5]);
        let m1 = so3_right_jacobian_inv(&r) * wb;
        let mut c = Vector3::zeros();
        let mut cd = Vector3::zeros();
        for k in 0..3 {
            let (val, der) = hermite(0.0, r[k], wa[k], m1[k], dt, tau);
            c[k] = val;
            cd[k] = der;
        }
        let rot = qa * quat_exp(&c);
        let omega = so3_right_jacobian(&c) * cd;
        q[0] = p[0];
        q[1] = p[1];
        q[2] = p[2];
        q[3] = rot.w;
        q[4] = rot.i;
        q[5] = rot.j;
        q[6] = rot.k;
        let v_lin = rot.inverse() * pd;
        for k in 0..3 {
            v[k] = v_lin[k];
            v[3 + k] = omega[k];
        }
    }
    for j in 0..nv - voff {
        let (val, der) = hermite(
            xa.q[qoff + j],
            xb.q[qoff + j],
            xa.v[voff + j],
            xb.v[voff + j],
            dt,
            tau,
        );
        q[qoff + j] = val;
        v[voff + j] = der;
    }
    State::new(q, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_traj(times: Vec<f64>, states: Vec<State>, nu: usize) -> TrajectoryFile {
        let n = times.len() - 1;
        let nq = states[0].q.len();
        let nv = states[0].v.len();
        TrajectoryFile {
            model_hash: "0123456789abcdef".into(),
            knot_dt: times[1] - times[0],
            nq,
            nv,
            nu,
            contact_names: vec![],
            times,
            states,
            controls: (0..n).map(|i| DVector::from_element(nu, i as f64)).collect(),
            wrenches: vec![vec![]; n],
        }
    }

    #[test]
    fn clamped_hermite_midpoint_is_the_mean_with_zero_velocities() {
        let states = vec![
            State::new(DVector::from_element(1, 1.0), DVector::zeros(1)),
            State::new(DVector::from_element(1, 3.0), DVector::zeros(1)),
        ];
        let traj = toy_traj(vec![0.0, 1.0], states, 0);
        let dense = traj.interpolate(2.0).unwrap();
        assert_eq!(dense.times.len(), 3);
        assert_relative_eq!(dense.states[1].q[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_knots_interpolate_to_the_constant() {
        let s = State::new(DVector::from_element(2, 0.7), DVector::zeros(2));
        let traj = toy_traj(vec![0.0, 0.5, 1.0], vec![s.clone(), s.clone(), s], 1);
        let dense = traj.interpolate(100.0).unwrap();
        for x in &dense.states {
            assert_relative_eq!(x.q[0], 0.7, epsilon = 1e-12);
            assert!(x.v.amax() < 1e-12);
        }
    }

    #[test]
    fn sample_count_matches_the_rate() {
        let s = State::new(DVector::zeros(1), DVector::zeros(1));
        let n = 50;
        let times: Vec<f64> = (0..=n).map(|i| 0.03 * i as f64).collect();
        let traj = toy_traj(times, vec![s; n + 1], 0);
        let dense = traj.interpolate(1000.0).unwrap();
        assert_eq!(dense.times.len(), 1501);
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let model = RobotModel::parse(
            "body a mass=1 com=0,0,0 inertia=0.1,0.1,0.1,0,0,0\n\
             joint r type=free parent=world child=a\n",
            "toy",
        )
        .unwrap();
        let mut traj = toy_traj(
            vec![0.0, 0.1],
            vec![model.neutral_state(), model.neutral_state()],
            0,
        );
        traj.model_hash = model_hash(&model);
        assert!(traj.verify_model(&model).is_ok());
        traj.model_hash = format!("{}x", &traj.model_hash[..15]);
        assert!(matches!(
            traj.verify_model(&model),
            Err(TrajError::HashMismatch { .. })
        ));
    }

    #[test]
    fn non_increasing_times_are_rejected() {
        let s = State::new(DVector::zeros(1), DVector::zeros(1));
        let traj = toy_traj(vec![0.0, 0.1, 0.1], vec![s.clone(), s.clone(), s], 0);
        assert!(matches!(traj.write("/dev/null"), Err(TrajError::Shape(_))));
    }

    #[test]
    fn model_hash_is_stable_and_sensitive() {
        let text = "body a mass=1 com=0,0,0 inertia=0.1,0.1,0.1,0,0,0\n\
                    joint r type=free parent=world child=a\n";
        let m1 = RobotModel::parse(text, "a").unwrap();
        let m2 = RobotModel::parse(text, "b").unwrap();
        assert_eq!(model_hash(&m1), model_hash(&m2));
        let m3 = RobotModel::parse(&text.replace("mass=1", "mass=1.5"), "c").unwrap();
        assert_ne!(model_hash(&m1), model_hash(&m3));
    }
}
