//! `hddp` command-line tool: solve experiment files, replay solutions under
//! PD tracking, check hardware limits, search design scalings, and resample
//! trajectories. Emits tidy CSV for external plotting.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence or search cap
//! (best effort output still written), 3 replay fall.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hddp::costs::cop_from_wrench;
use hddp::gaitplan::{
    apply_hand_payload, build_problem, check_limits, design_scaling_search, warm_start,
    ExperimentSpec, GaitProblem, LimitKind, LimitReport, PlannerNames,
};
use hddp::model::RobotModel;
use hddp::replay::{replay, GroundPlane, PDGains};
use hddp::solver::{solve, Solution, StopReason};
use hddp::trajio::TrajectoryFile;

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "hddp",
    about = "Whole-body trajectory optimization and replay for legged robots",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an experiment file and write the trajectory + diagnostics.
    Solve {
        /// Experiment file (.exp); bare names resolve against the fixture
        /// directory.
        experiment: PathBuf,
        /// Robot model file (default: rh5.model in the fixture directory).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the solver iteration cap.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Also write gnuplot scripts next to the CSV output.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Re-integrate a trajectory under PD tracking and report deviations.
    Replay {
        trajectory: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Proportional gain for every joint (default 300).
        #[arg(long)]
        kp: Option<f64>,
        /// Disable the planned-torque feedforward.
        #[arg(long)]
        no_ff: bool,
        /// Max allowed base deviation in x/y (m).
        #[arg(long, default_value_t = 0.03)]
        max_dev_xy: f64,
        /// Max allowed base deviation in z (m).
        #[arg(long, default_value_t = 0.02)]
        max_dev_z: f64,
        /// Point mass carried in each hand during the solve (kg).
        #[arg(long, default_value_t = 0.0)]
        payload: f64,
        #[arg(long)]
        gnuplot: bool,
    },
    /// Per-joint position/velocity/torque table against the model limits.
    CheckLimits {
        trajectory: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Scale a joint limit until the solved motion respects all limits.
    DesignScale {
        experiment: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Target as joint-pattern:kind, e.g. knee:velocity.
        #[arg(long)]
        limit: String,
        /// Factor increment between probes.
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Largest factor to try.
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Resample a trajectory to a dense rate.
    Interp {
        trajectory: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        rate: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Solve {
            experiment,
            model,
            out,
            max_iters,
            gnuplot,
        } => cmd_solve(&experiment, model.as_deref(), &out, max_iters, gnuplot),
        Cmd::Replay {
            trajectory,
            model,
            out,
            kp,
            no_ff,
            max_dev_xy,
            max_dev_z,
            payload,
            gnuplot,
        } => cmd_replay(
            &trajectory,
            model.as_deref(),
            &out,
            payload,
            kp,
            no_ff,
            max_dev_xy,
            max_dev_z,
            gnuplot,
        ),
        Cmd::CheckLimits { trajectory, model } => cmd_check_limits(&trajectory, model.as_deref()),
        Cmd::DesignScale {
            experiment,
            model,
            limit,
            step,
            cap,
            out,
        } => cmd_design_scale(&experiment, model.as_deref(), &limit, step, cap, &out),
        Cmd::Interp {
            trajectory,
            rate,
            out,
        } => cmd_interp(&trajectory, rate, &out),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Fixture directory: `HDDP_FIXTURES` override, else ./fixtures.
fn fixture_dir() -> PathBuf {
    std::env::var_os("HDDP_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"))
}

/// Resolves a user-supplied path: as given if it exists, otherwise against
/// the fixture directory.
fn resolve(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let in_fixtures = fixture_dir().join(path);
    if in_fixtures.exists() {
        in_fixtures
    } else {
        path.to_path_buf()
    }
}

fn load_model(path: Option<&Path>) -> Result<(RobotModel, PathBuf), String> {
    let path = resolve(path.unwrap_or(Path::new("rh5.model")));
    let model = RobotModel::load(&path).map_err(|e| e.to_string())?;
    Ok((model, path))
}

fn cmd_solve(
    experiment: &Path,
    model: Option<&Path>,
    out: &Path,
    max_iters: Option<usize>,
    gnuplot: bool,
) -> Result<u8, String> {
    let start = std::time::Instant::now();
    let exp_path = resolve(experiment);
    let mut spec = ExperimentSpec::load(&exp_path).map_err(|e| e.to_string())?;
    if let Some(iters) = max_iters {
        spec.solver.max_iters = iters;
    }
    let (base_model, model_path) = load_model(model)?;
    let gait = build_problem(&base_model, &spec).map_err(|e| e.to_string())?;
    let (xs, us) = warm_start(&gait);
    let sol = solve(&gait.problem, &xs, &us, &spec.solver).map_err(|e| e.to_string())?;

    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let traj = TrajectoryFile::from_gait_solution(&gait, &sol);
    traj.write(out.join("trajectory.csv"))
        .map_err(|e| e.to_string())?;
    write_file(&out.join("diagnostics.csv"), &diagnostics_csv(&sol))?;
    write_file(&out.join("cop.csv"), &cop_csv(&gait, &sol))?;

    let report = check_limits(&gait.model, &traj.states, &traj.controls);
    print!("{}", limits_table(&report));
    match sol.diagnostics.stop_reason {
        StopReason::Converged => println!(
            "converged in {} iterations, cost {:e}",
            sol.diagnostics.iterations, sol.diagnostics.final_cost
        ),
        other => println!(
            "did not converge ({other:?} after {} iterations); best iterate written",
            sol.diagnostics.iterations
        ),
    }
    if gnuplot {
        write_file(&out.join("plot_cop.gp"), COP_GNUPLOT)?;
    }
    RunManifest::new("solve", out)
        .input("experiment", &exp_path)?
        .input("model", &model_path)?
        .option("max_iters", &format!("{}", spec.solver.max_iters))
        .finish(start.elapsed())?;
    Ok(if sol.converged() { 0 } else { 2 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_replay(
    trajectory: &Path,
    model: Option<&Path>,
    out: &Path,
    payload: f64,
    kp: Option<f64>,
    no_ff: bool,
    max_dev_xy: f64,
    max_dev_z: f64,
    gnuplot: bool,
) -> Result<u8, String> {
    let start = std::time::Instant::now();
    let traj_path = resolve(trajectory);
    let traj = TrajectoryFile::read(&traj_path).map_err(|e| e.to_string())?;
    let (model, model_path) = load_model(model)?;
    let model = apply_hand_payload(&model, &PlannerNames::default(), payload)
        .map_err(|e| e.to_string())?;
    traj.verify_model(&model).map_err(|e| e.to_string())?;
    let dense = traj.interpolate(1000.0).map_err(|e| e.to_string())?;
    let mut gains = PDGains::default_for(&model);
    if let Some(kp) = kp {
        for i in 0..gains.kp.len() {
            let scale = if gains.kp[i] > 0.0 { kp / gains.kp[i] } else { 0.0 };
            gains.kd[i] *= scale.sqrt();
            gains.kp[i] = kp;
        }
    }
    if no_ff {
        gains.feedforward = false;
    }
    let report = replay(&model, &traj, &dense, &gains, &GroundPlane::default())
        .map_err(|e| e.to_string())?;

    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    write_file(&out.join("replay.csv"), &report.to_csv())?;
    if gnuplot {
        write_file(&out.join("plot_base.gp"), BASE_GNUPLOT)?;
    }
    println!(
        "base deviation: x {:.4} m, y {:.4} m, z {:.4} m; joint rms {:.5} rad; fell: {}",
        report.base_deviation.x,
        report.base_deviation.y,
        report.base_deviation.z,
        report.joint_tracking_rms,
        report.fell
    );
    RunManifest::new("replay", out)
        .input("trajectory", &traj_path)?
        .input("model", &model_path)?
        .option("kp", &format!("{kp:?}"))
        .option("feedforward", &format!("{}", !no_ff))
        .finish(start.elapsed())?;
    if report.fell {
        return Ok(3);
    }
    let ok = report.base_deviation.x <= max_dev_xy
        && report.base_deviation.y <= max_dev_xy
        && report.base_deviation.z <= max_dev_z;
    Ok(if ok { 0 } else { 2 })
}

fn cmd_check_limits(trajectory: &Path, model: Option<&Path>) -> Result<u8, String> {
    let traj = TrajectoryFile::read(resolve(trajectory)).map_err(|e| e.to_string())?;
    let (model, _) = load_model(model)?;
    traj.verify_model(&model).map_err(|e| e.to_string())?;
    let report = check_limits(&model, &traj.states, &traj.controls);
    print!("{}", limits_table(&report));
    Ok(0)
}

fn cmd_design_scale(
    experiment: &Path,
    model: Option<&Path>,
    limit: &str,
    step: f64,
    cap: f64,
    out: &Path,
) -> Result<u8, String> {
    let start = std::time::Instant::now();
    let exp_path = resolve(experiment);
    let spec = ExperimentSpec::load(&exp_path).map_err(|e| e.to_string())?;
    let (base_model, model_path) = load_model(model)?;
    let (pattern, kind) = limit
        .split_once(':')
        .ok_or_else(|| format!("--limit wants joint-pattern:kind, got '{limit}'"))?;
    let kind = LimitKind::parse(kind)
        .ok_or_else(|| format!("unknown limit kind '{kind}' (position|velocity|torque)"))?;
    let result = design_scaling_search(&base_model, &spec, pattern, kind, step, cap);
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let (code, probes) = match result {
        Ok((factor, probes)) => {
            println!("minimal {pattern} {kind:?} scaling factor: {factor}");
            (0, probes)
        }
        Err(hddp::gaitplan::GaitError::ScalingCapExceeded { cap }) => {
            println!("no factor up to {cap} satisfies the limits");
            (2, Vec::new())
        }
        Err(e) => return Err(e.to_string()),
    };
    for p in &probes {
        println!(
            "  factor {:>4}: converged {}, worst limit ratio {:.3} -> {}",
            p.factor,
            p.converged,
            p.worst_ratio,
            if p.feasible { "ok" } else { "violations" }
        );
    }
    RunManifest::new("design-scale", out)
        .input("experiment", &exp_path)?
        .input("model", &model_path)?
        .option("limit", limit)
        .option("step", &format!("{step}"))
        .finish(start.elapsed())?;
    Ok(code)
}

fn cmd_interp(trajectory: &Path, rate: f64, out: &Path) -> Result<u8, String> {
    let traj = TrajectoryFile::read(resolve(trajectory)).map_err(|e| e.to_string())?;
    let dense = traj.interpolate(rate).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut csv = String::from("t");
    for i in 0..traj.nq {
        csv.push_str(&format!(",q{i}"));
    }
    for i in 0..traj.nv {
        csv.push_str(&format!(",v{i}"));
    }
    for i in 0..traj.nu {
        csv.push_str(&format!(",u{i}"));
    }
    csv.push('\n');
    for s in 0..dense.times.len() {
        csv.push_str(&format!("{:e}", dense.times[s]));
        for k in 0..traj.nq {
            csv.push_str(&format!(",{:e}", dense.states[s].q[k]));
        }
        for k in 0..traj.nv {
            csv.push_str(&format!(",{:e}", dense.states[s].v[k]));
        }
        for k in 0..traj.nu {
            csv.push_str(&format!(",{:e}", dense.controls[s][k]));
        }
        csv.push('\n');
    }
    write_file(&out.join("interpolated.csv"), &csv)?;
    println!("{} samples at {rate} Hz", dense.times.len());
    Ok(0)
}

fn write_file(path: &Path, content: &str) -> Result<(), String> {
    std::fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}

fn diagnostics_csv<S>(sol: &Solution<S>) -> String {
    let d = &sol.diagnostics;
    // costs/gap_norms carry the warm start at index 0; the per-iterate
    // fields start at the first accepted step.
    let mut out = String::from("iter,cost,step,regularization,gap_norm,d1,d2\n");
    out.push_str(&format!("0,{:e},,,{:e},,\n", d.costs[0], d.gap_norms[0]));
    for i in 0..d.steps.len() {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            i + 1,
            d.costs[i + 1],
            d.steps[i],
            d.regularizations[i],
            d.gap_norms[(i + 1).min(d.gap_norms.len() - 1)],
            d.model_decrease[i].0,
            d.model_decrease[i].1,
        ));
    }
    out
}

/// Per-knot center of pressure of each stance foot, with the coverage
/// bounds, for the Fig.-4-style plot.
fn cop_csv(gait: &GaitProblem, sol: &Solution<hddp::dynamics::State>) -> String {
    let spec = &gait.spec;
    let bx = spec.cone.coverage * spec.cone.half_x;
    let by = spec.cone.coverage * spec.cone.half_y;
    let mut out = String::from("t,frame,cop_x,cop_y,bound_x,bound_y,fz\n");
    for (i, names) in gait.node_contacts.iter().enumerate() {
        if i >= sol.wrenches.len() {
            break;
        }
        for (k, name) in names.iter().enumerate() {
            let w = &sol.wrenches[i][k];
            if let Ok((cx, cy)) = cop_from_wrench(w) {
                out.push_str(&format!(
                    "{:e},{},{:e},{:e},{:e},{:e},{:e}\n",
                    gait.node_times[i], name, cx, cy, bx, by, w[2]
                ));
            }
        }
    }
    out
}

fn limits_table(report: &LimitReport) -> String {
    let mark = |r: f64| if r <= 1.0 + 1e-9 { "ok" } else { "XX" };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>9} {:>4} {:>9} {:>4} {:>9} {:>4}\n",
        "joint", "pos", "", "torque", "", "vel", ""
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<18} {:>9.3} {:>4} {:>9.3} {:>4} {:>9.3} {:>4}\n",
            row.joint,
            row.pos_ratio,
            mark(row.pos_ratio),
            row.torque_ratio,
            mark(row.torque_ratio),
            row.vel_ratio,
            mark(row.vel_ratio),
        ));
    }
    let verdict = if report.passes() {
        "limits: all pass"
    } else {
        "limits: violations present"
    };
    out.push_str(verdict);
    out.push('\n');
    out
}

const COP_GNUPLOT: &str = "set datafile separator ','\n\
set key autotitle columnhead\n\
set xlabel 'CoP x (m)'\n\
set ylabel 'CoP y (m)'\n\
plot 'cop.csv' using 3:4 with points pt 7 ps 0.4 title 'CoP', \\\n     '' using (column(5)):(column(6)) with points pt 0 notitle\n";

const BASE_GNUPLOT: &str = "set datafile separator ','\n\
set key autotitle columnhead\n\
set xlabel 'time (s)'\n\
set ylabel 'base position (m)'\n\
plot 'replay.csv' using 1:2 with lines title 'x', \\\n     '' using 1:3 with lines title 'y', \\\n     '' using 1:4 with lines title 'z', \\\n     '' using 1:5 with lines dt 2 title 'plan x', \\\n     '' using 1:6 with lines dt 2 title 'plan y', \\\n     '' using 1:7 with lines dt 2 title 'plan z'\n";
