use hddp::gaitplan::{build_problem, warm_start, ExperimentSpec};
use hddp::model::RobotModel;
use hddp::solver::{solve, NodeModel};
use nalgebra::DVector;

fn main() {
    let model = RobotModel::load("fixtures/rh5.model").unwrap();
    let spec = ExperimentSpec::load("fixtures/jump_1cm.exp").unwrap();
    let gait = build_problem(&model, &spec).unwrap();
    let (xs0, us0) = warm_start(&gait);
    let mut opts = spec.solver.clone();
    opts.max_iters = 1;
    let sol = solve(&gait.problem, &xs0, &us0, &opts).unwrap();
    let (xs, us) = (sol.states, sol.controls);
    let prob = &gait.problem;
    let n = prob.nodes.len();
    // Defects at this iterate.
    let mut gaps = Vec::with_capacity(n + 1);
    gaps.push(prob.nodes[0].state_difference(&xs[0], &prob.initial_state));
    for i in 0..n {
        let next = prob.nodes[i].step(&xs[i], &us[i]).unwrap();
        gaps.push(prob.nodes[i].state_difference(&xs[i + 1], &next));
    }
    let rollout_cost = |alpha: f64| -> f64 {
        let mut txs = vec![prob.nodes[0].state_integrate(&xs[0], &(alpha * &gaps[0]))];
        let mut c = 0.0;
        for i in 0..n {
            let node = &prob.nodes[i];
            let dx = node.state_difference(&xs[i], &txs[i]);
            let mut u = &us[i] + alpha * &sol.feedforward[i] + &sol.gains[i] * dx;
            if let Some((lo, hi)) = node.control_bounds() {
                for j in 0..u.len() {
                    u[j] = u[j].max(lo[j]).min(hi[j]);
                }
            }
            let next = node.step(&txs[i], &u).unwrap();
            c += node.cost(&txs[i], &u).unwrap();
            txs.push(node.state_integrate(&next, &(-(1.0 - alpha) * &gaps[i + 1])));
        }
        c + prob.terminal.cost(&txs[n], &DVector::zeros(0)).unwrap()
    };
    let c0 = rollout_cost(0.0);
    println!("c(0) = {c0:.9e}");
    let mut alpha = 1.0;
    while alpha >= 1e-9 {
        let c = rollout_cost(alpha);
        println!("alpha {alpha:.1e}: c {c:.9e} slope {:.4e}", (c - c0) / alpha);
        alpha *= 0.1;
    }

    // Directional state/control derivatives of the rollout at alpha -> 0,
    // checked against the linear defect propagation the backward pass uses.
    let a = 1e-8;
    let mut txs = vec![prob.nodes[0].state_integrate(&xs[0], &(a * &gaps[0]))];
    let mut tus = Vec::with_capacity(n);
    for i in 0..n {
        let node = &prob.nodes[i];
        let dx = node.state_difference(&xs[i], &txs[i]);
        let mut u = &us[i] + a * &sol.feedforward[i] + &sol.gains[i] * dx;
        if let Some((lo, hi)) = node.control_bounds() {
            for j in 0..u.len() {
                u[j] = u[j].max(lo[j]).min(hi[j]);
            }
        }
        let next = node.step(&txs[i], &u).unwrap();
        txs.push(node.state_integrate(&next, &(-(1.0 - a) * &gaps[i + 1])));
        tus.push(u);
    }
    let mut slope_sum = 0.0;
    for i in 0..=n {
        let node = if i < n { &prob.nodes[i] } else { &prob.terminal };
        let e = node.state_difference(&xs[i], &txs[i]) / a;
        let nd = if i < n {
            node.derivatives(&xs[i], &us[i]).unwrap()
        } else {
            node.derivatives(&xs[i], &DVector::zeros(0)).unwrap()
        };
        let du = if i < n { (&tus[i] - &us[i]) / a } else { DVector::zeros(0) };
        let contrib = nd.cost.lx.dot(&e) + nd.cost.lu.dot(&du);
        slope_sum += contrib;
        let prop_err = if i < n {
            let pred = &nd.fx * &e + &nd.fu * &du + &gaps[i + 1];
            let e_next = prob.nodes[i]
                .state_difference(&xs[i + 1], &txs[i + 1])
                / a;
            (pred - e_next).amax()
        } else {
            0.0
        };
        if i % 5 == 0 || (43..=54).contains(&i) || prop_err > 1e-3 {
            println!(
                "dir knot {i:3}: |e| {:.3e} |du| {:.3e} lx.e+lu.du {:+.3e} prop_err {:.3e}",
                e.amax(),
                du.amax(),
                contrib,
                prop_err
            );
        }
    }
    println!("slope from first-order pieces: {slope_sum:+.6e}");
    let n = gait.problem.nodes.len();
    let eps = 1e-6;
    for i in 0..n {
        let node = &gait.problem.nodes[i];
        let ndx = node.ndx();
        let nu = node.nu();
        let x = &xs[i];
        let u = &us[i];
        let nd = node.derivatives(x, u).unwrap();
        let c0 = node.cost(x, u).unwrap();
        let f0 = node.step(x, u).unwrap();
        // FD gradients of cost and dynamics wrt state.
        let mut lx_err: f64 = 0.0;
        let mut fx_err: f64 = 0.0;
        for j in 0..ndx {
            let mut dx = DVector::zeros(ndx);
            dx[j] = eps;
            let xp = node.state_integrate(x, &dx);
            dx[j] = -eps;
            let xm = node.state_integrate(x, &dx);
            let cp = node.cost(&xp, u).unwrap();
            let cm = node.cost(&xm, u).unwrap();
            lx_err = lx_err.max(((cp - cm) / (2.0 * eps) - nd.cost.lx[j]).abs());
            let fp = node.step(&xp, u).unwrap();
            let fm = node.step(&xm, u).unwrap();
            let col = (node.state_difference(&f0, &fp) - node.state_difference(&f0, &fm)) / (2.0 * eps);
            for k in 0..ndx {
                fx_err = fx_err.max((col[k] - nd.fx[(k, j)]).abs());
            }
        }
        let mut lu_err: f64 = 0.0;
        let mut fu_err: f64 = 0.0;
        for j in 0..nu {
            let mut up = u.clone();
            up[j] += eps;
            let mut um = u.clone();
            um[j] -= eps;
            let cp = node.cost(x, &up).unwrap();
            let cm = node.cost(x, &um).unwrap();
            lu_err = lu_err.max(((cp - cm) / (2.0 * eps) - nd.cost.lu[j]).abs());
            let fp = node.step(x, &up).unwrap();
            let fm = node.step(x, &um).unwrap();
            let col = (node.state_difference(&f0, &fp) - node.state_difference(&f0, &fm)) / (2.0 * eps);
            for k in 0..ndx {
                fu_err = fu_err.max((col[k] - nd.fu[(k, j)]).abs());
            }
        }
        println!(
            "knot {i:3} contacts {} cost {c0:.3e} | lx {lx_err:.2e} lu {lu_err:.2e} fx {fx_err:.2e} fu {fu_err:.2e}",
            gait.node_contacts[i].len()
        );
    }
}
