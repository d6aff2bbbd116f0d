//! Finite-horizon optimal control by direct transcription.
//!
//! Decision variables are the piecewise-constant control values on the RK4
//! substep grid. The objective is the RK4 quadrature of `J_T`; its gradient
//! comes from a reverse sweep through the exact discrete RK4 scheme. Input
//! boxes are enforced by projection, state and mixed constraints (checked at
//! every substep node) by a Powell–Hestenes–Rockafellar augmented
//! Lagrangian. The inner problem is solved by spectral projected gradient
//! with nonmonotone Armijo backtracking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    propagate, rk4_cost_step, GridSpec, Rk4Workspace, Trajectory, DIVERGENCE_NORM, STAGE_SHIFT,
    STAGE_WEIGHT,
};
use crate::model::{norm, Plant};

/// Solver tolerances, iteration caps and penalty schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Largest accepted node constraint residual for `converged`.
    pub feas_tol: f64,
    /// Projected-gradient tolerance (gradient taken w.r.t. the control
    /// function, i.e. divided by the step size).
    pub grad_tol: f64,
    /// Residual above which the problem is declared infeasible once the
    /// penalty has been fully escalated.
    pub infeasible_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub armijo: f64,
    pub nonmonotone_memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-6,
            grad_tol: 1e-6,
            infeasible_tol: 1e-3,
            max_outer: 30,
            max_inner: 2000,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e8,
            armijo: 1e-4,
            nonmonotone_memory: 10,
        }
    }
}

impl SolverSettings {
    /// Slack allowed on certified decrease inequalities.
    pub fn slack_budget(&self) -> f64 {
        2.0 * self.grad_tol.max(self.feas_tol)
    }
}

/// One finite-horizon problem `inf_{u ∈ U_T(x0)} J_T(x0, u)`.
#[derive(Debug, Clone)]
pub struct OcpProblem<'a> {
    pub plant: &'a Plant,
    pub grid: GridSpec,
    pub x0: Vec<f64>,
}

impl<'a> OcpProblem<'a> {
    pub fn new(plant: &'a Plant, grid: GridSpec, x0: &[f64]) -> Result<Self> {
        if x0.len() != plant.system.state_dim() {
            return Err(Error::Dimension(format!(
                "x0 has length {}, expected {}",
                x0.len(),
                plant.system.state_dim()
            )));
        }
        Ok(OcpProblem {
            plant,
            grid,
            x0: x0.to_vec(),
        })
    }

    pub fn num_controls(&self) -> usize {
        self.grid.total_steps() * self.plant.system.input_dim()
    }

    /// Controls obtained by projecting `ū` onto the input box.
    pub fn equilibrium_controls(&self) -> Vec<f64> {
        let mut u = self.plant.system.equilibrium_input().to_vec();
        self.plant.constraints.project_input(&mut u);
        u.iter()
            .copied()
            .cycle()
            .take(self.num_controls())
            .collect()
    }

    pub fn trajectory(&self, controls: &[f64]) -> Result<Trajectory> {
        propagate(
            &self.plant.system,
            &self.plant.cost,
            &self.x0,
            controls,
            &self.grid,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcpSolution {
    pub controls: Vec<f64>,
    /// Achieved `J_T` of `controls`.
    pub value: f64,
    pub max_violation: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub final_rho: f64,
    /// Multiplier per (node, path constraint), node-major.
    pub multipliers: Vec<f64>,
}

/// Transcribed problem with reusable buffers.
struct Transcription<'p, 'a> {
    problem: &'p OcpProblem<'a>,
    n: usize,
    m: usize,
    p: usize,
    steps: usize,
    h: f64,
    nodes: Vec<f64>,
    stages: Vec<f64>,
    residuals: Vec<f64>,
    ws: Rk4Workspace,
    jx: Vec<f64>,
    ju: Vec<f64>,
    lx: Vec<f64>,
    lu: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    merit: f64,
    cost: f64,
    violation: f64,
}

impl<'p, 'a> Transcription<'p, 'a> {
    fn new(problem: &'p OcpProblem<'a>) -> Self {
        let n = problem.plant.system.state_dim();
        let m = problem.plant.system.input_dim();
        let p = problem.plant.constraints.path_count();
        let steps = problem.grid.total_steps();
        Transcription {
            problem,
            n,
            m,
            p,
            steps,
            h: problem.grid.step(),
            nodes: vec![0.0; (steps + 1) * n],
            stages: vec![0.0; steps * 4 * n],
            residuals: vec![0.0; (steps + 1) * p],
            ws: Rk4Workspace::new(n),
            jx: vec![0.0; n * n],
            ju: vec![0.0; n * m],
            lx: vec![0.0; n],
            lu: vec![0.0; m],
        }
    }

    fn node_control<'u>(&self, u: &'u [f64], node: usize) -> &'u [f64] {
        let i = node.min(self.steps - 1);
        &u[i * self.m..(i + 1) * self.m]
    }

    /// Forward sweep; fills nodes, stage inputs and residuals.
    fn forward(&mut self, u: &[f64], mult: &[f64], rho: f64) -> Result<Eval> {
        let (n, m, p, h) = (self.n, self.m, self.p, self.h);
        let sys = &self.problem.plant.system;
        let cost_fn = &self.problem.plant.cost;
        let cons = &self.problem.plant.constraints;
        self.nodes[..n].copy_from_slice(&self.problem.x0);
        let mut cost = 0.0;
        for i in 0..self.steps {
            let (head, tail) = self.nodes.split_at_mut((i + 1) * n);
            let x = &head[i * n..];
            let next = &mut tail[..n];
            cost += rk4_cost_step(
                sys,
                cost_fn,
                x,
                &u[i * m..(i + 1) * m],
                h,
                &mut self.ws,
                next,
            );
            for s in 0..4 {
                let off = (i * 4 + s) * n;
                self.stages[off..off + n].copy_from_slice(&self.ws.stage_x[s]);
            }
            let nx = norm(next);
            if !nx.is_finite() || nx > DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    time: (i + 1) as f64 * h,
                    norm: nx,
                });
            }
        }
        let mut penalty = 0.0;
        let mut violation: f64 = 0.0;
        if p > 0 {
            for node in 0..=self.steps {
                let x = &self.nodes[node * n..(node + 1) * n];
                let uc = self.node_control(u, node);
                let r = &mut self.residuals[node * p..(node + 1) * p];
                cons.path_residuals(x, uc, r);
                for (j, g) in r.iter().enumerate() {
                    violation = violation.max(*g);
                    let lam = mult[node * p + j];
                    let shifted = (lam + rho * g).max(0.0);
                    penalty += (shifted * shifted - lam * lam) / (2.0 * rho);
                }
            }
        }
        Ok(Eval {
            merit: cost + h * penalty,
            cost,
            violation,
        })
    }

    /// Forward plus reverse sweep; `grad` receives `∂merit/∂u`.
    fn value_and_gradient(
        &mut self,
        u: &[f64],
        mult: &[f64],
        rho: f64,
        grad: &mut [f64],
    ) -> Result<Eval> {
        let eval = self.forward(u, mult, rho)?;
        let (n, m, p, h) = (self.n, self.m, self.p, self.h);
        let sys = &self.problem.plant.system;
        let cost_fn = &self.problem.plant.cost;
        let cons = &self.problem.plant.constraints;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let mut adj = vec![0.0; n];
        let mut bar_k = vec![0.0; n];
        let mut bar_y = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut gx_node = vec![0.0; n];
        let mut gu_node = vec![0.0; m];

        // Penalty sensitivity at node `node`, added into adj / grad.
        let mut node_penalty =
            |node: usize, adj: &mut [f64], grad: &mut [f64], nodes: &[f64], residuals: &[f64]| {
                if p == 0 {
                    return;
                }
                let x = &nodes[node * n..(node + 1) * n];
                let ci = node.min(self.steps - 1);
                let uc = &u[ci * m..(ci + 1) * m];
                gx_node.iter_mut().for_each(|v| *v = 0.0);
                gu_node.iter_mut().for_each(|v| *v = 0.0);
                let mut any = false;
                for j in 0..p {
                    let g = residuals[node * p + j];
                    let w = (mult[node * p + j] + rho * g).max(0.0);
                    if w > 0.0 {
                        any = true;
                        cons.add_path_gradient(j, h * w, x, uc, &mut gx_node, &mut gu_node);
                    }
                }
                if any {
                    for (a, b) in adj.iter_mut().zip(&gx_node) {
                        *a += b;
                    }
                    for (a, b) in grad[ci * m..(ci + 1) * m].iter_mut().zip(&gu_node) {
                        *a += b;
                    }
                }
            };

        node_penalty(self.steps, &mut adj, grad, &self.nodes, &self.residuals);
        for i in (0..self.steps).rev() {
            let uc = &u[i * m..(i + 1) * m];
            let gu = &mut grad[i * m..(i + 1) * m];
            // Reverse through the four stages; bar_k is the adjoint of slope k_s.
            for s in (0..4).rev() {
                let ys = &self.stages[(i * 4 + s) * n..(i * 4 + s + 1) * n];
                for j in 0..n {
                    bar_k[j] = h * STAGE_WEIGHT[s] * adj[j];
                    if s < 3 {
                        bar_k[j] += h * STAGE_SHIFT[s] * bar_y[s + 1][j];
                    }
                }
                sys.jacobians(ys, uc, &mut self.jx, &mut self.ju);
                cost_fn.gradient(ys, uc, &mut self.lx, &mut self.lu);
                let cw = h * STAGE_WEIGHT[s];
                let by = &mut bar_y[s];
                for c in 0..n {
                    let mut acc = cw * self.lx[c];
                    for r in 0..n {
                        acc += self.jx[r * n + c] * bar_k[r];
                    }
                    by[c] = acc;
                }
                for c in 0..m {
                    let mut acc = cw * self.lu[c];
                    for r in 0..n {
                        acc += self.ju[r * m + c] * bar_k[r];
                    }
                    gu[c] += acc;
                }
            }
            for j in 0..n {
                adj[j] += bar_y[0][j] + bar_y[1][j] + bar_y[2][j] + bar_y[3][j];
            }
            node_penalty(i, &mut adj, grad, &self.nodes, &self.residuals);
        }
        Ok(eval)
    }

    fn update_multipliers(&self, mult: &mut [f64], rho: f64) {
        for (lam, g) in mult.iter_mut().zip(&self.residuals) {
            *lam = (*lam + rho * g).max(0.0);
        }
    }
}

/// `‖P(u − g/h) − u‖_∞`.
fn projected_gradient_norm(
    problem: &OcpProblem<'_>,
    u: &[f64],
    grad: &[f64],
    h: f64,
    buf: &mut [f64],
) -> f64 {
    for ((b, ui), gi) in buf.iter_mut().zip(u).zip(grad) {
        *b = ui - gi / h;
    }
    project_all(problem, buf);
    buf.iter()
        .zip(u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn project_all(problem: &OcpProblem<'_>, u: &mut [f64]) {
    let m = problem.plant.system.input_dim();
    for chunk in u.chunks_mut(m) {
        problem.plant.constraints.project_input(chunk);
    }
}

struct InnerOutcome {
    pg_norm: f64,
    iterations: usize,
}

/// Spectral projected gradient on the augmented Lagrangian.
fn spg(
    tr: &mut Transcription<'_, '_>,
    settings: &SolverSettings,
    u: &mut Vec<f64>,
    mult: &[f64],
    rho: f64,
    tol: f64,
) -> Result<InnerOutcome> {
    const ALPHA_MIN: f64 = 1e-12;
    const ALPHA_MAX: f64 = 1e12;
    let problem = tr.problem;
    let h = tr.h;
    let len = u.len();
    let mut grad = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut trial_grad = vec![0.0; len];
    let mut dir = vec![0.0; len];
    let mut buf = vec![0.0; len];

    let mut eval = tr.value_and_gradient(u, mult, rho, &mut grad)?;
    let mut pg = projected_gradient_norm(problem, u, &grad, h, &mut buf);
    let mut history = vec![eval.merit];
    let mut alpha = if pg > 0.0 {
        (1.0 / pg).clamp(ALPHA_MIN, ALPHA_MAX)
    } else {
        1.0
    };
    let mut iterations = 0;

    while pg > tol && iterations < settings.max_inner {
        iterations += 1;
        for ((d, ui), gi) in dir.iter_mut().zip(u.iter()).zip(&grad) {
            *d = ui - alpha * gi / h;
        }
        project_all(problem, &mut dir);
        let mut slope = 0.0;
        for ((d, ui), gi) in dir.iter_mut().zip(u.iter()).zip(&grad) {
            *d -= ui;
            slope += gi * *d;
        }
        if slope >= 0.0 {
            break;
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for ((x, ui), d) in trial.iter_mut().zip(u.iter()).zip(&dir) {
                *x = ui + t * d;
            }
            match tr.value_and_gradient(&trial, mult, rho, &mut trial_grad) {
                Ok(te) if te.merit <= reference + settings.armijo * t * slope => {
                    accepted = Some(te);
                    break;
                }
                Ok(te) => {
                    // Safeguarded quadratic interpolation of the merit along the arc.
                    let denom = 2.0 * (te.merit - eval.merit - t * slope);
                    let t_quad = if denom > 0.0 {
                        -slope * t * t / denom
                    } else {
                        0.5 * t
                    };
                    t = t_quad.clamp(0.1 * t, 0.5 * t);
                }
                Err(Error::Divergence { .. }) => t *= 0.1,
                Err(e) => return Err(e),
            }
        }
        let Some(new_eval) = accepted else { break };
        let mut ss = 0.0;
        let mut sy = 0.0;
        for j in 0..len {
            let s = trial[j] - u[j];
            let y = (trial_grad[j] - grad[j]) / h;
            ss += s * s;
            sy += s * y;
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(ALPHA_MIN, ALPHA_MAX)
        } else {
            ALPHA_MAX.min(1e3 * alpha)
        };
        std::mem::swap(u, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        eval = new_eval;
        history.push(eval.merit);
        if history.len() > settings.nonmonotone_memory.max(1) {
            history.remove(0);
        }
        pg = projected_gradient_norm(problem, u, &grad, h, &mut buf);
        if ss == 0.0 {
            break;
        }
    }
    Ok(InnerOutcome {
        pg_norm: pg,
        iterations,
    })
}

/// Solves the transcribed problem from `warm_start` (or the projected
/// equilibrium input). Deterministic for fixed inputs.
pub fn solve(
    problem: &OcpProblem<'_>,
    settings: &SolverSettings,
    warm_start: Option<&[f64]>,
) -> Result<OcpSolution> {
    let len = problem.num_controls();
    let mut u = match warm_start {
        Some(w) if w.len() == len => w.to_vec(),
        Some(w) => {
            return Err(Error::Dimension(format!(
                "warm start has length {}, expected {len}",
                w.len()
            )))
        }
        None => problem.equilibrium_controls(),
    };
    project_all(problem, &mut u);

    let mut tr = Transcription::new(problem);
    let mut mult = vec![0.0; (tr.steps + 1) * tr.p];
    let mut rho = settings.rho_init;
    let mut prev_violation = f64::INFINITY;
    let mut total_iterations = 0;
    let mut best: Option<(Vec<f64>, Eval, f64)> = None;
    let mut outer = 0;
    let mut converged = false;
    let mut last_pg = f64::INFINITY;

    while outer < settings.max_outer {
        outer += 1;
        let tol = if tr.p == 0 {
            settings.grad_tol
        } else {
            settings.grad_tol.max(1e-2 * 0.1f64.powi(outer as i32 - 1))
        };
        let inner = spg(&mut tr, settings, &mut u, &mult, rho, tol)?;
        total_iterations += inner.iterations;
        // Recompute residuals at the accepted iterate (the last trial may differ).
        let eval = tr.forward(&u, &mult, rho)?;
        last_pg = inner.pg_norm;
        let better = match &best {
            None => true,
            Some((_, b, _)) => {
                let feasible_now = eval.violation <= settings.feas_tol;
                let feasible_best = b.violation <= settings.feas_tol;
                match (feasible_now, feasible_best) {
                    (true, true) => eval.cost <= b.cost,
                    (true, false) => true,
                    (false, true) => false,
                    (false, false) => eval.violation <= b.violation,
                }
            }
        };
        if better {
            best = Some((u.clone(), eval, inner.pg_norm));
        }
        if eval.violation <= settings.feas_tol && inner.pg_norm <= settings.grad_tol {
            converged = true;
            break;
        }
        if tr.p == 0 {
            // Unconstrained up to projection: nothing left to escalate.
            break;
        }
        if rho >= settings.rho_max && eval.violation > settings.infeasible_tol {
            break;
        }
        tr.update_multipliers(&mut mult, rho);
        if eval.violation > settings.feas_tol && eval.violation > 0.25 * prev_violation {
            rho = (rho * settings.rho_growth).min(settings.rho_max);
        }
        prev_violation = eval.violation;
    }

    let (controls, pg) = if converged {
        (u, last_pg)
    } else {
        let (bu, _, bpg) = best.expect("at least one outer iteration ran");
        (bu, bpg)
    };
    let final_eval = tr.forward(&controls, &mult, rho)?;
    let max_violation = final_eval.violation.max(0.0);
    if !converged && max_violation > settings.infeasible_tol {
        return Err(Error::InfeasibleOcp { max_violation });
    }
    Ok(OcpSolution {
        controls,
        value: final_eval.cost,
        max_violation,
        grad_norm: pg,
        iterations: total_iterations,
        outer_iterations: outer,
        converged,
        final_rho: rho,
        multipliers: mult,
    })
}

/// Augmented objective `J_T + h Σ ψ(g, λ, ρ)` and its adjoint gradient.
/// `multipliers` must hold one entry per (node, path constraint).
pub fn augmented_objective(
    problem: &OcpProblem<'_>,
    controls: &[f64],
    multipliers: &[f64],
    rho: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut tr = Transcription::new(problem);
    if controls.len() != problem.num_controls() || multipliers.len() != (tr.steps + 1) * tr.p {
        return Err(Error::Dimension(
            "controls or multipliers have the wrong length".into(),
        ));
    }
    let mut grad = vec![0.0; controls.len()];
    let e = tr.value_and_gradient(controls, multipliers, rho, &mut grad)?;
    Ok((e.merit, grad))
}

/// Worst relative error between the adjoint gradient and central finite
/// differences (step `1e-6`) over `probes` random coordinates.
pub fn gradient_check(
    problem: &OcpProblem<'_>,
    controls: &[f64],
    multipliers: &[f64],
    rho: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let (_, grad) = augmented_objective(problem, controls, multipliers, rho)?;
    let mut tr = Transcription::new(problem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = controls.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..probes.min(controls.len().max(1)) {
        let j = rng.gen_range(0..controls.len());
        let eps = 1e-6 * controls[j].abs().max(1.0);
        work[j] = controls[j] + eps;
        let fp = tr.forward(&work, multipliers, rho)?.merit;
        work[j] = controls[j] - eps;
        let fm = tr.forward(&work, multipliers, rho)?.merit;
        work[j] = controls[j];
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Controls from holding `sat(F x)` on each substep, `F` the LQR gain of
/// the plant's linear model (if any).
pub fn lqr_warm_start(problem: &OcpProblem<'_>) -> Option<Vec<f64>> {
    let gain = crate::certify::care::plant_lqr_gain(problem.plant).ok()?;
    let n = problem.plant.system.state_dim();
    let m = problem.plant.system.input_dim();
    let xbar = problem.plant.system.equilibrium_state();
    let ubar = problem.plant.system.equilibrium_input();
    let h = problem.grid.step();
    let steps = problem.grid.total_steps();
    let mut x = problem.x0.clone();
    let mut next = vec![0.0; n];
    let mut ws = Rk4Workspace::new(n);
    let mut out = Vec::with_capacity(steps * m);
    let mut u = vec![0.0; m];
    for _ in 0..steps {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = ubar[i] + (0..n).map(|j| gain[(i, j)] * (x[j] - xbar[j])).sum::<f64>();
        }
        problem.plant.constraints.project_input(&mut u);
        out.extend_from_slice(&u);
        rk4_cost_step(
            &problem.plant.system,
            &problem.plant.cost,
            &x,
            &u,
            h,
            &mut ws,
            &mut next,
        );
        if !norm(&next).is_finite() || norm(&next) > DIVERGENCE_NORM {
            return None;
        }
        std::mem::swap(&mut x, &mut next);
    }
    Some(out)
}

/// Best solution over the equilibrium-input and LQR warm starts.
pub fn solve_multistart(
    problem: &OcpProblem<'_>,
    settings: &SolverSettings,
) -> Result<OcpSolution> {
    let mut starts = vec![problem.equilibrium_controls()];
    if let Some(w) = lqr_warm_start(problem) {
        starts.push(w);
    }
    let mut best: Option<OcpSolution> = None;
    let mut last_err = None;
    for w in &starts {
        match solve(problem, settings, Some(w)) {
            Ok(sol) => {
                let replace = best.as_ref().is_none_or(|b| {
                    (sol.max_violation <= settings.feas_tol && sol.value < b.value)
                        || (b.max_violation > settings.feas_tol
                            && sol.max_violation < b.max_violation)
                });
                if replace {
                    best = Some(sol);
                }
            }
            Err(e @ Error::InfeasibleOcp { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(Error::InfeasibleOcp {
            max_violation: f64::INFINITY,
        })
    })
}

/// Approximate `V_T(x0)` on a uniform grid of step `step`;
/// `f64::INFINITY` when no admissible control is found.
pub fn value_function(
    plant: &Plant,
    x0: &[f64],
    horizon: f64,
    step: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    if !(horizon > 0.0 && step > 0.0) {
        return Err(Error::domain(
            format!("horizon {horizon} and step {step} must be positive"),
            "pass T > 0 and a positive step",
        ));
    }
    if !plant.constraints.state_in_box(x0, 0.0) {
        return Ok(f64::INFINITY);
    }
    let steps = (horizon / step).round().max(1.0) as usize;
    let grid = GridSpec::with_substeps(horizon, steps, 1)?;
    let problem = OcpProblem::new(plant, grid, x0)?;
    match solve_multistart(&problem, settings) {
        Ok(sol) => Ok(sol.value),
        Err(Error::InfeasibleOcp { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Bound, ConstraintSpec, ControlSystem, LinearSystem, QuadraticCost, StageCost,
    };
    use nalgebra::{DMatrix, DVector};

    fn di() -> Plant {
        Plant::from_registry("double_integrator").unwrap()
    }

    fn wide_box_di() -> Plant {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = ControlSystem::from_linear(LinearSystem::new(a, b).unwrap());
        let cons = ConstraintSpec::new(2, 1)
            .with_input_box(vec![Bound::symmetric(100.0)])
            .unwrap()
            .with_state_box(vec![Bound::symmetric(100.0); 2])
            .unwrap();
        let cost =
            QuadraticCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), None).unwrap();
        Plant::new(sys, cons, StageCost::Quadratic(cost)).unwrap()
    }

    /// Gradient of the RK4-discretized LQ cost from the lifted linear map
    /// `x_i = Φ^i x0 + Σ Φ^{i−1−j} Γ u_j` and the stage-input matrices.
    fn lifted_lq_gradient(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: f64,
        x0: &[f64],
        u: &[f64],
        h: f64,
    ) -> Vec<f64> {
        let n = a.nrows();
        let s = u.len();
        let eye = DMatrix::<f64>::identity(n, n);
        // Stage inputs y_s = E_s x + G_s u, slopes k_s = A y_s + B u.
        let mut e = vec![eye.clone()];
        let mut g = vec![DMatrix::zeros(n, 1)];
        let shifts = [0.5, 0.5, 1.0];
        let mut ke = vec![a * &e[0]];
        let mut kg = vec![a * &g[0] + b];
        for c in shifts {
            let en = &eye + &ke[ke.len() - 1] * (c * h);
            let gn = &g[0] + &kg[kg.len() - 1] * (c * h);
            ke.push(a * &en);
            kg.push(a * &gn + b);
            e.push(en);
            g.push(gn);
        }
        let w = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        let mut phi = eye.clone();
        let mut gam = DMatrix::zeros(n, 1);
        for st in 0..4 {
            phi += &ke[st] * (h * w[st]);
            gam += &kg[st] * (h * w[st]);
        }
        // Lifted states: x_i = Sx_i x0 + Su_i u.
        let mut sx = vec![eye.clone()];
        let mut su = vec![DMatrix::<f64>::zeros(n, s)];
        for i in 0..s {
            let nx = &phi * &sx[i];
            let mut nu = &phi * &su[i];
            for rr in 0..n {
                nu[(rr, i)] += gam[(rr, 0)];
            }
            sx.push(nx);
            su.push(nu);
        }
        let x0v = DVector::from_column_slice(x0);
        let uv = DVector::from_column_slice(u);
        let mut grad = DVector::zeros(s);
        for i in 0..s {
            let mut sel = DMatrix::<f64>::zeros(1, s);
            sel[(0, i)] = 1.0;
            for st in 0..4 {
                // y = E (Sx x0 + Su u) + G e_iᵀ u
                let ly = &e[st] * &su[i] + &g[st] * &sel;
                let y = &e[st] * (&sx[i] * &x0v) + &ly * &uv;
                grad += (ly.transpose() * q * &y) * (2.0 * h * w[st]);
                grad[i] += 2.0 * h * w[st] * r * u[i];
            }
        }
        grad.iter().copied().collect()
    }

    #[test]
    fn adjoint_matches_lifted_lq_gradient() {
        let plant = wide_box_di();
        let grid = GridSpec::with_substeps(0.1, 5, 6).unwrap();
        let prob = OcpProblem::new(&plant, grid, &[0.4, -0.3]).unwrap();
        let u: Vec<f64> = (0..prob.num_controls())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let mult = vec![0.0; (prob.num_controls() + 1) * plant.constraints.path_count()];
        let (_, g) = augmented_objective(&prob, &u, &mult, 10.0).unwrap();
        let lin = plant.system.linear().unwrap();
        let oracle = lifted_lq_gradient(
            lin.a(),
            lin.b(),
            &DMatrix::identity(2, 2),
            1.0,
            &prob.x0,
            &u,
            grid.step(),
        );
        for (a, b) in g.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_matches_finite_differences_with_active_penalty() {
        let plant = di();
        let grid = GridSpec::with_substeps(0.1, 4, 8).unwrap();
        let prob = OcpProblem::new(&plant, grid, &[0.9, 0.8]).unwrap();
        let u: Vec<f64> = (0..prob.num_controls())
            .map(|i| 0.3 * (i as f64).cos())
            .collect();
        let mult: Vec<f64> = (0..(prob.num_controls() + 1) * plant.constraints.path_count())
            .map(|i| 0.1 * (i % 3) as f64)
            .collect();
        let err = gradient_check(&prob, &u, &mult, 100.0, 20, 3).unwrap();
        assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn unconstrained_lq_value_matches_riccati() {
        let plant = wide_box_di();
        let grid = GridSpec::with_substeps(0.1, 2, 100).unwrap();
        let x0 = [0.5, 0.5];
        let prob = OcpProblem::new(&plant, grid, &x0).unwrap();
        let sol = solve(&prob, &SolverSettings::default(), None).unwrap();
        let s3 = 3f64.sqrt();
        let exact = s3 * 0.25 + 2.0 * 0.25 + s3 * 0.25;
        assert!(
            (sol.value - exact).abs() <= 0.02 * exact,
            "{} vs {exact}",
            sol.value
        );
        assert!(sol.converged);
        let traj = prob.trajectory(&sol.controls).unwrap();
        assert!((traj.total_cost() - sol.value).abs() <= 1e-9);
    }

    #[test]
    fn constrained_solution_is_feasible_and_warm_start_is_fixed_point() {
        let plant = di();
        let grid = GridSpec::new(0.1, 7).unwrap();
        let prob = OcpProblem::new(&plant, grid, &[0.6, 0.6]).unwrap();
        let settings = SolverSettings::default();
        let sol = solve(&prob, &settings, None).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!(sol.max_violation <= settings.feas_tol);
        let again = solve(&prob, &settings, Some(&sol.controls)).unwrap();
        assert!((again.value - sol.value).abs() <= 1e-6 * sol.value.max(1.0));
    }

    #[test]
    fn value_is_monotone_in_horizon() {
        let plant = di();
        let settings = SolverSettings::default();
        let mut prev = 0.0;
        for t in [0.5, 1.0, 2.0, 4.0] {
            let v = value_function(&plant, &[0.5, 0.3], t, 0.02, &settings).unwrap();
            assert!(v + 1e-6 >= prev, "V_{t} = {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn outside_kernel_is_infinite() {
        let plant = di();
        // Moving right at full speed from the right edge cannot be stopped.
        let v = value_function(&plant, &[0.9, 0.9], 2.0, 0.02, &SolverSettings::default()).unwrap();
        assert!(v.is_infinite());
        let v = value_function(&plant, &[1.5, 0.0], 2.0, 0.02, &SolverSettings::default()).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn scalar_boundary_value_grows_linearly() {
        let plant = Plant::from_registry("scalar_unstable").unwrap();
        let settings = SolverSettings::default();
        let v1 = value_function(&plant, &[1.0], 2.0, 0.02, &settings).unwrap();
        let v2 = value_function(&plant, &[1.0], 4.0, 0.02, &settings).unwrap();
        assert!(v1 <= 4.0 + 1e-6);
        assert!(((v2 - v1) - 4.0).abs() < 0.05, "{v1} {v2}");
    }
}
