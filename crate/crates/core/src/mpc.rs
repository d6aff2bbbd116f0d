//! Receding-horizon loop and relaxed Lyapunov monitor.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{fmt_f64, propagate_steps, GridSpec, Trajectory};
use crate::model::{distance, Plant};
use crate::ocp::{solve, solve_multistart, OcpProblem, OcpSolution, SolverSettings};

/// Node constraint tolerance along the closed loop.
pub const NODE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    InfeasibleOcp,
    ConstraintViolation,
    NoConvergenceToGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcOptions {
    pub t_sim: f64,
    pub goal_radius: f64,
    pub node_tol: f64,
    pub solver: SolverSettings,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions {
            t_sim: 40.0,
            goal_radius: 1e-2,
            node_tol: NODE_TOL,
            solver: SolverSettings::default(),
        }
    }
}

/// One sampling instant of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub state: Vec<f64>,
    /// `V_T(x̂ₚ)` as returned by the solver.
    pub value: f64,
    /// `∫ ℓ` over the applied segment (absent at the final instant).
    pub stage_integral: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MpcRun {
    pub grid: GridSpec,
    pub x0: Vec<f64>,
    pub closed_loop: Trajectory,
    pub per_step: Vec<StepRecord>,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    /// Largest node constraint residual seen along the closed loop.
    pub max_node_violation: f64,
    pub final_distance: f64,
}

impl MpcRun {
    /// Flat closed-loop control sequence on the substep grid.
    pub fn applied_controls(&self) -> Vec<f64> {
        self.closed_loop
            .controls
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    /// Re-propagates the applied controls from `x0`.
    pub fn replay(&self, plant: &Plant) -> Result<Trajectory> {
        let steps = self.closed_loop.controls.len();
        propagate_steps(
            &plant.system,
            &plant.cost,
            &self.x0,
            &self.applied_controls(),
            self.grid.step(),
            steps,
            0.0,
        )
    }

    /// CSV of the sampled records: `step, t, x_i, value, stage_integral`.
    pub fn write_steps_csv<W: Write>(&self, out: W, report: Option<&LyapunovReport>) -> Result<()> {
        let n = self.x0.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend(["value".into(), "stage_integral".into(), "residual".into()]);
        w.write_record(&header)?;
        for rec in &self.per_step {
            let mut row = vec![rec.step.to_string(), fmt_f64(rec.time)];
            row.extend(rec.state.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(rec.value));
            row.push(rec.stage_integral.map(fmt_f64).unwrap_or_default());
            row.push(
                report
                    .and_then(|r| r.residuals.get(rec.step))
                    .map(|v| fmt_f64(*v))
                    .unwrap_or_default(),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            x0: self.x0.clone(),
            delta: self.grid.delta,
            horizon_steps: self.grid.horizon_steps,
            substeps: self.grid.substeps,
            success: self.success,
            failure_reason: self.failure_reason,
            samples: self.per_step.len(),
            final_time: *self.closed_loop.times.last().unwrap_or(&0.0),
            final_distance: self.final_distance,
            max_node_violation: self.max_node_violation,
            closed_loop_cost: self.closed_loop.total_cost(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub x0: Vec<f64>,
    pub delta: f64,
    pub horizon_steps: usize,
    pub substeps: usize,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub samples: usize,
    pub final_time: f64,
    pub final_distance: f64,
    pub max_node_violation: f64,
    pub closed_loop_cost: f64,
}

fn solve_step(
    problem: &OcpProblem<'_>,
    settings: &SolverSettings,
    warm: Option<&[f64]>,
) -> Result<OcpSolution> {
    match warm {
        Some(w) => match solve(problem, settings, Some(w)) {
            Ok(sol) if sol.converged => Ok(sol),
            // A poor shifted guess can stall; retry from the default starts.
            first => match solve_multistart(problem, settings) {
                Ok(sol) => Ok(sol),
                Err(e) => first.and(Err(e)),
            },
        },
        None => solve_multistart(problem, settings),
    }
}

/// Runs the sampled-data MPC loop from `x0`.
///
/// At every sampling instant the horizon-`T` problem is solved, the first
/// `δ`-segment is applied and the state is measured again. The loop stops
/// when `|x − x̄| ≤ goal_radius` (after solving there too, so the final
/// value is available to the monitor) or when `t_sim` is exhausted.
pub fn run_mpc(plant: &Plant, x0: &[f64], grid: GridSpec, options: &MpcOptions) -> Result<MpcRun> {
    if !(options.goal_radius > 0.0) {
        return Err(Error::Config("goal_radius must be positive".into()));
    }
    if !(options.t_sim >= 0.0 && options.t_sim.is_finite()) {
        return Err(Error::Config(format!(
            "t_sim = {} must be finite and nonnegative",
            options.t_sim
        )));
    }
    // Enough samples to cover t_sim; exact when t_sim is a multiple of δ.
    let samples = (options.t_sim / grid.delta - 1e-9).ceil().max(0.0) as usize;
    let n = plant.system.state_dim();
    let m = plant.system.input_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    let xbar = plant.system.equilibrium_state().to_vec();
    let k = grid.substeps;
    let seg = k * m;

    let mut closed = propagate_steps(&plant.system, &plant.cost, x0, &[], grid.step(), 0, 0.0)?;
    let mut per_step = Vec::new();
    let mut x = x0.to_vec();
    let mut warm: Option<Vec<f64>> = None;
    let mut max_node_violation = plant.constraints.state_box_violation(x0).max(0.0);
    let mut failure = None;
    let mut success = false;

    if max_node_violation > options.node_tol {
        failure = Some(FailureReason::ConstraintViolation);
    }

    let mut p = 0;
    while failure.is_none() {
        let time = p as f64 * grid.delta;
        let problem = OcpProblem::new(plant, grid, &x)?;
        let sol = match solve_step(&problem, &options.solver, warm.as_deref()) {
            Ok(s) => s,
            Err(Error::InfeasibleOcp { .. }) | Err(Error::Divergence { .. }) => {
                failure = Some(FailureReason::InfeasibleOcp);
                break;
            }
            Err(e) => return Err(e),
        };
        per_step.push(StepRecord {
            step: p,
            time,
            state: x.clone(),
            value: sol.value,
            stage_integral: None,
            iterations: sol.iterations,
            converged: sol.converged,
            max_violation: sol.max_violation,
            grad_norm: sol.grad_norm,
        });
        if distance(&x, &xbar) <= options.goal_radius {
            success = true;
            break;
        }
        if p >= samples {
            failure = Some(FailureReason::NoConvergenceToGoal);
            break;
        }
        let first = &sol.controls[..seg];
        let segment = propagate_steps(&plant.system, &plant.cost, &x, first, grid.step(), k, time)?;
        // Node constraints on the applied segment (mixed constraints use the held input).
        for (i, xs) in segment.states.iter().enumerate().skip(1) {
            let u = &segment.controls[i - 1];
            max_node_violation = max_node_violation.max(plant.constraints.violation(xs, u));
        }
        if let Some(last) = per_step.last_mut() {
            last.stage_integral = Some(segment.total_cost());
        }
        closed.extend_with(&segment);
        x = segment.final_state().to_vec();
        if max_node_violation > options.node_tol {
            failure = Some(FailureReason::ConstraintViolation);
            break;
        }
        let mut shifted = sol.controls[seg..].to_vec();
        let tail = sol.controls[sol.controls.len() - seg..].to_vec();
        shifted.extend_from_slice(&tail);
        warm = Some(shifted);
        p += 1;
    }

    Ok(MpcRun {
        grid,
        x0: x0.to_vec(),
        final_distance: distance(closed.final_state(), &xbar),
        closed_loop: closed,
        per_step,
        success: success && failure.is_none(),
        failure_reason: failure,
        max_node_violation,
    })
}

/// Least `N ∈ 1..=n_max` for which [`run_mpc`] succeeds (upward scan).
pub fn smallest_horizon(
    plant: &Plant,
    x0: &[f64],
    delta: f64,
    substeps: usize,
    n_max: usize,
    options: &MpcOptions,
) -> Result<Option<usize>> {
    for n in 1..=n_max {
        let grid = GridSpec::with_substeps(delta, substeps, n)?;
        let run = run_mpc(plant, x0, grid, options)?;
        log::debug!(
            "x0 = {x0:?}, delta = {delta}, N = {n}: success = {}",
            run.success
        );
        if run.success {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub alpha: f64,
    /// `r_p = V_T(x̂_{p+1}) − V_T(x̂_p) + (1−α)∫ℓ` for each applied step.
    pub residuals: Vec<f64>,
    pub worst_residual: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Relaxed Lyapunov residuals along a run.
pub fn lyapunov_monitor(run: &MpcRun, alpha: f64, slack: f64) -> Result<LyapunovReport> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::domain(
            format!("alpha = {alpha} is outside [0, 1)"),
            "use the certificate's alpha",
        ));
    }
    let residuals: Vec<f64> = run
        .per_step
        .windows(2)
        .map(|w| {
            let integral = w[0].stage_integral.unwrap_or(0.0);
            w[1].value - w[0].value + (1.0 - alpha) * integral
        })
        .collect();
    let worst = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst_residual = if residuals.is_empty() { 0.0 } else { worst };
    Ok(LyapunovReport {
        alpha,
        passed: worst_residual <= slack,
        residuals,
        worst_residual,
        slack,
    })
}
