//! Batch experiments behind the command-line subcommands.
//!
//! Every command writes its artifacts into an output directory and returns
//! a [`CommandReport`] whose `mismatch` flag records a disagreement with the
//! reference results of the double-integrator study. Parallel work is
//! collected by input index, so outputs do not depend on scheduling.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::certify::care::plant_lq_constants;
use crate::certify::construction::{
    bound_v_infinity_constructive, kernel_samples, ConstructionBound, ConstructionOptions,
};
use crate::certify::pipeline::{certify, CertifyOptions, CertifyReport};
use crate::certify::profile::{distance_profile, DistanceProfile, ProfileOptions};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::integrate::{fmt_f64, GridSpec};
use crate::model::Plant;
use crate::mpc::{lyapunov_monitor, run_mpc, smallest_horizon, MpcOptions, RunSummary};
use crate::viability::{
    double_integrator_kernel, inner_approximation, interior_ball_radius, BarrierCurve,
    InnerApproxOptions, DOUBLE_INTEGRATOR_KERNEL_AREA,
};

/// Initial states of the horizon table.
pub const TABLE1_X0: [[f64; 2]; 3] = [[0.5, 0.5], [0.6, 0.6], [0.7, 0.7]];
/// Sampling periods of the horizon table.
pub const TABLE1_DELTAS: [f64; 3] = [0.1, 0.05, 0.03];
/// Reference smallest horizons, rows by initial state, columns by `δ`.
pub const TABLE1_REFERENCE: [[usize; 3]; 3] = [[4, 7, 10], [4, 7, 11], [5, 10, 14]];
/// Allowed deviation from [`TABLE1_REFERENCE`].
pub const TABLE1_TOLERANCE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureCase {
    pub name: &'static str,
    pub x0: [f64; 2],
    pub n: usize,
}

/// Closed-loop runs of the trajectory figure, all at `δ = 0.1`.
pub const FIGURE1_CASES: [FigureCase; 4] = [
    FigureCase {
        name: "red",
        x0: [0.5, 0.5],
        n: 4,
    },
    FigureCase {
        name: "blue",
        x0: [0.6, 0.6],
        n: 4,
    },
    FigureCase {
        name: "green",
        x0: [0.7, 0.7],
        n: 5,
    },
    FigureCase {
        name: "magenta",
        x0: [0.733, 0.73],
        n: 7,
    },
];
pub const FIGURE1_DELTA: f64 = 0.1;
/// Simulated time within which the reference runs reach the goal radius.
pub const FIGURE1_GOAL_TIME: f64 = 10.0;

/// Outcome of a command.
#[derive(Debug, Clone, Default)]
pub struct CommandReport {
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
    /// Disagreement with the reference results.
    pub mismatch: bool,
    pub files: Vec<PathBuf>,
}

fn create(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(
    out: &Path,
    name: &str,
    value: &T,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut w = create(out, name, files)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn mpc_options(cfg: &ExperimentConfig) -> MpcOptions {
    let d = MpcOptions::default();
    MpcOptions {
        t_sim: cfg.experiment.t_sim.unwrap_or(d.t_sim),
        goal_radius: cfg.experiment.goal_radius.unwrap_or(d.goal_radius),
        node_tol: d.node_tol,
        solver: cfg.solver.clone(),
    }
}

fn substeps(cfg: &ExperimentConfig) -> usize {
    cfg.experiment.substeps.unwrap_or(10)
}

fn x0_list(cfg: &ExperimentConfig, default: &[[f64; 2]]) -> Vec<Vec<f64>> {
    cfg.experiment
        .x0
        .clone()
        .unwrap_or_else(|| default.iter().map(|x| x.to_vec()).collect())
}

fn check_dims(plant: &Plant, states: &[Vec<f64>]) -> Result<()> {
    let n = plant.system.state_dim();
    match states.iter().find(|x| x.len() != n) {
        Some(x) => Err(Error::Config(format!(
            "state {x:?} does not have {n} components"
        ))),
        None => Ok(()),
    }
}

/// Closed-loop runs for every `(x0, δ)` at horizon `N`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let plant = cfg.plant()?;
    let x0s = x0_list(cfg, &[[0.5, 0.5]]);
    check_dims(&plant, &x0s)?;
    let deltas = cfg.experiment.deltas.clone().unwrap_or_else(|| vec![0.1]);
    let n = cfg.experiment.n.unwrap_or(4);
    let k = substeps(cfg);
    let options = mpc_options(cfg);
    let jobs: Vec<(usize, usize)> = (0..x0s.len())
        .flat_map(|i| (0..deltas.len()).map(move |j| (i, j)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, j)| {
            run_mpc(
                &plant,
                &x0s[i],
                GridSpec::with_substeps(deltas[j], k, n)?,
                &options,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = CommandReport::default();
    let mut summaries = Vec::with_capacity(runs.len());
    for (&(i, j), run) in jobs.iter().zip(&runs) {
        let stem = format!("simulate_{i}_{j}");
        run.closed_loop.write_csv(create(
            out,
            &format!("{stem}_trajectory.csv"),
            &mut report.files,
        )?)?;
        run.write_steps_csv(
            create(out, &format!("{stem}_steps.csv"), &mut report.files)?,
            None,
        )?;
        let s = run.summary();
        report.lines.push(format!(
            "x0 = {:?}, delta = {}, N = {n}: {} (|x| = {:.3e} at t = {:.2}, max node violation {:.1e})",
            s.x0,
            s.delta,
            if s.success { "success" } else { "failure" },
            s.final_distance,
            s.final_time,
            s.max_node_violation
        ));
        summaries.push(s);
    }
    write_json(out, "simulate.json", &summaries, &mut report.files)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Result {
    pub x0: Vec<Vec<f64>>,
    pub deltas: Vec<f64>,
    pub substeps: usize,
    pub n_max: usize,
    pub t_sim: f64,
    pub goal_radius: f64,
    /// `cells[i][j]`: smallest successful `N` for `x0[i]`, `deltas[j]`.
    pub cells: Vec<Vec<Option<usize>>>,
    /// Reference value per cell when the cell is part of the reference grid.
    pub reference: Vec<Vec<Option<usize>>>,
    pub within_tolerance: bool,
}

fn reference_cell(x0: &[f64], delta: f64) -> Option<usize> {
    let i = TABLE1_X0.iter().position(|r| r.as_slice() == x0)?;
    let j = TABLE1_DELTAS.iter().position(|d| *d == delta)?;
    Some(TABLE1_REFERENCE[i][j])
}

/// Smallest successful horizon over the `(x0, δ)` grid.
pub fn table1(cfg: &ExperimentConfig) -> Result<Table1Result> {
    let plant = cfg.plant()?;
    let x0s = x0_list(cfg, &TABLE1_X0);
    check_dims(&plant, &x0s)?;
    let deltas = cfg
        .experiment
        .deltas
        .clone()
        .unwrap_or_else(|| TABLE1_DELTAS.to_vec());
    let n_max = cfg.experiment.n_range.map_or(20, |r| r[1]);
    let k = substeps(cfg);
    let options = mpc_options(cfg);
    let jobs: Vec<(usize, usize)> = (0..x0s.len())
        .flat_map(|i| (0..deltas.len()).map(move |j| (i, j)))
        .collect();
    let found = jobs
        .par_iter()
        .map(
            |&(i, j)| match smallest_horizon(&plant, &x0s[i], deltas[j], k, n_max, &options) {
                Ok(n) => Ok(n),
                // A failing cell is recorded as "none".
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut cells = vec![vec![None; deltas.len()]; x0s.len()];
    let mut reference = vec![vec![None; deltas.len()]; x0s.len()];
    let mut ok = true;
    for (&(i, j), n) in jobs.iter().zip(found) {
        cells[i][j] = n;
        reference[i][j] = reference_cell(&x0s[i], deltas[j]);
        if let Some(r) = reference[i][j] {
            ok &= n.is_some_and(|n| n.abs_diff(r) <= TABLE1_TOLERANCE);
        }
    }
    Ok(Table1Result {
        x0: x0s,
        deltas,
        substeps: k,
        n_max,
        t_sim: options.t_sim,
        goal_radius: options.goal_radius,
        cells,
        reference,
        within_tolerance: ok,
    })
}

fn cell_text(n: Option<usize>) -> String {
    n.map_or_else(|| "none".to_string(), |n| n.to_string())
}

pub fn cmd_table1(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let t = table1(cfg)?;
    let mut report = CommandReport::default();
    let mut w = csv::Writer::from_writer(create(out, "table1.csv", &mut report.files)?);
    let n = t.x0.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x0_{i}")).collect();
    header.extend(t.deltas.iter().map(|d| format!("delta={d}")));
    w.write_record(&header)?;
    for (x0, row) in t.x0.iter().zip(&t.cells) {
        let mut rec: Vec<String> = x0.iter().map(|v| v.to_string()).collect();
        rec.extend(row.iter().map(|c| cell_text(*c)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);
    write_json(out, "table1.json", &t, &mut report.files)?;
    let mut head = String::from("x0            ");
    for d in &t.deltas {
        let _ = write!(head, "{:>10}", format!("d={d}"));
    }
    report.lines.push(head);
    for (i, x0) in t.x0.iter().enumerate() {
        let mut line = format!("{:<14}", format!("{x0:?}"));
        for j in 0..t.deltas.len() {
            let cell = match t.reference[i][j] {
                Some(r) => format!("{} ({r})", cell_text(t.cells[i][j])),
                None => cell_text(t.cells[i][j]),
            };
            let _ = write!(line, "{cell:>10}");
        }
        report.lines.push(line);
    }
    report.lines.push(format!(
        "reference in parentheses; all reference cells within ±{TABLE1_TOLERANCE}: {}",
        t.within_tolerance
    ));
    report.mismatch = !t.within_tolerance;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRun {
    pub case: FigureCase,
    pub summary: RunSummary,
    /// First sampling instant with `|x − x̄| ≤ goal_radius`.
    pub time_to_goal: Option<f64>,
}

/// The four captioned closed-loop runs.
pub fn figure1_runs(cfg: &ExperimentConfig) -> Result<Vec<(FigureRun, crate::mpc::MpcRun)>> {
    let plant = cfg.plant()?;
    let options = mpc_options(cfg);
    let k = substeps(cfg);
    let delta = cfg
        .experiment
        .deltas
        .as_ref()
        .and_then(|d| d.first().copied())
        .unwrap_or(FIGURE1_DELTA);
    let xbar = plant.system.equilibrium_state().to_vec();
    FIGURE1_CASES
        .par_iter()
        .map(|case| {
            let run = run_mpc(
                &plant,
                &case.x0,
                GridSpec::with_substeps(delta, k, case.n)?,
                &options,
            )?;
            let time_to_goal = run
                .per_step
                .iter()
                .find(|r| {
                    r.state
                        .iter()
                        .zip(&xbar)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        <= options.goal_radius
                })
                .map(|r| r.time);
            Ok((
                FigureRun {
                    case: *case,
                    summary: run.summary(),
                    time_to_goal,
                },
                run,
            ))
        })
        .collect()
}

const GNUPLOT_SCRIPT: &str = "\
set terminal pngcairo size 800,800
set output 'figure1.png'
set datafile separator ','
set size square
set xrange [-1.05:1.05]
set yrange [-1.05:1.05]
set xlabel 'x_1'
set ylabel 'x_2'
set key bottom left
plot 'figure1_kernel.csv' using 1:2 skip 1 with lines lc rgb 'black' title 'kernel boundary', \\
     'figure1_red.csv' using 2:3 skip 1 with lines lc rgb 'red' title 'x0 = (0.5, 0.5), N = 4', \\
     'figure1_blue.csv' using 2:3 skip 1 with lines lc rgb 'blue' title 'x0 = (0.6, 0.6), N = 4', \\
     'figure1_green.csv' using 2:3 skip 1 with lines lc rgb 'dark-green' title 'x0 = (0.7, 0.7), N = 5', \\
     'figure1_magenta.csv' using 2:3 skip 1 with lines lc rgb 'magenta' title 'x0 = (0.733, 0.73), N = 7'
";

pub fn cmd_figure1(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let runs = figure1_runs(cfg)?;
    let mut report = CommandReport::default();
    for (fr, run) in &runs {
        run.closed_loop.write_csv(create(
            out,
            &format!("figure1_{}.csv", fr.case.name),
            &mut report.files,
        )?)?;
        let s = &fr.summary;
        report.lines.push(format!(
            "{:<8} x0 = {:?}, N = {}: {} (|x| = {:.3e}, goal reached at {}, max node violation {:.1e})",
            fr.case.name,
            fr.case.x0,
            fr.case.n,
            if s.success { "success" } else { "failure" },
            s.final_distance,
            fr.time_to_goal.map_or_else(|| "never".into(), |t| format!("t = {t:.2}")),
            s.max_node_violation
        ));
        report.mismatch |= !s.success || fr.time_to_goal.is_none_or(|t| t > FIGURE1_GOAL_TIME);
    }
    report.lines.push(format!(
        "reference: all runs succeed and reach the goal radius within {FIGURE1_GOAL_TIME} s"
    ));
    let kernel = double_integrator_kernel();
    kernel.write_polyline_csv(create(out, "figure1_kernel.csv", &mut report.files)?, 200)?;
    for (name, curve) in [
        ("upper", BarrierCurve::upper()),
        ("lower", BarrierCurve::lower()),
    ] {
        let mut w = csv::Writer::from_writer(create(
            out,
            &format!("figure1_barrier_{name}.csv"),
            &mut report.files,
        )?);
        w.write_record(["x_1", "x_2"])?;
        for p in curve.sample(200) {
            w.write_record([fmt_f64(p[0]), fmt_f64(p[1])])?;
        }
        w.flush()?;
    }
    let mut gp = create(out, "figure1.gp", &mut report.files)?;
    gp.write_all(GNUPLOT_SCRIPT.as_bytes())?;
    gp.flush()?;
    let summaries: Vec<&FigureRun> = runs.iter().map(|(f, _)| f).collect();
    write_json(out, "figure1.json", &summaries, &mut report.files)?;
    Ok(report)
}

pub fn certify_options(cfg: &ExperimentConfig) -> CertifyOptions {
    let e = &cfg.experiment;
    let mut o = CertifyOptions::default();
    if let Some(d) = &e.deltas {
        o.deltas = d.clone();
    }
    if let Some(r) = e.radius {
        o.radius = r;
    }
    if let Some(k) = &e.k_set {
        o.k_set = k.clone();
    }
    if let Some(r) = e.n_range {
        o.n_range = (r[0], r[1]);
    }
    if let Some(s) = e.samples {
        o.sphere_samples = s;
    }
    if let Some(k) = e.substeps {
        o.cbar_substeps = k;
    }
    o
}

/// Text table of a certification report.
pub fn certify_table(report: &CertifyReport) -> Vec<String> {
    let mut lines = vec![
        format!(
            "gamma = {:.6}  (sigma_max(P)/sigma_min(Q); cost-controllability probe worst ratio {:.6}, passed: {})",
            report.gamma, report.cost_controllability.worst_ratio, report.cost_controllability.passed
        ),
        format!(
            "M = {:.6e}  C (estimate) = {:.6e}",
            report.m, report.c_estimate.c
        ),
    ];
    for d in &report.per_delta {
        lines.push(format!(
            "delta = {}: C = {:.6e}{}  beta = {:.6}  Cbar = {:.6}{}",
            d.delta,
            d.c,
            if d.c_floored { " (floored)" } else { "" },
            d.at_n_bar.beta,
            d.cbar,
            if d.cbar_adjusted {
                format!(
                    " (raised from {:.6}; sampled requirement {:.6})",
                    d.cbar_riccati, d.cbar_required
                )
            } else {
                String::new()
            }
        ));
        lines.push(format!(
            "  N_bar = {} (closed form as printed: {}, sign-consistent: {})  alpha(N_bar) = {:.6}",
            d.bound.n_bar, d.bound.literal_n, d.bound.corrected_n, d.at_n_bar.alpha
        ));
        lines.push(format!(
            "  {:>4} {:>14} {:>14} {:>6}",
            "N", "lhs", "alpha", "pass"
        ));
        for c in &d.certificates {
            lines.push(format!(
                "  {:>4} {:>14.6e} {:>14.6e} {:>6}",
                c.n, c.condition_lhs, c.alpha, c.passes
            ));
        }
    }
    lines
}

pub fn cmd_certify(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let plant = cfg.plant()?;
    let report = certify(&plant, &certify_options(cfg), &cfg.solver)?;
    let mut r = CommandReport {
        lines: certify_table(&report),
        ..Default::default()
    };
    write_json(out, "certify.json", &report, &mut r.files)?;
    let mut w = create(out, "certify.txt", &mut r.files)?;
    for l in &r.lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct ViabilityReport {
    pub interior_ball_radius: f64,
    pub resolution: f64,
    pub grid_nodes: usize,
    pub certified_nodes: usize,
    pub inner_volume: f64,
    /// Analytic kernel only.
    pub analytic_volume: Option<f64>,
    pub volume_defect: Option<f64>,
    pub origin_clearance: Option<f64>,
    pub construction: Vec<ConstructionBound>,
    pub profile: Option<DistanceProfile>,
}

/// True for the double integrator with unit boxes, the plant with an
/// analytic kernel.
pub fn has_analytic_kernel(plant: &Plant) -> bool {
    let Some(lin) = plant.system.linear() else {
        return false;
    };
    let unit = |b: Option<&[crate::model::Bound]>, len: usize| {
        b.is_some_and(|b| b.len() == len && b.iter().all(|x| x.lo == -1.0 && x.hi == 1.0))
    };
    lin.a().shape() == (2, 2)
        && lin.b().shape() == (2, 1)
        && lin.a().as_slice() == [0.0, 0.0, 1.0, 0.0]
        && lin.b().as_slice() == [0.0, 1.0]
        && unit(plant.constraints.state_box(), 2)
        && unit(plant.constraints.input_box(), 1)
        && !plant.constraints.has_extra()
        && plant.system.equilibrium_state().iter().all(|v| *v == 0.0)
}

pub fn cmd_viability(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let plant = cfg.plant()?;
    let lq = plant_lq_constants(&plant)?;
    let resolution = cfg.experiment.resolution.unwrap_or(0.05);
    let mut r = CommandReport::default();
    let grid = inner_approximation(
        &plant,
        &InnerApproxOptions {
            resolution,
            ..Default::default()
        },
        &cfg.solver,
    )?;
    let g = grid.grid().expect("inner approximation is a grid kernel");
    g.write_occupancy_csv(create(out, "viability_grid.csv", &mut r.files)?)?;
    let mut report = ViabilityReport {
        interior_ball_radius: interior_ball_radius(&plant, &lq)?,
        resolution,
        grid_nodes: g.node_count(),
        certified_nodes: g.certified_nodes(),
        inner_volume: g.inside_volume(),
        analytic_volume: None,
        volume_defect: None,
        origin_clearance: None,
        construction: Vec::new(),
        profile: None,
    };
    if has_analytic_kernel(&plant) {
        let kernel = double_integrator_kernel();
        kernel.write_polyline_csv(create(out, "viability_kernel.csv", &mut r.files)?, 200)?;
        report.analytic_volume = Some(DOUBLE_INTEGRATOR_KERNEL_AREA);
        report.volume_defect = Some(1.0 - report.inner_volume / DOUBLE_INTEGRATOR_KERNEL_AREA);
        report.origin_clearance = Some(kernel.boundary_distance(&[0.0, 0.0]));
        let lambdas = cfg
            .experiment
            .lambdas
            .clone()
            .unwrap_or_else(|| vec![0.5, 0.7, 0.9, 0.95]);
        let samples = kernel_samples(&kernel, 12);
        report.construction = lambdas
            .iter()
            .map(|l| {
                bound_v_infinity_constructive(
                    &plant,
                    &lq,
                    &kernel,
                    *l,
                    &samples,
                    &ConstructionOptions::default(),
                )
            })
            .collect::<Result<_>>()?;
        let mut popts = ProfileOptions::default();
        if let Some(d) = &cfg.experiment.distances {
            popts.distances = d.clone();
        }
        report.profile = Some(distance_profile(&plant, &kernel, &popts, &cfg.solver)?);
    }
    r.lines.push(format!(
        "interior ball radius nu = {:.6}",
        report.interior_ball_radius
    ));
    r.lines.push(format!(
        "grid inner approximation at {resolution}: {}/{} nodes certified, area {:.4}",
        report.certified_nodes, report.grid_nodes, report.inner_volume
    ));
    if let (Some(a), Some(d)) = (report.analytic_volume, report.volume_defect) {
        r.lines.push(format!(
            "analytic kernel area {a:.4}, volume defect {:.2}%",
            100.0 * d
        ));
    }
    for c in &report.construction {
        r.lines.push(format!(
            "lambda = {}: L = {:.4}, eps = {:.4}, mu = {:.4}, m = {}, t_bar = {:.3}, bound = {:.4}, sup cost = {:.4}",
            c.lambda, c.l, c.epsilon, c.mu, c.m, c.t_bar, c.bound, c.sup_total_cost
        ));
    }
    if let Some(p) = &report.profile {
        for row in &p.rows {
            r.lines.push(format!(
                "dist = {:.4}: sup V = {:.6}, product = {:.6}",
                row.distance, row.sup_value, row.product
            ));
        }
        r.lines.push(format!("empirical D = {:.6}", p.d_hat));
    }
    write_json(out, "viability.json", &report, &mut r.files)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x0: Vec<f64>,
    pub delta: f64,
    pub n: usize,
    pub success: bool,
    /// Value of the first OCP.
    pub v_t: f64,
    /// Largest `V_T(x̂₊) − V_T(x̂) + ∫ℓ` along the run.
    pub worst_lyapunov_residual: f64,
}

/// Default sweep states: the diagonal approaching the kernel boundary.
pub const SWEEP_X0: [[f64; 2]; 5] = [
    [0.5, 0.5],
    [0.6, 0.6],
    [0.7, 0.7],
    [0.72, 0.72],
    [0.733, 0.73],
];

pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let plant = cfg.plant()?;
    let x0s = x0_list(cfg, &SWEEP_X0);
    check_dims(&plant, &x0s)?;
    let deltas = cfg.experiment.deltas.clone().unwrap_or_else(|| vec![0.1]);
    let [lo, hi] = cfg.experiment.n_range.unwrap_or([1, 10]);
    let k = substeps(cfg);
    let options = mpc_options(cfg);
    let mut jobs = Vec::new();
    for i in 0..x0s.len() {
        for (j, _) in deltas.iter().enumerate() {
            for n in lo.max(1)..=hi {
                jobs.push((i, j, n));
            }
        }
    }
    jobs.par_iter()
        .map(|&(i, j, n)| {
            let run = run_mpc(
                &plant,
                &x0s[i],
                GridSpec::with_substeps(deltas[j], k, n)?,
                &options,
            )?;
            let lyap = lyapunov_monitor(&run, 0.0, 0.0)?;
            Ok(SweepRow {
                x0: x0s[i].clone(),
                delta: deltas[j],
                n,
                success: run.success,
                v_t: run.per_step.first().map_or(f64::NAN, |r| r.value),
                worst_lyapunov_residual: lyap.worst_residual,
            })
        })
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<CommandReport> {
    let rows = sweep(cfg)?;
    let n = cfg.plant()?.system.state_dim();
    let mut report = CommandReport::default();
    let mut w = csv::Writer::from_writer(create(out, "sweep.csv", &mut report.files)?);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x0_{i}")).collect();
    header.extend(["delta", "N", "success", "V_T", "worst_lyapunov_residual"].map(String::from));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec: Vec<String> = r.x0.iter().map(|v| v.to_string()).collect();
        rec.push(r.delta.to_string());
        rec.push(r.n.to_string());
        rec.push(r.success.to_string());
        rec.push(fmt_f64(r.v_t));
        rec.push(fmt_f64(r.worst_lyapunov_residual));
        w.write_record(&rec)?;
    }
    w.flush()?;
    report.lines.push(format!(
        "{} runs, {} successful",
        rows.len(),
        rows.iter().filter(|r| r.success).count()
    ));
    for (x0, delta, n) in smallest_successful(&rows) {
        report.lines.push(format!(
            "x0 = {x0:?}, delta = {delta}: smallest N = {}",
            cell_text(n)
        ));
    }
    Ok(report)
}

/// Smallest successful `N` per `(x0, δ)` in row order.
pub fn smallest_successful(rows: &[SweepRow]) -> Vec<(Vec<f64>, f64, Option<usize>)> {
    let mut out: Vec<(Vec<f64>, f64, Option<usize>)> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|(x, d, _)| *x == r.x0 && *d == r.delta);
        let idx = match pos {
            Some(p) => p,
            None => {
                out.push((r.x0.clone(), r.delta, None));
                out.len() - 1
            }
        };
        if r.success && out[idx].2.is_none_or(|n| r.n < n) {
            out[idx].2 = Some(r.n);
        }
    }
    out
}
