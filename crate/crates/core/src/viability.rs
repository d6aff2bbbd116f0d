//! Viability-kernel geometry: the analytic double-integrator kernel, grid
//! inner approximations with a kernel-keeping control, scaling and
//! distance to the boundary.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::care::{plant_lq_constants, LqConstants};
use crate::certify::probes::lqr_rollout_cost;
use crate::error::{Error, Result};
use crate::integrate::{fmt_f64, GridSpec};
use crate::model::{Bound, Plant};
use crate::ocp::{solve_multistart, OcpProblem, SolverSettings};

/// Width of the boundary band used by [`ViabilityKernel::membership`].
pub const BOUNDARY_BAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Boundary,
    Outside,
}

/// Integral curve of the double integrator under a constant extreme input,
/// meeting a face of the state box tangentially.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierCurve {
    /// Input applied along the curve.
    pub control: f64,
    pub tangency_point: [f64; 2],
    /// Range of the parameter `s = x₂`.
    pub s_range: [f64; 2],
}

impl BarrierCurve {
    /// Upper curve `x₁ = 1 − s²/2`, `s ∈ [0, 1]`, under `u = −1`.
    pub fn upper() -> Self {
        BarrierCurve {
            control: -1.0,
            tangency_point: [1.0, 0.0],
            s_range: [0.0, 1.0],
        }
    }

    /// Lower curve `x₁ = −1 + s²/2`, `s ∈ [−1, 0]`, under `u = +1`.
    pub fn lower() -> Self {
        BarrierCurve {
            control: 1.0,
            tangency_point: [-1.0, 0.0],
            s_range: [-1.0, 0.0],
        }
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        // x₁ − x₁* = (s² − 0)/(2u) along ẋ₁ = x₂, ẋ₂ = u.
        [self.tangency_point[0] + s * s / (2.0 * self.control), s]
    }

    pub fn sample(&self, count: usize) -> Vec<[f64; 2]> {
        let count = count.max(2);
        (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                self.point(self.s_range[0] + t * (self.s_range[1] - self.s_range[0]))
            })
            .collect()
    }

    /// Distance from `p` to the curve. Roots of the normal equation are
    /// bracketed on a grid and refined by safeguarded Newton.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let c = self.tangency_point[0];
        let a = 1.0 / (2.0 * self.control);
        let d2 = |s: f64| {
            let x1 = c + a * s * s;
            (x1 - p[0]).powi(2) + (s - p[1]).powi(2)
        };
        // ½ d/ds of d²: (c + a s² − p₁)·2as + (s − p₂).
        let g = |s: f64| (c + a * s * s - p[0]) * 2.0 * a * s + (s - p[1]);
        let dg = |s: f64| 6.0 * a * a * s * s + 2.0 * a * (c - p[0]) + 1.0;
        let [lo, hi] = self.s_range;
        let mut best = d2(lo).min(d2(hi));
        const PIECES: usize = 32;
        let mut left = lo;
        let mut gl = g(left);
        for k in 1..=PIECES {
            let right = lo + (hi - lo) * k as f64 / PIECES as f64;
            let gr = g(right);
            if gl == 0.0 {
                best = best.min(d2(left));
            }
            if gl * gr < 0.0 {
                let (mut a_, mut b_) = (left, right);
                let mut s = 0.5 * (a_ + b_);
                for _ in 0..60 {
                    let gs = g(s);
                    if gs == 0.0 {
                        break;
                    }
                    if (gs < 0.0) == (gl < 0.0) {
                        a_ = s;
                    } else {
                        b_ = s;
                    }
                    let step = gs / dg(s);
                    let newton = s - step;
                    s = if step.is_finite() && newton > a_ && newton < b_ {
                        newton
                    } else {
                        0.5 * (a_ + b_)
                    };
                    if (b_ - a_) < 1e-15 {
                        break;
                    }
                }
                best = best.min(d2(s));
            }
            left = right;
            gl = gr;
        }
        best.sqrt()
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Sampled kernel on a regular grid of nodes.
#[derive(Debug, Clone)]
pub struct GridKernel {
    bounds: Vec<Bound>,
    resolution: f64,
    counts: Vec<usize>,
    /// Node certified viable.
    certified: Vec<bool>,
    /// Cell (indexed by its lowest corner) with all corners certified and
    /// not removed by the margin.
    inside_cells: Vec<bool>,
    first_controls: Vec<Option<Vec<f64>>>,
    gain: DMatrix<f64>,
    xbar: Vec<f64>,
    ubar: Vec<f64>,
    input_box: Option<Vec<Bound>>,
}

impl GridKernel {
    fn node_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for d in (0..idx.len()).rev() {
            flat = flat * self.counts[d] + idx[d];
        }
        flat
    }

    fn node_coords(&self, mut flat: usize) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.bounds)
            .map(|(c, b)| {
                let k = flat % c;
                flat /= c;
                (b.lo + k as f64 * self.resolution).min(b.hi)
            })
            .collect()
    }

    fn cell_of(&self, x: &[f64]) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(x.len());
        for (d, v) in x.iter().enumerate() {
            let b = &self.bounds[d];
            if *v < b.lo || *v > b.hi {
                return None;
            }
            let k = ((v - b.lo) / self.resolution).floor() as usize;
            idx.push(k.min(self.counts[d] - 2));
        }
        Some(idx)
    }

    fn cell_inside(&self, idx: &[usize]) -> bool {
        self.inside_cells[self.node_index(idx)]
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.certified.len()
    }

    pub fn certified_nodes(&self) -> usize {
        self.certified.iter().filter(|c| **c).count()
    }

    /// Total volume of inside cells.
    pub fn inside_volume(&self) -> f64 {
        let cell = self.resolution.powi(self.bounds.len() as i32);
        self.inside_cells.iter().filter(|c| **c).count() as f64 * cell
    }

    /// Lowest corners of all inside cells.
    pub fn inside_cell_corners(&self) -> Vec<Vec<f64>> {
        (0..self.inside_cells.len())
            .filter(|i| self.inside_cells[*i])
            .map(|i| self.node_coords(i))
            .collect()
    }

    fn distance_to_outside(&self, x: &[f64]) -> f64 {
        // Distance to the nearest non-inside cell, minus half a cell diagonal.
        let n = self.bounds.len();
        let mut best = f64::INFINITY;
        let total = self.inside_cells.len();
        for flat in 0..total {
            let idx = self.unflatten(flat);
            let is_cell = idx.iter().zip(&self.counts).all(|(k, c)| k + 1 < *c);
            if is_cell && self.inside_cells[flat] {
                continue;
            }
            let centre: Vec<f64> = self
                .node_coords(flat)
                .iter()
                .map(|v| v + 0.5 * self.resolution)
                .collect();
            let d = crate::model::distance(x, &centre);
            best = best.min(d);
        }
        // Everything beyond the grid is outside as well.
        for (d, b) in self.bounds.iter().enumerate() {
            best = best.min(x[d] - b.lo + 0.5 * self.resolution);
            best = best.min(b.hi - x[d] + 0.5 * self.resolution);
        }
        let half_diag = 0.5 * self.resolution * (n as f64).sqrt();
        (best - half_diag).max(0.0)
    }

    fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|c| {
                let k = flat % c;
                flat /= c;
                k
            })
            .collect()
    }

    fn keeper(&self, x: &[f64], u: &mut [f64]) {
        // Nearest certified node's witness control; LQR where the node was
        // certified directly.
        let n = self.bounds.len();
        let idx: Vec<usize> = x
            .iter()
            .zip(&self.bounds)
            .zip(&self.counts)
            .map(|((v, b), c)| {
                (((v - b.lo) / self.resolution).round().max(0.0) as usize).min(c - 1)
            })
            .collect();
        let flat = self.node_index(&idx);
        match &self.first_controls[flat] {
            Some(c) if !c.is_empty() => u.copy_from_slice(c),
            _ => {
                for i in 0..u.len() {
                    u[i] = self.ubar[i]
                        + (0..n)
                            .map(|j| self.gain[(i, j)] * (x[j] - self.xbar[j]))
                            .sum::<f64>();
                }
                if let Some(ib) = &self.input_box {
                    for (ui, b) in u.iter_mut().zip(ib) {
                        *ui = b.clamp(*ui);
                    }
                }
            }
        }
    }

    /// Occupancy CSV: node coordinates and the certified flag.
    pub fn write_occupancy_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.bounds.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        header.push("certified".into());
        header.push("cell_inside".into());
        w.write_record(&header)?;
        for flat in 0..self.certified.len() {
            let mut row: Vec<String> = self.node_coords(flat).iter().map(|v| fmt_f64(*v)).collect();
            row.push((self.certified[flat] as u8).to_string());
            row.push((self.inside_cells[flat] as u8).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum KernelKind {
    /// `ẋ₁ = x₂, ẋ₂ = u`, `|u| ≤ 1`, `|xᵢ| ≤ 1`; LQR gain `F`.
    DoubleIntegrator {
        gain: [f64; 2],
    },
    Grid(Arc<GridKernel>),
    Origin {
        dim: usize,
        input_dim: usize,
    },
}

/// A viability kernel `A` (or `λA`) with membership, distance to `∂A` and a
/// keeper control.
#[derive(Debug, Clone)]
pub struct ViabilityKernel {
    kind: KernelKind,
    scale: f64,
}

/// The analytic kernel of the constrained double integrator.
pub fn double_integrator_kernel() -> ViabilityKernel {
    ViabilityKernel {
        kind: KernelKind::DoubleIntegrator {
            gain: [-1.0, -(3f64.sqrt())],
        },
        scale: 1.0,
    }
}

/// `λA`: membership of `x/λ`, keeper `λ·keeper(x/λ)`; `λ = 0` is `{0}`.
pub fn scale_kernel(kernel: &ViabilityKernel, lambda: f64) -> Result<ViabilityKernel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(
            format!("lambda = {lambda} is outside [0, 1]"),
            "pass λ ∈ [0, 1]",
        ));
    }
    if lambda == 0.0 {
        let (dim, input_dim) = kernel.dims();
        return Ok(ViabilityKernel {
            kind: KernelKind::Origin { dim, input_dim },
            scale: 1.0,
        });
    }
    Ok(ViabilityKernel {
        kind: kernel.kind.clone(),
        scale: kernel.scale * lambda,
    })
}

impl ViabilityKernel {
    pub fn is_analytic(&self) -> bool {
        matches!(
            self.kind,
            KernelKind::DoubleIntegrator { .. } | KernelKind::Origin { .. }
        )
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn dims(&self) -> (usize, usize) {
        match &self.kind {
            KernelKind::DoubleIntegrator { .. } => (2, 1),
            KernelKind::Grid(g) => (g.bounds.len(), g.ubar.len()),
            KernelKind::Origin { dim, input_dim } => (*dim, *input_dim),
        }
    }

    pub fn grid(&self) -> Option<&GridKernel> {
        match &self.kind {
            KernelKind::Grid(g) => Some(g),
            _ => None,
        }
    }

    fn unscale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.scale).collect()
    }

    /// Signed distance to `∂A` in the unscaled frame (positive inside).
    fn base_signed_distance(&self, y: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::DoubleIntegrator { .. } => {
                let p = [y[0], y[1]];
                let d = di_boundary_distance(p);
                if di_contains(p) {
                    d
                } else {
                    -d
                }
            }
            KernelKind::Grid(g) => {
                let inside = g.cell_of(y).is_some_and(|idx| g.cell_inside(&idx));
                if inside {
                    g.distance_to_outside(y)
                } else {
                    -0.0
                }
            }
            KernelKind::Origin { .. } => -crate::model::norm(y),
        }
    }

    pub fn membership(&self, x: &[f64]) -> Membership {
        if let KernelKind::Origin { .. } = self.kind {
            return if crate::model::norm(x) <= BOUNDARY_BAND {
                Membership::Boundary
            } else {
                Membership::Outside
            };
        }
        let y = self.unscale(x);
        let sd = self.base_signed_distance(&y) * self.scale;
        if let KernelKind::Grid(g) = &self.kind {
            // Grid kernels only know inside cells; no boundary band.
            return if g.cell_of(&y).is_some_and(|idx| g.cell_inside(&idx)) {
                Membership::Inside
            } else {
                Membership::Outside
            };
        }
        if sd.abs() <= BOUNDARY_BAND {
            Membership::Boundary
        } else if sd > 0.0 {
            Membership::Inside
        } else {
            Membership::Outside
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.membership(x) != Membership::Outside
    }

    /// Distance from `x` to `∂(λA)`; conservative for grid kernels.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::Origin { .. } => crate::model::norm(x),
            _ => self.base_signed_distance(&self.unscale(x)).abs() * self.scale,
        }
    }

    /// Control keeping the state in the kernel.
    pub fn keeper(&self, x: &[f64], u: &mut [f64]) {
        match &self.kind {
            KernelKind::Origin { .. } => u.iter_mut().for_each(|v| *v = 0.0),
            KernelKind::DoubleIntegrator { gain } => {
                let y = self.unscale(x);
                let upper = BarrierCurve::upper();
                let lower = BarrierCurve::lower();
                let p = [y[0], y[1]];
                let v = if y[1] >= 0.0 && upper.distance(p) <= 2.0 * BOUNDARY_BAND {
                    upper.control
                } else if y[1] <= 0.0 && lower.distance(p) <= 2.0 * BOUNDARY_BAND {
                    lower.control
                } else {
                    (gain[0] * y[0] + gain[1] * y[1]).clamp(-1.0, 1.0)
                };
                u[0] = self.scale * v;
            }
            KernelKind::Grid(g) => {
                let y = self.unscale(x);
                g.keeper(&y, u);
                u.iter_mut().for_each(|v| *v *= self.scale);
            }
        }
    }

    /// Boundary polyline (closed, counter-clockwise) of the analytic kernel.
    pub fn boundary_polyline(&self, per_curve: usize) -> Option<Vec<[f64; 2]>> {
        let KernelKind::DoubleIntegrator { .. } = self.kind else {
            return None;
        };
        let mut pts = Vec::new();
        // Counter-clockwise from the left tangency point.
        let mut lower = BarrierCurve::lower().sample(per_curve);
        lower.reverse();
        pts.extend(lower);
        pts.push([1.0, -1.0]);
        let upper = BarrierCurve::upper().sample(per_curve);
        pts.extend(upper);
        pts.push([-1.0, 1.0]);
        pts.push(pts[0]);
        Some(
            pts.into_iter()
                .map(|p| [p[0] * self.scale, p[1] * self.scale])
                .collect(),
        )
    }

    /// CSV with columns `x_1, x_2` of the boundary polyline.
    pub fn write_polyline_csv<W: Write>(&self, out: W, per_curve: usize) -> Result<()> {
        let pts = self
            .boundary_polyline(per_curve)
            .ok_or_else(|| Error::Config("polyline export needs the analytic kernel".into()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_1", "x_2"])?;
        for p in pts {
            w.write_record([fmt_f64(p[0]), fmt_f64(p[1])])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn di_contains(p: [f64; 2]) -> bool {
    let [x1, x2] = p;
    x1.abs() <= 1.0
        && x2.abs() <= 1.0
        && (x2 < 0.0 || x1 <= 1.0 - x2 * x2 / 2.0)
        && (x2 > 0.0 || x1 >= -1.0 + x2 * x2 / 2.0)
}

/// Unsigned distance to the boundary of the double-integrator kernel.
fn di_boundary_distance(p: [f64; 2]) -> f64 {
    let segments = [
        ([-1.0, 0.0], [-1.0, 1.0]),
        ([-1.0, 1.0], [0.5, 1.0]),
        ([1.0, 0.0], [1.0, -1.0]),
        ([1.0, -1.0], [-0.5, -1.0]),
    ];
    let mut d = segments
        .iter()
        .map(|(a, b)| segment_distance(p, *a, *b))
        .fold(f64::INFINITY, f64::min);
    d = d.min(BarrierCurve::upper().distance(p));
    d.min(BarrierCurve::lower().distance(p))
}

/// `min_{x∈K} dist(x, ∂A)`; every sample must lie in the kernel.
pub fn distance_to_boundary(kernel: &ViabilityKernel, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyRegion("no samples given".into()));
    }
    let mut best = f64::INFINITY;
    for x in samples {
        if kernel.membership(x) == Membership::Outside {
            return Err(Error::OutsideKernel { state: x.clone() });
        }
        best = best.min(kernel.boundary_distance(x));
    }
    Ok(best)
}

/// Parameters of [`inner_approximation`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerApproxOptions {
    pub resolution: f64,
    /// Horizon of the witness problem steering into the LQR region.
    pub horizon: f64,
    /// Integration step of the witness problem.
    pub step: f64,
    /// Cells removed next to the boundary of the certified set.
    pub margin_cells: usize,
    /// Constraint tolerance of LQR and witness rollouts.
    pub tol: f64,
}

impl Default for InnerApproxOptions {
    fn default() -> Self {
        InnerApproxOptions {
            resolution: 0.05,
            horizon: 4.0,
            step: 0.05,
            margin_cells: 0,
            tol: 1e-6,
        }
    }
}

/// Witness that `x` is viable: either the unsaturated LQR rollout from `x`
/// is admissible, or an admissible control over the horizon reaches a state
/// whose LQR rollout is. Returns the first control of the witness.
fn certify_node(
    plant: &Plant,
    lq: &LqConstants,
    x: &[f64],
    options: &InnerApproxOptions,
    settings: &SolverSettings,
) -> Result<Option<Vec<f64>>> {
    if !plant.constraints.state_in_box(x, 0.0) {
        return Ok(None);
    }
    match lqr_rollout_cost(plant, lq, x) {
        Ok(_) => return Ok(Some(Vec::new())),
        Err(Error::ConstraintActive { .. }) | Err(Error::Divergence { .. }) => {}
        Err(e) => return Err(e),
    }
    let steps = (options.horizon / options.step).round().max(1.0) as usize;
    let grid = GridSpec::with_substeps(options.horizon, steps, 1)?;
    let problem = OcpProblem::new(plant, grid, x)?;
    let sol = match solve_multistart(&problem, settings) {
        Ok(s) => s,
        Err(Error::InfeasibleOcp { .. }) | Err(Error::Divergence { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if sol.max_violation > options.tol {
        return Ok(None);
    }
    let traj = problem.trajectory(&sol.controls)?;
    match lqr_rollout_cost(plant, lq, traj.final_state()) {
        Ok(_) => Ok(Some(sol.controls[..plant.system.input_dim()].to_vec())),
        Err(Error::ConstraintActive { .. }) | Err(Error::Divergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Grid inner approximation of the viability kernel of a linear plant.
///
/// Grid nodes are certified by [`certify_node`]; a cell is inside when all
/// its corners are certified (the kernel of a linear system with convex
/// constraints is convex, so the cell then lies in the kernel), minus
/// `margin_cells` layers at the boundary of the certified set.
pub fn inner_approximation(
    plant: &Plant,
    options: &InnerApproxOptions,
    settings: &SolverSettings,
) -> Result<ViabilityKernel> {
    if !(options.resolution > 0.0) {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let lq = plant_lq_constants(plant)?;
    let bounds = plant
        .constraints
        .state_box()
        .ok_or_else(|| Error::Config("inner approximation needs a bounded state box".into()))?
        .to_vec();
    let counts: Vec<usize> = bounds
        .iter()
        .map(|b| ((b.hi - b.lo) / options.resolution).round() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    let mut kernel = GridKernel {
        bounds: bounds.clone(),
        resolution: options.resolution,
        counts: counts.clone(),
        certified: vec![false; total],
        inside_cells: vec![false; total],
        first_controls: vec![None; total],
        gain: lq.gain.clone(),
        xbar: plant.system.equilibrium_state().to_vec(),
        ubar: plant.system.equilibrium_input().to_vec(),
        input_box: plant.constraints.input_box().map(<[Bound]>::to_vec),
    };
    let results: Vec<Option<Vec<f64>>> = (0..total)
        .into_par_iter()
        .map(|flat| certify_node(plant, &lq, &kernel.node_coords(flat), options, settings))
        .collect::<Result<_>>()?;
    for (flat, r) in results.into_iter().enumerate() {
        kernel.certified[flat] = r.is_some();
        kernel.first_controls[flat] = r;
    }
    let n = bounds.len();
    let mut cells = vec![false; total];
    for (flat, cell) in cells.iter_mut().enumerate() {
        let idx = kernel.unflatten(flat);
        if idx.iter().zip(&counts).any(|(k, c)| k + 1 >= *c) {
            continue;
        }
        *cell = (0..1usize << n).all(|mask| {
            let corner: Vec<usize> = idx
                .iter()
                .enumerate()
                .map(|(d, k)| k + (mask >> d & 1))
                .collect();
            kernel.certified[kernel.node_index(&corner)]
        });
    }
    for _ in 0..options.margin_cells {
        let prev = cells.clone();
        for flat in 0..total {
            if !prev[flat] {
                continue;
            }
            let idx = kernel.unflatten(flat);
            let mut keep = true;
            for d in 0..n {
                for step in [-1i64, 1] {
                    let k = idx[d] as i64 + step;
                    if k < 0 || k as usize + 1 >= counts[d] {
                        keep = false;
                        continue;
                    }
                    let mut nb = idx.clone();
                    nb[d] = k as usize;
                    if !prev[kernel.node_index(&nb)] {
                        keep = false;
                    }
                }
            }
            cells[flat] = keep;
        }
    }
    kernel.inside_cells = cells;
    Ok(ViabilityKernel {
        kind: KernelKind::Grid(Arc::new(kernel)),
        scale: 1.0,
    })
}

/// Radius `ν = ε/((1+‖F‖)Γ)` of a ball around the equilibrium inside the
/// kernel, with `ε` the largest radius such that the `ε`-ball around
/// `(x̄, ū)` lies in the constraint box.
pub fn interior_ball_radius(plant: &Plant, lq: &LqConstants) -> Result<f64> {
    let xbar = plant.system.equilibrium_state();
    let ubar = plant.system.equilibrium_input();
    let mut eps = f64::INFINITY;
    if let Some(b) = plant.constraints.state_box() {
        for (v, bd) in xbar.iter().zip(b) {
            eps = eps.min(v - bd.lo).min(bd.hi - v);
        }
    }
    if let Some(b) = plant.constraints.input_box() {
        for (v, bd) in ubar.iter().zip(b) {
            eps = eps.min(v - bd.lo).min(bd.hi - v);
        }
    }
    if plant.constraints.has_extra() || !eps.is_finite() {
        return Err(Error::Config(
            "interior ball radius needs box constraints only with at least one finite bound".into(),
        ));
    }
    let f_norm = lq.gain.clone().svd(false, false).singular_values.max();
    Ok(eps / ((1.0 + f_norm) * lq.decay.gamma))
}

/// Area of the double-integrator kernel, `4 − 1/3`.
pub const DOUBLE_INTEGRATOR_KERNEL_AREA: f64 = 4.0 - 1.0 / 3.0;
