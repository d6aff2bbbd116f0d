//! Fixed-step RK4 propagation with simultaneous stage-cost quadrature.
//!
//! The running cost is integrated as an extra state component, so the final
//! `running_cost` of [`propagate`] is exactly the RK4 quadrature of `J_T`.
//! The optimal control solver differentiates this same scheme.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm, ControlSystem, StageCost};

/// States with norm above this are treated as having left the interval of
/// existence.
pub const DIVERGENCE_NORM: f64 = 1e9;

/// Default number of RK4 substeps per sampling period.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Sampling period `δ`, substeps `k` per period and horizon length `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta: f64,
    pub substeps: usize,
    pub horizon_steps: usize,
}

impl GridSpec {
    pub fn new(delta: f64, horizon_steps: usize) -> Result<Self> {
        Self::with_substeps(delta, DEFAULT_SUBSTEPS, horizon_steps)
    }

    pub fn with_substeps(delta: f64, substeps: usize, horizon_steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!(
                "sampling period must be positive, got {delta}"
            )));
        }
        if substeps == 0 || horizon_steps == 0 {
            return Err(Error::Config(
                "substeps and horizon steps must be positive".into(),
            ));
        }
        Ok(GridSpec {
            delta,
            substeps,
            horizon_steps,
        })
    }

    /// Integration step `h = δ / k`.
    pub fn step(&self) -> f64 {
        self.delta / self.substeps as f64
    }

    /// Prediction horizon `T = Nδ`.
    pub fn horizon(&self) -> f64 {
        self.delta * self.horizon_steps as f64
    }

    /// Number of integration steps `N·k` over the horizon.
    pub fn total_steps(&self) -> usize {
        self.horizon_steps * self.substeps
    }

    pub fn with_horizon_steps(&self, horizon_steps: usize) -> Result<Self> {
        Self::with_substeps(self.delta, self.substeps, horizon_steps)
    }
}

/// Sampled state/control history with accumulated stage cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control held on `[times[i], times[i+1])`.
    pub controls: Vec<Vec<f64>>,
    pub running_cost: Vec<f64>,
}

impl Trajectory {
    fn with_start(t0: f64, x0: &[f64], capacity: usize) -> Self {
        let mut tr = Trajectory {
            times: Vec::with_capacity(capacity + 1),
            states: Vec::with_capacity(capacity + 1),
            controls: Vec::with_capacity(capacity),
            running_cost: Vec::with_capacity(capacity + 1),
        };
        tr.times.push(t0);
        tr.states.push(x0.to_vec());
        tr.running_cost.push(0.0);
        tr
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least one node")
    }

    pub fn total_cost(&self) -> f64 {
        *self
            .running_cost
            .last()
            .expect("trajectory has at least one node")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends `other` (whose first node must coincide with our last),
    /// shifting its running cost by our total.
    pub fn extend_with(&mut self, other: &Trajectory) {
        let offset = self.total_cost();
        for i in 1..other.times.len() {
            self.times.push(other.times[i]);
            self.states.push(other.states[i].clone());
            self.running_cost.push(offset + other.running_cost[i]);
        }
        self.controls.extend(other.controls.iter().cloned());
    }

    /// Length, monotonicity and cost invariants.
    pub fn check_invariants(&self) -> bool {
        let n = self.times.len();
        n >= 1
            && self.states.len() == n
            && self.running_cost.len() == n
            && self.controls.len() + 1 == n
            && self.running_cost[0] == 0.0
            && self.times.windows(2).all(|w| w[1] > w[0])
            && self.running_cost.windows(2).all(|w| w[1] >= w[0] - 1e-15)
    }

    /// CSV with columns `t, x_1..x_n, u_1..u_m, cost`; the control cells of
    /// the last node are blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.push("cost".into());
        w.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![fmt_f64(self.times[i])];
            row.extend(self.states[i].iter().map(|v| fmt_f64(*v)));
            match self.controls.get(i) {
                Some(u) => row.extend(u.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.push(fmt_f64(self.running_cost[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.12e}")
}

/// Scratch buffers for one RK4 step of the cost-augmented system.
pub(crate) struct Rk4Workspace {
    pub stage_x: [Vec<f64>; 4],
    pub stage_k: [Vec<f64>; 4],
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Rk4Workspace {
            stage_x: std::array::from_fn(|_| vec![0.0; n]),
            stage_k: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

/// RK4 stage offsets `y_{s+1} = x + STAGE_SHIFT[s]·h·k_s`.
pub(crate) const STAGE_SHIFT: [f64; 3] = [0.5, 0.5, 1.0];
pub(crate) const STAGE_WEIGHT: [f64; 4] = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];

/// One RK4 step with constant control `u`; writes `x_next` and returns the
/// cost increment. Stage inputs and slopes are left in `ws`.
pub(crate) fn rk4_cost_step(
    sys: &ControlSystem,
    cost: &StageCost,
    x: &[f64],
    u: &[f64],
    h: f64,
    ws: &mut Rk4Workspace,
    x_next: &mut [f64],
) -> f64 {
    let mut dc = 0.0;
    ws.stage_x[0].copy_from_slice(x);
    for s in 0..4 {
        if s > 0 {
            let prev_k = &ws.stage_k[s - 1];
            let xs = &mut ws.stage_x[s];
            for i in 0..x.len() {
                xs[i] = x[i] + STAGE_SHIFT[s - 1] * h * prev_k[i];
            }
        }
        let (xs, ks) = (&ws.stage_x[s], &mut ws.stage_k[s]);
        sys.eval(xs, u, ks);
        dc += STAGE_WEIGHT[s] * cost.eval(xs, u);
    }
    for i in 0..x.len() {
        x_next[i] = x[i]
            + h * (STAGE_WEIGHT[0] * ws.stage_k[0][i]
                + STAGE_WEIGHT[1] * ws.stage_k[1][i]
                + STAGE_WEIGHT[2] * ws.stage_k[2][i]
                + STAGE_WEIGHT[3] * ws.stage_k[3][i]);
    }
    h * dc
}

/// RK4 step of an autonomous system `ẏ = F(y)`.
pub fn rk4_step_autonomous(mut rhs: impl FnMut(&[f64], &mut [f64]), y: &mut [f64], h: f64) {
    let n = y.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = y.to_vec();
    rhs(&tmp, &mut k[0]);
    for s in 1..4 {
        for i in 0..n {
            tmp[i] = y[i] + STAGE_SHIFT[s - 1] * h * k[s - 1][i];
        }
        let (_, right) = k.split_at_mut(s);
        rhs(&tmp, &mut right[0]);
    }
    for i in 0..n {
        y[i] += h * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]) / 6.0;
    }
}

fn check_divergence(t: f64, x: &[f64]) -> Result<()> {
    let nx = norm(x);
    if !nx.is_finite() || nx > DIVERGENCE_NORM {
        return Err(Error::Divergence { time: t, norm: nx });
    }
    Ok(())
}

/// Propagates `x0` under a piecewise-constant control sequence on the
/// substep grid (`controls` is flat, `N·k·m` values).
pub fn propagate(
    sys: &ControlSystem,
    cost: &StageCost,
    x0: &[f64],
    controls: &[f64],
    grid: &GridSpec,
) -> Result<Trajectory> {
    propagate_steps(
        sys,
        cost,
        x0,
        controls,
        grid.step(),
        grid.total_steps(),
        0.0,
    )
}

/// Same as [`propagate`] for an explicit step size, step count and start time.
pub fn propagate_steps(
    sys: &ControlSystem,
    cost: &StageCost,
    x0: &[f64],
    controls: &[f64],
    h: f64,
    steps: usize,
    t0: f64,
) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    if controls.len() != steps * m {
        return Err(Error::Dimension(format!(
            "control sequence has length {}, expected {}",
            controls.len(),
            steps * m
        )));
    }
    check_divergence(t0, x0)?;
    let mut tr = Trajectory::with_start(t0, x0, steps);
    let mut ws = Rk4Workspace::new(n);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut c = 0.0;
    for i in 0..steps {
        let u = &controls[i * m..(i + 1) * m];
        c += rk4_cost_step(sys, cost, &x, u, h, &mut ws, &mut next);
        std::mem::swap(&mut x, &mut next);
        let t = t0 + (i + 1) as f64 * h;
        check_divergence(t, &x)?;
        tr.times.push(t);
        tr.states.push(x.clone());
        tr.controls.push(u.to_vec());
        tr.running_cost.push(c);
    }
    Ok(tr)
}

/// RK4 under a feedback `u = κ(t, x)` re-evaluated at every stage point.
/// The recorded control of each step is the one at its first stage.
pub fn propagate_feedback(
    sys: &ControlSystem,
    cost: &StageCost,
    x0: &[f64],
    mut feedback: impl FnMut(f64, &[f64], &mut [f64]),
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    if !(t_end > 0.0 && h > 0.0) {
        return Err(Error::Config(format!(
            "need t_end > 0 and h > 0, got {t_end}, {h}"
        )));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    let steps = (t_end / h).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut tr = Trajectory::with_start(0.0, x0, steps);
    let mut x = x0.to_vec();
    let mut ys = vec![0.0; n];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut u = vec![0.0; m];
    let mut u_first = vec![0.0; m];
    let offsets = [0.0, 0.5, 0.5, 1.0];
    let mut c = 0.0;
    check_divergence(0.0, &x)?;
    for i in 0..steps {
        let t = i as f64 * h;
        let mut dc = 0.0;
        for s in 0..4 {
            if s == 0 {
                ys.copy_from_slice(&x);
            } else {
                for j in 0..n {
                    ys[j] = x[j] + STAGE_SHIFT[s - 1] * h * k[s - 1][j];
                }
            }
            feedback(t + offsets[s] * h, &ys, &mut u);
            if s == 0 {
                u_first.copy_from_slice(&u);
            }
            sys.eval(&ys, &u, &mut k[s]);
            dc += STAGE_WEIGHT[s] * cost.eval(&ys, &u);
        }
        for j in 0..n {
            x[j] += h * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]) / 6.0;
        }
        c += h * dc;
        let t_next = (i + 1) as f64 * h;
        check_divergence(t_next, &x)?;
        tr.times.push(t_next);
        tr.states.push(x.clone());
        tr.controls.push(u_first.clone());
        tr.running_cost.push(c);
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_double_integrator, build_scalar_unstable, VectorField};
    use std::sync::Arc;

    #[test]
    fn equilibrium_stays_put() {
        let (sys, _, cost) = build_double_integrator();
        let grid = GridSpec::new(0.1, 5).unwrap();
        let tr = propagate(&sys, &cost, &[0.0, 0.0], &vec![0.0; 50], &grid).unwrap();
        assert!(tr.states.iter().all(|x| x == &vec![0.0, 0.0]));
        assert!(tr.running_cost.iter().all(|c| *c == 0.0));
        assert!(tr.check_invariants());
    }

    #[test]
    fn constant_velocity_is_exact() {
        let (sys, _, cost) = build_double_integrator();
        let grid = GridSpec::new(0.1, 10).unwrap();
        let tr = propagate(&sys, &cost, &[0.0, 1.0], &vec![0.0; 100], &grid).unwrap();
        let xf = tr.final_state();
        assert!((xf[0] - 1.0).abs() < 1e-12 && (xf[1] - 1.0).abs() < 1e-12);
        assert!((tr.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_boundary_point_is_stationary() {
        // ẋ = x + u at x₀ = 1 with u ≡ −1 stays at 1.
        let (sys, _, cost) = build_scalar_unstable();
        let grid = GridSpec::new(0.1, 20).unwrap();
        let tr = propagate(&sys, &cost, &[1.0], &vec![-1.0; 200], &grid).unwrap();
        assert!(tr.states.iter().all(|x| (x[0] - 1.0).abs() < 1e-14));
        assert!((tr.total_cost() - 2.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let field: Arc<dyn VectorField> = Arc::new(|x: &[f64], _u: &[f64], dx: &mut [f64]| {
            dx[0] = x[0] * x[0];
        });
        let sys = ControlSystem::new(1, 1, field, vec![0.0], vec![0.0]).unwrap();
        let cost = StageCost::Custom(Arc::new(|_: &[f64], _: &[f64]| 0.0));
        let grid = GridSpec::with_substeps(0.1, 10, 30).unwrap();
        let err = propagate(&sys, &cost, &[1.0], &vec![0.0; 300], &grid).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (sys, _, cost) = build_double_integrator();
        let grid = GridSpec::new(0.1, 2).unwrap();
        assert!(propagate(&sys, &cost, &[0.0, 0.0], &[0.0; 3], &grid).is_err());
    }

    #[test]
    fn csv_export_has_blank_last_controls() {
        let (sys, _, cost) = build_double_integrator();
        let grid = GridSpec::with_substeps(0.1, 1, 2).unwrap();
        let tr = propagate(&sys, &cost, &[0.1, 0.0], &[0.5, -0.5], &grid).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,u_1,cost");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3].split(',').nth(3), Some(""));
        assert!(lines.iter().all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn feedback_from_origin_stays() {
        let (sys, _, cost) = build_double_integrator();
        let tr = propagate_feedback(
            &sys,
            &cost,
            &[0.0, 0.0],
            |_, x, u| u[0] = -(x[0] + 3f64.sqrt() * x[1]),
            2.0,
            0.01,
        )
        .unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0 && x[1] == 0.0));
    }

    #[test]
    fn autonomous_step_matches_exponential() {
        let mut y = [1.0];
        for _ in 0..100 {
            rk4_step_autonomous(|y, d| d[0] = -y[0], &mut y, 0.01);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }
}
