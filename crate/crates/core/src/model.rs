//! Control systems, constraint sets and stage costs.
//!
//! Everything downstream (integration, the optimal control solver, the MPC
//! loop and the certification layer) consumes the descriptions defined here.
//! States and inputs are plain `f64` slices; matrices are `nalgebra::DMatrix`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on `|f(x̄, ū)|` for a controlled equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Central-difference step used by the default Jacobian/gradient fallbacks.
const FD_STEP: f64 = 1e-6;

/// Right-hand side `f(x, u)` of `ẋ = f(x, u)`.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Row-major Jacobians `∂f/∂x` (n×n) and `∂f/∂u` (n×m).
    ///
    /// The default uses central differences.
    fn jacobians(&self, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        let n = x.len();
        let m = u.len();
        let mut xp = x.to_vec();
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            self.eval(&xp, u, &mut fp);
            xp[j] = x[j] - h;
            self.eval(&xp, u, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jx[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..m {
            let h = FD_STEP * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            self.eval(x, &up, &mut fp);
            up[j] = u[j] - h;
            self.eval(x, &up, &mut fm);
            up[j] = u[j];
            for i in 0..n {
                ju[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
}

impl<F> VectorField for F
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self(x, u, dx)
    }
}

/// `ẋ = Ax + Bu` with cached row-major storage.
struct LinearField {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LinearField {
    fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        LinearField {
            n,
            m,
            a: row_major(a),
            b: row_major(b),
        }
    }
}

impl VectorField for LinearField {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            let ar = &self.a[i * self.n..(i + 1) * self.n];
            for (aij, xj) in ar.iter().zip(x) {
                acc += aij * xj;
            }
            let br = &self.b[i * self.m..(i + 1) * self.m];
            for (bij, uj) in br.iter().zip(u) {
                acc += bij * uj;
            }
            dx[i] = acc;
        }
    }

    fn jacobians(&self, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.copy_from_slice(&self.a);
        ju.copy_from_slice(&self.b);
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exponential decay bound `|x(t; x₀, u_F)| ≤ Γ e^{−rate·t} |x₀|` of the
/// stabilized linear closed loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecayConstants {
    pub gamma: f64,
    pub rate: f64,
}

/// Linear dynamics `ẋ = Ax + Bu` with an optional stabilizing feedback `u = Fx`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gain: Option<DMatrix<f64>>,
    decay: Option<DecayConstants>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(LinearSystem {
            a,
            b,
            gain: None,
            decay: None,
        })
    }

    /// Attaches a feedback gain `F` (u = Fx); `A + BF` must be Hurwitz.
    pub fn with_gain(mut self, gain: DMatrix<f64>) -> Result<Self> {
        if gain.nrows() != self.input_dim() || gain.ncols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "F must be {}x{}",
                self.input_dim(),
                self.state_dim()
            )));
        }
        let closed = &self.a + &self.b * &gain;
        let worst = closed
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst >= 0.0 {
            return Err(Error::NotStabilizable(format!(
                "A + BF has an eigenvalue with real part {worst}"
            )));
        }
        self.gain = Some(gain);
        Ok(self)
    }

    pub fn with_decay(mut self, decay: DecayConstants) -> Self {
        self.decay = Some(decay);
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gain(&self) -> Option<&DMatrix<f64>> {
        self.gain.as_ref()
    }

    pub fn decay(&self) -> Option<DecayConstants> {
        self.decay
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self) -> Option<DMatrix<f64>> {
        self.gain.as_ref().map(|f| &self.a + &self.b * f)
    }

    /// Largest observed `|x(t)| e^{rate·t}` over unit initial states and
    /// sampled times; `None` without a gain or decay constants.
    ///
    /// Uses the matrix exponential of the closed loop, so the check is
    /// independent of the RK4 integrator.
    pub fn decay_violation(&self, samples: usize, t_max: f64) -> Option<f64> {
        let closed = self.closed_loop()?;
        let decay = self.decay?;
        let n = self.state_dim();
        let mut worst = f64::NEG_INFINITY;
        let dirs = crate::sampling::unit_sphere(n, samples);
        let steps = 200;
        for k in 0..=steps {
            let t = t_max * k as f64 / steps as f64;
            let phi = (&closed * t).exp();
            for d in &dirs {
                let x = &phi * DVector::from_column_slice(d);
                let bound = decay.gamma * (-decay.rate * t).exp();
                worst = worst.max(x.norm() - bound);
            }
        }
        Some(worst)
    }
}

/// A controlled system `ẋ = f(x, u)` with equilibrium pair `(x̄, ū)`.
#[derive(Clone)]
pub struct ControlSystem {
    state_dim: usize,
    input_dim: usize,
    field: Arc<dyn VectorField>,
    equilibrium_state: Vec<f64>,
    equilibrium_input: Vec<f64>,
    linear: Option<LinearSystem>,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("equilibrium_state", &self.equilibrium_state)
            .field("equilibrium_input", &self.equilibrium_input)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl ControlSystem {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        field: Arc<dyn VectorField>,
        equilibrium_state: Vec<f64>,
        equilibrium_input: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Dimension(
                "state and input dimensions must be positive".into(),
            ));
        }
        if equilibrium_state.len() != state_dim || equilibrium_input.len() != input_dim {
            return Err(Error::Dimension(
                "equilibrium pair has wrong dimensions".into(),
            ));
        }
        let mut dx = vec![0.0; state_dim];
        field.eval(&equilibrium_state, &equilibrium_input, &mut dx);
        let residual = norm(&dx);
        if residual > EQUILIBRIUM_TOL {
            return Err(Error::Config(format!(
                "(x̄, ū) is not a controlled equilibrium: |f(x̄, ū)| = {residual:e}"
            )));
        }
        Ok(ControlSystem {
            state_dim,
            input_dim,
            field,
            equilibrium_state,
            equilibrium_input,
            linear: None,
        })
    }

    /// Linear system with equilibrium at the origin.
    pub fn from_linear(lin: LinearSystem) -> Self {
        let n = lin.state_dim();
        let m = lin.input_dim();
        ControlSystem {
            state_dim: n,
            input_dim: m,
            field: Arc::new(LinearField::new(lin.a(), lin.b())),
            equilibrium_state: vec![0.0; n],
            equilibrium_input: vec![0.0; m],
            linear: Some(lin),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn equilibrium_state(&self) -> &[f64] {
        &self.equilibrium_state
    }

    pub fn equilibrium_input(&self) -> &[f64] {
        &self.equilibrium_input
    }

    pub fn linear(&self) -> Option<&LinearSystem> {
        self.linear.as_ref()
    }

    /// Replaces the linear metadata (e.g. after a Riccati solve fills in the
    /// gain and decay constants). The vector field is unchanged.
    pub fn with_linear_metadata(mut self, lin: LinearSystem) -> Result<Self> {
        match &self.linear {
            Some(old) if old.a() == lin.a() && old.b() == lin.b() => {
                self.linear = Some(lin);
                Ok(self)
            }
            _ => Err(Error::Config(
                "linear metadata does not match the system matrices".into(),
            )),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.field.eval(x, u, dx)
    }

    #[inline]
    pub fn jacobians(&self, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        self.field.jacobians(x, u, jx, ju)
    }

    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.state_dim];
        self.eval(x, u, &mut dx);
        dx
    }
}

/// Closed interval `[lo, hi]` for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Config(format!("bound [{lo}, {hi}] is empty")));
        }
        Ok(Bound { lo, hi })
    }

    pub fn symmetric(r: f64) -> Self {
        Bound { lo: -r, hi: r }
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// A scalar inequality `g_i(x, u) ≤ 0` beyond the boxes.
pub trait ConstraintFn: Send + Sync {
    fn eval(&self, x: &[f64], u: &[f64]) -> f64;

    /// Gradient with respect to `x` and `u`; central differences by default.
    fn gradient(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) {
        fd_scalar_gradient(|x, u| self.eval(x, u), x, u, gx, gu);
    }
}

impl<F> ConstraintFn for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self(x, u)
    }
}

fn fd_scalar_gradient(
    f: impl Fn(&[f64], &[f64]) -> f64,
    x: &[f64],
    u: &[f64],
    gx: &mut [f64],
    gu: &mut [f64],
) {
    let mut xp = x.to_vec();
    let mut up = u.to_vec();
    for j in 0..x.len() {
        let h = FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp, u);
        xp[j] = x[j] - h;
        let fm = f(&xp, u);
        xp[j] = x[j];
        gx[j] = (fp - fm) / (2.0 * h);
    }
    for j in 0..u.len() {
        let h = FD_STEP * u[j].abs().max(1.0);
        up[j] = u[j] + h;
        let fp = f(x, &up);
        up[j] = u[j] - h;
        let fm = f(x, &up);
        up[j] = u[j];
        gu[j] = (fp - fm) / (2.0 * h);
    }
}

/// The admissible set `E = {(x, u) : g(x, u) ≤ 0}`.
///
/// Residual layout of `g`: input box (`u − hi`, `lo − u` per coordinate),
/// then state box (`x − hi`, `lo − x`), then the extra constraints. Boxes are
/// kept explicitly as well so the optimizer can project onto the input box.
#[derive(Clone)]
pub struct ConstraintSpec {
    state_dim: usize,
    input_dim: usize,
    input_box: Option<Vec<Bound>>,
    state_box: Option<Vec<Bound>>,
    extra: Vec<Arc<dyn ConstraintFn>>,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("input_box", &self.input_box)
            .field("state_box", &self.state_box)
            .field("extra", &self.extra.len())
            .finish()
    }
}

impl ConstraintSpec {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        ConstraintSpec {
            state_dim,
            input_dim,
            input_box: None,
            state_box: None,
            extra: Vec::new(),
        }
    }

    pub fn with_input_box(mut self, bounds: Vec<Bound>) -> Result<Self> {
        if bounds.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input box needs {} bounds, got {}",
                self.input_dim,
                bounds.len()
            )));
        }
        self.input_box = Some(bounds);
        Ok(self)
    }

    pub fn with_state_box(mut self, bounds: Vec<Bound>) -> Result<Self> {
        if bounds.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state box needs {} bounds, got {}",
                self.state_dim,
                bounds.len()
            )));
        }
        self.state_box = Some(bounds);
        Ok(self)
    }

    pub fn with_constraint(mut self, g: Arc<dyn ConstraintFn>) -> Self {
        self.extra.push(g);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input_box(&self) -> Option<&[Bound]> {
        self.input_box.as_deref()
    }

    pub fn state_box(&self) -> Option<&[Bound]> {
        self.state_box.as_deref()
    }

    fn input_count(&self) -> usize {
        self.input_box.as_ref().map_or(0, |b| 2 * b.len())
    }

    /// Total number `p` of scalar constraints.
    pub fn count(&self) -> usize {
        self.input_count() + self.path_count()
    }

    /// Number of constraints not handled by projection onto the input box.
    pub fn path_count(&self) -> usize {
        self.state_box.as_ref().map_or(0, |b| 2 * b.len()) + self.extra.len()
    }

    /// Full residual vector `g(x, u)`.
    pub fn residuals(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        if let Some(ib) = &self.input_box {
            for (b, v) in ib.iter().zip(u) {
                out.push(v - b.hi);
                out.push(b.lo - v);
            }
        }
        let start = out.len();
        out.resize(start + self.path_count(), 0.0);
        self.path_residuals(x, u, &mut out[start..]);
        out
    }

    /// Residuals of the state box and extra constraints.
    pub fn path_residuals(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let mut k = 0;
        if let Some(sb) = &self.state_box {
            for (b, v) in sb.iter().zip(x) {
                out[k] = v - b.hi;
                out[k + 1] = b.lo - v;
                k += 2;
            }
        }
        for g in &self.extra {
            out[k] = g.eval(x, u);
            k += 1;
        }
    }

    /// Adds `weight · ∇g_k` of path constraint `k` into `gx`, `gu`.
    pub fn add_path_gradient(
        &self,
        k: usize,
        weight: f64,
        x: &[f64],
        u: &[f64],
        gx: &mut [f64],
        gu: &mut [f64],
    ) {
        let nbox = self.state_box.as_ref().map_or(0, |b| 2 * b.len());
        if k < nbox {
            let coord = k / 2;
            if k.is_multiple_of(2) {
                gx[coord] += weight;
            } else {
                gx[coord] -= weight;
            }
            return;
        }
        let g = &self.extra[k - nbox];
        let mut tx = vec![0.0; x.len()];
        let mut tu = vec![0.0; u.len()];
        g.gradient(x, u, &mut tx, &mut tu);
        for (a, b) in gx.iter_mut().zip(&tx) {
            *a += weight * b;
        }
        for (a, b) in gu.iter_mut().zip(&tu) {
            *a += weight * b;
        }
    }

    /// `max(0, max_i g_i(x, u))`.
    pub fn violation(&self, x: &[f64], u: &[f64]) -> f64 {
        self.residuals(x, u).into_iter().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, x: &[f64], u: &[f64], tol: f64) -> bool {
        self.violation(x, u) <= tol
    }

    /// Projection onto the input box (identity when absent).
    pub fn project_input(&self, u: &mut [f64]) {
        if let Some(ib) = &self.input_box {
            for (v, b) in u.iter_mut().zip(ib) {
                *v = b.clamp(*v);
            }
        }
    }

    pub fn state_in_box(&self, x: &[f64], tol: f64) -> bool {
        match &self.state_box {
            Some(sb) => sb.iter().zip(x).all(|(b, v)| b.contains(*v, tol)),
            None => true,
        }
    }

    /// Worst violation of the state box alone.
    pub fn state_box_violation(&self, x: &[f64]) -> f64 {
        match &self.state_box {
            Some(sb) => sb
                .iter()
                .zip(x)
                .map(|(b, v)| (v - b.hi).max(b.lo - v))
                .fold(0.0, f64::max),
            None => 0.0,
        }
    }

    pub fn has_extra(&self) -> bool {
        !self.extra.is_empty()
    }
}

/// Quadratic stage cost `[x−x̄; u−ū]ᵀ [[Q, N], [Nᵀ, R]] [x−x̄; u−ū]`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    cross: DMatrix<f64>,
    x_ref: Vec<f64>,
    u_ref: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, cross: Option<DMatrix<f64>>) -> Result<Self> {
        let n = q.nrows();
        let m = r.nrows();
        if q.ncols() != n || r.ncols() != m {
            return Err(Error::Dimension("Q and R must be square".into()));
        }
        let cross = cross.unwrap_or_else(|| DMatrix::zeros(n, m));
        if cross.nrows() != n || cross.ncols() != m {
            return Err(Error::Dimension(format!("N must be {n}x{m}")));
        }
        let mut block = DMatrix::zeros(n + m, n + m);
        block.view_mut((0, 0), (n, n)).copy_from(&q);
        block.view_mut((0, n), (n, m)).copy_from(&cross);
        block.view_mut((n, 0), (m, n)).copy_from(&cross.transpose());
        block.view_mut((n, n), (m, m)).copy_from(&r);
        let asym = (&block - block.transpose()).abs().max();
        if asym > 1e-12 * block.abs().max().max(1.0) {
            return Err(Error::Config(
                "stage cost weight matrix is not symmetric".into(),
            ));
        }
        if block.cholesky().is_none() {
            return Err(Error::Config(
                "stage cost weight matrix is not positive definite".into(),
            ));
        }
        Ok(QuadraticCost {
            q,
            r,
            cross,
            x_ref: vec![0.0; n],
            u_ref: vec![0.0; m],
        })
    }

    pub fn centered_at(mut self, x_ref: Vec<f64>, u_ref: Vec<f64>) -> Result<Self> {
        if x_ref.len() != self.q.nrows() || u_ref.len() != self.r.nrows() {
            return Err(Error::Dimension(
                "reference pair has wrong dimensions".into(),
            ));
        }
        self.x_ref = x_ref;
        self.u_ref = u_ref;
        Ok(self)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn has_cross_term(&self) -> bool {
        self.cross.iter().any(|v| *v != 0.0)
    }

    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let n = self.q.nrows();
        let m = self.r.nrows();
        let mut acc = 0.0;
        for i in 0..n {
            let dxi = x[i] - self.x_ref[i];
            for j in 0..n {
                acc += dxi * self.q[(i, j)] * (x[j] - self.x_ref[j]);
            }
            for j in 0..m {
                acc += 2.0 * dxi * self.cross[(i, j)] * (u[j] - self.u_ref[j]);
            }
        }
        for i in 0..m {
            let dui = u[i] - self.u_ref[i];
            for j in 0..m {
                acc += dui * self.r[(i, j)] * (u[j] - self.u_ref[j]);
            }
        }
        acc
    }

    fn gradient(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) {
        let n = self.q.nrows();
        let m = self.r.nrows();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.q[(i, j)] * (x[j] - self.x_ref[j]);
            }
            for j in 0..m {
                acc += self.cross[(i, j)] * (u[j] - self.u_ref[j]);
            }
            gx[i] = 2.0 * acc;
        }
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.r[(i, j)] * (u[j] - self.u_ref[j]);
            }
            for j in 0..n {
                acc += self.cross[(j, i)] * (x[j] - self.x_ref[j]);
            }
            gu[i] = 2.0 * acc;
        }
    }
}

/// Nonnegative running cost `ℓ(x, u)`.
pub trait CostFn: Send + Sync {
    fn eval(&self, x: &[f64], u: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) {
        fd_scalar_gradient(|x, u| self.eval(x, u), x, u, gx, gu);
    }
}

impl<F> CostFn for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self(x, u)
    }
}

#[derive(Clone)]
pub enum StageCost {
    Quadratic(QuadraticCost),
    Custom(Arc<dyn CostFn>),
}

impl fmt::Debug for StageCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageCost::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            StageCost::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl StageCost {
    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            StageCost::Quadratic(q) => q.eval(x, u),
            StageCost::Custom(c) => c.eval(x, u),
        }
    }

    #[inline]
    pub fn gradient(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) {
        match self {
            StageCost::Quadratic(q) => q.gradient(x, u, gx, gu),
            StageCost::Custom(c) => c.gradient(x, u, gx, gu),
        }
    }

    pub fn lq(&self) -> Option<&QuadraticCost> {
        match self {
            StageCost::Quadratic(q) => Some(q),
            StageCost::Custom(_) => None,
        }
    }
}

const INNER_MAX_ITER: usize = 200;
const INNER_TOL: f64 = 1e-10;

/// `ℓ⋆(x) = inf_{u ∈ U(x)} ℓ(x, u)`.
///
/// Quadratic costs without cross term whose reference input is admissible
/// return `(x−x̄)ᵀQ(x−x̄)` exactly. Everything else runs projected gradient
/// over the input box from `clamp(ū)`, with a quadratic penalty for any
/// extra mixed constraints.
pub fn pointwise_min_cost(
    x: &[f64],
    cost: &StageCost,
    cons: &ConstraintSpec,
    u_ref: &[f64],
) -> Result<f64> {
    if !cons.state_in_box(x, 1e-12) {
        return Err(Error::InfeasibleState { state: x.to_vec() });
    }
    let m = cons.input_dim();
    let mut u = u_ref.to_vec();
    cons.project_input(&mut u);

    if let Some(q) = cost.lq() {
        let ref_admissible = u.iter().zip(&q.u_ref).all(|(a, b)| a == b);
        if !q.has_cross_term() && ref_admissible && cons.is_feasible(x, &u, 0.0) {
            let zero_u = q.u_ref.clone();
            return Ok(q.eval(x, &zero_u));
        }
    }

    let mut penalty = if cons.has_extra() { 10.0 } else { 0.0 };
    let mut gx = vec![0.0; x.len()];
    let mut gu = vec![0.0; m];
    let objective = |u: &[f64], penalty: f64| -> f64 {
        let mut v = cost.eval(x, u);
        if penalty > 0.0 {
            let viol = cons.violation(x, u);
            v += 0.5 * penalty * viol * viol;
        }
        v
    };
    loop {
        let mut step = 1.0;
        for _ in 0..INNER_MAX_ITER {
            cost.gradient(x, &u, &mut gx, &mut gu);
            if penalty > 0.0 {
                let mut gp = vec![0.0; m];
                fd_scalar_gradient(
                    |x, u| {
                        let v = cons.violation(x, u);
                        0.5 * penalty * v * v
                    },
                    x,
                    &u,
                    &mut vec![0.0; x.len()],
                    &mut gp,
                );
                for (a, b) in gu.iter_mut().zip(&gp) {
                    *a += b;
                }
            }
            let f0 = objective(&u, penalty);
            // Armijo backtracking along the projection arc.
            let mut accepted = None;
            let mut t = step;
            for _ in 0..60 {
                let mut trial: Vec<f64> = u.iter().zip(&gu).map(|(a, g)| a - t * g).collect();
                cons.project_input(&mut trial);
                let decrease: f64 = u
                    .iter()
                    .zip(&trial)
                    .zip(&gu)
                    .map(|((a, b), g)| g * (a - b))
                    .sum();
                if objective(&trial, penalty) <= f0 - 1e-4 * decrease {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else { break };
            let moved = distance(&next, &u);
            u = next;
            step = (t * 2.0).min(1e3);
            if moved <= INNER_TOL {
                break;
            }
        }
        if penalty == 0.0 || cons.violation(x, &u) <= 1e-9 || penalty >= 1e8 {
            break;
        }
        penalty *= 10.0;
    }
    if cons.violation(x, &u) > 1e-6 {
        return Err(Error::InfeasibleState { state: x.to_vec() });
    }
    Ok(cost.eval(x, &u))
}

/// K∞ envelope candidates `η(|x−x̄|) ≤ ℓ⋆(x) ≤ η̄(|x−x̄|)`.
#[derive(Clone)]
pub struct StageCostEnvelope {
    pub eta_lower: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub eta_upper: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub validation_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnvelopeCheck {
    /// `min (ℓ⋆ − η)` over the samples; negative means a violation.
    pub lower_margin: f64,
    /// `min (η̄ − ℓ⋆)` over the samples.
    pub upper_margin: f64,
    pub samples: usize,
}

impl EnvelopeCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.lower_margin >= -tol && self.upper_margin >= -tol
    }
}

impl StageCostEnvelope {
    /// `σ_min(Q) r²` and `σ_max(Q) r²`.
    pub fn quadratic(q: &DMatrix<f64>, validation_radius: f64) -> Self {
        let eig = q.clone().symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        StageCostEnvelope {
            eta_lower: Arc::new(move |r| lo * r * r),
            eta_upper: Arc::new(move |r| hi * r * r),
            validation_radius,
        }
    }

    /// Checks the envelope on `radii × directions` samples around `x̄`
    /// (states outside `X` are skipped).
    pub fn validate(
        &self,
        plant: &Plant,
        radii: usize,
        directions: usize,
    ) -> Result<EnvelopeCheck> {
        let xbar = plant.system.equilibrium_state();
        let ubar = plant.system.equilibrium_input();
        let mut check = EnvelopeCheck {
            lower_margin: f64::INFINITY,
            upper_margin: f64::INFINITY,
            samples: 0,
        };
        let dirs = crate::sampling::unit_sphere(xbar.len(), directions);
        for k in 1..=radii {
            let r = self.validation_radius * k as f64 / radii as f64;
            for d in &dirs {
                let x: Vec<f64> = xbar.iter().zip(d).map(|(c, v)| c + r * v).collect();
                if !plant.constraints.state_in_box(&x, 0.0) {
                    continue;
                }
                let ls = pointwise_min_cost(&x, &plant.cost, &plant.constraints, ubar)?;
                check.lower_margin = check.lower_margin.min(ls - (self.eta_lower)(r));
                check.upper_margin = check.upper_margin.min((self.eta_upper)(r) - ls);
                check.samples += 1;
            }
        }
        Ok(check)
    }
}

/// System, constraints and running cost bundled together.
#[derive(Debug, Clone)]
pub struct Plant {
    pub system: ControlSystem,
    pub constraints: ConstraintSpec,
    pub cost: StageCost,
}

impl Plant {
    pub fn new(
        system: ControlSystem,
        constraints: ConstraintSpec,
        cost: StageCost,
    ) -> Result<Self> {
        if constraints.state_dim() != system.state_dim()
            || constraints.input_dim() != system.input_dim()
        {
            return Err(Error::Dimension(
                "constraints do not match the system dimensions".into(),
            ));
        }
        let xbar = system.equilibrium_state();
        let ubar = system.equilibrium_input();
        if !constraints.is_feasible(xbar, ubar, 0.0) {
            return Err(Error::Config("(x̄, ū) is not contained in E".into()));
        }
        let l = cost.eval(xbar, ubar);
        if l.abs() > EQUILIBRIUM_TOL {
            return Err(Error::Config(format!("ℓ(x̄, ū) = {l:e} is not zero")));
        }
        Ok(Plant {
            system,
            constraints,
            cost,
        })
    }

    /// Built-in systems by name.
    pub fn from_registry(name: &str) -> Result<Self> {
        match name {
            "double_integrator" => {
                let (s, c, l) = build_double_integrator();
                Plant::new(s, c, l)
            }
            "scalar_unstable" => {
                let (s, c, l) = build_scalar_unstable();
                Plant::new(s, c, l)
            }
            other => Err(Error::Config(format!(
                "unknown system '{other}' (known: double_integrator, scalar_unstable)"
            ))),
        }
    }

    pub fn pointwise_min_cost(&self, x: &[f64]) -> Result<f64> {
        pointwise_min_cost(
            x,
            &self.cost,
            &self.constraints,
            self.system.equilibrium_input(),
        )
    }
}

/// `ẋ₁ = x₂, ẋ₂ = u` with `|u| ≤ 1`, `|xᵢ| ≤ 1` and `ℓ = x₁² + x₂² + u²`.
pub fn build_double_integrator() -> (ControlSystem, ConstraintSpec, StageCost) {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let lin = LinearSystem::new(a, b).expect("static dimensions");
    let sys = ControlSystem::from_linear(lin);
    let cons = ConstraintSpec::new(2, 1)
        .with_input_box(vec![Bound::symmetric(1.0)])
        .and_then(|c| c.with_state_box(vec![Bound::symmetric(1.0); 2]))
        .expect("static dimensions");
    let cost = QuadraticCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), None)
        .expect("identity weights are positive definite");
    (sys, cons, StageCost::Quadratic(cost))
}

/// `ẋ = x + u` with `|x| ≤ 2`, `|u| ≤ 1` and `ℓ = x² + u²`; the viability
/// kernel is `[−1, 1]` and its boundary points admit only `u ≡ −x₀`.
pub fn build_scalar_unstable() -> (ControlSystem, ConstraintSpec, StageCost) {
    let lin = LinearSystem::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    )
    .expect("static dimensions");
    let sys = ControlSystem::from_linear(lin);
    let cons = ConstraintSpec::new(1, 1)
        .with_input_box(vec![Bound::symmetric(1.0)])
        .and_then(|c| c.with_state_box(vec![Bound::symmetric(2.0)]))
        .expect("static dimensions");
    let cost = QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), None)
        .expect("identity weights are positive definite");
    (sys, cons, StageCost::Quadratic(cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn double_integrator_examples() {
        let (sys, cons, cost) = build_double_integrator();
        assert_eq!(sys.vector_field(&[0.5, 0.5], &[0.0]), vec![0.5, 0.0]);
        assert!(cons.residuals(&[1.2, 0.0], &[0.0]).iter().any(|g| *g > 0.0));
        assert!((cost.eval(&[0.7, 0.7], &[1.0]) - 1.98).abs() < 1e-12);
    }

    #[test]
    fn pointwise_min_examples() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        assert_eq!(plant.pointwise_min_cost(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((plant.pointwise_min_cost(&[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-15);

        // ℓ = x² + (u − 2)² on U = [−1, 1]; minimizer u = 1 gives 1 at x = 0.
        let cons = ConstraintSpec::new(1, 1)
            .with_input_box(vec![Bound::symmetric(1.0)])
            .unwrap();
        let cost = StageCost::Custom(Arc::new(|x: &[f64], u: &[f64]| {
            x[0] * x[0] + (u[0] - 2.0).powi(2)
        }));
        let grid_min = (0..=20_000)
            .map(|k| -1.0 + k as f64 * 1e-4)
            .map(|u| (u - 2.0_f64).powi(2))
            .fold(f64::INFINITY, f64::min);
        let v = pointwise_min_cost(&[0.0], &cost, &cons, &[0.0]).unwrap();
        assert!((v - grid_min).abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn pointwise_min_with_cross_term_matches_grid() {
        let q = QuadraticCost::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            Some(DMatrix::from_element(1, 1, 0.5)),
        )
        .unwrap();
        let cost = StageCost::Quadratic(q);
        let cons = ConstraintSpec::new(1, 1)
            .with_input_box(vec![Bound::new(-0.2, 1.0).unwrap()])
            .unwrap();
        for x in [-1.0, -0.3, 0.4, 2.0] {
            let v = pointwise_min_cost(&[x], &cost, &cons, &[0.0]).unwrap();
            let grid = (0..=12_000)
                .map(|k| -0.2 + k as f64 * 1e-4)
                .map(|u| cost.eval(&[x], &[u]))
                .fold(f64::INFINITY, f64::min);
            assert!((v - grid).abs() < 1e-7, "x = {x}: {v} vs {grid}");
        }
    }

    #[test]
    fn infeasible_state_is_rejected() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        assert!(matches!(
            plant.pointwise_min_cost(&[1.5, 0.0]),
            Err(Error::InfeasibleState { .. })
        ));
    }

    #[test]
    fn box_membership_agrees_with_g() {
        let (_, cons, _) = build_double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let u: [f64; 1] = [rng.gen_range(-1.5..1.5)];
            let direct = x.iter().all(|v: &f64| v.abs() <= 1.0) && u[0].abs() <= 1.0;
            assert_eq!(cons.is_feasible(&x, &u, 0.0), direct);
        }
    }

    #[test]
    fn pointwise_min_positive_away_from_equilibrium() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        for d in crate::sampling::unit_sphere(2, 64) {
            for r in [1e-6, 1e-3, 0.5] {
                let x = [r * d[0], r * d[1]];
                assert!(plant.pointwise_min_cost(&x).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn quadratic_envelope_validates() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let env = StageCostEnvelope::quadratic(&DMatrix::identity(2, 2), 1.0);
        let check = env.validate(&plant, 20, 32).unwrap();
        assert!(check.samples > 0);
        assert!(check.passed(1e-12), "{check:?}");
    }

    #[test]
    fn non_equilibrium_is_rejected() {
        let field: Arc<dyn VectorField> = Arc::new(|x: &[f64], u: &[f64], dx: &mut [f64]| {
            dx[0] = x[0] + u[0] + 1.0;
        });
        assert!(ControlSystem::new(1, 1, field, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn indefinite_cost_is_rejected() {
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        let n = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert!(QuadraticCost::new(q, r, Some(n)).is_err());
    }

    #[test]
    fn fd_jacobians_match_linear() {
        let (sys, _, _) = build_double_integrator();
        let field = |x: &[f64], u: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = u[0];
        };
        let mut jx = [0.0; 4];
        let mut ju = [0.0; 2];
        VectorField::jacobians(&field, &[0.3, -0.2], &[0.1], &mut jx, &mut ju);
        let mut ex = [0.0; 4];
        let mut eu = [0.0; 2];
        sys.jacobians(&[0.3, -0.2], &[0.1], &mut ex, &mut eu);
        for (a, b) in jx.iter().zip(&ex).chain(ju.iter().zip(&eu)) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
