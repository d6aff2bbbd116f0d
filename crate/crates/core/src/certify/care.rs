//! Continuous algebraic Riccati equation and the LQ constants derived from it.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DecayConstants, LinearSystem, Plant, StageCost};

const SIGN_MAX_ITER: usize = 100;
const SIGN_TOL: f64 = 1e-14;

/// CARE solution with the constants it induces for the quadratic cost.
#[derive(Debug, Clone, Serialize)]
pub struct LqConstants {
    #[serde(serialize_with = "ser_matrix")]
    pub p: DMatrix<f64>,
    /// Feedback `u = F x` with `A + BF` Hurwitz.
    #[serde(serialize_with = "ser_matrix")]
    pub gain: DMatrix<f64>,
    pub sigma_min_p: f64,
    pub sigma_max_p: f64,
    pub sigma_min_q: f64,
    pub sigma_max_q: f64,
    pub gamma: f64,
    pub residual: f64,
    pub decay: DecayConstants,
}

fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl LqConstants {
    /// `C̄(δ) = δ σmax(Q) / σmin(P)`.
    pub fn cbar_of(&self, delta: f64) -> f64 {
        delta * self.sigma_max_q / self.sigma_min_p
    }

    /// `xᵀ P x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += x[i] * self.p[(i, j)] * x[j];
            }
        }
        acc
    }

    /// The linear system with gain and decay constants attached.
    pub fn annotate(&self, lin: &LinearSystem) -> Result<LinearSystem> {
        Ok(lin
            .clone()
            .with_gain(self.gain.clone())?
            .with_decay(self.decay))
    }
}

/// `‖AᵀP + PA − (PB + N)R⁻¹(BᵀP + Nᵀ) + Q‖_F`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = r
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    let pbn = p * b + cross;
    (a.transpose() * p + p * a - &pbn * r_inv * pbn.transpose() + q).norm()
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    (e.min(), e.max())
}

fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = h.nrows();
    let mut z = h.clone();
    for _ in 0..SIGN_MAX_ITER {
        let inv = z.clone().try_inverse().ok_or_else(|| {
            Error::NotStabilizable("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let det = z.determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / dim as f64)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if !change.is_finite() {
            break;
        }
        if change <= SIGN_TOL.sqrt() * scale {
            // Quadratic convergence: one more unscaled step lands at machine precision.
            let inv = z
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NotStabilizable("sign iteration became singular".into()))?;
            z = (&z + inv) * 0.5;
            return Ok(z);
        }
    }
    Err(Error::NotStabilizable(
        "sign iteration did not converge".into(),
    ))
}

/// Solves `ÃᵀX + XÃ + W = 0` via the Kronecker form (small n only).
fn lyapunov(at: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = at.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(&at.transpose()) + at.transpose().kronecker(&eye);
    let rhs = nalgebra::DVector::from_iterator(n * n, w.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// Stabilizing CARE solution for `ẋ = Ax + Bu` and cost weights `(Q, R, N)`.
pub fn solve_care_matrices(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cross: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("R is singular".into()))?;
    // Fold the cross term: u = v − R⁻¹Nᵀx.
    let at = a - b * &r_inv * cross.transpose();
    let qt = q - cross * &r_inv * cross.transpose();
    let s = b * &r_inv * b.transpose();

    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&at);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&s));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-&qt));
    ham.view_mut((n, n), (n, n)).copy_from(&(-at.transpose()));

    let sign = matrix_sign(&ham)?;
    // Stable invariant subspace = range of the projector (I − sign)/2.
    let proj = (DMatrix::identity(2 * n, 2 * n) - sign) * 0.5;
    let svd = proj.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::NotStabilizable("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let basis = DMatrix::from_fn(2 * n, n, |i, j| u[(i, order[j])]);
    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    let svals = u1.clone().svd(false, false).singular_values;
    if svals.min() <= 1e-12 * svals.max().max(1e-300) {
        return Err(Error::NotStabilizable(
            "no n-dimensional stable invariant subspace with invertible upper block".into(),
        ));
    }
    let u1_inv = u1
        .try_inverse()
        .ok_or_else(|| Error::NotStabilizable("U1 singular".into()))?;
    let mut p = &u2 * u1_inv;
    p = (&p + p.transpose()) * 0.5;

    // Kleinman polish on the folded problem.
    let mut res = care_residual(&at, b, &qt, r, &DMatrix::zeros(n, b.ncols()), &p);
    for _ in 0..3 {
        let k = &r_inv * b.transpose() * &p;
        let closed = &at - b * &k;
        let w = &qt + k.transpose() * r * &k;
        let Some(candidate) = lyapunov(&closed, &w) else {
            break;
        };
        let cres = care_residual(&at, b, &qt, r, &DMatrix::zeros(n, b.ncols()), &candidate);
        if cres < res {
            p = candidate;
            res = cres;
        } else {
            break;
        }
    }

    let gain = -(&r_inv * (b.transpose() * &p + cross.transpose()));
    let closed = a + b * &gain;
    let abscissa = spectral_abscissa(&closed);
    if !(abscissa < 0.0) {
        return Err(Error::NotStabilizable(format!(
            "closed loop A + BF has spectral abscissa {abscissa}"
        )));
    }
    let residual = care_residual(a, b, q, r, cross, &p);
    Ok((p, gain, residual))
}

/// Sampled `Γ, rate` with `‖e^{(A+BF)t}‖ ≤ Γ e^{−rate·t}`; rate is 90% of the
/// closed-loop stability margin.
pub fn decay_constants(closed: &DMatrix<f64>) -> DecayConstants {
    let margin = -spectral_abscissa(closed);
    let rate = 0.9 * margin;
    let t_max = 40.0 / margin;
    let samples = 4000;
    let mut gamma: f64 = 1.0;
    for k in 0..=samples {
        let t = t_max * k as f64 / samples as f64;
        let phi = (closed * t).exp();
        let s = phi.svd(false, false).singular_values.max();
        gamma = gamma.max(s * (rate * t).exp());
    }
    DecayConstants {
        gamma: gamma * 1.01,
        rate,
    }
}

/// CARE for a linear system with quadratic cost.
pub fn solve_care(lin: &LinearSystem, cost: &StageCost) -> Result<LqConstants> {
    let lq = cost
        .lq()
        .ok_or_else(|| Error::Config("the Riccati solve needs a quadratic stage cost".into()))?;
    if lq.q().nrows() != lin.state_dim() || lq.r().nrows() != lin.input_dim() {
        return Err(Error::Dimension(
            "cost weights do not match the system".into(),
        ));
    }
    let (p, gain, residual) = solve_care_matrices(lin.a(), lin.b(), lq.q(), lq.r(), lq.cross())?;
    let (sigma_min_p, sigma_max_p) = eig_extremes(&p);
    if !(sigma_min_p > 0.0) {
        return Err(Error::NotStabilizable(format!(
            "Riccati solution is not positive definite (σmin = {sigma_min_p})"
        )));
    }
    let (sigma_min_q, sigma_max_q) = eig_extremes(lq.q());
    let decay = decay_constants(&(lin.a() + lin.b() * &gain));
    Ok(LqConstants {
        gamma: sigma_max_p / sigma_min_q,
        p,
        gain,
        sigma_min_p,
        sigma_max_p,
        sigma_min_q,
        sigma_max_q,
        residual,
        decay,
    })
}

/// LQR constants of a plant's linear model.
pub fn plant_lq_constants(plant: &Plant) -> Result<LqConstants> {
    let lin = plant
        .system
        .linear()
        .ok_or_else(|| Error::Config("plant has no linear model".into()))?;
    solve_care(lin, &plant.cost)
}

/// LQR gain `F` (u − ū = F(x − x̄)) of a plant's linear model.
pub fn plant_lqr_gain(plant: &Plant) -> Result<DMatrix<f64>> {
    if let Some(f) = plant.system.linear().and_then(|l| l.gain()) {
        return Ok(f.clone());
    }
    plant_lq_constants(plant).map(|c| c.gain)
}
