//! Constructive bound on `V_∞` over `λA`: blend a kernel-keeping control
//! with the LQR feedback until the state has shrunk into a set where the
//! LQR feedback alone is admissible.

use rayon::prelude::*;
use serde::Serialize;

use super::care::LqConstants;
use super::probes::lqr_rollout_cost;
use crate::error::{Error, Result};
use crate::integrate::rk4_step_autonomous;
use crate::model::Plant;
use crate::viability::{scale_kernel, Membership, ViabilityKernel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionOptions {
    pub step: f64,
    /// A stage that has not reached the shrunken kernel by then fails.
    pub stage_time_max: f64,
    /// Constraint residual tolerated along the construction.
    pub tol: f64,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        ConstructionOptions {
            step: 0.01,
            stage_time_max: 200.0,
            tol: 1e-6,
        }
    }
}

/// Constants of the construction and the resulting bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionBound {
    pub lambda: f64,
    pub f_norm: f64,
    pub gamma: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// `L = (1+‖F‖)Γ d_max/d_min`.
    pub l: f64,
    /// `ε = 1 − (1−λ)/(λL)`; unused when `λL ≤ 1`.
    pub epsilon: f64,
    /// Blend weight with `μλ + (1−μ)Lλ = 1`.
    pub mu: f64,
    /// Smallest `m` with `ε^m λL < 1`.
    pub m: usize,
    /// Longest measured stage.
    pub t_bar: f64,
    /// Largest stage-cost rate along the blended phase.
    pub beta_b: f64,
    /// Largest LQR tail cost.
    pub alpha_b: f64,
    /// `m t̄ β + α`.
    pub bound: f64,
    /// Largest total cost actually accumulated.
    pub sup_total_cost: f64,
    /// Largest gap between the blended state and the blend of the two
    /// component states.
    pub superposition_error: f64,
    pub samples: usize,
}

struct Rollout {
    t_bar: f64,
    beta: f64,
    alpha: f64,
    total: f64,
    superposition: f64,
}

/// `(d_min, d_max)` of the state box: distance from the origin to its
/// boundary and its largest norm.
pub fn box_radii(plant: &Plant) -> Result<(f64, f64)> {
    let b = plant
        .constraints
        .state_box()
        .ok_or_else(|| Error::Config("the construction needs a bounded state box".into()))?;
    let mut d_min = f64::INFINITY;
    let mut d_max2 = 0.0;
    for bd in b {
        if !(bd.lo < 0.0 && bd.hi > 0.0) || !bd.lo.is_finite() || !bd.hi.is_finite() {
            return Err(Error::Config(
                "the state box must be bounded and contain the origin".into(),
            ));
        }
        d_min = d_min.min(-bd.lo).min(bd.hi);
        d_max2 += bd.lo.abs().max(bd.hi.abs()).powi(2);
    }
    Ok((d_min, f64::sqrt(d_max2)))
}

fn construction_failure(x: &[f64], reason: impl Into<String>) -> Error {
    Error::ConstructionFailure {
        state: x.to_vec(),
        reason: reason.into(),
    }
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    plant: &Plant,
    lq: &LqConstants,
    kernel: &ViabilityKernel,
    lambda: f64,
    l: f64,
    mu: f64,
    epsilon: f64,
    x0: &[f64],
    options: &ConstructionOptions,
) -> Result<Rollout> {
    let n = x0.len();
    let m = plant.system.input_dim();
    let h = options.step;
    let mut out = Rollout {
        t_bar: 0.0,
        beta: 0.0,
        alpha: 0.0,
        total: 0.0,
        superposition: 0.0,
    };
    let mut x = x0.to_vec();
    let mut level = lambda;
    while level * l >= 1.0 {
        let keeper = scale_kernel(kernel, level)?;
        let target = scale_kernel(kernel, epsilon * level)?;
        // y = [x_λ, x_F, x̃, cost]
        let mut y = vec![0.0; 3 * n + 1];
        y[..n].copy_from_slice(&x);
        y[n..2 * n].copy_from_slice(&x);
        y[2 * n..3 * n].copy_from_slice(&x);
        let mut t = 0.0;
        let mut u_l = vec![0.0; m];
        let mut u_f = vec![0.0; m];
        let mut u = vec![0.0; m];
        loop {
            let xt = &y[2 * n..3 * n];
            if t > 0.0 && target.membership(xt) != Membership::Outside {
                break;
            }
            if t > options.stage_time_max {
                return Err(construction_failure(
                    x0,
                    format!("stage did not shrink within {} s", options.stage_time_max),
                ));
            }
            // Admissibility and cost rate at the left node.
            keeper.keeper(&y[..n], &mut u_l);
            lqr_input(lq, &y[n..2 * n], &mut u_f);
            for i in 0..m {
                u[i] = mu * u_l[i] + (1.0 - mu) * u_f[i];
            }
            let viol = plant.constraints.violation(xt, &u);
            if viol > options.tol {
                return Err(construction_failure(
                    x0,
                    format!("blended rollout violates constraints by {viol:.3e} at t = {t:.3}"),
                ));
            }
            out.beta = out.beta.max(plant.cost.eval(xt, &u));
            for i in 0..n {
                let blend = mu * y[i] + (1.0 - mu) * y[n + i];
                out.superposition = out.superposition.max((blend - xt[i]).abs());
            }
            rk4_step_autonomous(
                |s, ds| {
                    let mut ul = vec![0.0; m];
                    let mut uf = vec![0.0; m];
                    let mut ub = vec![0.0; m];
                    keeper.keeper(&s[..n], &mut ul);
                    lqr_input(lq, &s[n..2 * n], &mut uf);
                    for i in 0..m {
                        ub[i] = mu * ul[i] + (1.0 - mu) * uf[i];
                    }
                    let mut d = vec![0.0; n];
                    plant.system.eval(&s[..n], &ul, &mut d);
                    ds[..n].copy_from_slice(&d);
                    plant.system.eval(&s[n..2 * n], &uf, &mut d);
                    ds[n..2 * n].copy_from_slice(&d);
                    plant.system.eval(&s[2 * n..3 * n], &ub, &mut d);
                    ds[2 * n..3 * n].copy_from_slice(&d);
                    ds[3 * n] = plant.cost.eval(&s[2 * n..3 * n], &ub);
                },
                &mut y,
                h,
            );
            t += h;
        }
        out.t_bar = out.t_bar.max(t);
        out.total += y[3 * n];
        x.copy_from_slice(&y[2 * n..3 * n]);
        level *= epsilon;
    }
    let tail = match lqr_rollout_cost(plant, lq, &x) {
        Ok(c) => c,
        Err(Error::ConstraintActive { violation, .. }) => {
            return Err(construction_failure(
                x0,
                format!("LQR tail violates constraints by {violation:.3e}"),
            ))
        }
        Err(e) => return Err(e),
    };
    out.alpha = tail;
    out.total += tail;
    Ok(out)
}

fn lqr_input(lq: &LqConstants, x: &[f64], u: &mut [f64]) {
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = (0..x.len()).map(|j| lq.gain[(i, j)] * x[j]).sum();
    }
}

/// Runs the blended construction from every sample of `λA` and returns the
/// constants with the bound `m t̄ β + α`. For `λL ≤ 1` the bound is the
/// largest LQR rollout cost.
pub fn bound_v_infinity_constructive(
    plant: &Plant,
    lq: &LqConstants,
    kernel: &ViabilityKernel,
    lambda: f64,
    samples: &[Vec<f64>],
    options: &ConstructionOptions,
) -> Result<ConstructionBound> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::domain(
            format!("lambda = {lambda} is outside [0, 1)"),
            "pass λ ∈ [0, 1)",
        ));
    }
    if plant.system.linear().is_none() {
        return Err(Error::Config(
            "the construction needs linear dynamics".into(),
        ));
    }
    if plant.system.equilibrium_state().iter().any(|v| *v != 0.0)
        || plant.system.equilibrium_input().iter().any(|v| *v != 0.0)
    {
        return Err(Error::Config(
            "the construction assumes the equilibrium at the origin".into(),
        ));
    }
    let (d_min, d_max) = box_radii(plant)?;
    let f_norm = lq.gain.clone().svd(false, false).singular_values.max();
    let gamma = lq.decay.gamma;
    let l = (1.0 + f_norm) * gamma * d_max / d_min;
    let mut c = ConstructionBound {
        lambda,
        f_norm,
        gamma,
        d_min,
        d_max,
        l,
        epsilon: 1.0,
        mu: 0.0,
        m: 0,
        t_bar: 0.0,
        beta_b: 0.0,
        alpha_b: 0.0,
        bound: 0.0,
        sup_total_cost: 0.0,
        superposition_error: 0.0,
        samples: 0,
    };
    if lambda == 0.0 {
        return Ok(c);
    }
    if lambda * l > 1.0 {
        c.epsilon = 1.0 - (1.0 - lambda) / (lambda * l);
        c.mu = (lambda * l - 1.0) / (lambda * l - lambda);
        c.m = ((1.0 / (lambda * l)).ln() / c.epsilon.ln()).floor() as usize + 1;
    }
    let scaled: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().map(|v| v * lambda).collect())
        .collect();
    let runs: Vec<Rollout> = scaled
        .par_iter()
        .map(|x| rollout(plant, lq, kernel, lambda, l, c.mu, c.epsilon, x, options))
        .collect::<Result<_>>()?;
    for r in &runs {
        c.t_bar = c.t_bar.max(r.t_bar);
        c.beta_b = c.beta_b.max(r.beta);
        c.alpha_b = c.alpha_b.max(r.alpha);
        c.sup_total_cost = c.sup_total_cost.max(r.total);
        c.superposition_error = c.superposition_error.max(r.superposition);
    }
    c.samples = runs.len();
    c.bound = c.m as f64 * c.t_bar * c.beta_b + c.alpha_b;
    Ok(c)
}

/// Samples of `A` used for the construction: the boundary polyline of an
/// analytic kernel, or the inside cell corners of a grid kernel.
pub fn kernel_samples(kernel: &ViabilityKernel, per_curve: usize) -> Vec<Vec<f64>> {
    if let Some(p) = kernel.boundary_polyline(per_curve) {
        return p.iter().map(|q| vec![q[0], q[1]]).collect();
    }
    kernel
        .grid()
        .map(|g| g.inside_cell_corners())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::care::plant_lq_constants;
    use crate::viability::double_integrator_kernel;

    #[test]
    fn zero_lambda_gives_zero() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let lq = plant_lq_constants(&plant).unwrap();
        let k = double_integrator_kernel();
        let c = bound_v_infinity_constructive(
            &plant,
            &lq,
            &k,
            0.0,
            &[vec![0.0, 0.0]],
            &ConstructionOptions::default(),
        )
        .unwrap();
        assert_eq!(c.bound, 0.0);
        assert!((c.d_max - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.d_min, 1.0);
    }

    #[test]
    fn half_kernel_is_finite_and_feasible() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let lq = plant_lq_constants(&plant).unwrap();
        let k = double_integrator_kernel();
        let samples = kernel_samples(&k, 6);
        let c = bound_v_infinity_constructive(
            &plant,
            &lq,
            &k,
            0.5,
            &samples,
            &ConstructionOptions::default(),
        )
        .unwrap();
        assert!(c.lambda * c.l > 1.0);
        assert!(c.epsilon > c.mu && c.epsilon < 1.0);
        assert!(c.bound.is_finite() && c.bound >= c.sup_total_cost);
        assert!(c.superposition_error < 1e-9, "{}", c.superposition_error);
    }

    #[test]
    fn bound_grows_with_lambda() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let lq = plant_lq_constants(&plant).unwrap();
        let k = double_integrator_kernel();
        let samples = kernel_samples(&k, 6);
        let bounds: Vec<f64> = [0.5, 0.7, 0.9, 0.95]
            .iter()
            .map(|l| {
                bound_v_infinity_constructive(
                    &plant,
                    &lq,
                    &k,
                    *l,
                    &samples,
                    &ConstructionOptions::default(),
                )
                .unwrap()
                .bound
            })
            .collect();
        assert!(bounds.windows(2).all(|w| w[1] > w[0]), "{bounds:?}");
    }
}
