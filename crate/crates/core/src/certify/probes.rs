//! Numerical probes of the cost-controllability bound and of the
//! consistency condition `δℓ⋆(x̂) ≤ C̄ V_δ(x̂)`.

use rayon::prelude::*;
use serde::Serialize;

use super::care::LqConstants;
use crate::error::{Error, Result};
use crate::integrate::propagate_feedback;
use crate::model::{norm, Plant};
use crate::ocp::{value_function, SolverSettings};
use crate::sampling::unit_sphere;

/// Constraint residual above which an LQR rollout counts as active.
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostControllabilityReport {
    pub gamma: f64,
    /// Largest `V̂_∞(x)/ℓ⋆(x)` over the samples.
    pub worst_ratio: f64,
    pub worst_state: Vec<f64>,
    /// Largest `|V̂_∞(x) − xᵀPx| / xᵀPx`.
    pub riccati_consistency: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Cost of the unsaturated LQR rollout from `x` (with `x̄ = 0` shifted in);
/// fails with a constraint-active error if the rollout leaves `E`.
pub fn lqr_rollout_cost(plant: &Plant, lq: &LqConstants, x: &[f64]) -> Result<f64> {
    let xbar = plant.system.equilibrium_state();
    let ubar = plant.system.equilibrium_input();
    let n = xbar.len();
    let m = ubar.len();
    let t_end = 40.0 / lq.decay.rate.max(1e-3);
    let h = (0.01f64)
        .min(0.05 / lq.decay.rate.max(1e-3))
        .min(t_end / 100.0);
    let mut worst = 0.0f64;
    let traj = propagate_feedback(
        &plant.system,
        &plant.cost,
        x,
        |_, xs, u| {
            for i in 0..m {
                u[i] = ubar[i]
                    + (0..n)
                        .map(|j| lq.gain[(i, j)] * (xs[j] - xbar[j]))
                        .sum::<f64>();
            }
        },
        t_end,
        h,
    )?;
    for (xs, u) in traj.states.iter().zip(&traj.controls) {
        worst = worst.max(plant.constraints.violation(xs, u));
    }
    if worst > ACTIVE_TOL {
        return Err(Error::ConstraintActive {
            state: x.to_vec(),
            violation: worst,
        });
    }
    Ok(traj.total_cost())
}

/// Samples spheres of radius `radius·{1/4, 1/2, 1}` and compares the LQR
/// rollout cost to `γ ℓ⋆`.
pub fn verify_cost_controllability(
    plant: &Plant,
    lq: &LqConstants,
    radius: f64,
    directions: usize,
) -> Result<CostControllabilityReport> {
    if !(radius > 0.0) {
        return Err(Error::domain(
            format!("radius {radius} must be positive"),
            "pass r > 0",
        ));
    }
    let xbar = plant.system.equilibrium_state().to_vec();
    let n = xbar.len();
    let mut states = Vec::new();
    for s in [0.25, 0.5, 1.0] {
        for d in unit_sphere(n, directions) {
            states.push(
                (0..n)
                    .map(|i| xbar[i] + s * radius * d[i])
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let rows: Vec<(f64, f64)> = states
        .par_iter()
        .map(|x| {
            let v = lqr_rollout_cost(plant, lq, x)?;
            let l = plant.pointwise_min_cost(x)?;
            let dx: Vec<f64> = x.iter().zip(&xbar).map(|(a, b)| a - b).collect();
            let pv = lq.value(&dx);
            Ok((v / l, (v - pv).abs() / pv))
        })
        .collect::<Result<_>>()?;
    let (mut worst_ratio, mut worst_state, mut consistency) = (0.0, Vec::new(), 0.0f64);
    for ((ratio, cons), x) in rows.iter().zip(&states) {
        if *ratio > worst_ratio {
            worst_ratio = *ratio;
            worst_state = x.clone();
        }
        consistency = consistency.max(*cons);
    }
    Ok(CostControllabilityReport {
        gamma: lq.gamma,
        worst_ratio,
        worst_state,
        riccati_consistency: consistency,
        samples: states.len(),
        passed: worst_ratio <= lq.gamma * 1.05,
    })
}

/// Which `C̄` to test against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CbarRule {
    /// `δ σmax(Q)/σmin(P)`.
    Riccati,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbarEntry {
    pub state: Vec<f64>,
    pub delta: f64,
    pub delta_ell_star: f64,
    pub v_delta: f64,
    pub cbar: f64,
    /// `δℓ⋆ / (C̄ V_δ)`; the inequality holds (with 5% tolerance) iff ≤ 1.05.
    pub slack_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbarReport {
    pub entries: Vec<CbarEntry>,
    pub worst_slack_ratio: f64,
    pub violations: usize,
    /// Per δ: the smallest `C̄` that would satisfy every sample, `max δℓ⋆/V_δ`.
    pub required_cbar: Vec<(f64, f64)>,
}

impl CbarReport {
    pub fn required_cbar_for(&self, delta: f64) -> Option<f64> {
        self.required_cbar
            .iter()
            .find(|(d, _)| (d - delta).abs() <= 1e-12 * delta.max(1.0))
            .map(|(_, c)| *c)
    }
}

/// Checks `δℓ⋆(x̂) ≤ C̄ V_δ(x̂)·1.05` for every sample and `δ`; violations
/// are returned as data.
pub fn verify_cbar(
    plant: &Plant,
    lq: &LqConstants,
    states: &[Vec<f64>],
    deltas: &[f64],
    rule: CbarRule,
    substeps: usize,
    settings: &SolverSettings,
) -> Result<CbarReport> {
    let xbar = plant.system.equilibrium_state().to_vec();
    let jobs: Vec<(usize, f64)> = (0..states.len())
        .flat_map(|i| deltas.iter().map(move |d| (i, *d)))
        .collect();
    let entries: Vec<CbarEntry> = jobs
        .par_iter()
        .map(|&(i, delta)| {
            let x = &states[i];
            let cbar = match rule {
                CbarRule::Riccati => lq.cbar_of(delta),
                CbarRule::Fixed(c) => c,
            };
            let lhs = delta * plant.pointwise_min_cost(x)?;
            let dx: Vec<f64> = x.iter().zip(&xbar).map(|(a, b)| a - b).collect();
            let v = if norm(&dx) == 0.0 {
                0.0
            } else {
                value_function(plant, x, delta, delta / substeps.max(1) as f64, settings)?
            };
            let slack_ratio = if lhs == 0.0 { 0.0 } else { lhs / (cbar * v) };
            Ok(CbarEntry {
                state: x.clone(),
                delta,
                delta_ell_star: lhs,
                v_delta: v,
                cbar,
                slack_ratio,
            })
        })
        .collect::<Result<_>>()?;
    let worst = entries.iter().map(|e| e.slack_ratio).fold(0.0, f64::max);
    let violations = entries.iter().filter(|e| e.slack_ratio > 1.05).count();
    let required_cbar = deltas
        .iter()
        .map(|&d| {
            let req = entries
                .iter()
                .filter(|e| e.delta == d && e.v_delta > 0.0)
                .map(|e| e.delta_ell_star / e.v_delta)
                .fold(0.0, f64::max);
            (d, req)
        })
        .collect();
    Ok(CbarReport {
        entries,
        worst_slack_ratio: worst,
        violations,
        required_cbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::care::plant_lq_constants;

    #[test]
    fn a2_ratio_is_sigma_max_p() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let lq = plant_lq_constants(&plant).unwrap();
        let rep = verify_cost_controllability(&plant, &lq, 0.05, 32).unwrap();
        assert!(rep.worst_ratio <= 2.74, "{}", rep.worst_ratio);
        assert!(rep.worst_ratio >= 3f64.sqrt() + 1.0 - 0.02);
        assert!(rep.riccati_consistency < 0.02);
        assert!(rep.passed);
        assert!(matches!(
            verify_cost_controllability(&plant, &lq, 10.0, 8),
            Err(Error::ConstraintActive { .. })
        ));
    }

    #[test]
    fn a3_equilibrium_and_falsification() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let lq = plant_lq_constants(&plant).unwrap();
        let s = SolverSettings::default();
        let states = vec![
            vec![0.0, 0.0],
            vec![0.2, -0.1],
            vec![-0.1, 0.3],
            vec![0.3, 0.3],
        ];
        let rep = verify_cbar(&plant, &lq, &states, &[0.1], CbarRule::Riccati, 10, &s).unwrap();
        assert_eq!(rep.entries[0].slack_ratio, 0.0);
        // For small δ, V_δ ≈ δℓ⋆, so the required constant is close to 1.
        let req = rep.required_cbar_for(0.1).unwrap();
        assert!(req > 0.9 && req < 1.2, "{req}");
        assert!(rep.violations > 0);
        let ok = verify_cbar(&plant, &lq, &states, &[0.1], CbarRule::Fixed(req), 10, &s).unwrap();
        assert_eq!(ok.violations, 0);
        let half = verify_cbar(
            &plant,
            &lq,
            &states,
            &[0.1],
            CbarRule::Fixed(0.5 * req),
            10,
            &s,
        )
        .unwrap();
        assert!(half.violations > 0);
    }
}
