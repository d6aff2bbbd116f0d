//! End-to-end certification: Riccati constants, `M`, `C`, `C̄` and the
//! horizon condition for each sampling period.

use rayon::prelude::*;
use serde::Serialize;

use super::care::{plant_lq_constants, LqConstants};
use super::condition::{
    check_condition, min_horizon_bound, Certificate, ConditionInputs, HorizonBound,
};
use super::constants::{estimate_c, estimate_m, floor_c, CEstimate, COptions};
use super::probes::{
    verify_cbar, verify_cost_controllability, CbarRule, CostControllabilityReport,
};
use crate::error::{Error, Result};
use crate::model::Plant;
use crate::ocp::{value_function, SolverSettings};
use crate::sampling::{halton, unit_sphere};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub deltas: Vec<f64>,
    /// Radius of the ball `N` around `x̄` defining `M`.
    pub radius: f64,
    /// Samples of `K`; the sphere of radius `radius` when empty.
    pub k_set: Vec<Vec<f64>>,
    pub sphere_samples: usize,
    /// Horizon scaled by `COptions::long_factor` for the `C` estimate.
    pub c_horizon: f64,
    pub c_options: COptions,
    pub m_samples: usize,
    /// Substeps of the short-horizon solves checking `C̄`.
    pub cbar_substeps: usize,
    /// Inclusive range of `N` for the reported certificates.
    pub n_range: (usize, usize),
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            deltas: vec![1.0, 0.5],
            radius: 0.1,
            k_set: Vec::new(),
            sphere_samples: 16,
            c_horizon: 0.8,
            c_options: COptions {
                step: 0.05,
                ..COptions::default()
            },
            m_samples: 256,
            cbar_substeps: 10,
            n_range: (1, 40),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub delta: f64,
    /// `C` after flooring at `1.01·M·δ`.
    pub c: f64,
    pub c_floored: bool,
    pub cbar_riccati: f64,
    /// Smallest `C̄` consistent with the sampled short-horizon values.
    pub cbar_required: f64,
    pub cbar: f64,
    /// The Riccati-based `C̄` was too small and has been raised.
    pub cbar_adjusted: bool,
    pub bound: HorizonBound,
    pub at_n_bar: Certificate,
    pub certificates: Vec<Certificate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub lq: LqConstants,
    pub gamma: f64,
    pub m: f64,
    pub c_estimate: CEstimate,
    pub cost_controllability: CostControllabilityReport,
    pub k_set: Vec<Vec<f64>>,
    pub per_delta: Vec<DeltaReport>,
}

fn default_k_set(plant: &Plant, options: &CertifyOptions) -> Vec<Vec<f64>> {
    let xbar = plant.system.equilibrium_state();
    unit_sphere(xbar.len(), options.sphere_samples)
        .into_iter()
        .map(|d| {
            d.iter()
                .zip(xbar)
                .map(|(v, c)| c + options.radius * v)
                .collect()
        })
        .collect()
}

/// Runs the chain for every `δ` in `options.deltas`.
pub fn certify(
    plant: &Plant,
    options: &CertifyOptions,
    settings: &SolverSettings,
) -> Result<CertifyReport> {
    if options.deltas.is_empty() {
        return Err(Error::Config("certification needs at least one δ".into()));
    }
    let (n_lo, n_hi) = options.n_range;
    if n_lo == 0 || n_hi < n_lo {
        return Err(Error::Config(format!("invalid N range {n_lo}..={n_hi}")));
    }
    let lq = plant_lq_constants(plant)?;
    let gamma = lq.gamma;
    let cost_controllability =
        verify_cost_controllability(plant, &lq, options.radius, options.sphere_samples)?;
    let m = estimate_m(plant, options.radius, options.m_samples)?;
    let k_set = if options.k_set.is_empty() {
        default_k_set(plant, options)
    } else {
        options.k_set.clone()
    };
    let c_estimate = estimate_c(
        plant,
        &k_set,
        options.c_horizon,
        &options.c_options,
        settings,
    )?;
    if !c_estimate.c.is_finite() {
        return Err(Error::domain(
            format!(
                "K contains {:?} with unbounded long-horizon value",
                c_estimate.offending
            ),
            "shrink K away from the kernel boundary",
        ));
    }
    // States probing C̄: K and its contraction towards x̄.
    let xbar = plant.system.equilibrium_state();
    let cbar_states: Vec<Vec<f64>> = [1.0, 0.5]
        .iter()
        .flat_map(|s| {
            k_set
                .iter()
                .map(move |x| x.iter().zip(xbar).map(|(v, c)| c + s * (v - c)).collect())
        })
        .collect();
    let cbar_probe = verify_cbar(
        plant,
        &lq,
        &cbar_states,
        &options.deltas,
        CbarRule::Riccati,
        options.cbar_substeps,
        settings,
    )?;
    let mut per_delta = Vec::with_capacity(options.deltas.len());
    for &delta in &options.deltas {
        let c = floor_c(c_estimate.c, m, delta);
        let cbar_riccati = lq.cbar_of(delta);
        let cbar_required = cbar_probe.required_cbar_for(delta).unwrap_or(0.0);
        let cbar_adjusted = cbar_required > cbar_riccati;
        let cbar = if cbar_adjusted {
            1.05 * cbar_required
        } else {
            cbar_riccati
        };
        let inputs = ConditionInputs::new(gamma, m, c, cbar, delta)?;
        let bound = min_horizon_bound(&inputs)?;
        let at_n_bar = check_condition(&inputs, bound.n_bar)?;
        let certificates = (n_lo..=n_hi)
            .map(|n| check_condition(&inputs, n))
            .collect::<Result<_>>()?;
        per_delta.push(DeltaReport {
            delta,
            c,
            c_floored: c > c_estimate.c,
            cbar_riccati,
            cbar_required,
            cbar,
            cbar_adjusted,
            bound,
            at_n_bar,
            certificates,
        });
    }
    Ok(CertifyReport {
        lq,
        gamma,
        m,
        c_estimate,
        cost_controllability,
        k_set,
        per_delta,
    })
}

/// Up to `count` states of `V_T⁻¹[0, C]` found by rejection among Halton
/// points of the box `x̄ ± radius`, in Halton order.
pub fn sample_sublevel_set(
    plant: &Plant,
    horizon: f64,
    step: f64,
    c: f64,
    radius: f64,
    count: usize,
    settings: &SolverSettings,
) -> Result<Vec<Vec<f64>>> {
    let xbar = plant.system.equilibrium_state();
    let n = xbar.len();
    let mut out = Vec::with_capacity(count);
    let batch = 4 * count.max(1);
    let mut offset = 0;
    while out.len() < count {
        let pts = halton(n, offset + batch);
        let candidates: Vec<Vec<f64>> = pts[offset..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(xbar)
                    .map(|(v, c)| c + radius * (2.0 * v - 1.0))
                    .collect()
            })
            .collect();
        let values: Vec<f64> = candidates
            .par_iter()
            .map(|x| value_function(plant, x, horizon, step, settings))
            .collect::<Result<_>>()?;
        for (x, v) in candidates.into_iter().zip(values) {
            if v <= c && out.len() < count {
                out.push(x);
            }
        }
        offset += batch;
        if offset > 1000 * count.max(1) {
            return Err(Error::EmptyRegion(format!(
                "too few states with V_T ≤ {c} near x̄"
            )));
        }
    }
    Ok(out)
}
