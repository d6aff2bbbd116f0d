//! Sampled estimates of `M = inf_{X∖N} ℓ⋆` and of the sublevel constant `C`.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{distance, Plant};
use crate::ocp::{value_function, SolverSettings};
use crate::sampling::{box_corners, face_midpoints, halton_in_box, unit_sphere};

/// `M` for the open ball of radius `r` around `x̄`.
///
/// Quadratic costs without cross term (so `ℓ⋆ = (x−x̄)ᵀQ(x−x̄)`) return
/// `σmin(Q)·r²` when the minimizing eigen-direction at radius `r` is
/// admissible; otherwise `ℓ⋆` is minimized over a Halton sample of the state
/// box plus its corners, face midpoints and points of the sphere of radius `r`.
pub fn estimate_m(plant: &Plant, radius: f64, samples: usize) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::domain(
            format!("radius {radius} must be positive"),
            "pass r > 0",
        ));
    }
    let bounds = plant
        .constraints
        .state_box()
        .ok_or_else(|| Error::Config("estimating M needs a bounded state box".into()))?
        .to_vec();
    let xbar = plant.system.equilibrium_state().to_vec();
    let n = xbar.len();
    if bounds
        .iter()
        .zip(&xbar)
        .any(|(b, c)| c - radius < b.lo && c + radius > b.hi)
    {
        log::debug!("ball of radius {radius} is not contained in X");
    }
    let corners = box_corners(&bounds);
    if corners.iter().all(|c| distance(c, &xbar) < radius) {
        return Err(Error::EmptyRegion(format!(
            "X minus the ball of radius {radius} around the equilibrium is empty"
        )));
    }

    if let Some(lq) = plant.cost.lq() {
        let admissible_ref = {
            let mut u = plant.system.equilibrium_input().to_vec();
            plant.constraints.project_input(&mut u);
            u == plant.system.equilibrium_input() && !plant.constraints.has_extra()
        };
        if !lq.has_cross_term() && admissible_ref {
            let eig = SymmetricEigen::new(lq.q().clone());
            let (imin, smin) =
                eig.eigenvalues
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::INFINITY),
                        |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc },
                    );
            let v = eig.eigenvectors.column(imin);
            for sign in [1.0, -1.0] {
                let x: Vec<f64> = (0..n).map(|i| xbar[i] + sign * radius * v[i]).collect();
                if plant.constraints.state_in_box(&x, 0.0) {
                    return Ok(smin * radius * radius);
                }
            }
        }
    }

    let mut pts = halton_in_box(&bounds, samples);
    pts.extend(corners);
    pts.extend(face_midpoints(&bounds));
    for d in unit_sphere(n, 64.max(samples / 100)) {
        let x: Vec<f64> = (0..n)
            .map(|i| bounds[i].clamp(xbar[i] + radius * d[i]))
            .collect();
        pts.push(x);
    }
    let candidates: Vec<Vec<f64>> = pts
        .into_iter()
        .filter(|x| distance(x, &xbar) >= radius)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyRegion(
            "no sample of X lies outside the ball".into(),
        ));
    }
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|x| plant.pointwise_min_cost(x))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

/// Options for [`estimate_c`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct COptions {
    /// `T_long = long_factor · T`.
    pub long_factor: f64,
    pub margin: f64,
    /// Integration step of the value-function solves.
    pub step: f64,
    /// Also solve at `2·T_long` and flag values that keep growing.
    pub detect_unbounded: bool,
    /// Relative growth between `T_long` and `2·T_long` regarded as unbounded.
    pub growth_tol: f64,
}

impl Default for COptions {
    fn default() -> Self {
        COptions {
            long_factor: 10.0,
            margin: 0.1,
            step: 0.02,
            detect_unbounded: true,
            growth_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CEstimate {
    /// `(1 + margin) · max V_long`, `f64::INFINITY` if some sample has no
    /// finite long-horizon value.
    pub c: f64,
    pub t_long: f64,
    pub values: Vec<f64>,
    pub offending: Option<Vec<f64>>,
}

/// `C` with `K ⊆ V_∞⁻¹[0, C]`, using `V_{T_long}` as a proxy for `V_∞`.
pub fn estimate_c(
    plant: &Plant,
    k_set: &[Vec<f64>],
    horizon: f64,
    options: &COptions,
    settings: &SolverSettings,
) -> Result<CEstimate> {
    if k_set.is_empty() {
        return Err(Error::EmptyRegion(
            "the compact set K has no samples".into(),
        ));
    }
    let t_long = options.long_factor * horizon;
    let results: Vec<f64> = k_set
        .par_iter()
        .map(|x| {
            let v = value_function(plant, x, t_long, options.step, settings)?;
            if !v.is_finite() || !options.detect_unbounded || v == 0.0 {
                return Ok(v);
            }
            let v2 = value_function(plant, x, 2.0 * t_long, options.step, settings)?;
            Ok(if v2 - v > options.growth_tol * v + 1e-6 {
                f64::INFINITY
            } else {
                v
            })
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0;
    let mut offending = None;
    for (x, v) in k_set.iter().zip(&results) {
        if !v.is_finite() {
            offending = Some(x.clone());
            worst = f64::INFINITY;
            break;
        }
        worst = f64::max(worst, *v);
    }
    Ok(CEstimate {
        c: (1.0 + options.margin) * worst,
        t_long,
        values: results,
        offending,
    })
}

/// `C := max(C, 1.01·M·δ)`; keeps `δ < β` and the condition nondegenerate.
pub fn floor_c(c: f64, m: f64, delta: f64) -> f64 {
    c.max(1.01 * m * delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_integrator_m_is_analytic() {
        let plant = Plant::from_registry("double_integrator").unwrap();
        let m = estimate_m(&plant, 0.1, 1000).unwrap();
        assert!((m - 0.01).abs() < 1e-15);
        assert!(matches!(
            estimate_m(&plant, 3.0, 1000),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn double_integrator_m_matches_grid_oracle() {
        // Dense grid over X minus the ball; ℓ⋆ = |x|² there.
        let mut best = f64::INFINITY;
        let k = 317;
        for i in 0..k {
            for j in 0..k {
                let x = [
                    -1.0 + 2.0 * i as f64 / (k - 1) as f64,
                    -1.0 + 2.0 * j as f64 / (k - 1) as f64,
                ];
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 >= 0.01 {
                    best = best.min(r2);
                }
            }
        }
        assert!((best - 0.01).abs() < 2e-3);
    }

    #[test]
    fn scalar_m() {
        let plant = Plant::from_registry("scalar_unstable").unwrap();
        assert!((estimate_m(&plant, 0.5, 100).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn c_of_equilibrium_is_zero_and_boundary_is_infinite() {
        let plant = Plant::from_registry("scalar_unstable").unwrap();
        let s = SolverSettings::default();
        let opts = COptions {
            step: 0.05,
            ..COptions::default()
        };
        let c0 = estimate_c(&plant, &[vec![0.0]], 0.3, &opts, &s).unwrap();
        assert_eq!(c0.c, 0.0);
        let c1 = estimate_c(&plant, &[vec![0.5], vec![1.0]], 0.3, &opts, &s).unwrap();
        assert!(c1.c.is_infinite());
        assert_eq!(c1.offending, Some(vec![1.0]));
        assert!(floor_c(0.0, 0.25, 0.1) > 0.0);
    }
}
