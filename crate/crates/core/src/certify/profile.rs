//! Long-horizon values on level sets of the distance to the kernel
//! boundary, and the empirical constant `D̂` with `sup V_∞ ≤ D̂/dist`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Plant;
use crate::ocp::{value_function, SolverSettings};
use crate::viability::{Membership, ViabilityKernel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileOptions {
    /// Distances from the boundary of the inner parallel sets `K`.
    pub distances: Vec<f64>,
    /// Rays through the origin along which `K`'s boundary is sampled.
    pub rays: usize,
    /// Horizon standing in for `T = ∞`.
    pub horizon: f64,
    pub step: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            distances: vec![0.2, 0.1, 0.05, 0.025],
            rays: 24,
            horizon: 15.0,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    /// `dist(K; ∂A)`.
    pub distance: f64,
    pub sup_value: f64,
    pub argmax: Vec<f64>,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceProfile {
    /// `K = {x̄}` first, then the requested distances.
    pub rows: Vec<ProfileRow>,
    /// Largest product.
    pub d_hat: f64,
}

/// Point on the ray `t·dir` with `dist(t·dir; ∂A) = d`, found by
/// bisection; the distance is concave on the kernel and positive at the
/// origin, so the set where it is at least `d` is an interval.
fn level_point(kernel: &ViabilityKernel, dir: &[f64], d: f64) -> Option<Vec<f64>> {
    let at = |t: f64| dir.iter().map(|v| v * t).collect::<Vec<f64>>();
    let mut hi = 1.0;
    while kernel.membership(&at(hi)) != Membership::Outside {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut lo = 0.0;
    if kernel.boundary_distance(&at(lo)) < d {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let x = at(mid);
        if kernel.membership(&x) != Membership::Outside && kernel.boundary_distance(&x) >= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(at(lo))
}

/// For every `K = {x ∈ A : dist(x; ∂A) ≥ d}` samples `∂K` along rays,
/// computes the largest long-horizon value there and `d · sup V̂`.
pub fn distance_profile(
    plant: &Plant,
    kernel: &ViabilityKernel,
    options: &ProfileOptions,
    settings: &SolverSettings,
) -> Result<DistanceProfile> {
    if plant.system.state_dim() != 2 {
        return Err(Error::Config(
            "the distance profile samples planar kernels only".into(),
        ));
    }
    if options.rays == 0 || options.distances.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Config(
            "profile needs rays and positive distances".into(),
        ));
    }
    let origin = plant.system.equilibrium_state().to_vec();
    let mut rows = Vec::with_capacity(options.distances.len() + 1);
    let v0 = value_function(plant, &origin, options.horizon, options.step, settings)?;
    let d0 = kernel.boundary_distance(&origin);
    rows.push(ProfileRow {
        distance: d0,
        sup_value: v0,
        argmax: origin.clone(),
        product: d0 * v0,
    });
    for &d in &options.distances {
        let points: Vec<Vec<f64>> = (0..options.rays)
            .filter_map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / options.rays as f64;
                level_point(kernel, &[a.cos(), a.sin()], d)
            })
            .collect();
        if points.is_empty() {
            return Err(Error::EmptyRegion(format!(
                "no kernel points at distance {d} from the boundary"
            )));
        }
        let values: Vec<f64> = points
            .par_iter()
            .map(|x| value_function(plant, x, options.horizon, options.step, settings))
            .collect::<Result<_>>()?;
        let (i, v) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if *v > acc.1 {
                    (i, *v)
                } else {
                    acc
                }
            });
        rows.push(ProfileRow {
            distance: d,
            sup_value: v,
            argmax: points[i].clone(),
            product: d * v,
        });
    }
    let d_hat = rows.iter().map(|r| r.product).fold(0.0, f64::max);
    Ok(DistanceProfile { rows, d_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viability::double_integrator_kernel;

    #[test]
    fn level_points_sit_at_the_requested_distance() {
        let k = double_integrator_kernel();
        for a in [0.0f64, 0.7, 2.0, 4.0] {
            let p = level_point(&k, &[a.cos(), a.sin()], 0.1).unwrap();
            assert!((k.boundary_distance(&p) - 0.1).abs() < 1e-9);
        }
        assert!(level_point(&k, &[1.0, 0.0], 5.0).is_none());
    }
}
