//! TOML experiment configuration.
//!
//! ```toml
//! [system]
//! registry = "double_integrator"
//!
//! [experiment]
//! deltas = [0.1, 0.05]
//! x0 = [[0.5, 0.5]]
//! ```
//!
//! A linear system can be given by matrices instead of a registry name, in
//! which case `[constraints]` and `[cost]` describe the rest of the plant.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Bound, ConstraintSpec, ControlSystem, LinearSystem, Plant, QuadraticCost, StageCost,
};
use crate::ocp::SolverSettings;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub registry: Option<String>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSection {
    /// `[lo, hi]` per state.
    pub state_box: Option<Vec<[f64; 2]>>,
    /// `[lo, hi]` per input.
    pub input_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub cross: Option<Vec<Vec<f64>>>,
}

/// Parameters of the experiment commands; unset fields take per-command
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub deltas: Option<Vec<f64>>,
    pub x0: Option<Vec<Vec<f64>>>,
    /// Horizon length for `simulate`.
    pub n: Option<usize>,
    /// Inclusive `[N_min, N_max]`.
    pub n_range: Option<[usize; 2]>,
    pub substeps: Option<usize>,
    pub t_sim: Option<f64>,
    pub goal_radius: Option<f64>,
    /// Radius of the neighborhood of `x̄` used by `certify`.
    pub radius: Option<f64>,
    /// States of the compact set `K` for `certify`.
    pub k_set: Option<Vec<Vec<f64>>>,
    /// Grid resolution for `viability`.
    pub resolution: Option<f64>,
    /// Scalings of the kernel for the constructive bound.
    pub lambdas: Option<Vec<f64>>,
    /// Boundary distances for the distance profile.
    pub distances: Option<Vec<f64>>,
    /// Samples per check in `certify`.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub constraints: ConstraintSection,
    pub cost: CostSection,
    pub solver: SolverSettings,
    pub experiment: ExperimentSection,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "{what} must be a nonempty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn bounds(pairs: &[[f64; 2]]) -> Result<Vec<Bound>> {
    pairs.iter().map(|p| Bound::new(p[0], p[1])).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if let Some(d) = &e.deltas {
            if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("every δ must be positive".into()));
            }
        }
        if e.substeps == Some(0) || e.n == Some(0) {
            return Err(Error::Config("substeps and N must be positive".into()));
        }
        if self.system.registry.is_some() && (self.system.a.is_some() || self.system.b.is_some()) {
            return Err(Error::Config(
                "give either a registry name or matrices, not both".into(),
            ));
        }
        Ok(())
    }

    /// Builds the plant; the double integrator when `[system]` is empty.
    pub fn plant(&self) -> Result<Plant> {
        let sys = &self.system;
        let (system, mut constraints, mut cost) = match (&sys.registry, &sys.a, &sys.b) {
            (_, Some(a), Some(b)) => {
                let lin = LinearSystem::new(matrix(a, "A")?, matrix(b, "B")?)?;
                let n = lin.state_dim();
                let m = lin.input_dim();
                let q = DMatrix::identity(n, n);
                let r = DMatrix::identity(m, m);
                (
                    ControlSystem::from_linear(lin),
                    ConstraintSpec::new(n, m),
                    StageCost::Quadratic(QuadraticCost::new(q, r, None)?),
                )
            }
            (_, Some(_), None) | (_, None, Some(_)) => {
                return Err(Error::Config("both A and B are required".into()));
            }
            (name, None, None) => {
                let name = name.as_deref().unwrap_or("double_integrator");
                let p = Plant::from_registry(name)?;
                (p.system, p.constraints, p.cost)
            }
        };
        let n = system.state_dim();
        let m = system.input_dim();
        let c = &self.constraints;
        if c.state_box.is_some() || c.input_box.is_some() {
            let mut spec = ConstraintSpec::new(n, m);
            if let Some(sb) = &c.state_box {
                spec = spec.with_state_box(bounds(sb)?)?;
            } else if let Some(sb) = constraints.state_box() {
                spec = spec.with_state_box(sb.to_vec())?;
            }
            if let Some(ib) = &c.input_box {
                spec = spec.with_input_box(bounds(ib)?)?;
            } else if let Some(ib) = constraints.input_box() {
                spec = spec.with_input_box(ib.to_vec())?;
            }
            constraints = spec;
        }
        let k = &self.cost;
        if k.q.is_some() || k.r.is_some() || k.cross.is_some() {
            let base = cost.lq().cloned();
            let q = match &k.q {
                Some(q) => matrix(q, "Q")?,
                None => base
                    .as_ref()
                    .map_or_else(|| DMatrix::identity(n, n), |c| c.q().clone()),
            };
            let r = match &k.r {
                Some(r) => matrix(r, "R")?,
                None => base
                    .as_ref()
                    .map_or_else(|| DMatrix::identity(m, m), |c| c.r().clone()),
            };
            let cross = k.cross.as_deref().map(|c| matrix(c, "cross")).transpose()?;
            cost = StageCost::Quadratic(QuadraticCost::new(q, r, cross)?);
        }
        Plant::new(system, constraints, cost)
    }
}
