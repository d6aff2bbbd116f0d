//! Stability certificates: Riccati constants, sampled constants, the horizon
//! condition, assumption probes, the constructive `V_∞` bound and the
//! distance-to-boundary profile.

pub mod care;
pub mod condition;
pub mod constants;
pub mod construction;
pub mod pipeline;
pub mod probes;
pub mod profile;

pub use care::{solve_care, LqConstants};
pub use condition::{
    check_condition, min_horizon_bound, Certificate, ConditionInputs, HorizonBound,
};
pub use constants::{estimate_c, estimate_m, floor_c, CEstimate, COptions};
