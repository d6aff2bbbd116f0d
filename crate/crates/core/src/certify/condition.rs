//! Horizon condition `max{C/(Mδ), C̄(β/δ)²}·(β/(β+δ))^{N−1} < 1` and the
//! smallest horizon satisfying it.

use serde::Serialize;

use crate::error::{Error, Result};

/// Inputs shared by [`check_condition`] and [`min_horizon_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionInputs {
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Cbar")]
    pub cbar: f64,
    pub delta: f64,
}

impl ConditionInputs {
    pub fn new(gamma: f64, m: f64, c: f64, cbar: f64, delta: f64) -> Result<Self> {
        let inputs = ConditionInputs {
            gamma,
            m,
            c,
            cbar,
            delta,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    /// `β = max{C/M, γ}`.
    pub fn beta(&self) -> f64 {
        (self.c / self.m).max(self.gamma)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("M", self.m),
            ("C", self.c),
            ("Cbar", self.cbar),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(
                    format!("{name} = {v} must be positive and finite"),
                    "estimate the constant first (C is floored at 1.01·M·δ by the pipeline)",
                ));
            }
        }
        let beta = self.beta();
        if self.delta >= beta {
            return Err(Error::domain(
                format!("delta = {} is not below beta = {beta}", self.delta),
                "choose a sampling period δ ∈ (0, β)",
            ));
        }
        Ok(())
    }

    /// `max{C/(Mδ), C̄(β/δ)²}`.
    fn prefactor(&self) -> f64 {
        let beta = self.beta();
        (self.c / (self.m * self.delta)).max(self.cbar * (beta / self.delta).powi(2))
    }

    /// `ln` of the left-hand side at horizon `n` (avoids underflow for long horizons).
    fn ln_lhs(&self, n: usize) -> f64 {
        let beta = self.beta();
        self.prefactor().ln() + (n as f64 - 1.0) * (beta / (beta + self.delta)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub delta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub beta: f64,
    #[serde(rename = "Cbar")]
    pub cbar: f64,
    pub condition_lhs: f64,
    pub alpha: f64,
    pub passes: bool,
}

/// Evaluates the horizon condition at `(δ, N)`.
pub fn check_condition(inputs: &ConditionInputs, n: usize) -> Result<Certificate> {
    inputs.validate()?;
    if n == 0 {
        return Err(Error::domain(
            "N = 0",
            "the horizon needs at least one sampling period",
        ));
    }
    let beta = inputs.beta();
    let decay = (beta / (beta + inputs.delta)).powi(n as i32 - 1);
    let condition_lhs = inputs.prefactor() * decay;
    let alpha = inputs.cbar * (beta / inputs.delta).powi(2) * decay;
    Ok(Certificate {
        delta: inputs.delta,
        n,
        horizon: n as f64 * inputs.delta,
        gamma: inputs.gamma,
        m: inputs.m,
        c: inputs.c,
        beta,
        cbar: inputs.cbar,
        condition_lhs,
        alpha,
        passes: condition_lhs < 1.0,
    })
}

/// Smallest passing horizon together with the two closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonBound {
    /// Smallest `N ≥ 1` passing the condition, found by scanning.
    pub n_bar: usize,
    /// Right-hand side of the closed form with `max` over the two
    /// logarithmic numerators, as printed.
    pub literal_rhs: f64,
    pub literal_n: usize,
    /// Same closed form with `min` (the sign-consistent rearrangement).
    pub corrected_rhs: f64,
    pub corrected_n: usize,
    /// `literal_n == n_bar`.
    pub literal_agrees: bool,
}

/// Smallest integer strictly greater than `rhs`, at least 1.
fn strictly_above(rhs: f64) -> usize {
    if rhs < 1.0 {
        1
    } else {
        rhs.floor() as usize + 1
    }
}

/// Scan of the condition for the smallest passing horizon.
///
/// Starts from the closed-form estimate and walks to the exact boundary, so
/// very long horizons cost O(1) evaluations.
pub fn scan_min_horizon(inputs: &ConditionInputs) -> Result<usize> {
    inputs.validate()?;
    let beta = inputs.beta();
    let rate = (beta / (beta + inputs.delta)).ln();
    let guess = (1.0 + inputs.prefactor().ln() / -rate).max(1.0);
    if !guess.is_finite() || guess > 1e15 {
        return Err(Error::domain(
            format!("required horizon {guess:e} is not representable"),
            "increase δ or tighten the constants",
        ));
    }
    let mut n = (guess.floor() as usize).max(1);
    while n > 1 && inputs.ln_lhs(n - 1) < 0.0 {
        n -= 1;
    }
    while inputs.ln_lhs(n) >= 0.0 {
        n += 1;
    }
    Ok(n)
}

/// Smallest horizon length certifying stability for the given constants.
///
/// The scan of the condition is authoritative; the closed forms are kept for
/// traceability and a warning is logged when the printed form disagrees.
pub fn min_horizon_bound(inputs: &ConditionInputs) -> Result<HorizonBound> {
    let n_bar = scan_min_horizon(inputs)?;
    let beta = inputs.beta();
    let num_a = inputs.delta.ln() + inputs.m.ln() - inputs.c.ln();
    let num_b = 2.0 * (inputs.delta / beta).ln() - inputs.cbar.ln();
    let den = beta.ln() - (beta + inputs.delta).ln();
    let literal_rhs = num_a.max(num_b) / den + 1.0;
    let corrected_rhs = num_a.min(num_b) / den + 1.0;
    let literal_n = strictly_above(literal_rhs);
    let corrected_n = strictly_above(corrected_rhs);
    if literal_n != n_bar {
        log::warn!(
            "closed-form horizon bound {literal_n} (rhs {literal_rhs:.6}) disagrees with the scan {n_bar}; using the scan"
        );
    }
    if corrected_n != n_bar {
        log::warn!("corrected closed form gives {corrected_n}, scan gives {n_bar}; using the scan");
    }
    Ok(HorizonBound {
        n_bar,
        literal_rhs,
        literal_n,
        corrected_rhs,
        corrected_n,
        literal_agrees: literal_n == n_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> ConditionInputs {
        ConditionInputs::new(2.0, 1.0, 2.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn worked_example() {
        let i = worked();
        assert_eq!(i.beta(), 2.0);
        let c2 = check_condition(&i, 2).unwrap();
        assert!((c2.condition_lhs - 12.8).abs() < 1e-12);
        assert!(!c2.passes);
        // Independent scan: 16·0.8^{N−1} < 1.
        let oracle = (1..100).find(|&n| 16.0 * 0.8f64.powi(n - 1) < 1.0).unwrap() as usize;
        assert_eq!(oracle, 14);
        let b = min_horizon_bound(&i).unwrap();
        assert_eq!(b.n_bar, 14);
        assert_eq!(b.corrected_n, 14);
        assert_eq!(b.literal_n, 8);
        assert!(!b.literal_agrees);
        assert!(check_condition(&i, 14).unwrap().passes);
        assert!(!check_condition(&i, 13).unwrap().passes);
    }

    #[test]
    fn certificate_identities() {
        let i = worked();
        let mut prev = f64::INFINITY;
        for n in 1..40 {
            let c = check_condition(&i, n).unwrap();
            assert!(c.alpha <= c.condition_lhs);
            assert!(!c.passes || c.alpha < 1.0);
            assert!(c.condition_lhs < prev);
            prev = c.condition_lhs;
        }
    }

    #[test]
    fn delta_must_be_below_beta() {
        assert!(matches!(
            ConditionInputs::new(2.0, 1.0, 2.0, 1.0, 2.0),
            Err(Error::Domain { .. })
        ));
        assert!(ConditionInputs::new(2.0, 0.0, 2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn boundary_numerator_is_finite() {
        // C = Mδ makes the first numerator vanish.
        let i = ConditionInputs::new(2.0, 1.0, 0.5, 1.0, 0.5).unwrap();
        let b = min_horizon_bound(&i).unwrap();
        assert!(b.literal_rhs.is_finite());
        assert!(check_condition(&i, b.n_bar).unwrap().passes);
    }

    #[test]
    fn horizon_grows_as_delta_shrinks() {
        let mut prev = 0;
        for k in 0..8 {
            let delta = 0.5 / 2f64.powi(k);
            let n = min_horizon_bound(&ConditionInputs::new(2.0, 1.0, 2.0, 1.0, delta).unwrap())
                .unwrap()
                .n_bar;
            assert!(n >= prev);
            prev = n;
        }
    }
}
