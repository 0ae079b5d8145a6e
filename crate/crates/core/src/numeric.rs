//! Numeric tolerances shared by every module.

use serde::{Deserialize, Serialize};

/// Central record of the tolerances used when comparing residuals to zero.
///
/// All values are in per-unit (or per-unit squared for norms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Feasibility tolerance for `A p + B δ + c <= 0` and LP primal residuals.
    pub feasibility: f64,
    /// Residual allowed on a re-verified Farkas certificate.
    pub certificate: f64,
    /// Tolerance on closed-form projection identities.
    pub projection: f64,
    /// Relaxed LP tolerance used when a solve stalls at the default one.
    pub fallback: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            certificate: 1e-9,
            projection: 1e-12,
            fallback: 1e-5,
        }
    }
}

impl NumericPolicy {
    pub fn with_feasibility(mut self, tol: f64) -> Self {
        self.feasibility = tol;
        self
    }
}

/// Perturbation scale applied before re-checking an attack for infeasibility.
pub const CERTIFY_SCALE: f64 = 1.0 + 1e-4;
