//! Dense LP solver and closed-form hyperplane projections.

mod projection;
mod simplex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::NumericPolicy;

pub use projection::{project_fixed, project_policy, project_row, ProjectionResult};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("iteration limit in phase {phase} after {iterations} iterations (basis size {basis})")]
    IterationLimit { phase: u8, iterations: usize, basis: usize },
    #[error("singular basis in phase {phase} at iteration {iterations}")]
    SingularBasis { phase: u8, iterations: usize },
    #[error("infeasibility certificate rejected (residual {residual:e}, value {value:e})")]
    CertificateRejected { residual: f64, value: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// `min cᵀx  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: Vec<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// Free variables, no constraints.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            a_ub: DMatrix::zeros(0, n),
            b_ub: Vec::new(),
            a_eq: DMatrix::zeros(0, n),
            b_eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_ub(mut self, a: DMatrix<f64>, b: Vec<f64>) -> Self {
        self.a_ub = a;
        self.b_ub = b;
        self
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: Vec<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn nonnegative(mut self) -> Self {
        self.lower.iter_mut().for_each(|l| *l = 0.0);
        self
    }

    pub fn n(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n();
        let bad = |m: String| Err(LpError::Malformed(m));
        if self.a_ub.ncols() != n || self.a_ub.nrows() != self.b_ub.len() {
            return bad(format!("inequality block {}x{} vs rhs {} / n {n}", self.a_ub.nrows(), self.a_ub.ncols(), self.b_ub.len()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad(format!("equality block {}x{} vs rhs {} / n {n}", self.a_eq.nrows(), self.a_eq.ncols(), self.b_eq.len()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound vectors have the wrong length".into());
        }
        let finite = self.objective.iter().chain(&self.b_ub).chain(&self.b_eq).chain(self.a_ub.iter()).chain(self.a_eq.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return bad("NaN or infinite coefficient".into());
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("invalid bounds [{l}, {u}] on variable {j}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers with `c + A_ubᵀλ_ub + A_eqᵀλ_eq − z_l + z_u = 0`.
    pub duals_ub: Vec<f64>,
    pub duals_eq: Vec<f64>,
    pub reduced_lower: Vec<f64>,
    pub reduced_upper: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    /// `−λ_ubᵀb_ub − λ_eqᵀb_eq + lᵀz_l − uᵀz_u`, equal to the primal objective at optimality.
    pub fn dual_objective(&self, prob: &LpProblem) -> f64 {
        let mut v = -dot(&self.duals_ub, &prob.b_ub) - dot(&self.duals_eq, &prob.b_eq);
        for j in 0..prob.n() {
            if self.reduced_lower[j] != 0.0 {
                v += prob.lower[j] * self.reduced_lower[j];
            }
            if self.reduced_upper[j] != 0.0 {
                v -= prob.upper[j] * self.reduced_upper[j];
            }
        }
        v
    }
}

/// Proof of infeasibility: `y_ub >= 0`, `z >= 0`,
/// `A_ubᵀy_ub + A_eqᵀy_eq − z_l + z_u = 0` and
/// `y_ubᵀb_ub + y_eqᵀb_eq − lᵀz_l + uᵀz_u < 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub y_ub: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    /// `‖A_ubᵀy_ub + A_eqᵀy_eq − z_l + z_u‖∞`.
    pub residual: f64,
    /// Combined right-hand side; negative for a valid proof.
    pub value: f64,
    pub min_multiplier: f64,
}

impl FarkasCertificate {
    /// Rescales to unit 1-norm.
    pub fn normalize(&mut self) {
        let s: f64 = self.y_ub.iter().chain(&self.y_eq).chain(&self.z_lower).chain(&self.z_upper).map(|v| v.abs()).sum();
        if s > 0.0 {
            for v in self.y_ub.iter_mut().chain(&mut self.y_eq).chain(&mut self.z_lower).chain(&mut self.z_upper) {
                *v /= s;
            }
        }
    }

    pub fn check(&self, prob: &LpProblem) -> CertificateCheck {
        let n = prob.n();
        let mut r = vec![0.0; n];
        for j in 0..n {
            let mut v = -self.z_lower[j] + self.z_upper[j];
            for i in 0..prob.a_ub.nrows() {
                v += prob.a_ub[(i, j)] * self.y_ub[i];
            }
            for i in 0..prob.a_eq.nrows() {
                v += prob.a_eq[(i, j)] * self.y_eq[i];
            }
            r[j] = v;
        }
        let mut value = dot(&self.y_ub, &prob.b_ub) + dot(&self.y_eq, &prob.b_eq);
        let mut unbounded_term = false;
        for j in 0..n {
            if self.z_lower[j] != 0.0 {
                unbounded_term |= !prob.lower[j].is_finite();
                value -= prob.lower[j] * self.z_lower[j];
            }
            if self.z_upper[j] != 0.0 {
                unbounded_term |= !prob.upper[j].is_finite();
                value += prob.upper[j] * self.z_upper[j];
            }
        }
        if unbounded_term {
            value = f64::INFINITY;
        }
        let min_multiplier = self.y_ub.iter().chain(&self.z_lower).chain(&self.z_upper).fold(f64::INFINITY, |m, &v| m.min(v));
        CertificateCheck {
            residual: r.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            value,
            min_multiplier,
        }
    }

    /// Accepts the certificate when its residual and sign conditions hold within `tol`.
    pub fn verify(&self, prob: &LpProblem, tol: f64) -> Result<CertificateCheck, LpError> {
        let chk = self.check(prob);
        if chk.residual <= tol && chk.min_multiplier >= -tol && chk.value < -tol {
            Ok(chk)
        } else {
            Err(LpError::CertificateRejected { residual: chk.residual, value: chk.value })
        }
    }
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// Verified (normalized) Farkas certificate.
    Infeasible(FarkasCertificate),
    /// Feasible point and a direction of unbounded descent.
    Unbounded { x: Vec<f64>, ray: Vec<f64> },
}

/// Solves `prob`; on a numerical failure retries once at the fallback tolerance.
pub fn lp_solve(prob: &LpProblem, policy: &NumericPolicy) -> Result<LpOutcome, LpError> {
    prob.validate()?;
    match simplex::solve(prob, simplex::Tolerances::strict(policy)) {
        Ok(out) => Ok(out),
        Err(LpError::Malformed(m)) => Err(LpError::Malformed(m)),
        Err(e) => {
            log::debug!("LP retry at fallback tolerance after: {e}");
            simplex::solve(prob, simplex::Tolerances::relaxed(policy))
        }
    }
}

/// Phase-1 check of `A_ub x <= b_ub, A_eq x = b_eq, l <= x <= u`.
pub fn lp_feasibility(prob: &LpProblem, policy: &NumericPolicy) -> Result<LpOutcome, LpError> {
    let mut p = prob.clone();
    p.objective.iter_mut().for_each(|c| *c = 0.0);
    lp_solve(&p, policy)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solve(p: &LpProblem) -> LpOutcome {
        lp_solve(p, &NumericPolicy::default()).unwrap()
    }

    #[test]
    fn min_x_over_x_ge_one() {
        let p = LpProblem::new(vec![1.0]).with_ub(DMatrix::from_element(1, 1, -1.0), vec![-1.0]);
        match solve(&p) {
            LpOutcome::Optimal(s) => {
                assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(s.dual_objective(&p), 1.0, epsilon = 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn two_row_farkas() {
        let p = LpProblem::new(vec![0.0]).with_ub(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![0.0, -1.0]);
        match solve(&p) {
            LpOutcome::Infeasible(c) => {
                assert_abs_diff_eq!(c.y_ub[0], 0.5, epsilon = 1e-12);
                assert_abs_diff_eq!(c.y_ub[1], 0.5, epsilon = 1e-12);
                let chk = c.check(&p);
                assert!(chk.value < 0.0 && chk.residual < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn unbounded_ray() {
        let p = LpProblem::new(vec![-1.0]).nonnegative();
        match solve(&p) {
            LpOutcome::Unbounded { ray, .. } => assert!(ray[0] > 0.0),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn bounds_and_equalities() {
        // min -x - 2y s.t. x + y = 1, 0 <= x, y <= 0.7
        let p = LpProblem::new(vec![-1.0, -2.0])
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![1.0])
            .with_bounds(vec![0.0, f64::NEG_INFINITY], vec![f64::INFINITY, 0.7]);
        match solve(&p) {
            LpOutcome::Optimal(s) => {
                assert_abs_diff_eq!(s.x[0], 0.3, epsilon = 1e-12);
                assert_abs_diff_eq!(s.x[1], 0.7, epsilon = 1e-12);
                assert_abs_diff_eq!(s.dual_objective(&p), s.objective, epsilon = 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible_through_bounds() {
        // x + y >= 3 with both in [0, 1]
        let p = LpProblem::new(vec![0.0, 0.0])
            .with_ub(DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]), vec![-3.0])
            .with_bounds(vec![0.0, 0.0], vec![1.0, 1.0]);
        match solve(&p) {
            LpOutcome::Infeasible(c) => {
                c.verify(&p, 1e-9).unwrap();
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn malformed_rejected() {
        let p = LpProblem::new(vec![1.0, f64::NAN]);
        assert!(matches!(lp_solve(&p, &NumericPolicy::default()), Err(LpError::Malformed(_))));
    }

    #[test]
    fn empty_problem_is_optimal() {
        let p = LpProblem::new(vec![]).with_eq(DMatrix::zeros(1, 0), vec![0.0]);
        assert!(matches!(solve(&p), LpOutcome::Optimal(_)));
        let q = LpProblem::new(vec![]).with_eq(DMatrix::zeros(1, 0), vec![1.0]);
        assert!(matches!(solve(&q), LpOutcome::Infeasible(_)));
    }
}
