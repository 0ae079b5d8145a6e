//! Affine generation policies `p = p₀ + G δ` with a guaranteed radius.
//!
//! A policy keeps `F(δ)` nonempty for every `‖δ‖² <= t̃(p₀, G)`, where
//! `t̃` is the squared distance from the origin to the nearest row
//! hyperplane in δ-space. Any such radius is a lower bound on the smallest
//! infeasibility-inducing perturbation.

mod barrier;
mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lin_solve::{lp_solve, project_policy, LpError, LpOutcome, LpProblem};
use crate::model::{FeasibilityMatrices, ModelError};
use crate::numeric::NumericPolicy;

pub use simplex::{heuristic_simplex, simplex_policy_fit, SimplexPolicy};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("base dispatch violates rows {rows:?} (max residual {max_residual:e})")]
    InfeasibleDispatch { rows: Vec<usize>, max_residual: f64 },
    #[error("policy unsound: δ = {delta:?} gives residual {residual:e} on row {row}")]
    Unsound { delta: Vec<f64>, residual: f64, row: usize },
    #[error("degenerate policy: {0}")]
    Degenerate(String),
    #[error("simplex geometry rejected: condition number {condition:e}")]
    Geometry { condition: f64 },
    #[error("invalid input: {0}")]
    Config(String),
    #[error("nominal case has no strictly feasible dispatch")]
    NominalInfeasible,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    WarmStart,
    Optimized,
    Rank1Uniform,
    Rank1Proportional,
    Simplex,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefensePolicy {
    pub kind: PolicyKind,
    /// Reduced base dispatch.
    pub p0: DVector<f64>,
    /// `n_p x n_δ`.
    pub g: DMatrix<f64>,
    /// Exact radius `t̃(p₀, G)`.
    pub t: f64,
    pub binding_row: Option<usize>,
    pub verified_samples: usize,
    /// Set when the optimizer could not improve on its start.
    pub stalled: bool,
    pub iterations: usize,
}

impl DefensePolicy {
    /// Builds a policy and evaluates its radius exactly.
    pub fn evaluate(
        mats: &FeasibilityMatrices,
        kind: PolicyKind,
        p0: DVector<f64>,
        g: DMatrix<f64>,
        policy: &NumericPolicy,
    ) -> Result<Self, DefenseError> {
        let tt = t_tilde(mats, &p0, &g, policy)?;
        Ok(Self { kind, p0, g, t: tt.t, binding_row: tt.binding_row, verified_samples: 0, stalled: false, iterations: 0 })
    }

    /// Dispatch assigned to perturbation `δ`.
    pub fn dispatch(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.p0 + &self.g * delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTilde {
    pub t: f64,
    pub binding_row: Option<usize>,
}

/// `min_i (a_iᵀp₀ + c_i)² / ‖Gᵀa_i + b_i‖²` over rows whose direction is
/// nonzero; ties go to the lowest row.
pub fn t_tilde(mats: &FeasibilityMatrices, p0: &DVector<f64>, g: &DMatrix<f64>, policy: &NumericPolicy) -> Result<TTilde, DefenseError> {
    check_shapes(mats, p0, g)?;
    let zero = DVector::zeros(mats.n_delta());
    let (rows, max_residual) = mats.violations(p0, &zero, policy.feasibility);
    if !rows.is_empty() {
        return Err(DefenseError::InfeasibleDispatch { rows, max_residual });
    }
    let margins = &mats.a * p0 + &mats.c;
    let dirs = &mats.a * g + &mats.b;
    let mut best = TTilde { t: f64::INFINITY, binding_row: None };
    for i in 0..mats.rows() {
        let dd = dirs.row(i).norm_squared();
        if dd == 0.0 {
            continue;
        }
        // margins within tolerance of zero count as tight
        let m = margins[i].min(0.0);
        let v = m * m / dd;
        if v < best.t {
            best = TTilde { t: v, binding_row: Some(i) };
        }
    }
    Ok(best)
}

fn check_shapes(mats: &FeasibilityMatrices, p0: &DVector<f64>, g: &DMatrix<f64>) -> Result<(), DefenseError> {
    if p0.len() != mats.n_p() || g.nrows() != mats.n_p() || g.ncols() != mats.n_delta() {
        return Err(DefenseError::Config(format!(
            "policy shape p0 {} / G {}x{} does not match n_p {} n_δ {}",
            p0.len(),
            g.nrows(),
            g.ncols(),
            mats.n_p(),
            mats.n_delta()
        )));
    }
    Ok(())
}

/// Rows that no policy can move: pinned-generator rows with no δ term.
pub(crate) struct Reduction {
    /// Non-pinned columns of `A`.
    pub free_cols: Vec<usize>,
    pub pinned_cols: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `c` with pinned generators folded in.
    pub c: DVector<f64>,
}

impl Reduction {
    pub fn new(mats: &FeasibilityMatrices) -> Self {
        let pinned_cols = mats.pinned_columns();
        let free_cols: Vec<usize> = (0..mats.n_p()).filter(|k| !pinned_cols.contains(k)).collect();
        let mut c_full = mats.c.clone();
        for &k in &pinned_cols {
            let val = mats.p_max[mats.gen_columns[k]];
            c_full.axpy(val, &mats.a.column(k), 1.0);
        }
        let rows: Vec<usize> = (0..mats.rows())
            .filter(|&i| free_cols.iter().any(|&k| mats.a[(i, k)] != 0.0) || mats.b.row(i).iter().any(|&v| v != 0.0))
            .collect();
        let a = DMatrix::from_fn(rows.len(), free_cols.len(), |r, k| mats.a[(rows[r], free_cols[k])]);
        let b = mats.b.select_rows(&rows);
        let c = DVector::from_fn(rows.len(), |r, _| c_full[rows[r]]);
        Self { free_cols, pinned_cols, a, b, c }
    }

    pub fn expand(&self, mats: &FeasibilityMatrices, p_free: &DVector<f64>, g_free: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut p0 = DVector::zeros(mats.n_p());
        let mut g = DMatrix::zeros(mats.n_p(), mats.n_delta());
        for (r, &k) in self.free_cols.iter().enumerate() {
            p0[k] = p_free[r];
            g.set_row(k, &g_free.row(r));
        }
        for &k in &self.pinned_cols {
            p0[k] = mats.p_max[mats.gen_columns[k]];
        }
        (p0, g)
    }
}

/// Max-margin dispatch (`min m s.t. a_iᵀp + c_i <= m`) with `G = 0`, and its radius.
pub fn warm_start_defense(mats: &FeasibilityMatrices, policy: &NumericPolicy) -> Result<DefensePolicy, DefenseError> {
    let red = Reduction::new(mats);
    let (mr, k) = (red.a.nrows(), red.a.ncols());
    let mut a = DMatrix::zeros(mr, k + 1);
    a.view_mut((0, 0), (mr, k)).copy_from(&red.a);
    a.column_mut(k).fill(-1.0);
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let prob = LpProblem::new(objective).with_ub(a, (-&red.c).as_slice().to_vec());
    let x = match lp_solve(&prob, policy)? {
        LpOutcome::Optimal(sol) => sol.x,
        LpOutcome::Infeasible(_) => return Err(DefenseError::NominalInfeasible),
        LpOutcome::Unbounded { .. } => return Err(DefenseError::Degenerate("max-margin LP is unbounded".into())),
    };
    if x[k] >= 0.0 {
        return Err(DefenseError::NominalInfeasible);
    }
    let p_free = DVector::from_column_slice(&x[..k]);
    let (p0, g) = red.expand(mats, &p_free, &DMatrix::zeros(k, mats.n_delta()));
    DefensePolicy::evaluate(mats, PolicyKind::WarmStart, p0, g, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseOptions {
    /// Stop once the barrier duality gap is below this fraction of the objective.
    pub gap_rel: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

impl Default for DefenseOptions {
    fn default() -> Self {
        Self { gap_rel: 1e-7, max_outer: 14, max_newton: 80 }
    }
}

/// Maximizes `t̃(p₀, G)` starting from `init`.
///
/// With `s = √t`, `q = p₀/s` and `u = 1/s` the problem becomes the convex
/// cone program `min u  s.t.  ‖Gᵀa_i + b_i‖ <= −a_iᵀq − c_i u`, solved here
/// by a log-barrier Newton method. The reported `t` is always re-evaluated
/// exactly and is never below the initial radius.
pub fn defense_local(
    mats: &FeasibilityMatrices,
    init: &DefensePolicy,
    options: &DefenseOptions,
    policy: &NumericPolicy,
) -> Result<DefensePolicy, DefenseError> {
    let start = DefensePolicy::evaluate(mats, init.kind, init.p0.clone(), init.g.clone(), policy)?;
    let red = Reduction::new(mats);
    let seed = if start.t > 0.0 && start.t.is_finite() && barrier::is_interior(&red, &start) {
        start.clone()
    } else {
        warm_start_defense(mats, policy)?
    };
    if !(seed.t > 0.0 && seed.t.is_finite()) {
        return Ok(DefensePolicy { stalled: true, ..start });
    }
    let out = barrier::solve(&red, &seed, options);
    let (p0, g) = red.expand(mats, &out.p_free, &out.g_free);
    let candidate = match DefensePolicy::evaluate(mats, PolicyKind::Optimized, p0, g, policy) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("barrier iterate rejected: {e}");
            return Ok(DefensePolicy { stalled: true, ..start });
        }
    };
    if candidate.t > start.t {
        Ok(DefensePolicy { iterations: out.newton_steps, ..candidate })
    } else {
        Ok(DefensePolicy { stalled: true, iterations: out.newton_steps, ..start })
    }
}

/// The exact perturbation that reaches the binding row.
pub fn binding_delta(mats: &FeasibilityMatrices, policy: &DefensePolicy) -> Option<DVector<f64>> {
    let i = policy.binding_row?;
    let pr = project_policy(mats, &policy.p0, &policy.g, i);
    Some(DVector::from_vec(pr.delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub samples: usize,
    pub probes: usize,
    pub passed: usize,
    pub max_residual: f64,
    pub seed: u64,
}

/// Checks `A(p₀ + Gδ) + Bδ + c <= tol` on `samples` uniform draws from the
/// ball `‖δ‖² <= t(1 − 10⁻⁶)` plus deterministic probes along the binding
/// row and along each of `probes`. Any failure is an error.
pub fn verify_policy(
    mats: &FeasibilityMatrices,
    policy_in: &DefensePolicy,
    samples: usize,
    seed: u64,
    probes: &[DVector<f64>],
    policy: &NumericPolicy,
) -> Result<Verification, DefenseError> {
    check_shapes(mats, &policy_in.p0, &policy_in.g)?;
    if !(policy_in.t >= 0.0 && policy_in.t.is_finite()) {
        return Err(DefenseError::Config(format!("radius {} cannot be sampled", policy_in.t)));
    }
    let radius = (policy_in.t * (1.0 - 1e-6)).sqrt();
    let n = mats.n_delta();
    let mut directions: Vec<DVector<f64>> = Vec::new();
    if let Some(d) = binding_delta(mats, policy_in) {
        directions.push(d);
    }
    directions.extend(probes.iter().filter(|p| p.len() == n).cloned());
    let mut points: Vec<DVector<f64>> = directions.into_iter().filter(|d| d.norm() > 0.0).map(|d| d.normalize() * radius).collect();
    let n_probes = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let dir = loop {
            let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            if v.norm() > 0.0 {
                break v.normalize();
            }
        };
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        points.push(dir * r);
    }
    let mut max_residual = f64::NEG_INFINITY;
    for delta in &points {
        let res = mats.residual(&policy_in.dispatch(delta), delta);
        let (row, worst) = res.argmax();
        max_residual = max_residual.max(worst);
        if worst > policy.feasibility {
            return Err(DefenseError::Unsound { delta: delta.as_slice().to_vec(), residual: worst, row });
        }
    }
    Ok(Verification { samples, probes: n_probes, passed: points.len(), max_residual, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rank1Kind {
    Uniform,
    Proportional,
}

/// Distributed-slack policy: generator j absorbs share `w_j` of `1ᵀδ`
/// (uniform `1/n_g` or proportional to its base output).
pub fn rank1_policy(
    mats: &FeasibilityMatrices,
    kind: Rank1Kind,
    p0: &DVector<f64>,
    policy: &NumericPolicy,
) -> Result<DefensePolicy, DefenseError> {
    let zero = DVector::zeros(mats.n_delta());
    let full = mats.full_dispatch(p0, &zero);
    let ng = full.len();
    let shares: Vec<f64> = match kind {
        Rank1Kind::Uniform => vec![1.0 / ng as f64; ng],
        Rank1Kind::Proportional => {
            let total: f64 = full.iter().sum();
            if total == 0.0 {
                return Err(DefenseError::Degenerate("proportional policy needs nonzero total dispatch".into()));
            }
            full.iter().map(|p| p / total).collect()
        }
    };
    let g = DMatrix::from_fn(mats.n_p(), mats.n_delta(), |k, _| shares[mats.gen_columns[k]]);
    let pk = match kind {
        Rank1Kind::Uniform => PolicyKind::Rank1Uniform,
        Rank1Kind::Proportional => PolicyKind::Rank1Proportional,
    };
    DefensePolicy::evaluate(mats, pk, p0.clone(), g, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::*;
    use crate::model::{build_model, nominal_dispatch, RowKind};
    use approx::assert_abs_diff_eq;

    fn pol() -> NumericPolicy {
        NumericPolicy::default()
    }

    #[test]
    fn two_bus_fixed_radius() {
        let mats = build_model(&two_bus(), None).unwrap();
        let p0 = DVector::zeros(0);
        let tt = t_tilde(&mats, &p0, &DMatrix::zeros(0, 1), &pol()).unwrap();
        // rows: flow ±, slack ±; margins 0.5, 1.5, 1.5, 0.5; all directions unit
        assert_abs_diff_eq!(tt.t, 0.25, epsilon = 1e-15);
        assert_eq!(tt.binding_row, Some(0));
    }

    #[test]
    fn tight_row_without_delta_term_is_ignored() {
        let mats = build_model(&two_bus_two_gen(), Some(0)).unwrap();
        // bus-2 unit at its upper limit; the slack then carries 0.2 + δ and
        // its lower limit binds first
        let p0 = DVector::from_element(1, 0.3);
        let tt = t_tilde(&mats, &p0, &DMatrix::zeros(1, 1), &pol()).unwrap();
        assert_abs_diff_eq!(tt.t, 0.04, epsilon = 1e-12);
        assert_eq!(mats.row_labels[tt.binding_row.unwrap()].kind, RowKind::SlackGenLower);
    }

    #[test]
    fn infeasible_dispatch_names_rows() {
        let mats = build_model(&two_bus_two_gen(), Some(0)).unwrap();
        let err = t_tilde(&mats, &DVector::from_element(1, 0.5), &DMatrix::zeros(1, 1), &pol()).unwrap_err();
        assert!(matches!(err, DefenseError::InfeasibleDispatch { ref rows, .. } if rows == &vec![3]), "{err}");
    }

    #[test]
    fn warm_start_centers_two_gen() {
        let mats = build_model(&two_bus_two_gen(), Some(0)).unwrap();
        let w = warm_start_defense(&mats, &pol()).unwrap();
        // bus-2 unit sits mid-range at 0.15; its own limits bind
        assert_abs_diff_eq!(w.p0[0], 0.15, epsilon = 1e-9);
        assert_eq!(w.t, t_tilde(&mats, &w.p0, &w.g, &pol()).unwrap().t);
        assert!(w.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn barrier_matches_two_gen_optimum() {
        // generator 2 can cover ±0.15 around mid-range and the line admits
        // up to 1.0 from bus 1, so the total load can move by [−0.5, 0.8]
        let mats = build_model(&two_bus_two_gen(), Some(0)).unwrap();
        let w = warm_start_defense(&mats, &pol()).unwrap();
        let out = defense_local(&mats, &w, &DefenseOptions::default(), &pol()).unwrap();
        assert!(!out.stalled);
        assert_abs_diff_eq!(out.t, 0.25, epsilon = 1e-6);
        assert!(out.t <= 0.25 + 1e-12);
        verify_policy(&mats, &out, 1000, 1, &[], &pol()).unwrap();
    }

    #[test]
    fn inflated_radius_fails_verification() {
        let mats = build_model(&two_bus(), None).unwrap();
        let p = DefensePolicy::evaluate(&mats, PolicyKind::User, DVector::zeros(0), DMatrix::zeros(0, 1), &pol()).unwrap();
        let bad = DefensePolicy { t: p.t * 1.1, ..p };
        assert!(matches!(verify_policy(&mats, &bad, 10, 0, &[], &pol()), Err(DefenseError::Unsound { .. })));
    }

    #[test]
    fn rank1_uniform_halves() {
        let mats = build_model(&two_bus_two_gen(), Some(0)).unwrap();
        let p0 = nominal_dispatch(&mats, &pol()).unwrap();
        let r = rank1_policy(&mats, Rank1Kind::Uniform, &p0, &pol()).unwrap();
        assert_eq!(r.g[(0, 0)], 0.5);
        let prop = rank1_policy(&mats, Rank1Kind::Proportional, &p0, &pol()).unwrap();
        // generator 2 is idle at the nominal optimum
        assert_eq!(prop.g[(0, 0)], 0.0);
    }

    #[test]
    fn proportional_needs_output() {
        let mats = build_model(&two_bus(), None).unwrap();
        let mut m = mats.clone();
        m.load.fill(0.0);
        assert!(matches!(
            rank1_policy(&m, Rank1Kind::Proportional, &DVector::zeros(0), &pol()),
            Err(DefenseError::Degenerate(_)) | Err(DefenseError::InfeasibleDispatch { .. })
        ));
    }
}
