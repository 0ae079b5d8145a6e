//! Small infeasibility-inducing perturbations (Farkas attacks) and their
//! independent certification.
//!
//! A perturbation δ empties `F(δ)` iff some `μ >= 0` with `Aᵀμ = 0` has
//! `μᵀ(Bδ + c) > 0`. The local search alternates two exact steps:
//!
//! * μ-step: `max μᵀBδ  s.t.  Aᵀμ = 0, −cᵀμ = 1, μ >= 0`, i.e. the
//!   certificate that is crossed first when δ is scaled up;
//! * δ-step: the smallest `δᵀWδ` with `μᵀ(Bδ + c) = ε`.
//!
//! Each pass can only shrink `δᵀWδ`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lin_solve::{lp_solve, project_fixed, LpError, LpOutcome, LpProblem};
use crate::model::{solve_dcopf, DcopfOutcome, FeasibilityMatrices, ModelError};
use crate::numeric::{NumericPolicy, CERTIFY_SCALE};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("no separating certificate from this start ({0}); draw a new initialization")]
    Restart(String),
    #[error("nominal case is degenerate: some constraint set is tight for every dispatch")]
    DegenerateNominal,
    #[error("dispatch is infeasible, rows {0:?}")]
    InfeasibleDispatch(Vec<usize>),
    #[error("no restart produced a certified attack ({} attempts): {}", .0.len(), .0.join("; "))]
    NoCertified(Vec<String>),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub restarts: usize,
    /// Diagonal of the weighting matrix `W`.
    pub weight: Option<Vec<f64>>,
    pub max_alternations: usize,
    /// Relative decrease of `δᵀWδ` below which the alternation stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            restarts: 5,
            weight: None,
            max_alternations: 200,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, n_delta: usize) -> Result<(), AttackError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(AttackError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if let Some(w) = &self.weight {
            if w.len() != n_delta {
                return Err(AttackError::Config(format!("weight has {} entries, expected {n_delta}", w.len())));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(AttackError::Config("weights must be positive".into()));
            }
        }
        Ok(())
    }

    fn weight_of(&self, k: usize) -> f64 {
        self.weight.as_ref().map_or(1.0, |w| w[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackResiduals {
    /// `‖Aᵀμ‖∞`.
    pub stationarity: f64,
    /// `μᵀ(Bδ + c) − ε`.
    pub separation: f64,
    pub min_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSolution {
    pub delta: Vec<f64>,
    pub mu: Vec<f64>,
    /// `δᵀδ`.
    pub norm_sq: f64,
    /// `δᵀWδ`; equals `norm_sq` without weights.
    pub objective: f64,
    pub eps_used: f64,
    pub residuals: AttackResiduals,
    pub iterations: usize,
    pub converged: bool,
    pub certified: bool,
}

impl AttackSolution {
    pub fn delta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.delta)
    }
}

/// Outcome of the μ-step for a fixed direction.
enum MuStep {
    Found(DVector<f64>),
    /// No certificate grows along δ.
    Parallel,
}

fn mu_step(mats: &FeasibilityMatrices, delta: &DVector<f64>, policy: &NumericPolicy) -> Result<MuStep, AttackError> {
    let m = mats.rows();
    let np = mats.n_p();
    let bd = &mats.b * delta;
    let mut eq = DMatrix::zeros(np + 1, m);
    eq.view_mut((0, 0), (np, m)).copy_from(&mats.a.transpose());
    eq.row_mut(np).copy_from(&(-mats.c.transpose()));
    let mut rhs = vec![0.0; np + 1];
    rhs[np] = 1.0;
    let prob = LpProblem::new((-&bd).as_slice().to_vec()).with_eq(eq, rhs).nonnegative();
    match lp_solve(&prob, policy)? {
        LpOutcome::Optimal(sol) => {
            let mu = DVector::from_iterator(m, sol.x.iter().map(|v| v.max(0.0)));
            let gain = bd.dot(&mu);
            if gain > 0.0 {
                Ok(MuStep::Found(mu))
            } else {
                Ok(MuStep::Parallel)
            }
        }
        LpOutcome::Infeasible(_) => Err(AttackError::DegenerateNominal),
        LpOutcome::Unbounded { .. } => Err(AttackError::DegenerateNominal),
    }
}

/// Smallest `δᵀWδ` with `μᵀBδ = 1 + ε` (so that `μᵀ(Bδ + c) = ε` under `−cᵀμ = 1`).
fn delta_step(mats: &FeasibilityMatrices, mu: &DVector<f64>, cfg: &AttackConfig) -> Option<DVector<f64>> {
    let g = mats.b.tr_mul(mu);
    let winv_g = DVector::from_fn(g.len(), |k, _| g[k] / cfg.weight_of(k));
    let gg = g.dot(&winv_g);
    if gg <= 0.0 || !gg.is_finite() {
        return None;
    }
    Some(winv_g * ((1.0 + cfg.eps) / gg))
}

fn weighted_norm(delta: &DVector<f64>, cfg: &AttackConfig) -> f64 {
    delta.iter().enumerate().map(|(k, v)| cfg.weight_of(k) * v * v).sum()
}

fn residuals(mats: &FeasibilityMatrices, delta: &DVector<f64>, mu: &DVector<f64>, eps: f64) -> AttackResiduals {
    AttackResiduals {
        stationarity: mats.a.tr_mul(mu).amax(),
        separation: mu.dot(&(&mats.b * delta + &mats.c)) - eps,
        min_mu: mu.min(),
    }
}

/// One local solve from the direction `init` (only its direction matters).
pub fn attack_local(
    mats: &FeasibilityMatrices,
    cfg: &AttackConfig,
    init: &DVector<f64>,
    policy: &NumericPolicy,
) -> Result<AttackSolution, AttackError> {
    cfg.validate(mats.n_delta())?;
    if init.len() != mats.n_delta() || init.norm() == 0.0 {
        return Err(AttackError::Config("initial perturbation must be a nonzero vector of length n_δ".into()));
    }
    let mut delta = init.clone();
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_alternations {
        iterations += 1;
        let mu = match mu_step(mats, &delta, policy)? {
            MuStep::Found(mu) => mu,
            MuStep::Parallel if best.is_none() => return Err(AttackError::Restart("direction never separates".into())),
            MuStep::Parallel => {
                converged = true;
                break;
            }
        };
        let Some(next) = delta_step(mats, &mu, cfg) else {
            return Err(AttackError::Restart("certificate has no δ component".into()));
        };
        let value = weighted_norm(&next, cfg);
        let improved = match &best {
            None => true,
            Some((_, _, prev)) => value < *prev * (1.0 - cfg.tolerance),
        };
        if improved {
            best = Some((next.clone(), mu, value));
            delta = next;
        } else {
            converged = true;
            break;
        }
    }
    let (delta, mu, objective) = best.expect("at least one accepted iterate");
    Ok(AttackSolution {
        norm_sq: delta.norm_squared(),
        objective,
        eps_used: cfg.eps,
        residuals: residuals(mats, &delta, &mu, cfg.eps),
        delta: delta.as_slice().to_vec(),
        mu: mu.as_slice().to_vec(),
        iterations,
        converged,
        certified: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Certification {
    /// `F(δ)` is empty; `ray` is the LP's own normalized Farkas vector.
    Certified { ray: Vec<f64>, stationarity: f64, separation: f64 },
    /// `F(δ)` contains `witness`.
    Refuted { witness: Vec<f64> },
}

impl Certification {
    pub fn is_certified(&self) -> bool {
        matches!(self, Certification::Certified { .. })
    }
}

/// Decides whether `F(δ)` is empty with an LP independent of any attack
/// multipliers, and re-checks the returned Farkas ray.
pub fn certify_infeasible(
    mats: &FeasibilityMatrices,
    delta: &DVector<f64>,
    policy: &NumericPolicy,
) -> Result<Certification, ModelError> {
    match solve_dcopf(mats, delta, policy)? {
        DcopfOutcome::Optimal { p, .. } => Ok(Certification::Refuted { witness: p.as_slice().to_vec() }),
        DcopfOutcome::Infeasible(cert) => {
            let mut y = DVector::from_iterator(cert.y_ub.len(), cert.y_ub.iter().map(|v| v.max(0.0)));
            let total = y.sum();
            if total <= 0.0 {
                return Err(LpError::CertificateRejected { residual: f64::NAN, value: 0.0 }.into());
            }
            y /= total;
            let stationarity = mats.a.tr_mul(&y).amax();
            let separation = y.dot(&(&mats.b * delta + &mats.c));
            if stationarity <= policy.certificate && separation > 0.0 {
                Ok(Certification::Certified { ray: y.as_slice().to_vec(), stationarity, separation })
            } else {
                Err(LpError::CertificateRejected { residual: stationarity, value: -separation }.into())
            }
        }
    }
}

/// `certify_infeasible` at `(1 + 10⁻⁴)·δ`.
pub fn certify_attack(mats: &FeasibilityMatrices, delta: &DVector<f64>, policy: &NumericPolicy) -> Result<Certification, ModelError> {
    certify_infeasible(mats, &(delta * CERTIFY_SCALE), policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBound {
    pub norm_sq: f64,
    pub row: usize,
    pub delta: Vec<f64>,
}

/// Lower bound from keeping the dispatch fixed at `p0`: the distance to the
/// nearest row hyperplane. Ties go to the lowest row index.
pub fn fixed_dispatch_lb(
    mats: &FeasibilityMatrices,
    p0: &DVector<f64>,
    policy: &NumericPolicy,
) -> Result<FixedBound, AttackError> {
    let zero = DVector::zeros(mats.n_delta());
    let (violated, _) = mats.violations(p0, &zero, policy.feasibility);
    if !violated.is_empty() {
        return Err(AttackError::InfeasibleDispatch(violated));
    }
    let mut best: Option<FixedBound> = None;
    for i in 0..mats.rows() {
        let pr = project_fixed(mats, p0, i);
        if pr.norm_sq.is_finite() && best.as_ref().is_none_or(|b| pr.norm_sq < b.norm_sq) {
            best = Some(FixedBound { norm_sq: pr.norm_sq, row: i, delta: pr.delta });
        }
    }
    best.ok_or_else(|| AttackError::Config("no row depends on δ".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    /// Nearest-row direction of the fixed-dispatch bound.
    Warm,
    /// Externally supplied direction.
    Hint,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub kind: StartKind,
    pub norm_sq: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub certified: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartResult {
    pub best: AttackSolution,
    pub restarts: Vec<RestartRecord>,
}

/// Random direction for restart `index`; independent of thread scheduling.
pub fn restart_direction(seed: u64, index: u64, attempt: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.set_word_pos(u128::from(attempt) * 4096);
    loop {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        if v.norm() > 0.0 {
            return v.normalize();
        }
    }
}

const ATTEMPTS_PER_RESTART: u64 = 8;

fn run_start(
    mats: &FeasibilityMatrices,
    cfg: &AttackConfig,
    policy: &NumericPolicy,
    index: usize,
    kind: StartKind,
    init: Option<DVector<f64>>,
    radius: f64,
) -> (RestartRecord, Option<AttackSolution>) {
    let mut record = RestartRecord { index, kind, norm_sq: None, iterations: 0, converged: false, certified: false, note: None };
    let attempts = if kind == StartKind::Random { ATTEMPTS_PER_RESTART } else { 1 };
    for attempt in 0..attempts {
        let start = match &init {
            Some(d) => d.clone(),
            None => restart_direction(cfg.seed, index as u64, attempt, mats.n_delta()) * radius,
        };
        let mut sol = match attack_local(mats, cfg, &start, policy) {
            Ok(s) => s,
            Err(AttackError::Restart(why)) => {
                record.note = Some(why);
                continue;
            }
            Err(e) => {
                record.note = Some(e.to_string());
                return (record, None);
            }
        };
        record.norm_sq = Some(sol.norm_sq);
        record.iterations = sol.iterations;
        record.converged = sol.converged;
        match certify_attack(mats, &sol.delta_vec(), policy) {
            Ok(c) if c.is_certified() => {
                sol.certified = true;
                record.certified = true;
                record.note = None;
                return (record, Some(sol));
            }
            Ok(_) => record.note = Some("certification refuted by a feasible dispatch".into()),
            Err(e) => record.note = Some(format!("certification failed: {e}")),
        }
        return (record, None);
    }
    (record, None)
}

/// Runs the warm start, the hints and `cfg.restarts` random starts (in
/// parallel) and keeps the smallest certified attack. Deterministic in
/// `cfg.seed`; ties go to the lowest start index.
pub fn multistart_attack(
    mats: &FeasibilityMatrices,
    cfg: &AttackConfig,
    hints: &[DVector<f64>],
    policy: &NumericPolicy,
) -> Result<MultistartResult, AttackError> {
    cfg.validate(mats.n_delta())?;
    if cfg.restarts == 0 && hints.is_empty() {
        return Err(AttackError::Config("at least one restart is required".into()));
    }
    let p0 = crate::model::nominal_dispatch(mats, policy)?;
    let lb = fixed_dispatch_lb(mats, &p0, policy)?;
    let radius = lb.norm_sq.sqrt().max(1e-3);
    let mut warm = DVector::from_vec(lb.delta.clone());
    if warm.norm() == 0.0 {
        // nominal dispatch already on the row: start along its normal
        warm = mats.b.row(lb.row).transpose();
    }

    let mut starts: Vec<(StartKind, Option<DVector<f64>>)> = Vec::new();
    if warm.norm() > 0.0 {
        starts.push((StartKind::Warm, Some(warm)));
    }
    for h in hints.iter().filter(|h| h.len() == mats.n_delta() && h.norm() > 0.0) {
        starts.push((StartKind::Hint, Some(h.clone())));
    }
    starts.extend((0..cfg.restarts).map(|_| (StartKind::Random, None)));

    let results: Vec<(RestartRecord, Option<AttackSolution>)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, (kind, init))| run_start(mats, cfg, policy, i, kind, init, radius))
        .collect();

    let mut best: Option<AttackSolution> = None;
    let mut records = Vec::with_capacity(results.len());
    for (rec, sol) in results {
        if let Some(s) = sol {
            if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                best = Some(s);
            }
        }
        records.push(rec);
    }
    match best {
        Some(best) => Ok(MultistartResult { best, restarts: records }),
        None => Err(AttackError::NoCertified(
            records.iter().map(|r| format!("start {}: {}", r.index, r.note.clone().unwrap_or_default())).collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::fixtures::*;
    use crate::model::{build_model, nominal_dispatch};
    use approx::assert_abs_diff_eq;

    fn policy() -> NumericPolicy {
        NumericPolicy::default()
    }

    #[test]
    fn two_bus_attack_hits_line_limit() {
        // load may grow by 0.5 before the 1.0 p.u. line saturates
        let mats = build_model(&two_bus(), None).unwrap();
        let sol = attack_local(&mats, &AttackConfig::default(), &DVector::from_element(1, 1.0), &policy()).unwrap();
        assert_abs_diff_eq!(sol.delta[0], 0.5 * 1.001, epsilon = 1e-9);
        assert!(sol.residuals.stationarity <= 1e-7);
        assert!(sol.residuals.separation.abs() <= 1e-9);
        assert!(sol.converged);
    }

    #[test]
    fn two_bus_negative_direction() {
        // shedding 0.5 leaves the generator at its lower limit of 0
        let mats = build_model(&two_bus(), None).unwrap();
        let sol = attack_local(&mats, &AttackConfig::default(), &DVector::from_element(1, -1.0), &policy()).unwrap();
        assert_abs_diff_eq!(sol.delta[0], -0.5 * 1.001, epsilon = 1e-9);
    }

    #[test]
    fn multistart_is_deterministic_and_certified() {
        let mats = build_model(&three_bus(), None).unwrap();
        let cfg = AttackConfig { seed: 11, ..Default::default() };
        let a = multistart_attack(&mats, &cfg, &[], &policy()).unwrap();
        let b = multistart_attack(&mats, &cfg, &[], &policy()).unwrap();
        assert_eq!(a.best, b.best);
        assert!(a.best.certified);
        assert_eq!(a.restarts.len(), 6);
    }

    #[test]
    fn weight_scaling_keeps_argmin() {
        let mats = build_model(&three_bus(), None).unwrap();
        let init = DVector::from_vec(vec![1.0, 0.3]);
        let plain = attack_local(&mats, &AttackConfig::default(), &init, &policy()).unwrap();
        let cfg = AttackConfig { weight: Some(vec![4.0, 4.0]), ..Default::default() };
        let scaled = attack_local(&mats, &cfg, &init, &policy()).unwrap();
        for (a, b) in plain.delta.iter().zip(&scaled.delta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(scaled.objective, 4.0 * plain.norm_sq, epsilon = 1e-9);
    }

    #[test]
    fn certify_nominal_refuted_and_headroom_certified() {
        let mats = build_model(&two_bus(), None).unwrap();
        assert!(!certify_infeasible(&mats, &DVector::zeros(1), &policy()).unwrap().is_certified());
        assert!(certify_infeasible(&mats, &DVector::from_element(1, 1.6), &policy()).unwrap().is_certified());
    }

    #[test]
    fn fixed_bound_two_bus() {
        let mats = build_model(&two_bus(), None).unwrap();
        let p0 = nominal_dispatch(&mats, &policy()).unwrap();
        let lb = fixed_dispatch_lb(&mats, &p0, &policy()).unwrap();
        // a single generator follows the load exactly; both limits sit 0.5 away
        assert_abs_diff_eq!(lb.norm_sq, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bad_config_rejected() {
        let mats = build_model(&two_bus(), None).unwrap();
        let cfg = AttackConfig { eps: 0.0, ..Default::default() };
        assert!(matches!(attack_local(&mats, &cfg, &DVector::from_element(1, 1.0), &policy()), Err(AttackError::Config(_))));
    }
}
