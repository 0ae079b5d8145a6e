//! PTDF matrix, the reduced feasibility polytope `{p : A p + B δ + c <= 0}`
//! and the nominal DC-OPF.
//!
//! Line flow is positive in the from-bus to to-bus direction. The reduced
//! dispatch `p` holds every generator except the slack, which is eliminated
//! through power balance.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;
use crate::lin_solve::{lp_solve, FarkasCertificate, LpError, LpOutcome, LpProblem};
use crate::numeric::NumericPolicy;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("reduced Laplacian is singular (disconnected network or zero susceptance)")]
    SingularLaplacian,
    #[error("reference bus {0} out of range")]
    RefBus(usize),
    #[error("slack generator {0} out of range")]
    SlackGen(usize),
    #[error("no bus carries a nonzero load; the perturbation space is empty")]
    NoPerturbableLoads,
    #[error("nominal DC-OPF is infeasible")]
    NominalInfeasible,
    #[error("dispatch violates rows {rows:?} (max residual {max_residual:e})")]
    InfeasibleDispatch { rows: Vec<usize>, max_residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone)]
pub struct PtdfSet {
    /// Signed incidence, `n_l x n_b`; +1 at the from-bus, -1 at the to-bus.
    pub incidence: DMatrix<f64>,
    pub susceptance: DVector<f64>,
    /// `n_l x (n_b - 1)`, reference column removed.
    pub reduced: DMatrix<f64>,
    /// `n_l x n_b` with a zero column at `ref_bus`.
    pub full: DMatrix<f64>,
    pub ref_bus: usize,
}

pub fn build_ptdf(case: &NetworkCase, ref_bus: usize) -> Result<PtdfSet, ModelError> {
    let nb = case.buses.len();
    let nl = case.branches.len();
    if ref_bus >= nb {
        return Err(ModelError::RefBus(ref_bus));
    }
    let index = case.bus_index_map();
    let mut incidence = DMatrix::zeros(nl, nb);
    let mut susceptance = DVector::zeros(nl);
    for (l, br) in case.branches.iter().enumerate() {
        incidence[(l, index[&br.from])] = 1.0;
        incidence[(l, index[&br.to])] = -1.0;
        susceptance[l] = br.susceptance;
    }
    let keep: Vec<usize> = (0..nb).filter(|&j| j != ref_bus).collect();
    let e_hat = incidence.select_columns(&keep);
    let ye = DMatrix::from_fn(nl, nb - 1, |l, j| susceptance[l] * e_hat[(l, j)]);
    let laplacian = e_hat.transpose() * &ye;
    let reduced = if nb > 1 { solve_laplacian(&laplacian, &ye)? } else { DMatrix::zeros(nl, 0) };
    if reduced.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::SingularLaplacian);
    }
    let mut full = DMatrix::zeros(nl, nb);
    for (k, &j) in keep.iter().enumerate() {
        full.set_column(j, &reduced.column(k));
    }
    Ok(PtdfSet { incidence, susceptance, reduced, full, ref_bus })
}

/// `Φ̂ = Y Ê L⁻¹` (L symmetric). Series capacitors make `L` indefinite, so
/// Cholesky falls back to LU.
fn solve_laplacian(laplacian: &DMatrix<f64>, ye: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    let n = laplacian.nrows();
    let scale = laplacian.amax();
    if let Some(chol) = laplacian.clone().cholesky() {
        // a pivot that cancels its own diagonal entry means a floating island
        let pivots = chol.l_dirty().diagonal();
        if (0..n).all(|i| pivots[i] * pivots[i] > 1e-12 * laplacian[(i, i)]) {
            return Ok(chol.solve(&ye.transpose()).transpose());
        }
        return Err(ModelError::SingularLaplacian);
    }
    let lu = laplacian.clone().full_piv_lu();
    let u_min = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(u_min > 1e-12 * scale) {
        return Err(ModelError::SingularLaplacian);
    }
    lu.solve(&ye.transpose()).map(|x| x.transpose()).ok_or(ModelError::SingularLaplacian)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    FlowUpper,
    FlowLower,
    SlackGenUpper,
    GenUpper,
    SlackGenLower,
    GenLower,
}

/// Row tag: constraint kind plus the branch or generator index it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: RowKind,
    pub element: usize,
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (kind, what) = match self.kind {
            RowKind::FlowUpper => ("flow-upper", "branch"),
            RowKind::FlowLower => ("flow-lower", "branch"),
            RowKind::SlackGenUpper => ("slack-gen-upper", "gen"),
            RowKind::GenUpper => ("gen-upper", "gen"),
            RowKind::SlackGenLower => ("slack-gen-lower", "gen"),
            RowKind::GenLower => ("gen-lower", "gen"),
        };
        write!(f, "{kind}:{what}{}", self.element)
    }
}

/// The polytope `F(δ) = {p : A p + B δ + c <= 0}` and its bookkeeping.
#[derive(Debug, Clone)]
pub struct FeasibilityMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub row_labels: Vec<RowLabel>,
    /// Bus-by-generator incidence.
    pub n_g: DMatrix<f64>,
    /// Bus-by-perturbation incidence.
    pub n_d: DMatrix<f64>,
    pub slack_gen: usize,
    /// Generator index of each column of `A`.
    pub gen_columns: Vec<usize>,
    /// Bus index of each perturbation entry.
    pub delta_buses: Vec<usize>,
    pub delta_bus_ids: Vec<u32>,
    /// Nominal load per bus.
    pub load: DVector<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    /// Linear cost per generator.
    pub cost: Vec<f64>,
    pub ptdf: PtdfSet,
}

impl FeasibilityMatrices {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_delta(&self) -> usize {
        self.b.ncols()
    }

    pub fn total_load(&self) -> f64 {
        self.load.sum()
    }

    /// `A p + B δ + c`.
    pub fn residual(&self, p: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        &self.a * p + &self.b * delta + &self.c
    }

    /// Rows whose residual exceeds `tol`, plus the largest residual.
    pub fn violations(&self, p: &DVector<f64>, delta: &DVector<f64>, tol: f64) -> (Vec<usize>, f64) {
        let r = self.residual(p, delta);
        let rows = (0..r.len()).filter(|&i| r[i] > tol).collect();
        (rows, r.max())
    }

    pub fn check_dispatch(&self, p: &DVector<f64>, tol: f64) -> Result<(), ModelError> {
        let zero = DVector::zeros(self.n_delta());
        let (rows, max_residual) = self.violations(p, &zero, tol);
        if rows.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InfeasibleDispatch { rows, max_residual })
        }
    }

    /// Columns of generators with `p_min == p_max`.
    pub fn pinned_columns(&self) -> Vec<usize> {
        (0..self.n_p())
            .filter(|&k| {
                let g = self.gen_columns[k];
                self.p_max[g] - self.p_min[g] <= 0.0
            })
            .collect()
    }

    /// Full per-generator dispatch for reduced dispatch `p` under load change `δ`.
    pub fn full_dispatch(&self, p: &DVector<f64>, delta: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.p_min.len()];
        for (k, &g) in self.gen_columns.iter().enumerate() {
            out[g] = p[k];
        }
        out[self.slack_gen] = self.total_load() + delta.sum() - p.sum();
        out
    }

    pub fn dispatch_cost(&self, p: &DVector<f64>, delta: &DVector<f64>) -> f64 {
        self.full_dispatch(p, delta).iter().zip(&self.cost).map(|(x, c)| x * c).sum()
    }

    /// Expands a perturbation into bus space.
    pub fn delta_by_bus(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.n_d * delta
    }
}

/// Default slack: widest `p_max - p_min`, lowest index on ties.
pub fn default_slack(case: &NetworkCase) -> usize {
    let mut best = 0;
    for (k, g) in case.generators.iter().enumerate() {
        if g.range() > case.generators[best].range() {
            best = k;
        }
    }
    best
}

/// Builds the polytope with the PTDF referenced at the slack generator's bus.
pub fn build_model(case: &NetworkCase, slack_gen: Option<usize>) -> Result<FeasibilityMatrices, ModelError> {
    let slack = slack_gen.unwrap_or_else(|| default_slack(case));
    let gen = case.generators.get(slack).ok_or(ModelError::SlackGen(slack))?;
    let ref_bus = case.bus_index_map()[&gen.bus];
    let ptdf = build_ptdf(case, ref_bus)?;
    build_feasibility(case, &ptdf, slack)
}

pub fn build_feasibility(case: &NetworkCase, ptdf: &PtdfSet, slack_gen: usize) -> Result<FeasibilityMatrices, ModelError> {
    let ng = case.generators.len();
    let nb = case.buses.len();
    if slack_gen >= ng {
        return Err(ModelError::SlackGen(slack_gen));
    }
    if ptdf.full.ncols() != nb || ptdf.full.nrows() != case.branches.len() {
        return Err(ModelError::Dimension("PTDF does not match case".into()));
    }
    let index: HashMap<u32, usize> = case.bus_index_map();
    let gen_bus: Vec<usize> = case.generators.iter().map(|g| index[&g.bus]).collect();
    let gen_columns: Vec<usize> = (0..ng).filter(|&k| k != slack_gen).collect();
    let delta_buses: Vec<usize> = (0..nb).filter(|&i| case.buses[i].load != 0.0).collect();
    if delta_buses.is_empty() {
        return Err(ModelError::NoPerturbableLoads);
    }
    let np = gen_columns.len();
    let nd = delta_buses.len();
    let load = DVector::from_iterator(nb, case.buses.iter().map(|b| b.load));

    let mut n_g = DMatrix::zeros(nb, ng);
    for (k, &i) in gen_bus.iter().enumerate() {
        n_g[(i, k)] = 1.0;
    }
    let mut n_d = DMatrix::zeros(nb, nd);
    for (k, &i) in delta_buses.iter().enumerate() {
        n_d[(i, k)] = 1.0;
    }

    // Flow = Φ(N_g p_full − p_d − N_d δ) with the slack output substituted.
    // φ_s vanishes when the reference bus hosts the slack generator.
    let phi = &ptdf.full;
    let phi_s = phi.column(gen_bus[slack_gen]).into_owned();
    let pg = DMatrix::from_fn(phi.nrows(), np, |l, k| phi[(l, gen_bus[gen_columns[k]])] - phi_s[l]);
    let total_load = load.sum();
    let flow_delta = DMatrix::from_fn(phi.nrows(), nd, |l, k| phi_s[l] - phi[(l, delta_buses[k])]);
    let flow_const = DVector::from_fn(phi.nrows(), |l, _| phi_s[l] * total_load) - phi * &load;

    let bounded: Vec<usize> = (0..case.branches.len()).filter(|&l| case.branches[l].limit.is_some()).collect();
    let m = 2 * bounded.len() + 2 * ng;
    let mut a = DMatrix::zeros(m, np);
    let mut b = DMatrix::zeros(m, nd);
    let mut c = DVector::zeros(m);
    let mut labels = Vec::with_capacity(m);
    let mut row = 0;
    for sign in [1.0, -1.0] {
        for &l in &bounded {
            let rate = case.branches[l].limit.unwrap();
            a.row_mut(row).copy_from(&(pg.row(l) * sign));
            b.row_mut(row).copy_from(&(flow_delta.row(l) * sign));
            c[row] = sign * flow_const[l] - rate;
            let kind = if sign > 0.0 { RowKind::FlowUpper } else { RowKind::FlowLower };
            labels.push(RowLabel { kind, element: l });
            row += 1;
        }
    }
    let gens = &case.generators;
    for sign in [1.0, -1.0] {
        // slack: sign·(1ᵀp_d + 1ᵀδ − 1ᵀp) − bound
        let bound = if sign > 0.0 { gens[slack_gen].p_max } else { -gens[slack_gen].p_min };
        a.row_mut(row).fill(-sign);
        b.row_mut(row).fill(sign);
        c[row] = sign * total_load - bound;
        let kind = if sign > 0.0 { RowKind::SlackGenUpper } else { RowKind::SlackGenLower };
        labels.push(RowLabel { kind, element: slack_gen });
        row += 1;
        for (k, &g) in gen_columns.iter().enumerate() {
            a[(row, k)] = sign;
            c[row] = if sign > 0.0 { -gens[g].p_max } else { gens[g].p_min };
            let kind = if sign > 0.0 { RowKind::GenUpper } else { RowKind::GenLower };
            labels.push(RowLabel { kind, element: g });
            row += 1;
        }
    }
    debug_assert_eq!(row, m);

    Ok(FeasibilityMatrices {
        a,
        b,
        c,
        row_labels: labels,
        n_g,
        n_d,
        slack_gen,
        gen_columns,
        delta_bus_ids: delta_buses.iter().map(|&i| case.buses[i].id).collect(),
        delta_buses,
        load,
        p_min: gens.iter().map(|g| g.p_min).collect(),
        p_max: gens.iter().map(|g| g.p_max).collect(),
        cost: gens.iter().map(|g| g.cost).collect(),
        ptdf: ptdf.clone(),
    })
}

#[derive(Debug, Clone)]
pub enum DcopfOutcome {
    Optimal { p: DVector<f64>, cost: f64 },
    Infeasible(FarkasCertificate),
}

impl DcopfOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, DcopfOutcome::Optimal { .. })
    }
}

/// The LP `min cost s.t. A p <= -(B δ + c)` in the shape `lp_solve` takes.
pub(crate) fn dcopf_problem(mats: &FeasibilityMatrices, delta: &DVector<f64>) -> LpProblem {
    let slack_cost = mats.cost[mats.slack_gen];
    let objective = mats.gen_columns.iter().map(|&g| mats.cost[g] - slack_cost).collect();
    let rhs = -(&mats.b * delta + &mats.c);
    LpProblem::new(objective).with_ub(mats.a.clone(), rhs.as_slice().to_vec())
}

/// Solves the perturbed DC-OPF. An infeasible verdict carries a verified
/// Farkas ray `y >= 0` with `Aᵀy = 0` and `yᵀ(Bδ + c) > 0`.
pub fn solve_dcopf(
    mats: &FeasibilityMatrices,
    delta: &DVector<f64>,
    policy: &NumericPolicy,
) -> Result<DcopfOutcome, ModelError> {
    if delta.len() != mats.n_delta() {
        return Err(ModelError::Dimension(format!("δ has {} entries, expected {}", delta.len(), mats.n_delta())));
    }
    let prob = dcopf_problem(mats, delta);
    match lp_solve(&prob, policy)? {
        LpOutcome::Optimal(sol) => {
            let p = DVector::from_vec(sol.x);
            let cost = mats.dispatch_cost(&p, delta);
            Ok(DcopfOutcome::Optimal { p, cost })
        }
        LpOutcome::Infeasible(cert) => Ok(DcopfOutcome::Infeasible(cert)),
        // bounded polytope: every reduced generator has finite limits
        LpOutcome::Unbounded { .. } => Err(LpError::Numerical("DC-OPF reported unbounded".into()).into()),
    }
}

/// Nominal (δ = 0) optimum.
pub fn nominal_dispatch(mats: &FeasibilityMatrices, policy: &NumericPolicy) -> Result<DVector<f64>, ModelError> {
    match solve_dcopf(mats, &DVector::zeros(mats.n_delta()), policy)? {
        DcopfOutcome::Optimal { p, .. } => Ok(p),
        DcopfOutcome::Infeasible(_) => Err(ModelError::NominalInfeasible),
    }
}
