//! Desk cases and oracles built on the bus-angle formulation of DC power
//! flow, independent of the PTDF reduction used by the library.
#![allow(dead_code)]

use std::path::PathBuf;

use dcattack::case::{Branch, Bus, Generator};
use dcattack::lin_solve::{lp_feasibility, LpOutcome, LpProblem};
use dcattack::{NetworkCase, NumericPolicy};
use nalgebra::{DMatrix, DVector};

pub fn pglib(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pglib").join(format!("pglib_opf_case{name}.m"))
}

/// Generator feeding a 0.5 p.u. load over one 1.0 p.u. line.
pub fn two_bus() -> NetworkCase {
    NetworkCase::new(
        "two_bus",
        100.0,
        vec![Bus { id: 1, load: 0.0 }, Bus { id: 2, load: 0.5 }],
        vec![Branch { from: 1, to: 2, susceptance: 10.0, limit: Some(1.0) }],
        vec![Generator { bus: 1, p_min: 0.0, p_max: 2.0, cost: 1000.0 }],
    )
    .unwrap()
}

/// Ring with loads at buses 2 and 3 and a second, limited unit at bus 2.
pub fn three_bus() -> NetworkCase {
    NetworkCase::new(
        "three_bus",
        100.0,
        vec![Bus { id: 1, load: 0.0 }, Bus { id: 2, load: 0.4 }, Bus { id: 3, load: 0.6 }],
        vec![
            Branch { from: 1, to: 2, susceptance: 10.0, limit: Some(1.0) },
            Branch { from: 1, to: 3, susceptance: 10.0, limit: Some(0.5) },
            Branch { from: 2, to: 3, susceptance: 10.0, limit: Some(0.5) },
        ],
        vec![
            Generator { bus: 1, p_min: 0.0, p_max: 1.5, cost: 1000.0 },
            Generator { bus: 2, p_min: 0.0, p_max: 0.6, cost: 2000.0 },
        ],
    )
    .unwrap()
}

/// Bus-angle model: nodal balance `Σ p_g − d_b − δ_b = Σ flows out`,
/// flows `b_l (θ_from − θ_to)`, bus 0 as angle reference.
pub struct AngleModel {
    pub n_bus: usize,
    pub n_gen: usize,
    /// Bus-by-line incidence with susceptance folded in, `n_bus x n_line`.
    pub injection: DMatrix<f64>,
    /// Line-by-bus flow map.
    pub flow: DMatrix<f64>,
    pub limits: Vec<Option<f64>>,
    pub gen_bus: Vec<usize>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub load: Vec<f64>,
}

impl AngleModel {
    pub fn new(case: &NetworkCase) -> Self {
        let index = case.bus_index_map();
        let nb = case.buses.len();
        let nl = case.branches.len();
        let mut flow = DMatrix::zeros(nl, nb);
        for (l, br) in case.branches.iter().enumerate() {
            flow[(l, index[&br.from])] += br.susceptance;
            flow[(l, index[&br.to])] -= br.susceptance;
        }
        let mut injection = DMatrix::zeros(nb, nl);
        for (l, br) in case.branches.iter().enumerate() {
            injection[(index[&br.from], l)] = 1.0;
            injection[(index[&br.to], l)] = -1.0;
        }
        Self {
            n_bus: nb,
            n_gen: case.generators.len(),
            injection,
            flow,
            limits: case.branches.iter().map(|b| b.limit).collect(),
            gen_bus: case.generators.iter().map(|g| index[&g.bus]).collect(),
            p_min: case.generators.iter().map(|g| g.p_min).collect(),
            p_max: case.generators.iter().map(|g| g.p_max).collect(),
            load: case.buses.iter().map(|b| b.load).collect(),
        }
    }

    /// Line flows for a full dispatch and per-bus perturbation, solving the
    /// angle equations directly. `None` when the dispatch is unbalanced.
    pub fn flows(&self, p: &[f64], delta_bus: &[f64]) -> Option<DVector<f64>> {
        let mut net = DVector::from_fn(self.n_bus, |b, _| -self.load[b] - delta_bus[b]);
        for (g, &b) in self.gen_bus.iter().enumerate() {
            net[b] += p[g];
        }
        if net.sum().abs() > 1e-9 {
            return None;
        }
        let lap = &self.injection * &self.flow;
        let reduced = lap.view((1, 1), (self.n_bus - 1, self.n_bus - 1)).into_owned();
        let theta_r = reduced.lu().solve(&net.rows(1, self.n_bus - 1).into_owned())?;
        let mut theta = DVector::zeros(self.n_bus);
        theta.rows_mut(1, self.n_bus - 1).copy_from(&theta_r);
        Some(&self.flow * theta)
    }

    /// Largest limit violation of a full dispatch (`<= 0` when feasible).
    pub fn max_violation(&self, p: &[f64], delta_bus: &[f64]) -> f64 {
        let Some(f) = self.flows(p, delta_bus) else { return f64::INFINITY };
        let mut worst = f64::NEG_INFINITY;
        for (l, lim) in self.limits.iter().enumerate() {
            if let Some(lim) = lim {
                worst = worst.max(f[l].abs() - lim);
            }
        }
        for g in 0..self.n_gen {
            worst = worst.max(p[g] - self.p_max[g]).max(self.p_min[g] - p[g]);
        }
        worst
    }

    /// Phase-1 LP over `(p, θ)`: is there any dispatch serving `load + δ`?
    pub fn feasible(&self, delta_bus: &[f64], policy: &NumericPolicy) -> bool {
        let (ng, nb, nl) = (self.n_gen, self.n_bus, self.flow.nrows());
        let n = ng + nb;
        // balance: Σ_g∈b p_g − Σ_l inj(b,l) flow_l(θ) = d_b + δ_b
        let mut eq = DMatrix::zeros(nb + 1, n);
        let mut rhs = vec![0.0; nb + 1];
        let lap = &self.injection * &self.flow;
        for b in 0..nb {
            for (g, &gb) in self.gen_bus.iter().enumerate() {
                if gb == b {
                    eq[(b, g)] = 1.0;
                }
            }
            for k in 0..nb {
                eq[(b, ng + k)] = -lap[(b, k)];
            }
            rhs[b] = self.load[b] + delta_bus[b];
        }
        eq[(nb, ng)] = 1.0;
        let bounded: Vec<usize> = (0..nl).filter(|&l| self.limits[l].is_some()).collect();
        let mut ub = DMatrix::zeros(2 * bounded.len(), n);
        let mut ub_rhs = vec![0.0; 2 * bounded.len()];
        for (r, &l) in bounded.iter().enumerate() {
            let lim = self.limits[l].unwrap();
            for k in 0..nb {
                ub[(2 * r, ng + k)] = self.flow[(l, k)];
                ub[(2 * r + 1, ng + k)] = -self.flow[(l, k)];
            }
            ub_rhs[2 * r] = lim;
            ub_rhs[2 * r + 1] = lim;
        }
        let mut lower = self.p_min.clone();
        let mut upper = self.p_max.clone();
        lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, nb));
        upper.extend(std::iter::repeat_n(f64::INFINITY, nb));
        let prob = LpProblem::new(vec![0.0; n]).with_eq(eq, rhs).with_ub(ub, ub_rhs).with_bounds(lower, upper);
        match lp_feasibility(&prob, policy).expect("oracle LP") {
            LpOutcome::Optimal(_) => true,
            LpOutcome::Infeasible(cert) => {
                cert.verify(&prob, 1e-7).expect("oracle Farkas ray");
                false
            }
            LpOutcome::Unbounded { .. } => unreachable!("zero objective"),
        }
    }
}

/// Scatters a perturbation over load buses into bus space.
pub fn to_bus_space(n_bus: usize, delta_buses: &[usize], delta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_bus];
    for (k, &b) in delta_buses.iter().enumerate() {
        out[b] += delta[k];
    }
    out
}
