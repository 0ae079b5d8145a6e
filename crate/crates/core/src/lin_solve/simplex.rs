//! Bounded-variable revised simplex with an explicit basis inverse.
//!
//! Columns are `[structural | slack per inequality row | artificial]`.
//! Phase 1 minimizes the sum of artificials; phase 2 pins them to zero.

use nalgebra::{DMatrix, DVector};

use super::{FarkasCertificate, LpError, LpOutcome, LpProblem, LpSolution};
use crate::numeric::NumericPolicy;

const REFACTOR_EVERY: usize = 64;
const DEGENERATE_BEFORE_BLAND: usize = 40;

#[derive(Debug, Clone, Copy)]
pub(super) struct Tolerances {
    primal: f64,
    dual: f64,
    pivot: f64,
    /// Phase-1 optimum above this is reported infeasible.
    infeasible: f64,
    certificate: f64,
}

impl Tolerances {
    pub(super) fn strict(policy: &NumericPolicy) -> Self {
        Self {
            primal: 1e-10,
            dual: 1e-10,
            pivot: 1e-9,
            infeasible: policy.feasibility,
            certificate: policy.certificate,
        }
    }

    pub(super) fn relaxed(policy: &NumericPolicy) -> Self {
        let f = policy.fallback;
        Self {
            primal: f * 1e-2,
            dual: f * 1e-2,
            pivot: f * 1e-2,
            infeasible: f,
            certificate: policy.certificate.max(f * 1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
    /// Free nonbasic, parked at zero.
    Free,
}

enum Step {
    Optimal,
    Unbounded { q: usize, dir: f64, alpha: DVector<f64> },
}

struct Simplex<'a> {
    prob: &'a LpProblem,
    tol: Tolerances,
    n: usize,
    m_ub: usize,
    m: usize,
    cols: DMatrix<f64>,
    rhs: DVector<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    art_start: usize,
    since_refactor: usize,
    iterations: usize,
    phase: u8,
}

pub(super) fn solve(prob: &LpProblem, tol: Tolerances) -> Result<LpOutcome, LpError> {
    let mut s = Simplex::new(prob, tol);
    s.phase = 1;
    let phase1_cost: Vec<f64> = (0..s.cols.ncols()).map(|j| if j >= s.art_start { 1.0 } else { 0.0 }).collect();
    match s.run(&phase1_cost)? {
        Step::Optimal => {}
        Step::Unbounded { .. } => return Err(LpError::Numerical("phase 1 unbounded".into())),
    }
    s.refactor()?;
    let w: f64 = (s.art_start..s.cols.ncols()).map(|j| s.x[j]).sum();
    if w > tol.infeasible {
        let y = s.duals(&phase1_cost);
        let mut cert = s.farkas(&y);
        cert.normalize();
        cert.verify(prob, tol.certificate)?;
        return Ok(LpOutcome::Infeasible(cert));
    }

    s.phase = 2;
    for j in s.art_start..s.cols.ncols() {
        s.up[j] = 0.0;
        if s.status[j] != Status::Basic {
            s.x[j] = 0.0;
            s.status[j] = Status::Lower;
        }
    }
    let mut cost = vec![0.0; s.cols.ncols()];
    cost[..s.n].copy_from_slice(&prob.objective);
    match s.run(&cost)? {
        Step::Optimal => {
            s.refactor()?;
            let y = s.duals(&cost);
            Ok(LpOutcome::Optimal(s.solution(&y)))
        }
        Step::Unbounded { q, dir, alpha } => {
            let mut ray = vec![0.0; s.n];
            if q < s.n {
                ray[q] = dir;
            }
            for (k, &v) in s.basis.iter().enumerate() {
                if v < s.n {
                    ray[v] = -dir * alpha[k];
                }
            }
            let scale = ray.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            ray.iter_mut().for_each(|v| *v /= scale);
            Ok(LpOutcome::Unbounded { x: s.x[..s.n].to_vec(), ray })
        }
    }
}

impl<'a> Simplex<'a> {
    fn new(prob: &'a LpProblem, tol: Tolerances) -> Self {
        let n = prob.n();
        let m_ub = prob.a_ub.nrows();
        let m = m_ub + prob.a_eq.nrows();
        let mut lo = prob.lower.clone();
        let mut up = prob.upper.clone();
        let mut x = vec![0.0; n];
        let mut status = vec![Status::Free; n];
        for j in 0..n {
            if lo[j].is_finite() {
                x[j] = lo[j];
                status[j] = Status::Lower;
            } else if up[j].is_finite() {
                x[j] = up[j];
                status[j] = Status::Upper;
            }
        }
        let rhs = DVector::from_iterator(m, prob.b_ub.iter().chain(&prob.b_eq).copied());
        let mut residual = rhs.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                for i in 0..m_ub {
                    residual[i] -= prob.a_ub[(i, j)] * x[j];
                }
                for i in 0..m - m_ub {
                    residual[m_ub + i] -= prob.a_eq[(i, j)] * x[j];
                }
            }
        }

        // artificials for violated inequality rows and every equality row
        let needs_art: Vec<usize> = (0..m).filter(|&i| i >= m_ub || residual[i] < 0.0).collect();
        let art_start = n + m_ub;
        let ncol = art_start + needs_art.len();
        let mut cols = DMatrix::zeros(m, ncol);
        cols.view_mut((0, 0), (m_ub, n)).copy_from(&prob.a_ub);
        cols.view_mut((m_ub, 0), (m - m_ub, n)).copy_from(&prob.a_eq);
        for i in 0..m_ub {
            cols[(i, n + i)] = 1.0;
        }
        lo.resize(ncol, 0.0);
        up.resize(ncol, f64::INFINITY);
        x.resize(ncol, 0.0);
        status.resize(ncol, Status::Lower);

        let mut basis = vec![0; m];
        let mut binv = DMatrix::zeros(m, m);
        for i in 0..m_ub {
            basis[i] = n + i;
            binv[(i, i)] = 1.0;
        }
        for (k, &i) in needs_art.iter().enumerate() {
            let j = art_start + k;
            let sign = if residual[i] < 0.0 { -1.0 } else { 1.0 };
            cols[(i, j)] = sign;
            x[j] = residual[i].abs();
            basis[i] = j;
            binv[(i, i)] = sign;
        }
        for &j in &basis {
            status[j] = Status::Basic;
        }
        for i in 0..m_ub {
            let j = n + i;
            if status[j] == Status::Basic {
                x[j] = residual[i];
            } else {
                x[j] = 0.0;
                status[j] = Status::Lower;
            }
        }

        Self {
            prob,
            tol,
            n,
            m_ub,
            m,
            cols,
            rhs,
            lo,
            up,
            x,
            status,
            basis,
            binv,
            art_start,
            since_refactor: 0,
            iterations: 0,
            phase: 0,
        }
    }

    fn iteration_limit(&self) -> usize {
        100 * (self.m + self.cols.ncols()) + 1000
    }

    /// Recomputes `B⁻¹` from scratch and the basic values from the nonbasic ones.
    fn refactor(&mut self) -> Result<(), LpError> {
        if self.m == 0 {
            return Ok(());
        }
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            bmat.set_column(k, &self.cols.column(j));
        }
        self.binv = bmat.lu().try_inverse().ok_or(LpError::SingularBasis { phase: self.phase, iterations: self.iterations })?;
        let mut r = self.rhs.clone();
        for j in 0..self.cols.ncols() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                r.axpy(-self.x[j], &self.cols.column(j), 1.0);
            }
        }
        let xb = &self.binv * r;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> DVector<f64> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn run(&mut self, cost: &[f64]) -> Result<Step, LpError> {
        let ncol = self.cols.ncols();
        let cmax = cost.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        let dtol = self.tol.dual * cmax;
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.iteration_limit() {
                return Err(LpError::IterationLimit { phase: self.phase, iterations: self.iterations, basis: self.m });
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let y = self.duals(cost);
            let aty = self.cols.tr_mul(&y);
            let bland = degenerate >= DEGENERATE_BEFORE_BLAND;

            // pricing
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..ncol {
                let dir = match self.status[j] {
                    Status::Basic => continue,
                    Status::Lower => {
                        let d = cost[j] - aty[j];
                        if d < -dtol && self.up[j] > self.lo[j] {
                            1.0
                        } else {
                            continue;
                        }
                    }
                    Status::Upper => {
                        if cost[j] - aty[j] > dtol {
                            -1.0
                        } else {
                            continue;
                        }
                    }
                    Status::Free => {
                        let d = cost[j] - aty[j];
                        if d.abs() > dtol {
                            -d.signum()
                        } else {
                            continue;
                        }
                    }
                };
                let score = (cost[j] - aty[j]).abs();
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if score > best {
                    best = score;
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(Step::Optimal);
            };

            let alpha = &self.binv * self.cols.column(q);
            let range = self.up[q] - self.lo[q];

            // ratio test: basic k moves by −dir·α_k·θ
            let gap = |s: &Self, k: usize, a: f64| -> f64 {
                let v = s.basis[k];
                if a > 0.0 {
                    s.x[v] - s.lo[v]
                } else {
                    s.up[v] - s.x[v]
                }
            };
            let mut leave: Option<usize> = None;
            let mut theta;
            if bland {
                theta = f64::INFINITY;
                for k in 0..self.m {
                    let a = alpha[k] * dir;
                    if a.abs() <= self.tol.pivot {
                        continue;
                    }
                    let ratio = (gap(self, k, a) / a.abs()).max(0.0);
                    let better = match leave {
                        None => ratio < theta,
                        Some(l) => ratio < theta - 1e-12 || (ratio <= theta + 1e-12 && self.basis[k] < self.basis[l]),
                    };
                    if better && ratio.is_finite() {
                        theta = ratio;
                        leave = Some(k);
                    }
                }
            } else {
                let mut bound = f64::INFINITY;
                for k in 0..self.m {
                    let a = alpha[k] * dir;
                    if a.abs() <= self.tol.pivot {
                        continue;
                    }
                    let g = gap(self, k, a);
                    if g.is_finite() {
                        bound = bound.min((g + self.tol.primal) / a.abs());
                    }
                }
                theta = f64::INFINITY;
                let mut best_pivot = 0.0;
                for k in 0..self.m {
                    let a = alpha[k] * dir;
                    if a.abs() <= self.tol.pivot {
                        continue;
                    }
                    let ratio = gap(self, k, a) / a.abs();
                    if ratio.is_finite() && ratio <= bound && a.abs() > best_pivot {
                        best_pivot = a.abs();
                        theta = ratio.max(0.0);
                        leave = Some(k);
                    }
                }
            }

            if range <= theta {
                // bound flip, basis unchanged
                if !range.is_finite() {
                    return Ok(Step::Unbounded { q, dir, alpha });
                }
                self.shift(q, dir, range, &alpha);
                self.status[q] = if dir > 0.0 { Status::Upper } else { Status::Lower };
                self.x[q] = if dir > 0.0 { self.up[q] } else { self.lo[q] };
                degenerate = 0;
                self.iterations += 1;
                continue;
            }
            let Some(r) = leave else {
                return Ok(Step::Unbounded { q, dir, alpha });
            };
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };
            self.shift(q, dir, theta, &alpha);
            let v = self.basis[r];
            let a = alpha[r] * dir;
            if a > 0.0 {
                self.x[v] = self.lo[v];
                self.status[v] = Status::Lower;
            } else {
                self.x[v] = self.up[v];
                self.status[v] = Status::Upper;
            }
            if !self.lo[v].is_finite() && !self.up[v].is_finite() {
                self.status[v] = Status::Free;
            }
            self.basis[r] = q;
            self.status[q] = Status::Basic;
            self.pivot(r, &alpha);
            self.iterations += 1;
            self.since_refactor += 1;
        }
    }

    fn shift(&mut self, q: usize, dir: f64, theta: f64, alpha: &DVector<f64>) {
        if theta == 0.0 {
            return;
        }
        self.x[q] += dir * theta;
        for k in 0..self.m {
            self.x[self.basis[k]] -= dir * theta * alpha[k];
        }
    }

    /// Product-form update of `B⁻¹` after column `alpha` replaces position `r`.
    fn pivot(&mut self, r: usize, alpha: &DVector<f64>) {
        let pr = alpha[r];
        let row_r = self.binv.row(r).transpose() / pr;
        let mut w = alpha.clone();
        w[r] -= pr;
        self.binv.ger(-1.0, &w, &row_r, 1.0);
        self.binv.set_row(r, &row_r.transpose());
    }

    /// Farkas certificate from phase-1 multipliers `y`: `λ = −y`.
    fn farkas(&self, y: &DVector<f64>) -> FarkasCertificate {
        let prob = self.prob;
        let y_ub: Vec<f64> = (0..self.m_ub).map(|i| (-y[i]).max(0.0)).collect();
        let y_eq: Vec<f64> = (self.m_ub..self.m).map(|i| -y[i]).collect();
        let mut z_lower = vec![0.0; self.n];
        let mut z_upper = vec![0.0; self.n];
        for j in 0..self.n {
            let mut d = 0.0;
            for i in 0..self.m_ub {
                d += prob.a_ub[(i, j)] * y_ub[i];
            }
            for (i, yi) in y_eq.iter().enumerate() {
                d += prob.a_eq[(i, j)] * yi;
            }
            if d > 0.0 && prob.lower[j].is_finite() {
                z_lower[j] = d;
            } else if d < 0.0 && prob.upper[j].is_finite() {
                z_upper[j] = -d;
            }
        }
        FarkasCertificate { y_ub, y_eq, z_lower, z_upper }
    }

    fn solution(&self, y: &DVector<f64>) -> LpSolution {
        let prob = self.prob;
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let duals_ub: Vec<f64> = (0..self.m_ub).map(|i| (-y[i]).max(0.0)).collect();
        let duals_eq: Vec<f64> = (self.m_ub..self.m).map(|i| -y[i]).collect();
        let mut reduced_lower = vec![0.0; self.n];
        let mut reduced_upper = vec![0.0; self.n];
        for j in 0..self.n {
            let mut d = prob.objective[j];
            for i in 0..self.m_ub {
                d += prob.a_ub[(i, j)] * duals_ub[i];
            }
            for (i, yi) in duals_eq.iter().enumerate() {
                d += prob.a_eq[(i, j)] * yi;
            }
            match self.status[j] {
                Status::Lower if d > 0.0 => reduced_lower[j] = d,
                Status::Upper if d < 0.0 => reduced_upper[j] = -d,
                _ => {}
            }
        }
        let objective = x.iter().zip(&prob.objective).map(|(a, b)| a * b).sum();
        LpSolution { x, objective, duals_ub, duals_eq, reduced_lower, reduced_upper, iterations: self.iterations }
    }
}
