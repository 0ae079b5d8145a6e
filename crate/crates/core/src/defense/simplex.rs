//! Policies interpolating feasible dispatches on the vertices of a simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DefenseError, DefensePolicy, PolicyKind};
use crate::model::{solve_dcopf, DcopfOutcome, FeasibilityMatrices};
use crate::numeric::NumericPolicy;

const MAX_CONDITION: f64 = 1e12;

/// The unique affine map `[G p₀]` sending each vertex `δ_i` to `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPolicy {
    pub vertices: Vec<DVector<f64>>,
    pub dispatches: Vec<DVector<f64>>,
    pub g: DMatrix<f64>,
    pub p0: DVector<f64>,
    /// 2-norm condition number of `D̂`.
    pub condition: f64,
    d_hat_inv: DMatrix<f64>,
}

impl SimplexPolicy {
    /// Barycentric weights of `δ`, solving `D̂ w = (δ, 1)`.
    pub fn weights(&self, delta: &DVector<f64>) -> DVector<f64> {
        let mut rhs = DVector::from_element(delta.len() + 1, 1.0);
        rhs.rows_mut(0, delta.len()).copy_from(delta);
        &self.d_hat_inv * rhs
    }

    pub fn map(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.p0 + &self.g * delta
    }

    pub fn centroid(&self) -> DVector<f64> {
        let n = self.vertices.len() as f64;
        self.vertices.iter().fold(DVector::zeros(self.vertices[0].len()), |acc, v| acc + v) / n
    }

    /// Radius of the largest ball around `center` inside the simplex
    /// (negative when `center` lies outside).
    pub fn inner_radius(&self, center: &DVector<f64>) -> f64 {
        let n = center.len();
        let w = self.weights(center);
        (0..=n)
            .map(|i| {
                let grad = self.d_hat_inv.view((i, 0), (1, n)).norm();
                w[i] / grad
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn into_defense(self, mats: &FeasibilityMatrices, policy: &NumericPolicy) -> Result<DefensePolicy, DefenseError> {
        DefensePolicy::evaluate(mats, PolicyKind::Simplex, self.p0, self.g, policy)
    }
}

/// Fits `[G p₀] = P D̂⁻¹` where `D̂` stacks the vertices over a row of ones.
pub fn simplex_policy_fit(vertices: &[DVector<f64>], dispatches: &[DVector<f64>]) -> Result<SimplexPolicy, DefenseError> {
    let Some(first) = vertices.first() else {
        return Err(DefenseError::Config("no vertices".into()));
    };
    let n = first.len();
    if vertices.len() != n + 1 || dispatches.len() != n + 1 {
        return Err(DefenseError::Config(format!(
            "need {} vertices and dispatches in {n} dimensions, got {} and {}",
            n + 1,
            vertices.len(),
            dispatches.len()
        )));
    }
    let np = dispatches[0].len();
    if vertices.iter().any(|v| v.len() != n) || dispatches.iter().any(|p| p.len() != np) {
        return Err(DefenseError::Config("ragged vertex or dispatch list".into()));
    }
    let mut d_hat = DMatrix::from_element(n + 1, n + 1, 1.0);
    for (j, v) in vertices.iter().enumerate() {
        d_hat.view_mut((0, j), (n, 1)).copy_from(v);
    }
    let sv = d_hat.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(DefenseError::Geometry { condition });
    }
    let d_hat_inv = d_hat.clone().lu().try_inverse().ok_or(DefenseError::Geometry { condition })?;
    let mut p = DMatrix::zeros(np, n + 1);
    for (j, d) in dispatches.iter().enumerate() {
        p.set_column(j, d);
    }
    let gp = p * &d_hat_inv;
    Ok(SimplexPolicy {
        vertices: vertices.to_vec(),
        dispatches: dispatches.to_vec(),
        g: gp.columns(0, n).into_owned(),
        p0: gp.column(n).into_owned(),
        condition,
        d_hat_inv,
    })
}

/// Coordinate simplex `{r e_1, …, r e_n, −r 1}` (centroid at the origin),
/// halving `r` until DC-OPF is feasible at every vertex.
pub fn heuristic_simplex(mats: &FeasibilityMatrices, policy: &NumericPolicy) -> Result<SimplexPolicy, DefenseError> {
    let n = mats.n_delta();
    let mut r = mats.total_load().abs().max(1.0);
    for _ in 0..80 {
        let mut vertices: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let mut v = DVector::zeros(n);
                v[i] = r;
                v
            })
            .collect();
        vertices.push(DVector::from_element(n, -r));
        let mut dispatches = Vec::with_capacity(n + 1);
        for v in &vertices {
            match solve_dcopf(mats, v, policy)? {
                DcopfOutcome::Optimal { p, .. } => dispatches.push(p),
                DcopfOutcome::Infeasible(_) => break,
            }
        }
        if dispatches.len() == n + 1 {
            return simplex_policy_fit(&vertices, &dispatches);
        }
        r *= 0.5;
    }
    Err(DefenseError::Degenerate("no feasible coordinate simplex found".into()))
}
