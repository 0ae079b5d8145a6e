//! Minimal-norm perturbation that drives one row's margin to zero.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::model::FeasibilityMatrices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub delta: Vec<f64>,
    /// `δᵀδ`; `+∞` when the row cannot be reached by any perturbation.
    pub norm_sq: f64,
    pub constraint_index: usize,
}

/// Projects onto `{δ : a_iᵀp₀ + (Gᵀa_i + b_i)ᵀδ + c_i = 0}`.
///
/// `g` is the policy matrix; `None` means a fixed dispatch.
pub fn project_row(
    a_row: &RowDVector<f64>,
    b_row: &RowDVector<f64>,
    c_i: f64,
    p0: &DVector<f64>,
    g: Option<&DMatrix<f64>>,
    index: usize,
) -> ProjectionResult {
    let margin = (a_row * p0)[0] + c_i;
    let dir: DVector<f64> = match g {
        Some(g) => (a_row * g + b_row).transpose(),
        None => b_row.transpose(),
    };
    let dd = dir.norm_squared();
    if dd == 0.0 {
        // δ cannot move this row: uncrossable when slack, degenerate when tight or violated
        let norm_sq = if margin < 0.0 { f64::INFINITY } else { 0.0 };
        return ProjectionResult { delta: vec![0.0; dir.len()], norm_sq, constraint_index: index };
    }
    let scale = -margin / dd;
    let delta = dir * scale;
    ProjectionResult { norm_sq: margin * margin / dd, delta: delta.as_slice().to_vec(), constraint_index: index }
}

/// Fixed-dispatch projection for row `i`.
pub fn project_fixed(mats: &FeasibilityMatrices, p0: &DVector<f64>, i: usize) -> ProjectionResult {
    project_row(&mats.a.row(i).into_owned(), &mats.b.row(i).into_owned(), mats.c[i], p0, None, i)
}

/// Projection for row `i` under the affine policy `p = p₀ + G δ`.
pub fn project_policy(mats: &FeasibilityMatrices, p0: &DVector<f64>, g: &DMatrix<f64>, i: usize) -> ProjectionResult {
    project_row(&mats.a.row(i).into_owned(), &mats.b.row(i).into_owned(), mats.c[i], p0, Some(g), i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn margin_two_unit_direction() {
        let a = RowDVector::from_vec(vec![1.0]);
        let b = RowDVector::from_vec(vec![1.0, 0.0]);
        let p0 = DVector::from_vec(vec![0.0]);
        let r = project_row(&a, &b, -2.0, &p0, None, 0);
        assert_eq!(r.delta, vec![2.0, 0.0]);
        assert_eq!(r.norm_sq, 4.0);
    }

    #[test]
    fn tight_row_is_zero() {
        let a = RowDVector::from_vec(vec![1.0]);
        let b = RowDVector::from_vec(vec![0.5, 2.0]);
        let r = project_row(&a, &b, -1.0, &DVector::from_vec(vec![1.0]), None, 3);
        assert_eq!(r.norm_sq, 0.0);
        assert_eq!(r.constraint_index, 3);
    }

    #[test]
    fn insensitive_row_sentinel() {
        let a = RowDVector::from_vec(vec![1.0]);
        let b = RowDVector::from_vec(vec![0.0, 0.0]);
        let p0 = DVector::from_vec(vec![0.0]);
        assert_eq!(project_row(&a, &b, -1.0, &p0, None, 0).norm_sq, f64::INFINITY);
        assert_eq!(project_row(&a, &b, 0.0, &p0, None, 0).norm_sq, 0.0);
        // a policy can cancel the direction
        let g = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let b = RowDVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(project_row(&a, &b, -1.0, &p0, Some(&g), 0).norm_sq, f64::INFINITY);
    }

    #[test]
    fn policy_with_zero_g_matches_fixed() {
        let a = RowDVector::from_vec(vec![0.3, -1.2]);
        let b = RowDVector::from_vec(vec![1.0, 0.5, -0.25]);
        let p0 = DVector::from_vec(vec![0.7, 0.1]);
        let g = DMatrix::zeros(2, 3);
        let f = project_row(&a, &b, -1.5, &p0, None, 0);
        let p = project_row(&a, &b, -1.5, &p0, Some(&g), 0);
        assert_abs_diff_eq!(f.norm_sq, p.norm_sq, epsilon = 1e-15);
    }
}
