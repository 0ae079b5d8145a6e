//! Log-barrier Newton method for
//! `min u  s.t.  ‖Gᵀa_i + b_i‖ <= r_i := −a_iᵀq − c_i u`.
//!
//! Barrier: `τu − Σ log(r_i² − ‖v_i‖²) − log u` with `v_i = Gᵀa_i + b_i`.
//! The `G` block of the Hessian is `(M ⊗ I) + U D Uᵀ` with
//! `M = Σ (2/s_i) a_i a_iᵀ`, `U = [a_i ⊗ v_i]`, `D = diag(4/s_i²)`, so a
//! Newton step needs one `m x m` Cholesky (Woodbury) and a Schur complement
//! on the `k + 1` variables `(q, u)`.

use nalgebra::{DMatrix, DVector};

use super::{DefensePolicy, Reduction};

pub(super) struct BarrierOutput {
    pub p_free: DVector<f64>,
    pub g_free: DMatrix<f64>,
    pub newton_steps: usize,
}

struct Point {
    g: DMatrix<f64>,
    /// `(q, u)`.
    y: DVector<f64>,
}

struct Eval {
    r: DVector<f64>,
    v: DMatrix<f64>,
    s: DVector<f64>,
    value: f64,
}

struct Problem<'a> {
    red: &'a Reduction,
    /// Rows `h_i = (−a_i, −c_i)`.
    h: DMatrix<f64>,
    k: usize,
}

impl<'a> Problem<'a> {
    fn new(red: &'a Reduction) -> Self {
        let (m, k) = (red.a.nrows(), red.a.ncols());
        let h = DMatrix::from_fn(m, k + 1, |i, j| if j < k { -red.a[(i, j)] } else { -red.c[i] });
        Self { red, h, k }
    }

    fn u(&self, y: &DVector<f64>) -> f64 {
        y[self.k]
    }

    /// `None` outside the open feasible cone.
    fn eval(&self, pt: &Point, tau: f64) -> Option<Eval> {
        let u = self.u(&pt.y);
        if !(u > 0.0) {
            return None;
        }
        let r = &self.h * &pt.y;
        let v = &self.red.a * &pt.g + &self.red.b;
        let mut s = DVector::zeros(r.len());
        let mut value = tau * u - u.ln();
        for i in 0..r.len() {
            let nv = v.row(i).norm();
            let gap = r[i] - nv;
            if !(gap > 0.0) {
                return None;
            }
            s[i] = gap * (r[i] + nv);
            value -= s[i].ln();
        }
        value.is_finite().then_some(Eval { r, v, s, value })
    }

    /// Newton direction and decrement `λ² = −∇Fᵀ Δ`.
    fn newton(&self, pt: &Point, ev: &Eval, tau: f64) -> Option<(DMatrix<f64>, DVector<f64>, f64)> {
        let k = self.k;
        let m = ev.r.len();
        let u = self.u(&pt.y);
        let a = &self.red.a;
        let (r, v, s) = (&ev.r, &ev.v, &ev.s);

        let w_r = DVector::from_fn(m, |i, _| -2.0 * r[i] / s[i]);
        let mut grad_y = self.h.tr_mul(&w_r);
        grad_y[k] += tau - 1.0 / u;

        let alpha = DVector::from_fn(m, |i, _| 2.0 * (r[i] * r[i] + v.row(i).norm_squared()) / (s[i] * s[i]));
        let mut hyy = weighted_gram(&self.h, &alpha);
        hyy[(k, k)] += 1.0 / (u * u);

        if k == 0 {
            let dy = hyy.cholesky()?.solve(&(-&grad_y));
            let dec = -grad_y.dot(&dy);
            return Some((DMatrix::zeros(0, v.ncols()), dy, dec));
        }

        let two_over_s = DVector::from_fn(m, |i, _| 2.0 / s[i]);
        let grad_g = a.tr_mul(&scale_rows(v, &two_over_s));
        let m_mat = weighted_gram(a, &two_over_s);
        let m_chol = m_mat.cholesky()?;
        let m_inv_at = m_chol.solve(&a.transpose());
        // K_ij = (a_iᵀ M⁻¹ a_j)(v_iᵀ v_j)
        let kmat = (a * &m_inv_at).component_mul(&(v * v.transpose()));
        let d_inv = DVector::from_fn(m, |i, _| s[i] * s[i] / 4.0);
        let mut s_mat = kmat.clone();
        for i in 0..m {
            s_mat[(i, i)] += d_inv[i];
        }
        let s_chol = s_mat.cholesky()?;

        // H_GG⁻¹ ∇_G
        let x1 = m_chol.solve(&grad_g);
        let t = row_dots(&(a * &x1), v);
        let z = s_chol.solve(&t);
        let hinv_g = &x1 - m_chol.solve(&a.tr_mul(&scale_rows(v, &z)));

        let lambda = DVector::from_fn(m, |i, _| -4.0 * r[i] / (s[i] * s[i]));
        let lam_h = scale_rows(&self.h, &lambda);
        let q = scale_rows(&lam_h, &d_inv);
        let sq = s_chol.solve(&q);
        let corr = &q - scale_rows(&sq, &d_inv);
        let schur = hyy - lam_h.tr_mul(&corr);
        let ut = &t - &kmat * &z;
        let rhs = -&grad_y + lam_h.tr_mul(&ut);
        let dy = schur.cholesky()?.solve(&rhs);

        let w = s_chol.solve(&(&q * &dy));
        let dg = -hinv_g - m_chol.solve(&a.tr_mul(&scale_rows(v, &w)));
        let dec = -(grad_g.dot(&dg) + grad_y.dot(&dy));
        Some((dg, dy, dec))
    }
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    x.tr_mul(&scale_rows(x, w))
}

fn scale_rows(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

fn row_dots(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| x.row(i).dot(&y.row(i)))
}

fn to_point(red: &Reduction, start: &DefensePolicy, shrink: f64) -> Option<Point> {
    let s0 = start.t.sqrt() * shrink;
    if !(s0 > 0.0 && s0.is_finite()) {
        return None;
    }
    let k = red.free_cols.len();
    let mut y = DVector::zeros(k + 1);
    for (r, &col) in red.free_cols.iter().enumerate() {
        y[r] = start.p0[col] / s0;
    }
    y[k] = 1.0 / s0;
    let g = start.g.select_rows(&red.free_cols);
    Some(Point { g, y })
}

/// Whether `start` lies strictly inside the barrier domain after shrinking
/// its radius slightly.
pub(super) fn is_interior(red: &Reduction, start: &DefensePolicy) -> bool {
    let prob = Problem::new(red);
    to_point(red, start, 0.99).is_some_and(|pt| prob.eval(&pt, 1.0).is_some())
}

pub(super) fn solve(red: &Reduction, start: &DefensePolicy, opts: &super::DefenseOptions) -> BarrierOutput {
    let prob = Problem::new(red);
    let k = prob.k;
    let mut pt = to_point(red, start, 0.99).expect("caller checked the start radius");
    let nu = 2.0 * red.a.nrows() as f64 + 1.0;
    let mut tau = nu / prob.u(&pt.y);
    let mut steps = 0;

    'outer: for _ in 0..opts.max_outer {
        for _ in 0..opts.max_newton {
            let Some(ev) = prob.eval(&pt, tau) else { break 'outer };
            let Some((dg, dy, dec)) = prob.newton(&pt, &ev, tau) else {
                log::debug!("barrier Newton system not positive definite; stopping");
                break 'outer;
            };
            if !(dec > 0.0) || dec / 2.0 <= 1e-10 {
                break;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = Point { g: &pt.g + &dg * step, y: &pt.y + &dy * step };
                if let Some(te) = prob.eval(&trial, tau) {
                    if te.value <= ev.value - 0.25 * step * dec {
                        accepted = Some(trial);
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            match accepted {
                Some(next) => pt = next,
                None => break,
            }
        }
        let u = prob.u(&pt.y);
        if nu / tau <= opts.gap_rel * u {
            break;
        }
        tau *= 10.0;
    }

    let u = prob.u(&pt.y);
    let p_free = DVector::from_fn(k, |r, _| pt.y[r] / u);
    BarrierOutput { p_free, g_free: pt.g, newton_steps: steps }
}
