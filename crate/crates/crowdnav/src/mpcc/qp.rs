//! Dense convex QP subproblem solver: primal-dual interior-point method
//! with equality rows, general inequality rows, and variable bounds.
//!
//!     minimize    1/2 d' H d + g' d
//!     subject to  A_eq d  = b_eq
//!                 A_in d <= b_in
//!                 lb <= d <= ub
//!
//! Inequality rows get slacks `s > 0` with multipliers `w > 0`; finite
//! bounds contribute diagonal barrier terms. Each Newton step solves the
//! reduced KKT system in `(d, y)` by dense LU.

use nalgebra::{DMatrix, DVector};

pub struct QpSolution {
    pub d: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub w_in: DVector<f64>,
    pub z_lo: DVector<f64>,
    pub z_hi: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

const TAU: f64 = 0.99;
const SIGMA: f64 = 0.1;

#[allow(clippy::too_many_arguments)]
pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<QpSolution> {
    let n = g.len();
    let m_e = b_eq.len();
    let m_i = b_in.len();

    // Sparsity lists of the inequality rows; rows are short in this problem
    // class, so J' D J accumulates in O(sum nnz^2).
    let row_nnz: Vec<Vec<(usize, f64)>> = (0..m_i)
        .map(|r| {
            (0..n)
                .filter_map(|c| {
                    let v = a_in[(r, c)];
                    (v != 0.0).then_some((c, v))
                })
                .collect()
        })
        .collect();

    // Strictly interior start for bounded variables.
    let mut d = DVector::<f64>::zeros(n);
    for i in 0..n {
        let lo = lb[i];
        let hi = ub[i];
        if lo.is_finite() && hi.is_finite() {
            d[i] = 0.0f64.clamp(lo + 1e-4 * (hi - lo).min(1.0), hi - 1e-4 * (hi - lo).min(1.0));
        } else if lo.is_finite() {
            d[i] = d[i].max(lo + 1e-4);
        } else if hi.is_finite() {
            d[i] = d[i].min(hi - 1e-4);
        }
    }
    let mut s = DVector::<f64>::zeros(m_i);
    let mut w = DVector::<f64>::zeros(m_i);
    for r in 0..m_i {
        let ad: f64 = row_nnz[r].iter().map(|&(c, v)| v * d[c]).sum();
        s[r] = (b_in[r] - ad).max(0.1);
        w[r] = 0.1;
    }
    let mut y = DVector::<f64>::zeros(m_e);
    let mut z_lo = DVector::<f64>::zeros(n);
    let mut z_hi = DVector::<f64>::zeros(n);
    for i in 0..n {
        if lb[i].is_finite() {
            z_lo[i] = 0.1;
        }
        if ub[i].is_finite() {
            z_hi[i] = 0.1;
        }
    }

    let scale = 1.0 + g.amax();
    let kdim = n + m_e;
    let mut kkt = DMatrix::<f64>::zeros(kdim, kdim);

    for iter in 0..max_iter {
        // Residuals.
        let mut r_d = h * &d + g + a_eq.transpose() * &y;
        for r in 0..m_i {
            for &(c, v) in &row_nnz[r] {
                r_d[c] += v * w[r];
            }
        }
        for i in 0..n {
            r_d[i] += z_hi[i] - z_lo[i];
        }
        let r_e = a_eq * &d - b_eq;
        let mut r_i = DVector::<f64>::zeros(m_i);
        for r in 0..m_i {
            let ad: f64 = row_nnz[r].iter().map(|&(c, v)| v * d[c]).sum();
            r_i[r] = ad + s[r] - b_in[r];
        }

        // Complementarity measure over all barrier pairs.
        let mut gap = 0.0;
        let mut pairs = 0usize;
        for r in 0..m_i {
            gap += s[r] * w[r];
            pairs += 1;
        }
        for i in 0..n {
            if lb[i].is_finite() {
                gap += (d[i] - lb[i]) * z_lo[i];
                pairs += 1;
            }
            if ub[i].is_finite() {
                gap += (ub[i] - d[i]) * z_hi[i];
                pairs += 1;
            }
        }
        let mu = if pairs > 0 { gap / pairs as f64 } else { 0.0 };

        let feas = r_e.amax().max(r_i.amax());
        if r_d.amax() <= tol * scale && feas <= tol * scale && mu <= tol * scale {
            return Some(QpSolution { d, y_eq: y, w_in: w, z_lo, z_hi, converged: true, iterations: iter });
        }

        // Reduced KKT assembly (factorized once, used by the predictor and
        // the corrector).
        kkt.fill(0.0);
        for r in 0..n {
            for c in 0..n {
                kkt[(r, c)] = h[(r, c)];
            }
        }
        for r in 0..m_i {
            let dr = w[r] / s[r];
            for &(c1, v1) in &row_nnz[r] {
                for &(c2, v2) in &row_nnz[r] {
                    kkt[(c1, c2)] += dr * v1 * v2;
                }
            }
        }
        for i in 0..n {
            if lb[i].is_finite() {
                kkt[(i, i)] += z_lo[i] / (d[i] - lb[i]);
            }
            if ub[i].is_finite() {
                kkt[(i, i)] += z_hi[i] / (ub[i] - d[i]);
            }
        }
        for r in 0..m_e {
            for c in 0..n {
                kkt[(n + r, c)] = a_eq[(r, c)];
                kkt[(c, n + r)] = a_eq[(r, c)];
            }
            kkt[(n + r, n + r)] = -1e-10;
        }
        let lu = kkt.clone().lu();

        // One Newton solve for a given set of centering targets. Targets are
        // the right-hand sides of the perturbed complementarity equations.
        let solve_direction = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
                               rcs: &DVector<f64>,
                               rcl: &DVector<f64>,
                               rch: &DVector<f64>|
         -> Option<Direction> {
            let mut top = -&r_d;
            for r in 0..m_i {
                let qv = (w[r] * r_i[r] - rcs[r]) / s[r];
                for &(c, v) in &row_nnz[r] {
                    top[c] -= v * qv;
                }
            }
            for i in 0..n {
                if lb[i].is_finite() {
                    top[i] -= rcl[i] / (d[i] - lb[i]);
                }
                if ub[i].is_finite() {
                    top[i] += rch[i] / (ub[i] - d[i]);
                }
            }
            let mut rhs_local = DVector::<f64>::zeros(n + m_e);
            rhs_local.rows_mut(0, n).copy_from(&top);
            rhs_local.rows_mut(n, m_e).copy_from(&(-&r_e));
            let sol = lu.solve(&rhs_local)?;
            let dd = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, m_e).into_owned();
            let mut dw = DVector::<f64>::zeros(m_i);
            let mut ds = DVector::<f64>::zeros(m_i);
            for r in 0..m_i {
                let add: f64 = row_nnz[r].iter().map(|&(c, v)| v * dd[c]).sum();
                ds[r] = -r_i[r] - add;
                dw[r] = (-rcs[r] - w[r] * ds[r]) / s[r];
            }
            let mut dz_lo = DVector::<f64>::zeros(n);
            let mut dz_hi = DVector::<f64>::zeros(n);
            for i in 0..n {
                if lb[i].is_finite() {
                    dz_lo[i] = (-rcl[i] - z_lo[i] * dd[i]) / (d[i] - lb[i]);
                }
                if ub[i].is_finite() {
                    dz_hi[i] = (-rch[i] + z_hi[i] * dd[i]) / (ub[i] - d[i]);
                }
            }
            Some(Direction { dd, dy, dw, ds, dz_lo, dz_hi })
        };

        let step_lengths = |dir: &Direction| -> (f64, f64) {
            let mut alpha_p: f64 = 1.0;
            let mut alpha_d: f64 = 1.0;
            for r in 0..m_i {
                if dir.ds[r] < 0.0 {
                    alpha_p = alpha_p.min(-TAU * s[r] / dir.ds[r]);
                }
                if dir.dw[r] < 0.0 {
                    alpha_d = alpha_d.min(-TAU * w[r] / dir.dw[r]);
                }
            }
            for i in 0..n {
                if lb[i].is_finite() {
                    if dir.dd[i] < 0.0 {
                        alpha_p = alpha_p.min(-TAU * (d[i] - lb[i]) / dir.dd[i]);
                    }
                    if dir.dz_lo[i] < 0.0 {
                        alpha_d = alpha_d.min(-TAU * z_lo[i] / dir.dz_lo[i]);
                    }
                }
                if ub[i].is_finite() {
                    if dir.dd[i] > 0.0 {
                        alpha_p = alpha_p.min(TAU * (ub[i] - d[i]) / dir.dd[i]);
                    }
                    if dir.dz_hi[i] < 0.0 {
                        alpha_d = alpha_d.min(-TAU * z_hi[i] / dir.dz_hi[i]);
                    }
                }
            }
            (alpha_p, alpha_d)
        };

        // Predictor (affine scaling) step.
        let mut rcs = DVector::<f64>::zeros(m_i);
        for r in 0..m_i {
            rcs[r] = s[r] * w[r];
        }
        let mut rcl = DVector::<f64>::zeros(n);
        let mut rch = DVector::<f64>::zeros(n);
        for i in 0..n {
            if lb[i].is_finite() {
                rcl[i] = (d[i] - lb[i]) * z_lo[i];
            }
            if ub[i].is_finite() {
                rch[i] = (ub[i] - d[i]) * z_hi[i];
            }
        }
        let aff = solve_direction(&lu, &rcs, &rcl, &rch)?;
        let (ap_aff, ad_aff) = step_lengths(&aff);

        // Centering parameter from the affine gap.
        let mut gap_aff = 0.0;
        for r in 0..m_i {
            gap_aff += (s[r] + ap_aff * aff.ds[r]) * (w[r] + ad_aff * aff.dw[r]);
        }
        for i in 0..n {
            if lb[i].is_finite() {
                gap_aff += (d[i] - lb[i] + ap_aff * aff.dd[i]) * (z_lo[i] + ad_aff * aff.dz_lo[i]);
            }
            if ub[i].is_finite() {
                gap_aff += (ub[i] - d[i] - ap_aff * aff.dd[i]) * (z_hi[i] + ad_aff * aff.dz_hi[i]);
            }
        }
        let mu_aff = if pairs > 0 { gap_aff.max(0.0) / pairs as f64 } else { 0.0 };
        let sigma = if mu > 1e-300 { (mu_aff / mu).powi(3).clamp(1e-6, 0.9) } else { SIGMA };
        let smu = sigma * mu;

        // Corrector with second-order terms, reusing the factorization.
        for r in 0..m_i {
            rcs[r] = s[r] * w[r] + aff.ds[r] * aff.dw[r] - smu;
        }
        for i in 0..n {
            if lb[i].is_finite() {
                rcl[i] = (d[i] - lb[i]) * z_lo[i] + aff.dd[i] * aff.dz_lo[i] - smu;
            }
            if ub[i].is_finite() {
                rch[i] = (ub[i] - d[i]) * z_hi[i] - aff.dd[i] * aff.dz_hi[i] - smu;
            }
        }
        let dir = solve_direction(&lu, &rcs, &rcl, &rch)?;
        let (alpha_p, alpha_d) = step_lengths(&dir);

        d += &dir.dd * alpha_p;
        s += &dir.ds * alpha_p;
        y += &dir.dy * alpha_d;
        w += &dir.dw * alpha_d;
        z_lo += &dir.dz_lo * alpha_d;
        z_hi += &dir.dz_hi * alpha_d;
    }

    Some(QpSolution { d, y_eq: y, w_in: w, z_lo, z_hi, converged: false, iterations: max_iter })
}

struct Direction {
    dd: DVector<f64>,
    dy: DVector<f64>,
    dw: DVector<f64>,
    ds: DVector<f64>,
    dz_lo: DVector<f64>,
    dz_hi: DVector<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf(n: usize, v: f64) -> DVector<f64> {
        DVector::from_element(n, v)
    }

    #[test]
    fn unconstrained_quadratic() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let g = DVector::from_vec(vec![-2.0, -8.0]);
        let sol = solve_qp(
            &h,
            &g,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &inf(2, f64::NEG_INFINITY),
            &inf(2, f64::INFINITY),
            1e-10,
            50,
        )
        .unwrap();
        assert!(sol.converged);
        // Minimizer of x^2 - 2x + 2y^2 - 8y: (1, 2).
        assert!((sol.d[0] - 1.0).abs() < 1e-7);
        assert!((sol.d[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn equality_constrained() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let g = DVector::zeros(2);
        let a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b_eq = DVector::from_vec(vec![2.0]);
        let sol = solve_qp(
            &h,
            &g,
            &a_eq,
            &b_eq,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &inf(2, f64::NEG_INFINITY),
            &inf(2, f64::INFINITY),
            1e-10,
            50,
        )
        .unwrap();
        assert!(sol.converged);
        assert!((sol.d[0] - 1.0).abs() < 1e-7);
        assert!((sol.d[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn inequality_and_bounds_active() {
        // minimize (x+1)^2 + (y-3)^2 st x >= 0 (bound), y <= 1 (row).
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let g = DVector::from_vec(vec![2.0, -6.0]);
        let a_in = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b_in = DVector::from_vec(vec![1.0]);
        let mut lb = inf(2, f64::NEG_INFINITY);
        lb[0] = 0.0;
        let sol = solve_qp(
            &h,
            &g,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &a_in,
            &b_in,
            &lb,
            &inf(2, f64::INFINITY),
            1e-10,
            60,
        )
        .unwrap();
        assert!(sol.converged);
        assert!(sol.d[0].abs() < 1e-6, "x pinned at lower bound: {}", sol.d[0]);
        assert!((sol.d[1] - 1.0).abs() < 1e-6, "y pinned at row: {}", sol.d[1]);
        // Multipliers: bound multiplier = 2(0+1) = 2; row multiplier = 2(3-1) = 4.
        assert!((sol.z_lo[0] - 2.0).abs() < 1e-5);
        assert!((sol.w_in[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn detects_progress_on_infeasible_rows() {
        // x <= -1 and x >= 1 conflict; the solver must not claim convergence.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0]));
        let g = DVector::zeros(1);
        let a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b_in = DVector::from_vec(vec![-1.0, -1.0]);
        let sol = solve_qp(
            &h,
            &g,
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &a_in,
            &b_in,
            &inf(1, f64::NEG_INFINITY),
            &inf(1, f64::INFINITY),
            1e-10,
            40,
        )
        .unwrap();
        assert!(!sol.converged);
    }
}
