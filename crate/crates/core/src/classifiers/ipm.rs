//! Interior-point warm start for the SMO solver.
//!
//! The Gram matrix is replaced by a pivoted Cholesky factor `K ~ L L'` and
//! the dual QP is solved with a primal-dual (Mehrotra) interior-point method.
//! Each Newton system `(V V' + D) d = r` is solved through the `r x r`
//! capacitance matrix, so an iteration costs `O(n r^2)`. The result is
//! snapped to the box and handed to SMO, which finishes on the exact kernel.

use nalgebra::{DMatrix, DVector};

use super::smo::SmoProblem;
use crate::kernels::GramMatrix;

/// Largest factor rank worth using; beyond it SMO alone is cheaper.
const MAX_RANK: usize = 300;
const MAX_ITER: usize = 80;
/// Variables this close to a bound (relative to `C_i`) are snapped to it.
const SNAP: f64 = 1e-6;

/// Columns of `L` with `K ~ L L'`, stopping once every residual diagonal
/// entry is below `tol`. `None` if more than `max_rank` columns are needed.
pub(crate) fn pivoted_cholesky(gram: &GramMatrix, tol: f64, max_rank: usize) -> Option<DMatrix<f64>> {
    let (l, complete) = partial_cholesky(gram, tol, max_rank);
    complete.then_some(l)
}

/// Greedy pivoted Cholesky with at most `max_rank` columns; the flag tells
/// whether the residual fell below `tol`.
fn partial_cholesky(gram: &GramMatrix, tol: f64, max_rank: usize) -> (DMatrix<f64>, bool) {
    let n = gram.len();
    let mut resid = gram.diag();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let complete = loop {
        let Some((j, &dj)) = resid.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
            break true;
        };
        if dj <= tol {
            break true;
        }
        if cols.len() == max_rank {
            break false;
        }
        let row = gram.row(j);
        let mut l = row.to_vec();
        for c in &cols {
            let cj = c[j];
            for (lk, ck) in l.iter_mut().zip(c) {
                *lk -= ck * cj;
            }
        }
        let inv = 1.0 / dj.sqrt();
        for lk in l.iter_mut() {
            *lk *= inv;
        }
        for (r, lk) in resid.iter_mut().zip(&l) {
            *r -= lk * lk;
        }
        resid[j] = 0.0;
        cols.push(l);
    };
    let r = cols.len();
    (DMatrix::from_fn(n, r, |i, k| cols[k][i]), complete)
}

fn rounding_tol(gram: &GramMatrix) -> Option<f64> {
    let scale = gram.diag().iter().fold(0.0f64, |m, v| m.max(*v));
    (scale > 0.0).then(|| 1e-12 * scale * gram.len() as f64)
}

/// Low-rank factor of `gram` accurate to rounding, if its rank is small.
pub(crate) fn low_rank_factor(gram: &GramMatrix) -> Option<DMatrix<f64>> {
    pivoted_cholesky(gram, rounding_tol(gram)?, MAX_RANK.min(gram.len()))
}

/// Like [`low_rank_factor`], but keeps the leading `MAX_RANK` columns
/// (a Nystrom approximation) when the exact factor would be larger.
pub(crate) fn leading_factor(gram: &GramMatrix) -> Option<DMatrix<f64>> {
    let (l, _) = partial_cholesky(gram, rounding_tol(gram)?, MAX_RANK.min(gram.len()));
    (l.ncols() > 0).then_some(l)
}

fn max_step(x: &[f64], dx: &[f64], sign: f64) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| sign * **d < 0.0)
        .map(|(v, d)| -v / (sign * d))
        .fold(1.0, f64::min)
}

/// Approximate minimizer of the problem, feasible to rounding, or `None`
/// when the kernel is not numerically low-rank or the iteration fails.
pub(crate) fn warm_start(problem: &SmoProblem<'_>, target: f64) -> Option<Vec<f64>> {
    let n = problem.len();
    let y = problem.signs;
    let c = problem.upper;
    let p = problem.linear;
    let l = low_rank_factor(problem.gram)?;
    let r = l.ncols();
    // V = sqrt(s) diag(y) L, so Q ~ V V'.
    let mut v = l;
    let root = problem.scale.sqrt();
    for k in 0..r {
        for i in 0..n {
            v[(i, k)] *= root * y[i];
        }
    }
    let q_mul = |a: &[f64]| -> Vec<f64> {
        let t = v.tr_mul(&DVector::from_column_slice(a));
        (&v * t).as_slice().to_vec()
    };

    let mut a: Vec<f64> = c.iter().map(|ci| ci / 2.0).collect();
    let mut z = vec![1.0; n];
    let mut w = vec![1.0; n];
    let mut lam = 0.0;
    let p_scale = p.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let qa = q_mul(&a);
        let rd: Vec<f64> = (0..n).map(|i| qa[i] + p[i] - lam * y[i] - z[i] + w[i]).collect();
        let rp = target - a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
        let sa = a.clone();
        let sc: Vec<f64> = (0..n).map(|i| c[i] - a[i]).collect();
        let mu = (0..n).map(|i| sa[i] * z[i] + sc[i] * w[i]).sum::<f64>() / (2 * n) as f64;
        if mu < 1e-13 * p_scale {
            converged = true;
            break;
        }

        let di: Vec<f64> = (0..n).map(|i| 1.0 / (z[i] / sa[i] + w[i] / sc[i])).collect();
        let mut dv = v.clone();
        for k in 0..r {
            for i in 0..n {
                dv[(i, k)] *= di[i];
            }
        }
        let mut m = v.tr_mul(&dv);
        for k in 0..r {
            m[(k, k)] += 1.0;
        }
        let chol = m.cholesky()?;
        // (V V' + D)^-1 x by the Woodbury identity.
        let a_inv = |x: &[f64]| -> Vec<f64> {
            let dx: Vec<f64> = x.iter().zip(&di).map(|(xi, d)| xi * d).collect();
            let t = chol.solve(&v.tr_mul(&DVector::from_column_slice(&dx)));
            let vt = &dv * t;
            (0..n).map(|i| dx[i] - vt[i]).collect()
        };
        let ay = a_inv(y);
        let yay: f64 = ay.iter().zip(y).map(|(u, yi)| u * yi).sum();
        if !(yay.is_finite() && yay > 0.0) {
            return None;
        }
        let newton = |sig_mu: f64, ra: &[f64], rc: &[f64]| {
            let r1: Vec<f64> = (0..n)
                .map(|i| -rd[i] + (sig_mu - ra[i]) / sa[i] - z[i] - ((sig_mu - rc[i]) / sc[i] - w[i]))
                .collect();
            let u = a_inv(&r1);
            let dl = (rp - u.iter().zip(y).map(|(ui, yi)| ui * yi).sum::<f64>()) / yay;
            let da: Vec<f64> = (0..n).map(|i| u[i] + dl * ay[i]).collect();
            let dz: Vec<f64> = (0..n).map(|i| (sig_mu - ra[i] - z[i] * da[i]) / sa[i] - z[i]).collect();
            let dw: Vec<f64> = (0..n).map(|i| (sig_mu - rc[i] + w[i] * da[i]) / sc[i] - w[i]).collect();
            (da, dl, dz, dw)
        };
        let steps = |da: &[f64], dz: &[f64], dw: &[f64]| {
            let ap = max_step(&sa, da, 1.0).min(max_step(&sc, da, -1.0));
            let ad = max_step(&z, dz, 1.0).min(max_step(&w, dw, 1.0));
            (ap, ad)
        };

        let zeros = vec![0.0; n];
        let (da, _, dz, dw) = newton(0.0, &zeros, &zeros);
        let (ap, ad) = steps(&da, &dz, &dw);
        let mu_aff = (0..n)
            .map(|i| (sa[i] + ap * da[i]) * (z[i] + ad * dz[i]) + (sc[i] - ap * da[i]) * (w[i] + ad * dw[i]))
            .sum::<f64>()
            / (2 * n) as f64;
        let sigma = (mu_aff / mu).powi(3);
        let ra: Vec<f64> = (0..n).map(|i| da[i] * dz[i]).collect();
        let rc: Vec<f64> = (0..n).map(|i| -da[i] * dw[i]).collect();
        let (da, dl, dz, dw) = newton(sigma * mu, &ra, &rc);
        let (ap, ad) = steps(&da, &dz, &dw);
        let (ap, ad) = (0.99 * ap, 0.99 * ad);
        if !(ap.is_finite() && ad.is_finite()) {
            return None;
        }
        for i in 0..n {
            a[i] += ap * da[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        lam += ad * dl;
    }
    if !converged {
        return None;
    }
    snap(&mut a, y, c, target).then_some(a)
}

/// Moves near-bound variables onto their bound, then restores `y'a = target`
/// using the remaining room of each variable. False if that is impossible.
fn snap(a: &mut [f64], y: &[f64], c: &[f64], target: f64) -> bool {
    for (ai, ci) in a.iter_mut().zip(c) {
        if *ai < SNAP * ci {
            *ai = 0.0;
        } else if *ai > (1.0 - SNAP) * ci {
            *ai = *ci;
        }
    }
    let mut excess = target - a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let negligible = 1e-15 * (1.0 + target.abs());
    // Free variables first, then bounded ones.
    let mut order: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0 && a[i] < c[i]).collect();
    order.extend((0..a.len()).filter(|&i| a[i] <= 0.0 || a[i] >= c[i]));
    for pass in 0..2 {
        let candidates: Vec<usize> = if pass == 0 {
            order.iter().copied().filter(|&i| a[i] > 0.0 && a[i] < c[i]).collect()
        } else {
            order.clone()
        };
        if excess.abs() <= negligible || candidates.is_empty() {
            continue;
        }
        // Spread evenly on the first pass, greedily on the second.
        let share = if pass == 0 {
            excess / candidates.len() as f64
        } else {
            excess
        };
        for i in candidates {
            let want = if pass == 0 { share } else { excess };
            // a_i moves by y_i * want to change y'a by want.
            let next = (a[i] + y[i] * want).clamp(0.0, c[i]);
            excess -= y[i] * (next - a[i]);
            a[i] = next;
            if pass == 1 && excess.abs() <= negligible {
                break;
            }
        }
    }
    excess.abs() <= 1e-12 * (1.0 + target.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::test_util::random_points;
    use crate::kernels::{gram, KernelSpec};
    use crate::par::Execution;

    #[test]
    fn factor_reproduces_gram() {
        let pts = random_points(120, 2, 5);
        let k = gram(&KernelSpec::Gaussian { gamma: 0.3 }, &pts, Execution::Sequential).unwrap();
        let l = pivoted_cholesky(&k, 1e-12, 120).unwrap();
        let approx = &l * l.transpose();
        for i in 0..120 {
            for j in 0..120 {
                assert!((approx[(i, j)] - k.get(i, j)).abs() < 1e-9);
            }
        }
        // The linear kernel has rank at most the dimension.
        let k = gram(&KernelSpec::Linear, &pts, Execution::Sequential).unwrap();
        assert!(pivoted_cholesky(&k, 1e-12, 120).unwrap().ncols() <= 2);
    }

    #[test]
    fn rank_cap_gives_up() {
        let pts = random_points(50, 4, 2);
        let k = gram(&KernelSpec::Gaussian { gamma: 50.0 }, &pts, Execution::Sequential).unwrap();
        assert!(pivoted_cholesky(&k, 1e-12, 10).is_none());
    }

    #[test]
    fn snap_restores_equality() {
        let y = [1.0, 1.0, -1.0, 1.0];
        let c = [1.0, 1.0, 1.0, 0.5];
        let mut a = [1e-9, 0.3, 0.999_999_9, 0.2];
        assert!(snap(&mut a, &y, &c, 0.5));
        let sum: f64 = a.iter().zip(&y).map(|(ai, yi)| ai * yi).sum();
        assert!((sum - 0.5).abs() < 1e-14);
        assert!(a.iter().zip(&c).all(|(ai, ci)| *ai >= 0.0 && ai <= ci));
        assert_eq!(a[0], 0.0);
        assert_eq!(a[2], 1.0);
    }
}
