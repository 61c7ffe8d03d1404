//! Two-coordinate (SMO) solver for box-constrained QPs with one equality.
//!
//! Minimizes `1/2 a'Qa + p'a` subject to `y'a = const` and `0 <= a_i <= C_i`,
//! where `Q_ij = s y_i y_j K_ij`, `y_i` is `+-1` and `K` is a Gram matrix.
//! The equality constant is fixed by the feasible starting point. Working
//! pairs are chosen with second-order information; the stopping rule is the
//! maximal KKT violation `m(a) - M(a) <= tol`.

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

const TAU: f64 = 1e-12;
/// Minimum number of pair updates between conjugate-gradient phases.
const CG_EVERY_MIN: usize = 1000;
/// Conjugate-gradient steps per phase.
const CG_STEPS: usize = 50;
/// Problems at least this large get an interior-point starting point.
const IPM_MIN_SIZE: usize = 500;

pub(crate) struct SmoProblem<'a> {
    pub gram: &'a GramMatrix,
    pub signs: &'a [f64],
    pub scale: f64,
    pub linear: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Clone, Debug)]
pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Multiplier of the equality constraint: `y_i G_i` on free variables.
    pub rho: f64,
    /// True if `rho` came from at least one free variable.
    pub rho_from_free: bool,
    pub iterations: usize,
    /// Final maximal violating-pair gap.
    pub gap: f64,
    /// `1/2 a'Qa + p'a`.
    pub objective: f64,
}

impl SmoProblem<'_> {
    pub(crate) fn len(&self) -> usize {
        self.signs.len()
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> f64 {
        self.scale * self.signs[i] * self.signs[j] * self.gram.get(i, j)
    }

    fn is_upper(&self, alpha: &[f64], i: usize) -> bool {
        alpha[i] >= self.upper[i]
    }

    fn is_lower(alpha: &[f64], i: usize) -> bool {
        alpha[i] <= 0.0
    }

    /// `(m, M')` over `set`: the largest violations in the up and down
    /// directions. The pair gap is their sum.
    fn violations(&self, alpha: &[f64], grad: &[f64], set: &[usize]) -> (f64, f64) {
        let y = self.signs;
        let mut up = f64::NEG_INFINITY;
        let mut down = f64::NEG_INFINITY;
        for &t in set {
            if y[t] > 0.0 {
                if !self.is_upper(alpha, t) {
                    up = up.max(-grad[t]);
                }
                if !Self::is_lower(alpha, t) {
                    down = down.max(grad[t]);
                }
            } else {
                if !self.is_upper(alpha, t) {
                    down = down.max(-grad[t]);
                }
                if !Self::is_lower(alpha, t) {
                    up = up.max(grad[t]);
                }
            }
        }
        (up, down)
    }

    /// Returns `(i, j, gap)` over `set`; `None` for the pair when no
    /// violating pair exists.
    fn select(&self, alpha: &[f64], grad: &[f64], diag: &[f64], set: &[usize]) -> (Option<(usize, usize)>, f64) {
        let y = self.signs;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for &t in set {
            if y[t] > 0.0 {
                if !self.is_upper(alpha, t) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    gmax_idx = Some(t);
                }
            } else if !Self::is_lower(alpha, t) && grad[t] >= gmax {
                gmax = grad[t];
                gmax_idx = Some(t);
            }
        }

        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut obj_diff_min = f64::INFINITY;
        let i = gmax_idx;
        let (qii, ki) = match i {
            Some(i) => (self.scale * diag[i], Some(self.gram.row(i))),
            None => (0.0, None),
        };
        for &j in set {
            let qjj = self.scale * diag[j];
            if y[j] > 0.0 {
                if !Self::is_lower(alpha, j) {
                    let grad_diff = gmax + grad[j];
                    gmax2 = gmax2.max(grad[j]);
                    if let (Some(ki), true) = (ki, grad_diff > 0.0) {
                        // y_i Q_ij with Q_ij = s y_i y_j K_ij and y_j = +1
                        let yq = self.scale * ki[j];
                        let quad = qii + qjj - 2.0 * yq;
                        let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_diff_min {
                            gmin_idx = Some(j);
                            obj_diff_min = obj;
                        }
                    }
                }
            } else if !self.is_upper(alpha, j) {
                let grad_diff = gmax - grad[j];
                gmax2 = gmax2.max(-grad[j]);
                if let (Some(ki), true) = (ki, grad_diff > 0.0) {
                    // y_i Q_ij with y_j = -1
                    let yq = -self.scale * ki[j];
                    let quad = qii + qjj + 2.0 * yq;
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_diff_min {
                        gmin_idx = Some(j);
                        obj_diff_min = obj;
                    }
                }
            }
        }
        let gap = gmax + gmax2;
        match (i, gmin_idx) {
            (Some(i), Some(j)) => (Some((i, j)), gap),
            _ => (None, gap.max(0.0)),
        }
    }

    /// Conjugate gradient on the free variables with the bounded ones held
    /// fixed, restricted to `y'd = 0`. Every step is an exact line search
    /// clipped to the box, so the objective never increases. A variable that
    /// reaches a bound leaves the free set and the iteration restarts.
    /// Returns the variables that moved and their change.
    fn cg_phase(&self, alpha: &mut [f64], grad: &[f64], active: &[usize], tol: f64) -> Vec<(usize, f64)> {
        let y = self.signs;
        let mut free: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&t| alpha[t] > 0.0 && alpha[t] < self.upper[t])
            .collect();
        if free.len() < 3 {
            return Vec::new();
        }
        let touched = free.clone();
        let start: Vec<f64> = touched.iter().map(|&t| alpha[t]).collect();
        let mut g_f: Vec<f64> = free.iter().map(|&t| grad[t]).collect();
        let budget = free.len().max(CG_STEPS);

        let project = |free: &[usize], g: &[f64]| -> Vec<f64> {
            let mean = free.iter().zip(g).map(|(&t, gi)| y[t] * gi).sum::<f64>() / free.len() as f64;
            free.iter().zip(g).map(|(&t, gi)| gi - mean * y[t]).collect()
        };
        let mut r = project(&free, &g_f);
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let mut d: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut q = vec![0.0; free.len()];
        for _ in 0..budget {
            if free.len() < 2 || r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) < 0.1 * tol {
                break;
            }
            // q = Q_FF d
            for (a, &ta) in free.iter().enumerate() {
                let row = self.gram.row(ta);
                let acc: f64 = free.iter().zip(&d).map(|(&tb, db)| row[tb] * y[tb] * db).sum();
                q[a] = self.scale * y[ta] * acc;
            }
            let curv: f64 = d.iter().zip(&q).map(|(u, v)| u * v).sum();
            let slope: f64 = g_f.iter().zip(&d).map(|(u, v)| u * v).sum();
            if curv <= 0.0 || slope >= 0.0 {
                break;
            }
            let mut t = -slope / curv;
            let mut hit = None;
            for (a, &ta) in free.iter().enumerate() {
                let limit = if d[a] > 0.0 {
                    (self.upper[ta] - alpha[ta]) / d[a]
                } else if d[a] < 0.0 {
                    -alpha[ta] / d[a]
                } else {
                    continue;
                };
                if limit < t {
                    t = limit;
                    hit = Some(a);
                }
            }
            for (a, &ta) in free.iter().enumerate() {
                alpha[ta] = (alpha[ta] + t * d[a]).clamp(0.0, self.upper[ta]);
                g_f[a] += t * q[a];
            }
            if let Some(a) = hit {
                let ta = free[a];
                alpha[ta] = if d[a] > 0.0 { self.upper[ta] } else { 0.0 };
                free.remove(a);
                g_f.remove(a);
                q.pop();
                if free.len() < 2 {
                    break;
                }
                r = project(&free, &g_f);
                rr = r.iter().map(|v| v * v).sum();
                d = r.iter().map(|v| -v).collect();
                continue;
            }
            r = project(&free, &g_f);
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for (da, ra) in d.iter_mut().zip(&r) {
                *da = -ra + beta * *da;
            }
        }
        touched
            .iter()
            .zip(&start)
            .filter_map(|(&t, &a0)| (alpha[t] != a0).then_some((t, alpha[t] - a0)))
            .collect()
    }

    fn compute_rho(&self, alpha: &[f64], grad: &[f64]) -> (f64, bool) {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        for i in 0..self.len() {
            let y = self.signs[i];
            let yg = y * grad[i];
            if self.is_upper(alpha, i) {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if Self::is_lower(alpha, i) {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            (sum_free / n_free as f64, true)
        } else if ub.is_finite() && lb.is_finite() {
            ((ub + lb) / 2.0, false)
        } else if ub.is_finite() {
            (ub, false)
        } else {
            (lb, false)
        }
    }
}

/// Working state: `grad` is exact on `active`; `g_bar_k = sum_{j at upper}
/// C_j Q_kj` lets the rest be rebuilt from the free variables alone.
struct State<'p, 'a> {
    problem: &'p SmoProblem<'a>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    g_bar: Vec<f64>,
    active: Vec<usize>,
}

impl State<'_, '_> {
    /// Moves `alpha[t]` by `delta`, updating the gradient on the active set
    /// and `g_bar` if `t` enters or leaves its upper bound.
    fn apply(&mut self, t: usize, old: f64) {
        let p = self.problem;
        let (y, c) = (p.signs, p.upper);
        let delta = self.alpha[t] - old;
        if delta == 0.0 {
            return;
        }
        let row = p.gram.row(t);
        let f = p.scale * y[t] * delta;
        for &k in &self.active {
            self.grad[k] += y[k] * row[k] * f;
        }
        let was_upper = old >= c[t];
        let is_upper = self.alpha[t] >= c[t];
        if was_upper != is_upper {
            let f = p.scale * y[t] * if is_upper { c[t] } else { -c[t] };
            for (k, gb) in self.g_bar.iter_mut().enumerate() {
                *gb += y[k] * row[k] * f;
            }
        }
    }

    /// Rebuilds the gradient of inactive variables and activates all.
    fn unshrink(&mut self) {
        let p = self.problem;
        let n = p.len();
        if self.active.len() == n {
            return;
        }
        let mut is_active = vec![false; n];
        for &t in &self.active {
            is_active[t] = true;
        }
        let inactive: Vec<usize> = (0..n).filter(|&k| !is_active[k]).collect();
        let y = p.signs;
        for &k in &inactive {
            self.grad[k] = self.g_bar[k] + p.linear[k];
        }
        for &j in &self.active {
            let a = self.alpha[j];
            if a > 0.0 && a < p.upper[j] {
                let row = p.gram.row(j);
                let f = p.scale * y[j] * a;
                for &k in &inactive {
                    self.grad[k] += y[k] * row[k] * f;
                }
            }
        }
        self.active = (0..n).collect();
    }

    /// Drops bounded variables that cannot take part in a violating pair.
    fn shrink(&mut self, tol: f64, unshrunk: &mut bool) {
        let p = self.problem;
        let (up, down) = p.violations(&self.alpha, &self.grad, &self.active);
        if !*unshrunk && up + down <= 10.0 * tol {
            *unshrunk = true;
            self.unshrink();
        }
        let y = p.signs;
        let (alpha, grad) = (&self.alpha, &self.grad);
        self.active.retain(|&t| {
            let g = grad[t];
            if p.is_upper(alpha, t) {
                !(if y[t] > 0.0 { -g > up } else { -g > down })
            } else if SmoProblem::is_lower(alpha, t) {
                !(if y[t] > 0.0 { g > down } else { g > up })
            } else {
                true
            }
        });
    }
}

pub(crate) fn solve(problem: &SmoProblem<'_>, alpha: Vec<f64>, tol: f64, max_iter: usize) -> Result<SmoSolution> {
    solve_from(problem, alpha, tol, max_iter, problem.len() >= IPM_MIN_SIZE)
}

fn solve_from(
    problem: &SmoProblem<'_>,
    mut alpha: Vec<f64>,
    tol: f64,
    max_iter: usize,
    warm: bool,
) -> Result<SmoSolution> {
    let n = problem.len();
    debug_assert_eq!(alpha.len(), n);
    if warm {
        let target: f64 = alpha.iter().zip(problem.signs).map(|(a, y)| a * y).sum();
        if let Some(start) = super::ipm::warm_start(problem, target) {
            alpha = start;
        }
    }
    let y = problem.signs;
    let c = problem.upper;
    let diag = problem.gram.diag();

    let mut grad = problem.linear.to_vec();
    let mut g_bar = vec![0.0; n];
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            let kj = problem.gram.row(j);
            let at_upper = aj >= c[j];
            for k in 0..n {
                let q = problem.scale * y[k] * y[j] * kj[k];
                grad[k] += q * aj;
                if at_upper {
                    g_bar[k] += q * c[j];
                }
            }
        }
    }
    let mut st = State {
        problem,
        alpha,
        grad,
        g_bar,
        active: (0..n).collect(),
    };

    let shrink_every = n.clamp(1, 1000);
    let cg_every = n.max(CG_EVERY_MIN);
    let mut counter = shrink_every;
    let mut unshrunk = false;
    let mut iterations = 0;
    let gap = loop {
        counter -= 1;
        if counter == 0 {
            counter = shrink_every;
            st.shrink(tol, &mut unshrunk);
        }
        let (mut pair, mut gap) = problem.select(&st.alpha, &st.grad, &diag, &st.active);
        if pair.is_none() || gap < tol {
            // Converged on the working set: check the full problem.
            st.unshrink();
            (pair, gap) = problem.select(&st.alpha, &st.grad, &diag, &st.active);
            counter = 1;
        }
        let Some((i, j)) = pair else { break gap };
        if gap < tol {
            break gap;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                solver: "smo",
                iterations,
                residual: gap,
            });
        }
        iterations += 1;
        if iterations % cg_every == 0 {
            for (t, delta) in problem.cg_phase(&mut st.alpha, &st.grad, &st.active, tol) {
                st.apply(t, st.alpha[t] - delta);
            }
        }

        let alpha = &mut st.alpha;
        let grad = &st.grad;
        let qii = problem.scale * diag[i];
        let qjj = problem.scale * diag[j];
        let qij = problem.q(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (c[i], c[j]);

        if y[i] != y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        st.apply(i, old_i);
        st.apply(j, old_j);
    };

    let State { alpha, grad, .. } = st;
    let (rho, rho_from_free) = problem.compute_rho(&alpha, &grad);
    let objective = 0.5
        * alpha
            .iter()
            .zip(&grad)
            .zip(problem.linear)
            .map(|((a, g), p)| a * (g + p))
            .sum::<f64>();
    Ok(SmoSolution {
        alpha,
        gradient: grad,
        rho,
        rho_from_free,
        iterations,
        gap,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::test_util::blobs;
    use crate::kernels::{gram, KernelSpec};
    use crate::par::Execution;

    /// SVDD-shaped problem on 600 points with a smooth kernel.
    fn check_warm_start_agrees(c_safe: f64, c_unsafe: f64) {
        let data = blobs(600, 2, 9);
        let k = gram(
            &KernelSpec::Gaussian { gamma: 0.3 },
            data.points(),
            Execution::Sequential,
        )
        .unwrap();
        let signs: Vec<f64> = data.labels().iter().map(|y| y.sign()).collect();
        let upper: Vec<f64> = signs.iter().map(|&y| if y > 0.0 { c_safe } else { c_unsafe }).collect();
        let linear: Vec<f64> = signs.iter().map(|y| -y).collect();
        let problem = SmoProblem {
            gram: &k,
            signs: &signs,
            scale: 4.0,
            linear: &linear,
            upper: &upper,
        };
        let mut start = vec![0.0; 600];
        let mut left = 0.5;
        for (a, (&y, &c)) in start.iter_mut().zip(signs.iter().zip(&upper)) {
            if y > 0.0 && left > 0.0 {
                *a = c.min(left);
                left -= *a;
            }
        }
        let cold = solve_from(&problem, start.clone(), 1e-6, usize::MAX, false).unwrap();
        let warm = solve_from(&problem, start, 1e-6, usize::MAX, true).unwrap();
        assert!(cold.gap < 1e-6 && warm.gap < 1e-6);
        assert!(
            (cold.objective - warm.objective).abs() < 1e-6,
            "{} {}",
            cold.objective,
            warm.objective
        );
        let eq: f64 = warm.alpha.iter().zip(&signs).map(|(a, y)| a * y).sum();
        assert!((eq - 0.5).abs() < 1e-12);
        assert!(warm.alpha.iter().zip(&upper).all(|(a, c)| *a >= 0.0 && a <= c));
    }

    #[test]
    fn interior_point_start_reaches_the_same_optimum() {
        check_warm_start_agrees(0.5, 0.5);
        check_warm_start_agrees(0.09, 0.01);
    }
}
