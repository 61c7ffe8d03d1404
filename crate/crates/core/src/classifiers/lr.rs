//! SC-LR: `f(x, rho) = 1/2 - 1/(1 + exp(s(x) - b + rho))` with
//! `s(x) = sum_i beta_i k(x_i, x)`.
//!
//! Training minimizes
//! `L(beta, b) = beta'K beta / (2 eta) + 1/2 sum_i c_i log(1 + exp(y_i ((K beta)_i - b)))`
//! with `c_i = (1 - 2 tau) y_i + 1` by Newton's method with Armijo
//! backtracking. With `H` the diagonal of loss curvatures and
//! `D = (eta H)^-1`, each Newton step reduces to two solves with `K + D`,
//! done by conjugate gradients preconditioned with `L L' + D`, where `L` is a
//! pivoted Cholesky factor of `K` (exact when `K` is numerically low-rank).

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use super::ipm::leading_factor;
use super::{check_training, Hyperparameters, KernelExpansion, ScalableClassifier, TrainingDiagnostics};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{dot, gram, GramMatrix};
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrOptions {
    /// Stop when the gradient infinity norm is at most this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub armijo: f64,
    /// Keep the loss after every accepted step.
    pub record_trace: bool,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 200,
            armijo: 1e-4,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub hyperparameters: Hyperparameters,
    /// Representer expansion with coefficients `beta_i`.
    pub expansion: KernelExpansion,
    pub offset: f64,
    pub diagnostics: TrainingDiagnostics,
}

/// `1/2 - 1/(1 + e^t)`, written as `tanh(t/2)/2` to keep precision near zero.
#[inline]
pub fn link(t: f64) -> f64 {
    0.5 * (0.5 * t).tanh()
}

impl LrModel {
    #[inline]
    pub(crate) fn prelink(&self, s: f64) -> f64 {
        s - self.offset
    }

    /// Logit at `rho = 0`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.prelink(self.expansion.eval(x))
    }
}

impl ScalableClassifier for LrModel {
    fn boundary_radius(&self, x: &[f64]) -> f64 {
        -self.logit(x)
    }

    fn decision_value(&self, x: &[f64], rho: f64) -> f64 {
        link(self.logit(x) + rho)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct Objective<'a> {
    gram: &'a GramMatrix,
    y: Vec<f64>,
    c: Vec<f64>,
    eta: f64,
}

impl Objective<'_> {
    /// Loss from `beta`, `z = K beta` and `b`.
    fn loss(&self, beta: &[f64], z: &[f64], b: f64) -> f64 {
        let data: f64 = z
            .iter()
            .zip(&self.y)
            .zip(&self.c)
            .map(|((zi, yi), ci)| ci * softplus(yi * (zi - b)))
            .sum();
        dot(beta, z) / (2.0 * self.eta) + 0.5 * data
    }

    /// `g_i = dL/dz_i` (data term only).
    fn data_grad(&self, z: &[f64], b: f64) -> Vec<f64> {
        z.iter()
            .zip(&self.y)
            .zip(&self.c)
            .map(|((zi, yi), ci)| 0.5 * ci * yi * sigmoid(yi * (zi - b)))
            .collect()
    }

    /// Returns `(u, K u, dL/db)` with `u = beta/eta + g`; the beta gradient is `K u`.
    fn gradient(&self, beta: &[f64], z: &[f64], b: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let g = self.data_grad(z, b);
        let gb = -g.iter().sum::<f64>();
        let u: Vec<f64> = beta.iter().zip(&g).map(|(bi, gi)| bi / self.eta + gi).collect();
        let mut ku = vec![0.0; u.len()];
        self.gram.mul_vec(&u, &mut ku);
        (u, ku, gb)
    }
}

/// Curvatures below this are raised to it so `D = (eta H)^-1` stays finite.
const H_FLOOR: f64 = 1e-12;
const CG_MAX_ITER: usize = 500;

/// `(L L' + D)^-1` by the Woodbury identity, or `(diag K + D)^-1` without a factor.
struct Preconditioner<'a> {
    l: Option<&'a DMatrix<f64>>,
    /// `D^-1`.
    dinv: Vec<f64>,
    jacobi: Vec<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl<'a> Preconditioner<'a> {
    fn new(l: Option<&'a DMatrix<f64>>, diag: &[f64], dinv: Vec<f64>) -> Self {
        let chol = l.and_then(|l| {
            let mut dl = l.clone();
            for (mut row, d) in dl.row_iter_mut().zip(&dinv) {
                row *= *d;
            }
            let mut m = l.tr_mul(&dl);
            for k in 0..m.nrows() {
                m[(k, k)] += 1.0;
            }
            m.cholesky()
        });
        let jacobi = diag.iter().zip(&dinv).map(|(k, di)| di / (1.0 + k * di)).collect();
        Self { l, dinv, jacobi, chol }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match (self.l, &self.chol) {
            (Some(l), Some(chol)) => {
                let dx: Vec<f64> = x.iter().zip(&self.dinv).map(|(xi, di)| xi * di).collect();
                let t = chol.solve(&l.tr_mul(&DVector::from_column_slice(&dx)));
                let lt = l * t;
                dx.iter()
                    .zip(&self.dinv)
                    .zip(lt.iter())
                    .map(|((v, di), w)| v - di * w)
                    .collect()
            }
            _ => x.iter().zip(&self.jacobi).map(|(xi, j)| xi * j).collect(),
        }
    }
}

/// Preconditioned conjugate gradients for `(K + D) x = rhs`, stopped at
/// relative residual `rtol`.
fn pcg(gram: &GramMatrix, d: &[f64], pre: &Preconditioner<'_>, rhs: &[f64], rtol: f64) -> Vec<f64> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let target = rtol * dot(rhs, rhs).sqrt();
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..CG_MAX_ITER {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        gram.mul_vec(&p, &mut ap);
        for i in 0..n {
            ap[i] += d[i] * p[i];
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = pre.apply(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

/// Newton direction `(d_beta, d_b)` at the current point; `u = beta/eta + g`.
fn newton_direction(
    obj: &Objective<'_>,
    factor: Option<&DMatrix<f64>>,
    diag: &[f64],
    z: &[f64],
    b: f64,
    u: &[f64],
    rtol: f64,
) -> (Vec<f64>, f64) {
    let n = z.len();
    let g = obj.data_grad(z, b);
    let h: Vec<f64> = (0..n)
        .map(|i| {
            let s = sigmoid(obj.y[i] * (z[i] - b));
            (0.5 * obj.c[i] * s * (1.0 - s)).max(H_FLOOR)
        })
        .collect();
    let dinv: Vec<f64> = h.iter().map(|hi| obj.eta * hi).collect();
    let d: Vec<f64> = dinv.iter().map(|v| 1.0 / v).collect();
    let pre = Preconditioner::new(factor, diag, dinv);
    // (K + D) d_beta - 1 d_b = -H^-1 u, and the offset row eliminated through
    // x2 = (K + D)^-1 1.
    let rhs: Vec<f64> = u.iter().zip(&h).map(|(ui, hi)| -ui / hi).collect();
    let x1 = pcg(obj.gram, &d, &pre, &rhs, rtol);
    let x2 = pcg(obj.gram, &d, &pre, &vec![1.0; n], rtol);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let db = (sum(&g) - sum(u) - sum(&x1) / obj.eta) / (sum(&x2) / obj.eta);
    let dbeta = x1.iter().zip(&x2).map(|(a, c)| a + db * c).collect();
    (dbeta, db)
}

fn inf_norm(v: &[f64], extra: f64) -> f64 {
    v.iter().fold(extra.abs(), |m, x| m.max(x.abs()))
}

fn objective<'a>(train: &Dataset, hp: &Hyperparameters, gram: &'a GramMatrix) -> Objective<'a> {
    Objective {
        gram,
        y: train.labels().iter().map(|y| y.sign()).collect(),
        c: train.labels().iter().map(|&y| hp.loss_weight(y)).collect(),
        eta: hp.eta,
    }
}

/// Training loss and its gradient `(L, dL/dbeta, dL/db)` at `(beta, b)`.
pub fn lr_loss_and_gradient(
    train: &Dataset,
    hp: &Hyperparameters,
    beta: &[f64],
    b: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    hp.validate()?;
    if beta.len() != train.len() {
        return Err(Error::arg("beta must have one entry per training point"));
    }
    let k = gram(&hp.kernel, train.points(), Execution::Sequential)?;
    let obj = objective(train, hp, &k);
    let mut z = vec![0.0; beta.len()];
    k.mul_vec(beta, &mut z);
    let (_, ku, gb) = obj.gradient(beta, &z, b);
    Ok((obj.loss(beta, &z, b), ku, gb))
}

pub fn train_sc_lr(train: &Dataset, hp: &Hyperparameters, opts: &LrOptions) -> Result<LrModel> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let k = gram(&hp.kernel, train.points(), Execution::default())?;
    train_with_gram(train, hp, &k, opts)
}

pub(crate) fn train_with_gram(
    train: &Dataset,
    hp: &Hyperparameters,
    gram: &GramMatrix,
    opts: &LrOptions,
) -> Result<LrModel> {
    let n = check_training(train, hp, gram)?;
    if !train.has_both_labels() {
        return Err(Error::Training("SC-LR needs both labels in the training set".into()));
    }
    let obj = objective(train, hp, gram);
    // Scaling of the offset step relative to the beta step in the fallback
    // gradient direction.
    let sb = 4.0 / (hp.eta * obj.c.iter().sum::<f64>());
    let factor = leading_factor(gram);
    let diag = gram.diag();

    let mut beta = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut b = 0.0;
    let mut loss = obj.loss(&beta, &z, b);
    let (mut u, mut ku, mut gb) = obj.gradient(&beta, &z, b);
    let mut gnorm = inf_norm(&ku, gb);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(loss);
    }
    let mut iterations = 0;
    let mut kd = vec![0.0; n];

    while gnorm > opts.tolerance {
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                solver: "sc-lr",
                iterations,
                residual: gnorm,
            });
        }
        iterations += 1;

        let rtol = gnorm.sqrt().clamp(1e-12, 1e-2);
        let (mut dbeta, mut db) = newton_direction(&obj, factor.as_ref(), &diag, &z, b, &u, rtol);
        // Slope along (dbeta, db) is grad' d = (K u)' dbeta + gb db.
        let mut slope = dot(&ku, &dbeta) + gb * db;
        if !(slope < 0.0) {
            dbeta = u.iter().map(|v| -v).collect();
            db = -sb * gb;
            slope = dot(&ku, &dbeta) + gb * db;
        }
        gram.mul_vec(&dbeta, &mut kd);
        let mut t = 1.0;
        let accepted = loop {
            let beta_t: Vec<f64> = beta.iter().zip(&dbeta).map(|(x, d)| x + t * d).collect();
            let z_t: Vec<f64> = z.iter().zip(&kd).map(|(x, d)| x + t * d).collect();
            let b_t = b + t * db;
            let loss_t = obj.loss(&beta_t, &z_t, b_t);
            if loss_t <= loss + opts.armijo * t * slope {
                break Some((beta_t, z_t, b_t, loss_t, None));
            }
            // Near the optimum the decrease drops below rounding in the loss;
            // accept a step that is flat to rounding and lowers the gradient.
            if loss_t - loss <= 8.0 * f64::EPSILON * loss.abs() {
                let g_t = obj.gradient(&beta_t, &z_t, b_t);
                if inf_norm(&g_t.1, g_t.2) < gnorm {
                    break Some((beta_t, z_t, b_t, loss_t.min(loss), Some(g_t)));
                }
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some((beta_t, z_t, b_t, loss_t, grad_t)) = accepted else {
            return Err(Error::NotConverged {
                solver: "sc-lr",
                iterations,
                residual: gnorm,
            });
        };
        (u, ku, gb) = grad_t.unwrap_or_else(|| obj.gradient(&beta_t, &z_t, b_t));
        beta = beta_t;
        z = z_t;
        b = b_t;
        loss = loss_t;
        gnorm = inf_norm(&ku, gb);
        if opts.record_trace {
            trace.push(loss);
        }
    }

    let expansion = KernelExpansion::from_training(hp.kernel, train, &beta, |i| beta[i] != 0.0);
    Ok(LrModel {
        hyperparameters: *hp,
        expansion,
        offset: b,
        diagnostics: TrainingDiagnostics {
            iterations,
            residual: gnorm,
            objective: loss,
            flags: Vec::new(),
            loss_trace: trace,
        },
    })
}
