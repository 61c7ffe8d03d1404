//! Reference implementations shared by the integration tests. They are
//! deliberately naive and share no code with the library.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// `exp(-gamma |x - y|^2)`, or `x . y` when `gamma` is `None`.
pub fn kernel(gamma: Option<f64>, x: &[f64], y: &[f64]) -> f64 {
    match gamma {
        None => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        Some(g) => (-g * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
    }
}

/// `min 1/2 a'Qa + p'a  s.t.  y'a = t, 0 <= a <= c` with `y_i = +-1`.
pub struct BoxQp {
    pub q: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
    pub t: f64,
}

impl BoxQp {
    pub fn objective(&self, a: &[f64]) -> f64 {
        let n = a.len();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += 0.5 * a[i] * self.q[i][j] * a[j];
            }
            v += self.p[i] * a[i];
        }
        v
    }

    pub fn gradient(&self, a: &[f64]) -> Vec<f64> {
        (0..a.len())
            .map(|i| self.q[i].iter().zip(a).map(|(q, x)| q * x).sum::<f64>() + self.p[i])
            .collect()
    }

    /// Euclidean projection onto the feasible set: `a_i = clamp(v_i + lam y_i)`
    /// with `lam` found by bisection on the monotone map `lam -> y'a(lam)`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |lam: f64| -> Vec<f64> {
            v.iter()
                .zip(&self.y)
                .zip(&self.c)
                .map(|((vi, yi), ci)| (vi + lam * yi).clamp(0.0, *ci))
                .collect()
        };
        let sum = |a: &[f64]| a.iter().zip(&self.y).map(|(x, y)| x * y).sum::<f64>();
        let bound = v.iter().chain(&self.c).fold(1.0f64, |m, x| m.max(x.abs())) * 4.0 + self.t.abs();
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum(&at(mid)) < self.t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    /// Accelerated projected gradient with adaptive restart.
    pub fn solve(&self, iterations: usize) -> Vec<f64> {
        let n = self.p.len();
        // Gershgorin bound on the largest eigenvalue.
        let l = self
            .q
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(1e-12, f64::max);
        let mut a = self.project(&vec![0.0; n]);
        let mut z = a.clone();
        let mut t = 1.0f64;
        for _ in 0..iterations {
            let g = self.gradient(&z);
            let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / l).collect();
            let next = self.project(&step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if self.objective(&next) > self.objective(&a) {
                z = a.clone();
                t = 1.0;
                continue;
            }
            let mom = (t - 1.0) / t_next;
            z = next.iter().zip(&a).map(|(x, y)| x + mom * (x - y)).collect();
            a = next;
            t = t_next;
        }
        a
    }

    /// Maximal violating-pair gap of the KKT conditions at a feasible `a`.
    pub fn kkt_gap(&self, a: &[f64]) -> f64 {
        let g = self.gradient(a);
        let mut up = f64::NEG_INFINITY;
        let mut low = f64::INFINITY;
        for i in 0..a.len() {
            let v = -self.y[i] * g[i];
            let at_upper = a[i] >= self.c[i];
            let at_lower = a[i] <= 0.0;
            // Directions that increase y'a: raise y=+1 below C, lower y=-1 above 0.
            let can_up = if self.y[i] > 0.0 { !at_upper } else { !at_lower };
            let can_down = if self.y[i] > 0.0 { !at_lower } else { !at_upper };
            if can_up {
                up = up.max(v);
            }
            if can_down {
                low = low.min(v);
            }
        }
        (up - low).max(0.0)
    }

    pub fn infeasibility(&self, a: &[f64]) -> f64 {
        let eq = (a.iter().zip(&self.y).map(|(x, y)| x * y).sum::<f64>() - self.t).abs();
        a.iter()
            .zip(&self.c)
            .map(|(x, c)| (-x).max(x - c).max(0.0))
            .fold(eq, f64::max)
    }
}

/// `Bin(k; n, eps)` evaluated exactly over the rationals, `eps` taken as the
/// exact value of its binary representation.
pub fn binomial_cdf_exact(k: i64, n: u64, eps: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let p = BigRational::from_float(eps).expect("finite eps");
    let q = BigRational::one() - &p;
    let mut total = BigRational::zero();
    let mut binom = BigInt::one();
    for i in 0..=(k as u64).min(n) {
        if i > 0 {
            binom = binom * BigInt::from(n - i + 1) / BigInt::from(i);
        }
        let term = BigRational::from_integer(binom.clone()) * pow(&p, i) * pow(&q, n - i);
        total += term;
    }
    total.to_f64().expect("representable")
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    let mut r = BigRational::one();
    for _ in 0..e {
        r *= x;
    }
    r
}

/// Binomial standard deviation of a frequency estimate from `n` draws.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
