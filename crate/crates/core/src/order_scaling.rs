//! Order statistics, binomial tails and probabilistic scaling.
//!
//! A trained scalable classifier is turned into a certified safety region by
//! picking the scaling level `rho_eps` as the `r`-th largest boundary radius
//! among the unsafe calibration samples. When `Bin(r-1; n_c, eps) <= delta`,
//! the probability of drawing an unsafe point inside the region is at most
//! `eps` with confidence at least `1 - delta`.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::classifiers::ScalableClassifier;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};

/// The `r`-th largest element of `values` (duplicates counted with multiplicity).
pub fn generalized_max(values: &[f64], r: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("generalized max of an empty list"));
    }
    if r == 0 || r > values.len() {
        return Err(Error::arg(format!(
            "discarding index r = {r} outside 1..={}",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("generalized max of a list containing NaN"));
    }
    let mut buf = values.to_vec();
    let (_, nth, _) = buf.select_nth_unstable_by(r - 1, |a, b| b.total_cmp(a));
    Ok(*nth)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// Neumaier compensated accumulator.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Binomial CDF `Bin(k; n, eps) = sum_{i<=k} C(n,i) eps^i (1-eps)^(n-i)`.
///
/// `k = -1` yields 0. Terms are generated by the ratio recurrence in log space
/// and summed relative to the largest included term, so the result stays
/// finite for large `n` where factorials or `(1-eps)^n` would under/overflow.
pub fn binomial_cdf(k: i64, n: u64, eps: f64) -> Result<f64> {
    check_unit("eps", eps)?;
    if k < -1 {
        return Err(Error::arg(format!("binomial cdf index k = {k} < -1")));
    }
    if k > n as i64 {
        return Err(Error::arg(format!("binomial cdf index k = {k} > n = {n}")));
    }
    if k < 0 {
        return Ok(0.0);
    }
    let k = k as u64;
    if k == n {
        return Ok(1.0);
    }

    let ln_odds = eps.ln() - (-eps).ln_1p();
    let mut log_term = CompensatedSum::default();
    log_term.add(n as f64 * (-eps).ln_1p());
    let mut logs = Vec::with_capacity(k as usize + 1);
    logs.push(log_term.value());
    for i in 0..k {
        log_term.add(((n - i) as f64 / (i + 1) as f64).ln());
        log_term.add(ln_odds);
        logs.push(log_term.value());
    }

    let reference = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = CompensatedSum::default();
    for &l in &logs {
        acc.add((l - reference).exp());
    }
    let value = (reference + acc.value().ln()).exp();
    Ok(value.clamp(0.0, 1.0))
}

/// `kappa(beta) = ((sqrt(beta) + sqrt(2 - beta)) / (sqrt(2) (1 - beta)))^2`.
pub fn kappa(beta: f64) -> Result<f64> {
    check_unit("beta", beta)?;
    let num = beta.sqrt() + (2.0 - beta).sqrt();
    let den = std::f64::consts::SQRT_2 * (1.0 - beta);
    Ok((num / den).powi(2))
}

/// Rounded constant commonly quoted for `kappa(0.5)`.
pub const KAPPA_HALF_ROUNDED: f64 = 7.47;

/// Smallest `n` with `n >= kappa(beta) / eps * ln(1/delta)`.
pub fn min_calibration_size(eps: f64, delta: f64, beta: f64) -> Result<usize> {
    check_unit("eps", eps)?;
    check_unit("delta", delta)?;
    min_calibration_size_with_kappa(kappa(beta)?, eps, delta)
}

/// Same bound with an explicit constant, e.g. [`KAPPA_HALF_ROUNDED`].
pub fn min_calibration_size_with_kappa(kappa: f64, eps: f64, delta: f64) -> Result<usize> {
    check_unit("eps", eps)?;
    check_unit("delta", delta)?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::arg(format!("kappa = {kappa} must be positive")));
    }
    Ok(((kappa / eps) * (1.0 / delta).ln()).ceil().max(1.0) as usize)
}

/// Smallest `n` whose derived plan `r = ceil(beta eps n)` satisfies
/// `Bin(r-1; n, eps) <= delta`, found by direct search.
///
/// This is never larger than [`min_calibration_size`].
pub fn min_calibration_size_exact(eps: f64, delta: f64, beta: f64) -> Result<usize> {
    let upper = min_calibration_size(eps, delta, beta)?;
    for n in 1..=upper {
        let r = discarding_parameter(beta, eps, n)?;
        if binomial_cdf(r as i64 - 1, n as u64, eps)? <= delta {
            return Ok(n);
        }
    }
    Ok(upper)
}

/// `r = ceil(beta eps n)`, at least 1.
pub fn discarding_parameter(beta: f64, eps: f64, n: usize) -> Result<usize> {
    check_unit("beta", beta)?;
    check_unit("eps", eps)?;
    if n == 0 {
        return Err(Error::arg("calibration size must be positive"));
    }
    // beta*eps*n is computed in floating point; trim representation noise so
    // an exact integer product is not pushed up by one.
    let x = beta * eps * n as f64;
    let r = (x - x * 1e-12).ceil() as usize;
    Ok(r.clamp(1, n))
}

/// Parameters of a probabilistic scaling run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub eps: f64,
    pub delta: f64,
    pub r: usize,
    pub n_c: usize,
    pub beta: f64,
}

impl ScalingPlan {
    pub fn new(eps: f64, delta: f64, r: usize, n_c: usize, beta: f64) -> Result<Self> {
        check_unit("eps", eps)?;
        check_unit("delta", delta)?;
        check_unit("beta", beta)?;
        if n_c == 0 || r == 0 || r > n_c {
            return Err(Error::arg(format!(
                "plan requires 1 <= r <= n_c (got r = {r}, n_c = {n_c})"
            )));
        }
        Ok(Self {
            eps,
            delta,
            r,
            n_c,
            beta,
        })
    }

    /// Plan for a given calibration size with `r = ceil(beta eps n_c)`.
    pub fn with_size(eps: f64, delta: f64, beta: f64, n_c: usize) -> Result<Self> {
        let r = discarding_parameter(beta, eps, n_c)?;
        Self::new(eps, delta, r, n_c, beta)
    }

    /// Plan sized by the explicit sample-complexity bound.
    pub fn from_bound(eps: f64, delta: f64, beta: f64) -> Result<Self> {
        let n_c = min_calibration_size(eps, delta, beta)?;
        Self::with_size(eps, delta, beta, n_c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanCheck {
    pub certified: bool,
    /// `Bin(r-1; n_c, eps)`.
    pub tail: f64,
}

pub fn check_plan(plan: &ScalingPlan) -> PlanCheck {
    // Validated at construction, so the cdf cannot fail here.
    let tail = binomial_cdf(plan.r as i64 - 1, plan.n_c as u64, plan.eps)
        .expect("plan parameters are validated on construction");
    PlanCheck {
        certified: tail <= plan.delta,
        tail,
    }
}

/// Safety region produced by calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// `{x : rho_bar(x) > rho_eps}`.
    Scaled { rho_eps: f64 },
    /// Too few unsafe calibration points: the whole input space.
    WholeSpace,
}

impl Region {
    pub fn contains_radius(&self, rho_bar: f64) -> bool {
        match *self {
            Region::Scaled { rho_eps } => rho_bar > rho_eps,
            Region::WholeSpace => true,
        }
    }

    pub fn contains<C: ScalableClassifier + ?Sized>(&self, model: &C, x: &[f64]) -> bool {
        match *self {
            Region::Scaled { rho_eps } => model.decision_value(x, rho_eps) < 0.0,
            Region::WholeSpace => true,
        }
    }

    pub fn rho_eps(&self) -> Option<f64> {
        match *self {
            Region::Scaled { rho_eps } => Some(rho_eps),
            Region::WholeSpace => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Region::Scaled { .. } => "scaled",
            Region::WholeSpace => "whole_space",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Scaled { rho_eps } => write!(f, "{rho_eps}"),
            Region::WholeSpace => f.write_str("whole_space"),
        }
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Region::Scaled { rho_eps } => s.serialize_f64(rho_eps),
            Region::WholeSpace => s.serialize_str("whole_space"),
        }
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RegionVisitor;
        impl Visitor<'_> for RegionVisitor {
            type Value = Region;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"whole_space\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Region, E> {
                Ok(Region::Scaled { rho_eps: v })
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Region, E> {
                Ok(Region::Scaled { rho_eps: v as f64 })
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Region, E> {
                Ok(Region::Scaled { rho_eps: v as f64 })
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Region, E> {
                if v == "whole_space" {
                    Ok(Region::WholeSpace)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(RegionVisitor)
    }
}

/// Outcome of probabilistic scaling, flattened for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCertificate {
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub r: usize,
    pub n_c: usize,
    pub n_u: usize,
    #[serde(rename = "rho_eps")]
    pub region: Region,
    /// `Bin(r-1; n_c, eps)`.
    pub tail: f64,
    /// Number of candidate models sharing the calibration set.
    pub family_size: usize,
    /// `max(0, 1 - family_size * tail)`.
    pub confidence: f64,
    pub certified: bool,
}

impl CalibrationCertificate {
    pub fn plan(&self) -> ScalingPlan {
        ScalingPlan {
            eps: self.eps,
            delta: self.delta,
            r: self.r,
            n_c: self.n_c,
            beta: self.beta,
        }
    }

    /// Same region, confidence reported for a family of `m` candidates.
    pub fn for_family(&self, m: usize) -> Self {
        let m = m.max(1);
        Self {
            family_size: m,
            confidence: (1.0 - m as f64 * self.tail).clamp(0.0, 1.0),
            ..self.clone()
        }
    }

    pub fn contains_radius(&self, rho_bar: f64) -> bool {
        self.region.contains_radius(rho_bar)
    }
}

/// Core of the scaling step, given the boundary radii of the unsafe calibration points.
///
/// `force` accepts a plan that fails the binomial check; the certificate is
/// then marked uncertified.
pub fn calibrate_radii(unsafe_radii: &[f64], plan: &ScalingPlan, force: bool) -> Result<CalibrationCertificate> {
    let check = check_plan(plan);
    if !check.certified && !force {
        return Err(Error::Uncertified {
            eps: plan.eps,
            delta: plan.delta,
            r: plan.r,
            n_c: plan.n_c,
            tail: check.tail,
            min_n_c: min_calibration_size(plan.eps, plan.delta, 0.5)?,
        });
    }
    if unsafe_radii.len() > plan.n_c {
        return Err(Error::arg(format!(
            "{} unsafe radii exceed calibration size {}",
            unsafe_radii.len(),
            plan.n_c
        )));
    }
    let region = if unsafe_radii.len() >= plan.r {
        Region::Scaled {
            rho_eps: generalized_max(unsafe_radii, plan.r)?,
        }
    } else {
        Region::WholeSpace
    };
    Ok(CalibrationCertificate {
        eps: plan.eps,
        delta: plan.delta,
        beta: plan.beta,
        r: plan.r,
        n_c: plan.n_c,
        n_u: unsafe_radii.len(),
        region,
        tail: check.tail,
        family_size: 1,
        confidence: (1.0 - check.tail).clamp(0.0, 1.0),
        certified: check.certified,
    })
}

/// Probabilistic scaling of `model` on the calibration set `calib`.
pub fn calibrate<C: ScalableClassifier + ?Sized>(
    model: &C,
    calib: &Dataset,
    plan: &ScalingPlan,
    force: bool,
) -> Result<CalibrationCertificate> {
    if calib.len() != plan.n_c {
        return Err(Error::arg(format!(
            "calibration set has {} samples but the plan expects n_c = {}",
            calib.len(),
            plan.n_c
        )));
    }
    let radii: Vec<f64> = calib
        .iter()
        .filter(|(_, y)| *y == Label::Unsafe)
        .map(|(x, _)| model.boundary_radius(x))
        .collect();
    calibrate_radii(&radii, plan, force)
}
