//! Simplified longitudinal platoon braking simulator.
//!
//! Vehicle `l` follows `dv_l/dt = (F_l - (a_l + b_l v_l^2)) / m_l` and the gap to
//! its predecessor follows `dd_l/dt = v_{l-1} - v_l`. The platoon starts in
//! steady state (common speed and spacing, followers applying the force that
//! balances resistance). At `t = 0` the leader brakes with `F0`; each follower
//! switches to `gain * F0` once the braking notification reaches it, after a
//! fixed delay plus one retransmission interval per lost packet. Speeds are
//! clamped at zero. The run is labeled unsafe if any gap drops to the
//! collision threshold.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Provenance};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Largest platoon size handled; shorter platoons are zero-padded in the features.
pub const MAX_VEHICLES: usize = 9;

/// Feature vector length: `[N, d0, v0, a0, F0, m_0..m_8, delay, per, gain]`.
pub const FEATURE_DIM: usize = 5 + MAX_VEHICLES + 3;

const KMH: f64 = 1.0 / 3.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatoonRanges {
    pub followers: (usize, usize),
    pub spacing_m: (f64, f64),
    pub speed_kmh: (f64, f64),
    pub leader_force_n: (f64, f64),
    pub mass_kg: (f64, f64),
    pub delay_s: (f64, f64),
    pub packet_error_rate: (f64, f64),
    pub gain: (f64, f64),
    pub rolling_n: f64,
    pub drag: f64,
    pub dt: f64,
    pub horizon_s: f64,
    pub collision_threshold_m: f64,
    pub retransmit_interval_s: f64,
}

impl Default for PlatoonRanges {
    fn default() -> Self {
        Self {
            followers: (3, 8),
            spacing_m: (4.0, 9.0),
            speed_kmh: (10.0, 90.0),
            leader_force_n: (-8000.0, -1000.0),
            mass_kg: (1000.0, 2000.0),
            delay_s: (0.0, 0.5),
            packet_error_rate: (0.0, 0.5),
            gain: (0.8, 1.2),
            rolling_n: 100.0,
            drag: 0.5,
            dt: 0.01,
            horizon_s: 30.0,
            collision_threshold_m: 2.0,
            retransmit_interval_s: 0.1,
        }
    }
}

impl PlatoonRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        let (nf_lo, nf_hi) = self.followers;
        if nf_lo < 1 || nf_lo > nf_hi || nf_hi + 1 > MAX_VEHICLES {
            return Err(Error::arg(format!(
                "followers range {:?} must lie in 1..={}",
                self.followers,
                MAX_VEHICLES - 1
            )));
        }
        for (name, r) in [
            ("spacing_m", self.spacing_m),
            ("speed_kmh", self.speed_kmh),
            ("leader_force_n", self.leader_force_n),
            ("mass_kg", self.mass_kg),
            ("delay_s", self.delay_s),
            ("packet_error_rate", self.packet_error_rate),
            ("gain", self.gain),
        ] {
            if !ok(r) {
                return Err(Error::arg(format!("invalid range {name} = {r:?}")));
            }
        }
        if self.mass_kg.0 <= 0.0 || self.speed_kmh.0 < 0.0 || self.delay_s.0 < 0.0 {
            return Err(Error::arg("masses must be positive; speeds and delays nonnegative"));
        }
        if self.packet_error_rate.0 < 0.0 || self.packet_error_rate.1 >= 1.0 {
            return Err(Error::arg("packet error rate must lie in [0, 1)"));
        }
        if !(self.dt > 0.0 && self.horizon_s > 0.0 && self.collision_threshold_m > 0.0) {
            return Err(Error::arg("dt, horizon and collision threshold must be positive"));
        }
        if !(self.retransmit_interval_s > 0.0) {
            return Err(Error::arg("retransmission interval must be positive"));
        }
        Ok(())
    }
}

/// One braking scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoonSpec {
    /// Number of followers `N`; the platoon has `N + 1` vehicles.
    pub followers: usize,
    pub spacing_m: f64,
    pub speed_kmh: f64,
    pub leader_force_n: f64,
    /// Per-vehicle masses, leader first (`N + 1` entries).
    pub masses: Vec<f64>,
    pub rolling: Vec<f64>,
    pub drag: Vec<f64>,
    pub delay_s: f64,
    pub packet_error_rate: f64,
    pub gain: f64,
    pub dt: f64,
    pub horizon_s: f64,
    pub collision_threshold_m: f64,
    pub retransmit_interval_s: f64,
    /// Seed of the packet-loss draws.
    pub seed: u64,
}

impl PlatoonSpec {
    /// Scenario with identical vehicles and the default physical constants.
    pub fn uniform(followers: usize, spacing_m: f64, speed_kmh: f64, leader_force_n: f64, mass: f64) -> Self {
        let r = PlatoonRanges::default();
        let n = followers + 1;
        Self {
            followers,
            spacing_m,
            speed_kmh,
            leader_force_n,
            masses: vec![mass; n],
            rolling: vec![r.rolling_n; n],
            drag: vec![r.drag; n],
            delay_s: 0.0,
            packet_error_rate: 0.0,
            gain: 1.0,
            dt: r.dt,
            horizon_s: r.horizon_s,
            collision_threshold_m: r.collision_threshold_m,
            retransmit_interval_s: r.retransmit_interval_s,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.followers + 1;
        if self.followers == 0 || n > MAX_VEHICLES {
            return Err(Error::arg(format!(
                "followers = {} outside 1..={}",
                self.followers,
                MAX_VEHICLES - 1
            )));
        }
        if self.masses.len() != n || self.rolling.len() != n || self.drag.len() != n {
            return Err(Error::arg("per-vehicle parameter vectors must have N + 1 entries"));
        }
        if self.masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::arg("masses must be positive"));
        }
        if !(self.dt > 0.0
            && self.horizon_s > 0.0
            && self.collision_threshold_m > 0.0
            && self.retransmit_interval_s > 0.0)
        {
            return Err(Error::arg(
                "dt, horizon, threshold and retransmission interval must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.packet_error_rate) || self.delay_s < 0.0 || self.speed_kmh < 0.0 {
            return Err(Error::arg("invalid communication or speed parameters"));
        }
        Ok(())
    }

    /// `[N, d0, v0, a0, F0, m_0..m_8, delay, per, gain]` with `a0 = F0 / m_0`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(FEATURE_DIM);
        f.push(self.followers as f64);
        f.push(self.spacing_m);
        f.push(self.speed_kmh);
        f.push(self.leader_force_n / self.masses[0]);
        f.push(self.leader_force_n);
        for i in 0..MAX_VEHICLES {
            f.push(self.masses.get(i).copied().unwrap_or(0.0));
        }
        f.push(self.delay_s);
        f.push(self.packet_error_rate);
        f.push(self.gain);
        f
    }

    /// Time at which each vehicle starts braking (leader at 0).
    pub fn reception_times(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut times = vec![0.0];
        for _ in 0..self.followers {
            let mut lost = 0u32;
            while lost < 10_000 && rng.random::<f64>() < self.packet_error_rate {
                lost += 1;
            }
            times.push(self.delay_s + lost as f64 * self.retransmit_interval_s);
        }
        times
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlatoonOutcome {
    pub features: Vec<f64>,
    pub label: Label,
    pub min_gap: f64,
    /// First time a gap reached the threshold.
    pub collision_time: Option<f64>,
    pub steps: usize,
}

/// Speed and gap history, one row per integration step (initial state first).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlatoonTrace {
    pub speeds: Vec<Vec<f64>>,
    pub gaps: Vec<Vec<f64>>,
}

fn integrate(spec: &PlatoonSpec, mut trace: Option<&mut PlatoonTrace>) -> Result<PlatoonOutcome> {
    spec.validate()?;
    let n = spec.followers + 1;
    let v0 = spec.speed_kmh * KMH;
    let mut v = vec![v0; n];
    let mut gap = vec![spec.spacing_m; n];
    gap[0] = f64::INFINITY;
    let cruise: Vec<f64> = (0..n).map(|l| spec.rolling[l] + spec.drag[l] * v0 * v0).collect();
    let recv = spec.reception_times();
    let steps = (spec.horizon_s / spec.dt).round() as usize;
    let mut new_v = vec![0.0; n];
    let mut min_gap = spec.spacing_m;
    let mut collision_time = None;
    let mut taken = 0;

    if let Some(t) = trace.as_deref_mut() {
        t.speeds.push(v.clone());
        t.gaps.push(gap[1..].to_vec());
    }

    for step in 0..steps {
        let t = step as f64 * spec.dt;
        for l in 0..n {
            let force = if l == 0 {
                spec.leader_force_n
            } else if t >= recv[l] {
                spec.gain * spec.leader_force_n
            } else {
                cruise[l]
            };
            let acc = (force - (spec.rolling[l] + spec.drag[l] * v[l] * v[l])) / spec.masses[l];
            new_v[l] = (v[l] + spec.dt * acc).max(0.0);
        }
        for l in 1..n {
            gap[l] += spec.dt * (v[l - 1] - v[l]);
        }
        std::mem::swap(&mut v, &mut new_v);
        taken = step + 1;

        if v.iter().chain(&gap[1..]).any(|x| !x.is_finite()) {
            return Err(Error::Simulation { step, time: t });
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.speeds.push(v.clone());
            tr.gaps.push(gap[1..].to_vec());
        }
        let g = gap[1..].iter().copied().fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(g);
        if g <= spec.collision_threshold_m {
            collision_time = Some(t + spec.dt);
            break;
        }
        if trace.is_none() && v.iter().all(|&s| s == 0.0) {
            break;
        }
    }

    Ok(PlatoonOutcome {
        features: spec.features(),
        label: if collision_time.is_some() {
            Label::Unsafe
        } else {
            Label::Safe
        },
        min_gap,
        collision_time,
        steps: taken,
    })
}

/// Run one scenario: `Unsafe` on collision, `Safe` otherwise.
pub fn simulate_platoon(spec: &PlatoonSpec) -> Result<PlatoonOutcome> {
    integrate(spec, None)
}

/// As [`simulate_platoon`] but recording the full state history (no early stop
/// once the platoon has halted).
pub fn simulate_platoon_trace(spec: &PlatoonSpec) -> Result<(PlatoonOutcome, PlatoonTrace)> {
    let mut trace = PlatoonTrace::default();
    let out = integrate(spec, Some(&mut trace))?;
    Ok((out, trace))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Scenario `index` of the seeded sequence; independent of every other index.
pub fn sample_platoon_spec(ranges: &PlatoonRanges, seed: u64, index: u64) -> PlatoonSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let followers = rng.random_range(ranges.followers.0..=ranges.followers.1);
    let n = followers + 1;
    let spacing_m = uniform(&mut rng, ranges.spacing_m);
    let speed_kmh = uniform(&mut rng, ranges.speed_kmh);
    let leader_force_n = uniform(&mut rng, ranges.leader_force_n);
    let masses = (0..n).map(|_| uniform(&mut rng, ranges.mass_kg)).collect();
    let delay_s = uniform(&mut rng, ranges.delay_s);
    let packet_error_rate = uniform(&mut rng, ranges.packet_error_rate);
    let gain = uniform(&mut rng, ranges.gain);
    PlatoonSpec {
        followers,
        spacing_m,
        speed_kmh,
        leader_force_n,
        masses,
        rolling: vec![ranges.rolling_n; n],
        drag: vec![ranges.drag; n],
        delay_s,
        packet_error_rate,
        gain,
        dt: ranges.dt,
        horizon_s: ranges.horizon_s,
        collision_threshold_m: ranges.collision_threshold_m,
        retransmit_interval_s: ranges.retransmit_interval_s,
        seed: rng.next_u64(),
    }
}

pub fn generate_platoon_specs(n_samples: usize, ranges: &PlatoonRanges, seed: u64) -> Result<Vec<PlatoonSpec>> {
    ranges.validate()?;
    Ok((0..n_samples as u64)
        .map(|i| sample_platoon_spec(ranges, seed, i))
        .collect())
}

/// Sample `n_samples` scenarios uniformly over `ranges` and simulate each.
pub fn generate_platoon_dataset(
    n_samples: usize,
    ranges: &PlatoonRanges,
    seed: u64,
    exec: Execution,
) -> Result<Dataset> {
    let specs = generate_platoon_specs(n_samples, ranges, seed)?;
    let outcomes = exec.map(&specs, simulate_platoon);
    let mut points = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for (i, out) in outcomes.into_iter().enumerate() {
        let out = out.map_err(|e| Error::Training(format!("platoon scenario {i} ({:?}) failed: {e}", specs[i])))?;
        points.push(out.features);
        labels.push(out.label);
    }
    let table = toml::Table::try_from(ranges).unwrap_or_default();
    Ok(Dataset::with_dim(FEATURE_DIM, points, labels)?.with_provenance(Provenance::new("platoon", Some(seed), table)))
}
