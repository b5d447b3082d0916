//! Subcarrier partition and minimum-power allocation under rate and
//! mutual-information floors.
//!
//! Each subcarrier serves either communication or sensing. Within a service
//! the minimum-power allocation meeting a floor on Σ log2(1 + P·SINR) is a
//! capped water-fill: P = clamp(λ − 1/SINR, 0, P_max), with the level λ found
//! by bisection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Service};
use crate::exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrProfile {
    pub com: Vec<f64>,
    pub rad: Vec<f64>,
}

impl SinrProfile {
    pub fn new(com: Vec<f64>, rad: Vec<f64>) -> Result<Self> {
        if com.len() != rad.len() {
            return Err(Error::domain(
                "communication and sensing SINR lengths differ",
            ));
        }
        if com
            .iter()
            .chain(&rad)
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::domain("SINR values must be finite and non-negative"));
        }
        Ok(SinrProfile { com, rad })
    }

    pub fn len(&self) -> usize {
        self.com.len()
    }

    pub fn is_empty(&self) -> bool {
        self.com.is_empty()
    }
}

/// `gamma[i]` is true when subcarrier `i` serves communication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcarrierPartition {
    pub gamma: Vec<bool>,
}

impl SubcarrierPartition {
    pub fn com_indices(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&i| self.gamma[i]).collect()
    }

    pub fn rad_indices(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&i| !self.gamma[i]).collect()
    }

    pub fn n_com(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    pub fn n_rad(&self) -> usize {
        self.gamma.len() - self.n_com()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
    pub total_w: f64,
    pub achieved_rate: f64,
    pub achieved_mi: f64,
}

impl PowerAllocation {
    fn assemble(partition: &SubcarrierPartition, p: Vec<f64>, profile: &SinrProfile) -> Self {
        PowerAllocation {
            total_w: p.iter().sum(),
            achieved_rate: comm_rate(partition, &p, profile),
            achieved_mi: sensing_mi(partition, &p, profile),
            p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for EtaRange {
    fn default() -> Self {
        EtaRange {
            min: 0.1,
            max: 3.0,
            step: 0.1,
        }
    }
}

impl EtaRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0)
            || !(self.max >= self.min)
            || !(self.step > 0.0)
            || !self.max.is_finite()
        {
            return Err(Error::config(format!(
                "eta range must satisfy 0 < min <= max and step > 0, got {}:{}:{}",
                self.min, self.max, self.step
            )));
        }
        Ok(())
    }

    /// Grid points min + i·step up to max, with a small tolerance on the end.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.min + i as f64 * self.step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosConstraints {
    pub c_min: f64,
    pub i_min: f64,
    pub p_max: f64,
    pub eta: EtaRange,
}

impl Default for QosConstraints {
    fn default() -> Self {
        QosConstraints {
            c_min: 200.0,
            i_min: 600.0,
            p_max: 50.0,
            eta: EtaRange::default(),
        }
    }
}

impl QosConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_min >= 0.0) || !(self.i_min >= 0.0) {
            return Err(Error::config("QoS floors must be non-negative"));
        }
        if !(self.p_max > 0.0) || !self.p_max.is_finite() {
            return Err(Error::config("p_max must be positive"));
        }
        self.eta.validate()
    }
}

fn service_sum(mask: impl Iterator<Item = bool>, p: &[f64], sinr: &[f64]) -> f64 {
    mask.zip(p.iter().zip(sinr))
        .filter(|(m, _)| *m)
        .map(|(_, (pw, s))| (pw * s).ln_1p())
        .fold(0.0, |a, b| a + b)
        / std::f64::consts::LN_2
}

pub fn comm_rate(partition: &SubcarrierPartition, p: &[f64], profile: &SinrProfile) -> f64 {
    service_sum(partition.gamma.iter().copied(), p, &profile.com)
}

pub fn sensing_mi(partition: &SubcarrierPartition, p: &[f64], profile: &SinrProfile) -> f64 {
    service_sum(partition.gamma.iter().map(|g| !g), p, &profile.rad)
}

pub fn partition_subcarriers(profile: &SinrProfile, eta: f64) -> SubcarrierPartition {
    SubcarrierPartition {
        gamma: profile
            .com
            .iter()
            .zip(&profile.rad)
            .map(|(c, r)| *c >= eta * r)
            .collect(),
    }
}

/// A floor that cannot be met even with every carrier at full power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shortfall {
    pub required: f64,
    pub max_achievable: f64,
}

impl Shortfall {
    pub fn into_error(self, service: Service) -> Error {
        Error::Infeasible {
            service,
            required: self.required,
            max_achievable: self.max_achievable,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    pub powers: Vec<f64>,
    pub level: f64,
    pub achieved: f64,
}

pub const WATERFILL_TOL: f64 = 1e-9;
pub const WATERFILL_MAX_ITER: usize = 200;

fn log2_sum(sinrs: &[f64], power: impl Fn(usize) -> f64) -> f64 {
    sinrs
        .iter()
        .enumerate()
        .map(|(i, s)| (power(i) * s).ln_1p())
        .fold(0.0, |a, b| a + b)
        / std::f64::consts::LN_2
}

fn fill(inv: &[f64], level: f64, p_max: f64) -> impl Fn(usize) -> f64 + '_ {
    move |i| (level - inv[i]).clamp(0.0, p_max)
}

/// Minimum total power with Σ log2(1 + P_i s_i) ≥ `floor` and 0 ≤ P_i ≤ `p_max`.
pub fn waterfill(
    sinrs: &[f64],
    floor: f64,
    p_max: f64,
) -> std::result::Result<WaterFill, Shortfall> {
    let inv: Vec<f64> = sinrs
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { f64::INFINITY })
        .collect();
    let finite = inv.iter().copied().filter(|v| v.is_finite());
    let min_inv = finite.clone().fold(f64::INFINITY, f64::min);
    let max_inv = finite.fold(f64::NEG_INFINITY, f64::max);
    if !(floor > 0.0) {
        return Ok(WaterFill {
            powers: vec![0.0; sinrs.len()],
            level: if min_inv.is_finite() { min_inv } else { 0.0 },
            achieved: 0.0,
        });
    }
    let max_achievable = log2_sum(sinrs, |i| if inv[i].is_finite() { p_max } else { 0.0 });
    if !min_inv.is_finite() || max_achievable < floor - WATERFILL_TOL {
        return Err(Shortfall {
            required: floor,
            max_achievable,
        });
    }
    let achieved = |level: f64| log2_sum(sinrs, fill(&inv, level, p_max));
    let mut lo = min_inv;
    let mut hi = max_inv + p_max;
    let mut at_hi = achieved(hi);
    for _ in 0..WATERFILL_MAX_ITER {
        if (at_hi - floor).abs() <= WATERFILL_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let a = achieved(mid);
        if a >= floor {
            hi = mid;
            at_hi = a;
        } else {
            lo = mid;
        }
    }
    let f = fill(&inv, hi, p_max);
    Ok(WaterFill {
        powers: (0..sinrs.len()).map(f).collect(),
        level: hi,
        achieved: at_hi,
    })
}

/// Smallest common power P ≤ `p_max` meeting `floor`; if even `p_max` falls
/// short, returns `p_max` and `false`.
pub fn uniform_power(sinrs: &[f64], floor: f64, p_max: f64) -> (f64, bool) {
    if !(floor > 0.0) {
        return (0.0, true);
    }
    let achieved = |p: f64| log2_sum(sinrs, |_| p);
    if achieved(p_max) < floor - WATERFILL_TOL {
        return (p_max, false);
    }
    let (mut lo, mut hi) = (0.0, p_max);
    let mut at_hi = achieved(hi);
    for _ in 0..WATERFILL_MAX_ITER {
        if (at_hi - floor).abs() <= WATERFILL_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let a = achieved(mid);
        if a >= floor {
            hi = mid;
            at_hi = a;
        } else {
            lo = mid;
        }
    }
    (hi, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub eta: f64,
    pub partition: SubcarrierPartition,
    pub allocation: PowerAllocation,
    pub power_com_w: f64,
    pub power_rad_w: f64,
}

fn gather(idx: &[usize], v: &[f64]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn combine(
    eta: f64,
    partition: SubcarrierPartition,
    com: (&[usize], &[f64]),
    rad: (&[usize], &[f64]),
    profile: &SinrProfile,
) -> AllocationResult {
    let mut p = vec![0.0; partition.gamma.len()];
    for (&i, &v) in com.0.iter().zip(com.1) {
        p[i] = v;
    }
    for (&i, &v) in rad.0.iter().zip(rad.1) {
        p[i] = v;
    }
    AllocationResult {
        eta,
        power_com_w: com.1.iter().sum(),
        power_rad_w: rad.1.iter().sum(),
        allocation: PowerAllocation::assemble(&partition, p, profile),
        partition,
    }
}

/// Water-fill each service over a fixed partition.
pub fn allocate_partition(
    profile: &SinrProfile,
    partition: SubcarrierPartition,
    eta: f64,
    qos: &QosConstraints,
) -> Result<AllocationResult> {
    let ci = partition.com_indices();
    let ri = partition.rad_indices();
    let com = waterfill(&gather(&ci, &profile.com), qos.c_min, qos.p_max)
        .map_err(|s| s.into_error(Service::Communication))?;
    let rad = waterfill(&gather(&ri, &profile.rad), qos.i_min, qos.p_max)
        .map_err(|s| s.into_error(Service::Sensing))?;
    Ok(combine(
        eta,
        partition,
        (&ci, &com.powers),
        (&ri, &rad.powers),
        profile,
    ))
}

pub fn allocate_joint(
    profile: &SinrProfile,
    eta: f64,
    qos: &QosConstraints,
) -> Result<AllocationResult> {
    allocate_partition(profile, partition_subcarriers(profile, eta), eta, qos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub n_com: usize,
    pub n_rad: usize,
    /// `None` when the partition at this weight cannot meet a floor.
    pub power_com_w: Option<f64>,
    pub power_rad_w: Option<f64>,
    pub power_total_w: Option<f64>,
    pub infeasible: Option<Service>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_eta: f64,
    pub best: AllocationResult,
    pub curve: Vec<SweepPoint>,
}

/// Evaluates every weight in `qos.eta` and keeps the feasible minimiser of
/// total power; ties go to the smaller weight.
pub fn sweep_eta(profile: &SinrProfile, qos: &QosConstraints) -> Result<SweepResult> {
    qos.validate()?;
    let etas = qos.eta.points();
    let results = exec::par_map(&etas, |&eta| (eta, allocate_joint(profile, eta, qos)));
    let mut curve = Vec::with_capacity(results.len());
    let mut best: Option<AllocationResult> = None;
    let mut closest: Option<(Service, f64, f64)> = None;
    for (eta, res) in results {
        let part = partition_subcarriers(profile, eta);
        let mut point = SweepPoint {
            eta,
            n_com: part.n_com(),
            n_rad: part.n_rad(),
            power_com_w: None,
            power_rad_w: None,
            power_total_w: None,
            infeasible: None,
        };
        match res {
            Ok(r) => {
                point.power_com_w = Some(r.power_com_w);
                point.power_rad_w = Some(r.power_rad_w);
                point.power_total_w = Some(r.allocation.total_w);
                if best
                    .as_ref()
                    .is_none_or(|b| r.allocation.total_w < b.allocation.total_w)
                {
                    best = Some(r);
                }
            }
            Err(Error::Infeasible {
                service,
                required,
                max_achievable,
            }) => {
                point.infeasible = Some(service);
                let score = max_achievable / required;
                if closest.is_none_or(|(_, r, m)| score > m / r) {
                    closest = Some((service, required, max_achievable));
                }
            }
            Err(e) => return Err(e),
        }
        curve.push(point);
    }
    let Some(best) = best else {
        let (service, required, max_achievable) =
            closest.expect("an empty sweep is rejected by validation");
        return Err(Error::NoFeasibleEta {
            service,
            required,
            max_achievable,
        });
    };
    Ok(SweepResult {
        best_eta: best.eta,
        best,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    Raca1,
    Raca2,
    Raca3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub baseline: Baseline,
    pub result: AllocationResult,
    /// False when a floor was unreachable and that service was capped at `p_max`.
    pub feasible: bool,
}

fn uniform_service(sinrs: &[f64], floor: f64, p_max: f64) -> (Vec<f64>, bool) {
    let (p, ok) = uniform_power(sinrs, floor, p_max);
    (vec![p; sinrs.len()], ok)
}

fn capped_waterfill(sinrs: &[f64], floor: f64, p_max: f64) -> (Vec<f64>, bool) {
    match waterfill(sinrs, floor, p_max) {
        Ok(w) => (w.powers, true),
        Err(_) => (vec![p_max; sinrs.len()], false),
    }
}

fn random_partition<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SubcarrierPartition {
    SubcarrierPartition {
        gamma: (0..n).map(|_| rng.random_bool(0.5)).collect(),
    }
}

/// Per-service power rule: (gains, floor, cap) to (powers, floor met).
type PowerRule = fn(&[f64], f64, f64) -> (Vec<f64>, bool);

fn baseline_with(
    baseline: Baseline,
    profile: &SinrProfile,
    partition: SubcarrierPartition,
    eta: f64,
    qos: &QosConstraints,
    rule: PowerRule,
) -> BaselineResult {
    let ci = partition.com_indices();
    let ri = partition.rad_indices();
    let (pc, okc) = rule(&gather(&ci, &profile.com), qos.c_min, qos.p_max);
    let (pr, okr) = rule(&gather(&ri, &profile.rad), qos.i_min, qos.p_max);
    BaselineResult {
        baseline,
        result: combine(eta, partition, (&ci, &pc), (&ri, &pr), profile),
        feasible: okc && okr,
    }
}

/// RACA1: weighted partition with uniform power. RACA2: random partition with
/// water-filling. RACA3: random partition with uniform power.
pub fn raca_baselines<R: Rng + ?Sized>(
    profile: &SinrProfile,
    eta: f64,
    qos: &QosConstraints,
    rng: &mut R,
) -> [BaselineResult; 3] {
    let n = profile.len();
    let r1 = baseline_with(
        Baseline::Raca1,
        profile,
        partition_subcarriers(profile, eta),
        eta,
        qos,
        uniform_service,
    );
    let r2 = baseline_with(
        Baseline::Raca2,
        profile,
        random_partition(n, rng),
        eta,
        qos,
        capped_waterfill,
    );
    let r3 = baseline_with(
        Baseline::Raca3,
        profile,
        random_partition(n, rng),
        eta,
        qos,
        uniform_service,
    );
    [r1, r2, r3]
}
