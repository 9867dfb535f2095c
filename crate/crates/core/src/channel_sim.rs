//! Slotted contention model of a shared Wi-Fi channel plus one LiFi link.
//!
//! Each Wi-Fi station transmits in a slot with probability
//! `τ = min(tau_max, airtime_load / capacity_ref)`, where the airtime load is
//! the offered rate divided by the station's PHY efficiency. A transmission
//! collides when any other station transmits in the same slot.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::station::StationId;
use crate::workload::{trailing_mean, RatePair, Role, WorkloadTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Airtime-equivalent Mbps that would keep one station transmitting in
    /// every slot.
    pub capacity_ref: f64,
    pub tau_max: f64,
    pub lifi_capacity: f64,
    /// Gaussian jitter on the emitted collision KPI; airtime gets 100× this.
    pub noise_sd: f64,
    /// 0 uses the closed form; otherwise the number of simulated slots.
    pub slots_per_period: u64,
    pub smoothing_window: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            capacity_ref: 3000.0,
            tau_max: 0.9,
            lifi_capacity: 100.0,
            noise_sd: 0.01,
            slots_per_period: 0,
            smoothing_window: 5,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_ref > 0.0 && self.capacity_ref.is_finite()) {
            return Err(Error::config("capacity_ref must be > 0"));
        }
        if !(self.tau_max > 0.0 && self.tau_max <= 1.0) {
            return Err(Error::config("tau_max must be in (0, 1]"));
        }
        if !(self.lifi_capacity >= 0.0 && self.lifi_capacity.is_finite()) {
            return Err(Error::config("lifi_capacity must be >= 0"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd must be >= 0"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::config("smoothing_window must be >= 1"));
        }
        Ok(())
    }

    pub fn tau(&self, load: f64) -> f64 {
        (load / self.capacity_ref).clamp(0.0, self.tau_max)
    }
}

/// Per-station collision probability and the traffic-weighted system KPI.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionProfile {
    pub p: Vec<f64>,
    pub collision_kpi: f64,
}

/// `p_i = 1 - Π_{j≠i}(1 - τ_j)`, computed directly (no division by `1 - τ_i`,
/// which breaks down at `τ_i = 1`).
pub fn collision_from_tau(tau: &[f64]) -> CollisionProfile {
    let p: Vec<f64> = (0..tau.len())
        .map(|i| {
            let idle: f64 = tau.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| 1.0 - t).product();
            (1.0 - idle).clamp(0.0, 1.0)
        })
        .collect();
    let total: f64 = tau.iter().sum();
    let collision_kpi =
        if total > 0.0 { (tau.iter().zip(&p).map(|(t, p)| t * p).sum::<f64>() / total).clamp(0.0, 1.0) } else { 0.0 };
    CollisionProfile { p, collision_kpi }
}

pub fn collision_profile(loads: &[f64], config: &ChannelConfig) -> CollisionProfile {
    let tau: Vec<f64> = loads.iter().map(|&l| config.tau(l)).collect();
    collision_from_tau(&tau)
}

/// Channel-busy probability in percent.
pub fn airtime_from_tau(tau: &[f64]) -> f64 {
    let idle: f64 = tau.iter().map(|t| 1.0 - t).product();
    (100.0 * (1.0 - idle)).clamp(0.0, 100.0)
}

pub fn airtime(loads: &[f64], config: &ChannelConfig) -> f64 {
    let tau: Vec<f64> = loads.iter().map(|&l| config.tau(l)).collect();
    airtime_from_tau(&tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloProfile {
    /// Fraction of slots in which some other station transmitted, i.e. the
    /// probability that a transmission by station `i` would have collided.
    pub p: Vec<f64>,
    /// Collided transmissions over all transmissions.
    pub collision_kpi: f64,
    pub air: f64,
}

/// Slot-level simulation with independent Bernoulli(τ_i) transmissions.
pub fn monte_carlo_profile<R: Rng + ?Sized>(tau: &[f64], slots: u64, rng: &mut R) -> MonteCarloProfile {
    let n = tau.len();
    let mut others_busy = vec![0u64; n];
    let mut sent = 0u64;
    let mut collided = 0u64;
    let mut busy = 0u64;
    let mut tx = vec![false; n];
    for _ in 0..slots {
        let mut k = 0usize;
        for (i, &t) in tau.iter().enumerate() {
            tx[i] = rng.random::<f64>() < t;
            k += tx[i] as usize;
        }
        if k > 0 {
            busy += 1;
        }
        sent += k as u64;
        if k > 1 {
            collided += k as u64;
        }
        for i in 0..n {
            if k > tx[i] as usize {
                others_busy[i] += 1;
            }
        }
    }
    let s = slots.max(1) as f64;
    MonteCarloProfile {
        p: others_busy.iter().map(|&c| c as f64 / s).collect(),
        collision_kpi: if sent > 0 { collided as f64 / sent as f64 } else { 0.0 },
        air: 100.0 * busy as f64 / s,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    NoOffload,
    Offload(StationId),
}

impl Scenario {
    pub fn offloaded(&self) -> Option<&StationId> {
        match self {
            Scenario::NoOffload => None,
            Scenario::Offload(s) => Some(s),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::NoOffload => f.write_str("none"),
            Scenario::Offload(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::input("empty scenario")),
            "none" => Ok(Scenario::NoOffload),
            other => Ok(Scenario::Offload(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationPeriod {
    pub station: StationId,
    pub wifi_up: f64,
    pub wifi_down: f64,
    pub lifi_up: f64,
    pub lifi_down: f64,
    /// Also the station's retry probability; 0 while on LiFi.
    pub collision_prob: f64,
    pub phy_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodStats {
    pub period: usize,
    pub per_sta: Vec<StationPeriod>,
    pub collision_kpi: f64,
    pub air: f64,
    pub lifi_served: f64,
}

/// Smoothed rates of every station for one period.
pub fn smoothed_rates(traces: &[WorkloadTrace], period: usize, window: usize) -> Result<Vec<RatePair>> {
    traces
        .iter()
        .map(|t| {
            let rates = t.period_rates();
            if period >= rates.len() {
                return Err(Error::TraceExhausted(format!(
                    "period {period} beyond {} periods of {}",
                    rates.len(),
                    t.station
                )));
            }
            Ok(trailing_mean(&rates, period, window.max(1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutcome {
    pub per_sta: Vec<StationPeriod>,
    pub collision_kpi: f64,
    pub air: f64,
    pub lifi_served: f64,
}

/// Channel outcome for explicit per-station demand and PHY efficiency with an
/// optional offloaded index. `jitter` is the `(collision, air)` noise, already
/// scaled; passing `mc` switches to the slot simulation when the config asks
/// for one.
pub fn evaluate_channel(
    stations: &[StationId],
    demand: &[RatePair],
    phy: &[f64],
    offloaded: Option<usize>,
    config: &ChannelConfig,
    jitter: (f64, f64),
    mc: Option<&mut dyn rand::RngCore>,
) -> ChannelOutcome {
    let mut wifi_tau = Vec::with_capacity(demand.len());
    let mut wifi_idx = Vec::with_capacity(demand.len());
    let mut lifi_served = 0.0;
    let mut lifi = (0.0, 0.0);
    for (i, d) in demand.iter().enumerate() {
        if Some(i) == offloaded {
            let total = d.total();
            lifi_served = total.min(config.lifi_capacity);
            let scale = if total > 0.0 { lifi_served / total } else { 0.0 };
            lifi = (d.up * scale, d.down * scale);
        } else {
            wifi_idx.push(i);
            wifi_tau.push(config.tau(d.total() / phy[i]));
        }
    }
    let (p, kpi, air) = match mc {
        Some(rng) if config.slots_per_period > 0 => {
            let m = monte_carlo_profile(&wifi_tau, config.slots_per_period, rng);
            (m.p, m.collision_kpi, m.air)
        }
        _ => {
            let c = collision_from_tau(&wifi_tau);
            (c.p, c.collision_kpi, airtime_from_tau(&wifi_tau))
        }
    };
    let mut per_p = vec![0.0; demand.len()];
    for (k, &i) in wifi_idx.iter().enumerate() {
        per_p[i] = p[k];
    }
    let per_sta = demand
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let on_lifi = Some(i) == offloaded;
            StationPeriod {
                station: stations[i].clone(),
                wifi_up: if on_lifi { 0.0 } else { d.up },
                wifi_down: if on_lifi { 0.0 } else { d.down },
                lifi_up: if on_lifi { lifi.0 } else { 0.0 },
                lifi_down: if on_lifi { lifi.1 } else { 0.0 },
                collision_prob: per_p[i],
                phy_efficiency: phy[i],
            }
        })
        .collect();
    ChannelOutcome {
        per_sta,
        collision_kpi: (kpi + jitter.0).clamp(0.0, 1.0),
        air: (air + jitter.1).clamp(0.0, 100.0),
        lifi_served,
    }
}

/// Observation noise for one period, shared by every scenario of that period.
pub fn period_jitter(config: &ChannelConfig, seed: u64, period: usize) -> (f64, f64) {
    if config.noise_sd == 0.0 {
        return (0.0, 0.0);
    }
    let mut r = rng::stream(seed, period as u64);
    let n = Normal::new(0.0, config.noise_sd).expect("validated sd");
    let c: f64 = n.sample(&mut r);
    let a: f64 = n.sample(&mut r);
    (c, 100.0 * a)
}

fn offload_index(traces: &[WorkloadTrace], offloaded: Option<&StationId>) -> Result<Option<usize>> {
    let Some(s) = offloaded else { return Ok(None) };
    let i = traces.iter().position(|t| &t.station == s).ok_or_else(|| Error::UnknownStation(s.to_string()))?;
    if traces[i].role != Role::Candidate {
        return Err(Error::input(format!("station {s} is not an offload candidate")));
    }
    Ok(Some(i))
}

/// One period of the channel under a given offload decision.
pub fn simulate_period(
    traces: &[WorkloadTrace],
    period: usize,
    offloaded: Option<&StationId>,
    config: &ChannelConfig,
    seed: u64,
) -> Result<PeriodStats> {
    config.validate()?;
    let idx = offload_index(traces, offloaded)?;
    let demand = smoothed_rates(traces, period, config.smoothing_window)?;
    let phy: Vec<f64> = traces.iter().map(|t| t.phy_efficiency).collect();
    let jitter = period_jitter(config, seed, period);
    let stations: Vec<StationId> = traces.iter().map(|t| t.station.clone()).collect();
    let mut mc_rng = rng::stream(rng::derive_seed(seed, u64::MAX), period as u64);
    let mc: Option<&mut dyn rand::RngCore> = if config.slots_per_period > 0 { Some(&mut mc_rng) } else { None };
    let o = evaluate_channel(&stations, &demand, &phy, idx, config, jitter, mc);
    Ok(PeriodStats {
        period,
        per_sta: o.per_sta,
        collision_kpi: o.collision_kpi,
        air: o.air,
        lifi_served: o.lifi_served,
    })
}

/// No-offload plus one scenario per candidate, all with the same seed so the
/// scenarios differ only in the decision.
pub fn scenario_sweep(
    traces: &[WorkloadTrace],
    period: usize,
    candidates: &[StationId],
    config: &ChannelConfig,
    seed: u64,
) -> Result<Vec<(Scenario, PeriodStats)>> {
    if candidates.is_empty() {
        return Err(Error::input("empty candidate set"));
    }
    let mut out = Vec::with_capacity(candidates.len() + 1);
    out.push((Scenario::NoOffload, simulate_period(traces, period, None, config, seed)?));
    for c in candidates {
        out.push((Scenario::Offload(c.clone()), simulate_period(traces, period, Some(c), config, seed)?));
    }
    Ok(out)
}

pub fn candidates_of(traces: &[WorkloadTrace]) -> Vec<StationId> {
    traces.iter().filter(|t| t.role == Role::Candidate).map(|t| t.station.clone()).collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, sweeps: &[Vec<(Scenario, PeriodStats)>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "scenario", "collision_kpi", "air", "lifi_served"])?;
    for sweep in sweeps {
        for (sc, st) in sweep {
            w.write_record([
                st.period.to_string(),
                sc.to_string(),
                st.collision_kpi.to_string(),
                st.air.to_string(),
                st.lifi_served.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_station_csv<W: Write>(writer: W, sweeps: &[Vec<(Scenario, PeriodStats)>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "period",
        "scenario",
        "station",
        "wifi_up",
        "wifi_down",
        "lifi_up",
        "lifi_down",
        "collision_prob",
        "phy_efficiency",
    ])?;
    for sweep in sweeps {
        for (sc, st) in sweep {
            for s in &st.per_sta {
                w.write_record([
                    st.period.to_string(),
                    sc.to_string(),
                    s.station.to_string(),
                    s.wifi_up.to_string(),
                    s.wifi_down.to_string(),
                    s.lifi_up.to_string(),
                    s.lifi_down.to_string(),
                    s.collision_prob.to_string(),
                    s.phy_efficiency.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
