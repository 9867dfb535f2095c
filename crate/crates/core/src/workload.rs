//! Seeded synthetic per-station rate traces.
//!
//! Rates are drawn once per period from a clipped log-normal and held for every
//! epoch of that period. Each station also gets a PHY efficiency in
//! `[phy_efficiency_min, 1]`; a station at efficiency 0.5 needs twice the
//! airtime for the same offered rate.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::station::StationId;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RatePair {
    pub up: f64,
    pub down: f64,
}

impl RatePair {
    pub fn total(self) -> f64 {
        self.up + self.down
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Candidate,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub station: StationId,
    pub role: Role,
    /// Mbps per epoch.
    pub epochs: Vec<RatePair>,
    pub epochs_per_period: usize,
    pub epoch_duration: f64,
    pub phy_efficiency: f64,
}

impl WorkloadTrace {
    pub fn n_periods(&self) -> usize {
        self.epochs.len() / self.epochs_per_period
    }

    pub fn period_rate(&self, period: usize) -> Option<RatePair> {
        self.epochs.get(period * self.epochs_per_period).copied()
    }

    pub fn period_rates(&self) -> Vec<RatePair> {
        self.epochs.iter().step_by(self.epochs_per_period).copied().collect()
    }

    fn with_period_rates(&self, rates: &[RatePair]) -> WorkloadTrace {
        let epochs = rates.iter().flat_map(|r| std::iter::repeat_n(*r, self.epochs_per_period)).collect();
        WorkloadTrace { epochs, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl Default for LogNormalParams {
    fn default() -> Self {
        LogNormalParams { log_mean: 20f64.ln(), log_sd: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceEnsembleConfig {
    pub n_candidates: usize,
    pub n_background: usize,
    pub candidate_load_factor: f64,
    pub epochs: usize,
    pub epochs_per_period: usize,
    pub epoch_duration: f64,
    pub rate_cap: f64,
    pub up: LogNormalParams,
    pub down: LogNormalParams,
    /// Lower bound of the per-station PHY efficiency draw; 1 disables it.
    pub phy_efficiency_min: f64,
}

impl Default for TraceEnsembleConfig {
    fn default() -> Self {
        TraceEnsembleConfig {
            n_candidates: 4,
            n_background: 4,
            candidate_load_factor: 0.8,
            epochs: 100,
            epochs_per_period: 10,
            epoch_duration: 1.0,
            rate_cap: 100.0,
            up: LogNormalParams::default(),
            down: LogNormalParams::default(),
            phy_efficiency_min: 0.25,
        }
    }
}

impl TraceEnsembleConfig {
    pub fn n_periods(&self) -> usize {
        self.epochs / self.epochs_per_period.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates must be >= 1"));
        }
        if self.epochs == 0 || self.epochs_per_period == 0 {
            return Err(Error::config("epochs and epochs_per_period must be >= 1"));
        }
        if !self.epochs.is_multiple_of(self.epochs_per_period) {
            return Err(Error::config("epochs must be a multiple of epochs_per_period"));
        }
        if !(self.candidate_load_factor > 0.0 && self.candidate_load_factor <= 1.0) {
            return Err(Error::config("candidate_load_factor must be in (0, 1]"));
        }
        if !(self.rate_cap > 0.0 && self.rate_cap.is_finite()) {
            return Err(Error::config("rate_cap must be > 0"));
        }
        if !(self.epoch_duration > 0.0 && self.epoch_duration.is_finite()) {
            return Err(Error::config("epoch_duration must be > 0"));
        }
        for (name, p) in [("up", self.up), ("down", self.down)] {
            if !(p.log_sd > 0.0 && p.log_sd.is_finite()) {
                return Err(Error::config(format!("{name}.log_sd must be > 0")));
            }
            if !p.log_mean.is_finite() {
                return Err(Error::config(format!("{name}.log_mean must be finite")));
            }
        }
        if !(self.phy_efficiency_min > 0.0 && self.phy_efficiency_min <= 1.0) {
            return Err(Error::config("phy_efficiency_min must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn station_ids(&self) -> Vec<(StationId, Role)> {
        let c = (1..=self.n_candidates).map(|i| (StationId(format!("c{i}")), Role::Candidate));
        let b = (1..=self.n_background).map(|i| (StationId(format!("b{i}")), Role::Background));
        c.chain(b).collect()
    }
}

/// One trace per station: candidates `c1..` first, then background `b1..`.
pub fn generate_ensemble(config: &TraceEnsembleConfig, seed: u64) -> Result<Vec<WorkloadTrace>> {
    config.validate()?;
    let up = LogNormal::new(config.up.log_mean, config.up.log_sd).map_err(|e| Error::config(format!("up: {e}")))?;
    let down =
        LogNormal::new(config.down.log_mean, config.down.log_sd).map_err(|e| Error::config(format!("down: {e}")))?;
    let mut rng = rng::seeded(seed);
    let periods = config.n_periods();

    let traces = config
        .station_ids()
        .into_iter()
        .map(|(station, role)| {
            let scale = if role == Role::Candidate { config.candidate_load_factor } else { 1.0 };
            let phy_efficiency = rng.random_range(config.phy_efficiency_min..=1.0);
            let mut epochs = Vec::with_capacity(config.epochs);
            for _ in 0..periods {
                let u: f64 = up.sample(&mut rng);
                let d: f64 = down.sample(&mut rng);
                let r = RatePair {
                    up: (u * scale).clamp(0.0, config.rate_cap),
                    down: (d * scale).clamp(0.0, config.rate_cap),
                };
                epochs.extend(std::iter::repeat_n(r, config.epochs_per_period));
            }
            WorkloadTrace {
                station,
                role,
                epochs,
                epochs_per_period: config.epochs_per_period,
                epoch_duration: config.epoch_duration,
                phy_efficiency,
            }
        })
        .collect();
    Ok(traces)
}

/// Trailing mean over the last `window` period rates of a series.
pub fn trailing_mean(rates: &[RatePair], period: usize, window: usize) -> RatePair {
    let lo = (period + 1).saturating_sub(window);
    let slice = &rates[lo..=period];
    let n = slice.len() as f64;
    RatePair { up: slice.iter().map(|r| r.up).sum::<f64>() / n, down: slice.iter().map(|r| r.down).sum::<f64>() / n }
}

/// Replaces each period's rates with the trailing mean of up to `window`
/// periods ending at it.
pub fn smooth_trace(trace: &WorkloadTrace, window: usize) -> Result<WorkloadTrace> {
    if window == 0 {
        return Err(Error::config("smoothing window must be >= 1"));
    }
    let rates = trace.period_rates();
    let smoothed: Vec<RatePair> = (0..rates.len()).map(|p| trailing_mean(&rates, p, window)).collect();
    Ok(trace.with_period_rates(&smoothed))
}

#[derive(Debug, Serialize, Deserialize)]
struct EpochRow {
    station: String,
    epoch: usize,
    up_mbps: f64,
    down_mbps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    station: String,
    role: Role,
    phy_efficiency: f64,
}

pub fn write_ensemble_csv<W: Write>(writer: W, traces: &[WorkloadTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in traces {
        for (epoch, r) in t.epochs.iter().enumerate() {
            w.serialize(EpochRow { station: t.station.0.clone(), epoch, up_mbps: r.up, down_mbps: r.down })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_stations_csv<W: Write>(writer: W, traces: &[WorkloadTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in traces {
        w.serialize(StationRow { station: t.station.0.clone(), role: t.role, phy_efficiency: t.phy_efficiency })?;
    }
    w.flush()?;
    Ok(())
}

/// Reassembles traces from the two CSVs written above.
pub fn read_ensemble_csv<R1: Read, R2: Read>(
    epochs: R1,
    stations: R2,
    epochs_per_period: usize,
    epoch_duration: f64,
) -> Result<Vec<WorkloadTrace>> {
    if epochs_per_period == 0 {
        return Err(Error::config("epochs_per_period must be >= 1"));
    }
    let mut out: Vec<WorkloadTrace> = Vec::new();
    for row in csv::Reader::from_reader(stations).deserialize::<StationRow>() {
        let row = row?;
        out.push(WorkloadTrace {
            station: row.station.into(),
            role: row.role,
            epochs: Vec::new(),
            epochs_per_period,
            epoch_duration,
            phy_efficiency: row.phy_efficiency,
        });
    }
    for row in csv::Reader::from_reader(epochs).deserialize::<EpochRow>() {
        let row = row?;
        let t = out
            .iter_mut()
            .find(|t| t.station.0 == row.station)
            .ok_or_else(|| Error::UnknownStation(row.station.clone()))?;
        if row.epoch != t.epochs.len() {
            return Err(Error::input(format!("station {}: epochs out of order at {}", row.station, row.epoch)));
        }
        t.epochs.push(RatePair { up: row.up_mbps, down: row.down_mbps });
    }
    for t in &out {
        if t.epochs.is_empty() || t.epochs.len() % epochs_per_period != 0 {
            return Err(Error::input(format!(
                "station {}: {} epochs is not a whole number of periods",
                t.station,
                t.epochs.len()
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rates: &[f64]) -> WorkloadTrace {
        WorkloadTrace {
            station: "c1".into(),
            role: Role::Candidate,
            epochs: rates.iter().flat_map(|&r| std::iter::repeat_n(RatePair { up: r, down: 0.0 }, 2)).collect(),
            epochs_per_period: 2,
            epoch_duration: 1.0,
            phy_efficiency: 1.0,
        }
    }

    #[test]
    fn defaults_shape() {
        let e = generate_ensemble(&TraceEnsembleConfig::default(), 1).unwrap();
        assert_eq!(e.len(), 8);
        for t in &e {
            assert_eq!(t.epochs.len(), 100);
            assert_eq!(t.n_periods(), 10);
            for p in t.epochs.chunks(10) {
                assert!(p.iter().all(|r| *r == p[0]));
            }
        }
        assert_eq!(e[0].station.as_str(), "c1");
        assert_eq!(e[7].station.as_str(), "b4");
    }

    #[test]
    fn same_seed_same_ensemble() {
        let c = TraceEnsembleConfig::default();
        assert_eq!(generate_ensemble(&c, 9).unwrap(), generate_ensemble(&c, 9).unwrap());
        assert_ne!(generate_ensemble(&c, 9).unwrap(), generate_ensemble(&c, 10).unwrap());
    }

    #[test]
    fn bad_sd_rejected() {
        let c = TraceEnsembleConfig { up: LogNormalParams { log_mean: 1.0, log_sd: 0.0 }, ..Default::default() };
        assert!(generate_ensemble(&c, 0).is_err());
    }

    #[test]
    fn smoothing_hand_values() {
        let s = smooth_trace(&trace(&[10.0, 0.0, 0.0, 0.0, 0.0]), 5).unwrap();
        let got: Vec<f64> = s.period_rates().iter().map(|r| r.up).collect();
        let want = [10.0, 5.0, 10.0 / 3.0, 2.5, 2.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!(smooth_trace(&trace(&[1.0]), 0).is_err());
        let t = trace(&[3.0, 1.0, 4.0]);
        assert_eq!(smooth_trace(&t, 1).unwrap(), t);
    }

    #[test]
    fn csv_round_trip() {
        let e = generate_ensemble(&TraceEnsembleConfig { epochs: 20, ..Default::default() }, 3).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_ensemble_csv(&mut a, &e).unwrap();
        write_stations_csv(&mut b, &e).unwrap();
        assert!(a.starts_with(b"station,epoch,up_mbps,down_mbps\n"));
        let back = read_ensemble_csv(&a[..], &b[..], 10, 1.0).unwrap();
        assert_eq!(back, e);
    }
}
