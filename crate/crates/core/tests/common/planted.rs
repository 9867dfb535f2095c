//! Synthetic capture with one planted high-impact user.
//!
//! The retry probability follows a scripted schedule: the planted user `x`
//! raises it by 0.10 on entry and lowers it by 0.05 on departure, `n1..n4`
//! nudge it by at most 0.01 per event, and quiet segments relax it towards
//! 0.30. Two background users stay active throughout.

use std::collections::{BTreeMap, BTreeSet};

use hetnet_core::trace_analysis::{Direction, PacketRecord};
use hetnet_core::StationId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEGMENTS: usize = 100;
pub const FRAMES: usize = 400;
pub const PLANTED: &str = "x";
pub const ENTRY_EFFECT: f64 = 0.10;
pub const DEPARTURE_EFFECT: f64 = -0.05;

const TOGGLERS: [(&str, f64); 5] = [("x", 0.2), ("n1", 0.1), ("n2", 0.1), ("n3", 0.1), ("n4", 0.1)];
const BACKGROUND: [&str; 2] = ["bg1", "bg2"];

pub struct PlantedTrace {
    pub records: Vec<PacketRecord>,
    /// Realized retry probability per segment.
    pub r: Vec<f64>,
    /// Active users per segment.
    pub present: Vec<BTreeSet<String>>,
}

pub fn planted_trace(seed: u64) -> PlantedTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut on: Vec<bool> = TOGGLERS.iter().map(|_| rng.random_bool(0.5)).collect();
    let mut level: f64 = 0.30;
    let mut records = Vec::new();
    let mut r = Vec::new();
    let mut present = Vec::new();

    for t in 0..SEGMENTS {
        if t > 0 {
            let mut delta = 0.0;
            let mut events = 0;
            for (i, &(name, p)) in TOGGLERS.iter().enumerate() {
                if rng.random_bool(p) {
                    on[i] = !on[i];
                    events += 1;
                    delta += match (name == PLANTED, on[i]) {
                        (true, true) => ENTRY_EFFECT,
                        (true, false) => DEPARTURE_EFFECT,
                        _ => rng.random_range(-0.01..0.01),
                    };
                }
            }
            if events == 0 {
                delta = (0.30 - level).clamp(-0.05, 0.05);
            }
            level = (level + delta).clamp(0.01, 0.99);
        }

        let mut users: Vec<String> = BACKGROUND.iter().map(|s| s.to_string()).collect();
        users.extend(TOGGLERS.iter().zip(&on).filter(|(_, &o)| o).map(|((n, _), _)| n.to_string()));
        let retried = (level * FRAMES as f64).round() as usize;
        for f in 0..FRAMES {
            let user = &users[f % users.len()];
            records.push(PacketRecord {
                timestamp: t as f64 + (f as f64 + 0.5) / FRAMES as f64,
                src: StationId::new(user.as_str()),
                dst: StationId::new("ap"),
                direction: Direction::Uplink,
                size: 1000,
                retry: f < retried,
                rssi: None,
                phyrate: None,
            });
        }
        r.push(retried as f64 / FRAMES as f64);
        present.push(users.into_iter().collect());
    }
    PlantedTrace { records, r, present }
}

/// NIS per user straight from the scripted schedule.
pub fn scripted_nis(trace: &PlantedTrace) -> BTreeMap<String, f64> {
    let mut de: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dd: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in 1..trace.r.len() {
        let entered: Vec<&String> = trace.present[t].difference(&trace.present[t - 1]).collect();
        let departed: Vec<&String> = trace.present[t - 1].difference(&trace.present[t]).collect();
        let d = trace.r[t] - trace.r[t - 1];
        if entered.len() == 1 && departed.is_empty() {
            de.entry(entered[0].clone()).or_default().push(d);
        } else if departed.len() == 1 && entered.is_empty() {
            dd.entry(departed[0].clone()).or_default().push(d);
        }
    }
    let avg = |v: Option<&Vec<f64>>| v.map_or(0.0, |v| v.iter().sum::<f64>() / v.len() as f64);
    let users: BTreeSet<&String> = de.keys().chain(dd.keys()).collect();
    users.into_iter().map(|u| (u.clone(), avg(de.get(u)).abs() + avg(dd.get(u)).abs())).collect()
}
