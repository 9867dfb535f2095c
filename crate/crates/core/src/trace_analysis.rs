//! Retry-probability segmentation, Negative Impact Score attribution and the
//! station-metric screens built on top of it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::station::StationId;
use crate::stats;

pub const DEFAULT_SEGMENT_SECS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub timestamp: f64,
    pub src: StationId,
    pub dst: StationId,
    pub direction: Direction,
    pub size: u64,
    pub retry: bool,
    pub rssi: Option<f64>,
    pub phyrate: Option<f64>,
}

impl PacketRecord {
    /// The non-AP end of the frame.
    pub fn user(&self) -> &StationId {
        match self.direction {
            Direction::Uplink => &self.src,
            Direction::Downlink => &self.dst,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    timestamp: f64,
    src: String,
    dst: String,
    direction: Direction,
    size: u64,
    retry: u8,
    rssi: Option<f64>,
    phyrate: Option<f64>,
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        if !(row.timestamp.is_finite() && row.timestamp >= 0.0) {
            return Err(Error::input(format!("row {}: timestamp must be finite and >= 0", i + 1)));
        }
        let retry = match row.retry {
            0 => false,
            1 => true,
            v => return Err(Error::input(format!("row {}: retry must be 0 or 1, got {v}", i + 1))),
        };
        out.push(PacketRecord {
            timestamp: row.timestamp,
            src: row.src.into(),
            dst: row.dst.into(),
            direction: row.direction,
            size: row.size,
            retry,
            rssi: row.rssi,
            phyrate: row.phyrate,
        });
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(writer: W, records: &[PacketRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(CsvRow {
            timestamp: r.timestamp,
            src: r.src.0.clone(),
            dst: r.dst.0.clone(),
            direction: r.direction,
            size: r.size,
            retry: r.retry as u8,
            rssi: r.rssi,
            phyrate: r.phyrate,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    /// 1-based; segment `t` covers `[(t-1)·d, t·d)`.
    pub index: u64,
    pub frames: usize,
    pub retried: usize,
    pub retry_prob: f64,
    pub active_users: BTreeSet<StationId>,
    pub entered: BTreeSet<StationId>,
    pub departed: BTreeSet<StationId>,
}

fn check_sorted(records: &[PacketRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    for (i, w) in records.windows(2).enumerate() {
        if w[1].timestamp < w[0].timestamp {
            return Err(Error::UnsortedTrace { index: i + 1, timestamp: w[1].timestamp });
        }
    }
    Ok(())
}

/// Bins frames into fixed-length segments and tracks which users come and go.
///
/// Only non-empty segments are returned. A user enters at `t` when it has
/// frames in `t` but not in `t-1`; an empty `t-1` counts as nobody active.
/// The first segment of the capture has no entrants, since activity before the
/// capture started is unknown.
pub fn segment_trace(records: &[PacketRecord], segment_duration: f64) -> Result<Vec<SegmentStats>> {
    if !(segment_duration.is_finite() && segment_duration > 0.0) {
        return Err(Error::config("segment duration must be > 0"));
    }
    check_sorted(records)?;

    let mut bins: BTreeMap<u64, (usize, usize, BTreeSet<StationId>)> = BTreeMap::new();
    for r in records {
        let t = (r.timestamp / segment_duration).floor() as u64 + 1;
        let e = bins.entry(t).or_default();
        e.0 += 1;
        e.1 += r.retry as usize;
        e.2.insert(r.user().clone());
    }

    let mut out: Vec<SegmentStats> = Vec::with_capacity(bins.len());
    let empty = BTreeSet::new();
    for (index, (frames, retried, active)) in bins {
        let (entered, departed) = match out.last() {
            None => (BTreeSet::new(), BTreeSet::new()),
            Some(prev) => {
                let prev_active = if prev.index + 1 == index { &prev.active_users } else { &empty };
                (active.difference(prev_active).cloned().collect(), prev_active.difference(&active).cloned().collect())
            }
        };
        out.push(SegmentStats {
            index,
            frames,
            retried,
            retry_prob: retried as f64 / frames as f64,
            active_users: active,
            entered,
            departed,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    /// One of the two components was never observed and counts as zero.
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NisScore {
    pub user: StationId,
    pub mu_e_hat: f64,
    pub mu_d_hat: f64,
    pub n_entries: usize,
    pub n_departures: usize,
    pub nis: f64,
    pub confidence: Confidence,
}

/// Attributes retry-probability jumps to sole entrants and sole leavers.
pub fn compute_nis(segments: &[SegmentStats]) -> Result<BTreeMap<StationId, NisScore>> {
    if segments.len() < 2 {
        return Err(Error::input("NIS needs at least 2 segments"));
    }
    let mut deltas: BTreeMap<&StationId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for w in segments.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        if prev.index + 1 != cur.index {
            continue;
        }
        let d = cur.retry_prob - prev.retry_prob;
        if cur.entered.len() == 1 && cur.departed.is_empty() {
            let u = cur.entered.iter().next().unwrap();
            deltas.entry(u).or_default().0.push(d);
        } else if cur.departed.len() == 1 && cur.entered.is_empty() {
            let u = cur.departed.iter().next().unwrap();
            deltas.entry(u).or_default().1.push(d);
        }
    }

    Ok(deltas
        .into_iter()
        .map(|(u, (de, dd))| {
            let mu_e = if de.is_empty() { 0.0 } else { stats::mean(&de) };
            let mu_d = if dd.is_empty() { 0.0 } else { stats::mean(&dd) };
            let confidence = if de.is_empty() || dd.is_empty() { Confidence::Low } else { Confidence::High };
            let score = NisScore {
                user: u.clone(),
                mu_e_hat: mu_e,
                mu_d_hat: mu_d,
                n_entries: de.len(),
                n_departures: dd.len(),
                nis: mu_e.abs() + mu_d.abs(),
                confidence,
            };
            (u.clone(), score)
        })
        .collect())
}

/// Scores sorted by NIS, highest first; ties go to the smaller user id.
pub fn rank_nis(scores: &BTreeMap<StationId, NisScore>) -> Vec<NisScore> {
    let mut v: Vec<NisScore> = scores.values().cloned().collect();
    v.sort_by(|a, b| b.nis.total_cmp(&a.nis).then_with(|| a.user.cmp(&b.user)));
    v
}

pub fn write_nis_report<W: Write>(writer: W, ranked: &[NisScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user", "mu_e", "mu_d", "n", "m", "nis", "rank", "confidence"])?;
    for (i, s) in ranked.iter().enumerate() {
        let conf = match s.confidence {
            Confidence::High => "high",
            Confidence::Low => "low",
        };
        w.write_record([
            s.user.to_string(),
            s.mu_e_hat.to_string(),
            s.mu_d_hat.to_string(),
            s.n_entries.to_string(),
            s.n_departures.to_string(),
            s.nis.to_string(),
            (i + 1).to_string(),
            conf.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationMetrics {
    /// Downlink bytes per second over the user's active span.
    pub rx: f64,
    pub tx: f64,
    pub size: f64,
    pub rssi: Option<f64>,
    pub phyrate: Option<f64>,
    pub packets: usize,
    /// None for a single frame.
    pub iat: Option<f64>,
    pub retries: f64,
}

pub fn station_metrics(records: &[PacketRecord], user: &StationId) -> Result<StationMetrics> {
    let mine: Vec<&PacketRecord> = records.iter().filter(|r| r.user() == user).collect();
    if mine.is_empty() {
        return Err(Error::NoFramesForUser(user.to_string()));
    }
    let n = mine.len();
    let first = mine.iter().map(|r| r.timestamp).fold(f64::INFINITY, f64::min);
    let last = mine.iter().map(|r| r.timestamp).fold(f64::NEG_INFINITY, f64::max);
    // n frames spaced g apart occupy n·g seconds, not (n-1)·g.
    let span = if n >= 2 && last > first { (last - first) * n as f64 / (n - 1) as f64 } else { 1.0 };

    let bytes = |d: Direction| mine.iter().filter(|r| r.direction == d).map(|r| r.size as f64).sum::<f64>();
    let opt_mean = |f: fn(&PacketRecord) -> Option<f64>| {
        let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    };

    let mut ts: Vec<f64> = mine.iter().map(|r| r.timestamp).collect();
    ts.sort_by(f64::total_cmp);
    let iat = (n >= 2).then(|| (ts[n - 1] - ts[0]) / (n - 1) as f64);

    Ok(StationMetrics {
        rx: bytes(Direction::Downlink) / span,
        tx: bytes(Direction::Uplink) / span,
        size: mine.iter().map(|r| r.size as f64).sum::<f64>() / n as f64,
        rssi: opt_mean(|r| r.rssi),
        phyrate: opt_mean(|r| r.phyrate),
        packets: n,
        iat,
        retries: mine.iter().filter(|r| r.retry).count() as f64 / n as f64,
    })
}

/// Metrics for every user seen in the trace.
pub fn all_station_metrics(records: &[PacketRecord]) -> BTreeMap<StationId, StationMetrics> {
    let users: BTreeSet<&StationId> = records.iter().map(|r| r.user()).collect();
    users.into_iter().map(|u| (u.clone(), station_metrics(records, u).expect("user taken from the trace"))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rx,
    Tx,
    Size,
    Rssi,
    Phyrate,
    Packets,
    Iat,
    Retries,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Rx,
        Metric::Tx,
        Metric::Size,
        Metric::Rssi,
        Metric::Phyrate,
        Metric::Packets,
        Metric::Iat,
        Metric::Retries,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rx => "rx",
            Metric::Tx => "tx",
            Metric::Size => "size",
            Metric::Rssi => "rssi",
            Metric::Phyrate => "phyrate",
            Metric::Packets => "packets",
            Metric::Iat => "iat",
            Metric::Retries => "retries",
        }
    }

    pub fn value(self, m: &StationMetrics) -> Option<f64> {
        match self {
            Metric::Rx => Some(m.rx),
            Metric::Tx => Some(m.tx),
            Metric::Size => Some(m.size),
            Metric::Rssi => m.rssi,
            Metric::Phyrate => m.phyrate,
            Metric::Packets => Some(m.packets as f64),
            Metric::Iat => m.iat,
            Metric::Retries => Some(m.retries),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::input(format!("unknown metric {s:?}")))
    }
}

/// Splits users into the top NIS tercile (class 0) and the rest (class 1).
///
/// The top group takes the `ceil(n/3)` highest scores plus anyone tied with the
/// last of them.
pub fn tercile_classes(nis: &BTreeMap<StationId, f64>) -> BTreeMap<StationId, u8> {
    let mut v: Vec<(&StationId, f64)> = nis.iter().map(|(u, s)| (u, *s)).collect();
    if v.is_empty() {
        return BTreeMap::new();
    }
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let k = v.len().div_ceil(3);
    let cut = v[k - 1].1;
    v.into_iter().map(|(u, s)| (u.clone(), if s >= cut { 0 } else { 1 })).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricScreen {
    pub metric: Metric,
    pub f: f64,
    pub p: f64,
    pub significant: bool,
    pub degenerate: bool,
    pub n_top: usize,
    pub n_rest: usize,
}

/// One-way ANOVA of each station metric between the top NIS tercile and the
/// rest, sorted by p-value.
pub fn anova_screen(
    metrics: &BTreeMap<StationId, StationMetrics>,
    nis: &BTreeMap<StationId, NisScore>,
) -> Result<Vec<MetricScreen>> {
    let scores: BTreeMap<StationId, f64> =
        nis.iter().filter(|(u, _)| metrics.contains_key(*u)).map(|(u, s)| (u.clone(), s.nis)).collect();
    let classes = tercile_classes(&scores);
    let n_top = classes.values().filter(|&&c| c == 0).count();
    let n_rest = classes.len() - n_top;
    if n_top < 2 || n_rest < 2 {
        return Err(Error::DegenerateGrouping(format!(
            "top tercile has {n_top} user(s), rest has {n_rest}; need at least 2 each"
        )));
    }

    let mut out = Vec::new();
    for metric in Metric::ALL {
        let mut groups = [Vec::new(), Vec::new()];
        for (u, &c) in &classes {
            if let Some(v) = metric.value(&metrics[u]) {
                groups[c as usize].push(v);
            }
        }
        if groups[0].len() < 2 || groups[1].len() < 2 {
            continue;
        }
        let r = stats::one_way_anova(&[&groups[0], &groups[1]])?;
        out.push(MetricScreen {
            metric,
            f: r.f,
            p: r.p,
            significant: r.p < 0.05,
            degenerate: r.degenerate,
            n_top: groups[0].len(),
            n_rest: groups[1].len(),
        });
    }
    out.sort_by(|a, b| a.p.total_cmp(&b.p).then_with(|| a.metric.cmp(&b.metric)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TercileStudy {
    pub model_mean: f64,
    pub model_halfwidth: f64,
    pub random_mean: f64,
    pub random_halfwidth: f64,
    /// Per-round success rates (model, random).
    pub rounds: Vec<(f64, f64)>,
    /// Held-out predictions that fell back to the training majority class
    /// because the metric had no spread.
    pub fallbacks: usize,
}

fn mean_halfwidth(xs: &[f64]) -> (f64, f64) {
    (stats::mean(xs), 1.96 * stats::sample_sd(xs))
}

/// Leave-one-out tercile classification from a single metric, against a
/// baseline that guesses the top tercile with probability 1/3.
pub fn tercile_prediction_study(
    metrics: &BTreeMap<StationId, StationMetrics>,
    nis: &BTreeMap<StationId, NisScore>,
    top_metric: Metric,
    rounds: usize,
    users_per_round: usize,
    seed: u64,
) -> Result<TercileStudy> {
    if rounds == 0 || users_per_round == 0 {
        return Err(Error::config("rounds and users_per_round must be >= 1"));
    }
    let scores: BTreeMap<StationId, f64> = nis
        .iter()
        .filter(|(u, _)| metrics.get(*u).and_then(|m| top_metric.value(m)).is_some())
        .map(|(u, s)| (u.clone(), s.nis))
        .collect();
    if scores.len() < 3 {
        return Err(Error::input(format!(
            "tercile study needs at least 3 users with {}, got {}",
            top_metric.name(),
            scores.len()
        )));
    }
    let classes = tercile_classes(&scores);
    let users: Vec<(f64, f64)> =
        classes.iter().map(|(u, &c)| (top_metric.value(&metrics[u]).unwrap(), c as f64)).collect();
    let n = users.len();

    let mut rng = rng::seeded(seed);
    let mut per_round = Vec::with_capacity(rounds);
    let mut fallbacks = 0;
    for _ in 0..rounds {
        let held: Vec<usize> = if users_per_round <= n {
            sample(&mut rng, n, users_per_round).into_vec()
        } else {
            (0..users_per_round).map(|_| rng.random_range(0..n)).collect()
        };
        let mut model_ok = 0usize;
        let mut random_ok = 0usize;
        for &h in &held {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                users.iter().enumerate().filter(|(i, _)| *i != h).map(|(_, p)| *p).unzip();
            let truth = users[h].1;
            let pred = match stats::simple_regression(&xs, &ys) {
                Some((a, b)) => {
                    if a + b * users[h].0 >= 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                }
                None => {
                    fallbacks += 1;
                    let ones = ys.iter().filter(|&&y| y == 1.0).count();
                    if 2 * ones >= ys.len() {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            model_ok += (pred == truth) as usize;
            let guess = if rng.random_bool(1.0 / 3.0) { 0.0 } else { 1.0 };
            random_ok += (guess == truth) as usize;
        }
        let k = held.len() as f64;
        per_round.push((model_ok as f64 / k, random_ok as f64 / k));
    }
    let model: Vec<f64> = per_round.iter().map(|r| r.0).collect();
    let random: Vec<f64> = per_round.iter().map(|r| r.1).collect();
    let (model_mean, model_halfwidth) = mean_halfwidth(&model);
    let (random_mean, random_halfwidth) = mean_halfwidth(&random);
    Ok(TercileStudy { model_mean, model_halfwidth, random_mean, random_halfwidth, rounds: per_round, fallbacks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ts: f64, user: &str, retry: bool) -> PacketRecord {
        PacketRecord {
            timestamp: ts,
            src: user.into(),
            dst: "ap".into(),
            direction: Direction::Uplink,
            size: 100,
            retry,
            rssi: None,
            phyrate: None,
        }
    }

    #[test]
    fn two_frames_two_segments() {
        let s = segment_trace(&[rec(0.1, "a", false), rec(1.5, "a", false)], 1.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.frames == 1));
        assert_eq!((s[0].index, s[1].index), (1, 2));
    }

    #[test]
    fn all_retries() {
        let recs: Vec<_> = (0..20).map(|i| rec(i as f64 * 0.5, "a", true)).collect();
        let s = segment_trace(&recs, 2.0).unwrap();
        assert!(s.iter().all(|x| x.retry_prob == 1.0));
    }

    #[test]
    fn empty_and_unsorted() {
        assert!(matches!(segment_trace(&[], 1.0), Err(Error::EmptyTrace)));
        let e = segment_trace(&[rec(2.0, "a", false), rec(1.0, "a", false)], 1.0);
        assert!(matches!(e, Err(Error::UnsortedTrace { index: 1, .. })));
        assert!(e.unwrap_err().to_string().contains("unsorted trace"));
    }

    #[test]
    fn sole_entrant_substitution() {
        let seg = |index, r: f64, active: &[&str], entered: &[&str]| SegmentStats {
            index,
            frames: 10,
            retried: (r * 10.0) as usize,
            retry_prob: r,
            active_users: active.iter().map(|&s| s.into()).collect(),
            entered: entered.iter().map(|&s| s.into()).collect(),
            departed: BTreeSet::new(),
        };
        let nis = compute_nis(&[seg(1, 0.2, &["b"], &[]), seg(2, 0.3, &["a", "b"], &["a"])]).unwrap();
        let a = &nis[&StationId::from("a")];
        assert!((a.mu_e_hat - 0.1).abs() < 1e-12);
        assert!((a.nis - 0.1).abs() < 1e-12);
        assert_eq!(a.confidence, Confidence::Low);
        assert!(!nis.contains_key(&StationId::from("b")));

        let nis = compute_nis(&[seg(1, 0.3, &["b"], &[]), seg(2, 0.3, &["a", "b"], &["a"])]).unwrap();
        assert_eq!(nis[&StationId::from("a")].nis, 0.0);
    }

    #[test]
    fn metrics_examples() {
        let recs: Vec<_> = (0..10)
            .map(|i| PacketRecord {
                direction: Direction::Downlink,
                src: "ap".into(),
                dst: "u".into(),
                size: 1000,
                ..rec(i as f64, "u", i < 3)
            })
            .collect();
        let m = station_metrics(&recs, &"u".into()).unwrap();
        assert!((m.rx - 1000.0).abs() < 1e-9);
        assert_eq!(m.tx, 0.0);
        assert_eq!(m.packets, 10);
        assert_eq!(m.iat, Some(1.0));
        assert!((m.retries - 0.3).abs() < 1e-12);
        assert!(matches!(station_metrics(&recs, &"x".into()), Err(Error::NoFramesForUser(_))));
    }

    #[test]
    fn tercile_boundary_ties_go_top() {
        let nis: BTreeMap<StationId, f64> = [("a", 3.0), ("b", 2.0), ("c", 2.0), ("d", 1.0), ("e", 0.5)]
            .into_iter()
            .map(|(u, s)| (u.into(), s))
            .collect();
        let c = tercile_classes(&nis);
        let top: Vec<_> = c.iter().filter(|(_, &v)| v == 0).map(|(u, _)| u.as_str()).collect();
        assert_eq!(top, ["a", "b", "c"]);
    }

    #[test]
    fn csv_round_trip() {
        let mut recs = vec![rec(0.0, "a", true), rec(1.0, "b", false)];
        recs[1].rssi = Some(-60.5);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,src,dst,direction,size,retry,rssi,phyrate\n"));
        assert_eq!(read_trace_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn csv_rejects_bad_retry() {
        let text = "timestamp,src,dst,direction,size,retry,rssi,phyrate\n0,a,ap,uplink,10,2,,\n";
        assert!(read_trace_csv(text.as_bytes()).is_err());
    }
}
