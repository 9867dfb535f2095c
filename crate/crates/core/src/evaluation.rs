//! Scores and summaries for both studies.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::controller::ExperimentLog;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

/// Collision improvement score: the achieved reduction as a fraction of the
/// clairvoyant reduction.
pub fn cis(p0: f64, pp: f64, pcv: f64) -> Result<f64> {
    if p0 == pcv {
        return Err(Error::DegeneratePeriod);
    }
    if p0 < pcv {
        return Err(Error::input(format!("clairvoyant collision {pcv} above no-offload {p0}")));
    }
    Ok((p0 - pp) / (p0 - pcv))
}

pub fn prediction_accuracy<T: PartialEq>(selections: &[T], clairvoyant: &[T]) -> Result<f64> {
    if selections.is_empty() {
        return Err(Error::input("no predictions to score"));
    }
    if selections.len() != clairvoyant.len() {
        return Err(Error::DimensionMismatch { expected: clairvoyant.len(), found: selections.len() });
    }
    let hits = selections.iter().zip(clairvoyant).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / selections.len() as f64)
}

/// Min-max scaling of one sample's KPI across models; all equal gives 0.5 each.
pub fn normalize_performance(f: &[f64]) -> Result<Vec<f64>> {
    if f.len() < 2 {
        return Err(Error::input("normalization needs at least 2 models"));
    }
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; f.len()]);
    }
    Ok(f.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// `out[0] = r[0]`; `out[k]` is the mean of `r[0..k]` (the values before `k`).
pub fn running_average(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.len());
    let mut sum = 0.0;
    for (k, &v) in r.iter().enumerate() {
        out.push(if k == 0 { v } else { sum / k as f64 });
        sum += v;
    }
    out
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    (stats::mean(xs), stats::std_error(xs))
}

/// Share of bootstrap resamples (over rows) in which the column means keep the
/// given strict descending order.
pub fn bootstrap_order_fraction(columns: &[&[f64]], resamples: usize, seed: u64) -> Result<f64> {
    let n = columns.first().map(|c| c.len()).unwrap_or(0);
    if n == 0 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::input("bootstrap needs equal-length, non-empty columns"));
    }
    let mut rng = rng::seeded(seed);
    let mut hits = 0usize;
    let mut sums = vec![0.0; columns.len()];
    for _ in 0..resamples {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            for (s, c) in sums.iter_mut().zip(columns) {
                *s += c[i];
            }
        }
        if sums.windows(2).all(|w| w[0] > w[1]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / resamples.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    /// Final running-average normalized KPI; absent for reference policies,
    /// which are not part of the normalization.
    pub kpi: Option<f64>,
    pub cp: f64,
    pub lifi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    /// `r̄_m(k)` for each compared model over the evaluated samples.
    pub curves: BTreeMap<String, Vec<f64>>,
    pub rows: Vec<SummaryRow>,
}

/// Normalizes KPIs per sample across the `compared` models of each replica,
/// takes running averages, then averages over replicas. CP and the LiFi
/// multiplier (relative to the `reference` policy) are reported for every
/// label present.
pub fn aggregate_experiments(
    replicas: &[Vec<ExperimentLog>],
    compared: &[String],
    reference: &str,
) -> Result<ExperimentSummary> {
    if replicas.is_empty() {
        return Err(Error::input("no experiment replicas"));
    }
    let labels: Vec<String> = replicas[0].iter().map(|l| l.label.clone()).collect();
    let find = |rep: &[ExperimentLog], label: &str| -> Result<ExperimentLog> {
        rep.iter()
            .find(|l| l.label == label)
            .cloned()
            .ok_or_else(|| Error::input(format!("replica is missing a log for {label}")))
    };
    let t = replicas[0][0].evaluated().len();
    if t == 0 {
        return Err(Error::input("experiment logs have no post-exploration samples"));
    }
    for rep in replicas {
        for l in rep {
            if l.evaluated().len() != t {
                return Err(Error::DimensionMismatch { expected: t, found: l.evaluated().len() });
            }
        }
    }

    let mut curves: BTreeMap<String, Vec<f64>> = compared.iter().map(|m| (m.clone(), vec![0.0; t])).collect();
    for rep in replicas {
        let logs = compared.iter().map(|m| find(rep, m)).collect::<Result<Vec<_>>>()?;
        let mut r = vec![Vec::with_capacity(t); logs.len()];
        for j in 0..t {
            let f: Vec<f64> = logs.iter().map(|l| l.evaluated()[j].kpi).collect();
            for (m, v) in normalize_performance(&f)?.into_iter().enumerate() {
                r[m].push(v);
            }
        }
        for (m, name) in compared.iter().enumerate() {
            let ra = running_average(&r[m]);
            let curve = curves.get_mut(name).expect("initialized above");
            for (c, v) in curve.iter_mut().zip(ra) {
                *c += v / replicas.len() as f64;
            }
        }
    }

    let mean_of = |label: &str, f: fn(&crate::controller::LogSample) -> f64| -> Result<f64> {
        let mut v = Vec::new();
        for rep in replicas {
            v.extend(find(rep, label)?.evaluated().iter().map(f));
        }
        Ok(stats::mean(&v))
    };
    let ref_lifi = mean_of(reference, |s| s.lifi_served)?;
    let mut rows = Vec::new();
    for label in &labels {
        let lifi = mean_of(label, |s| s.lifi_served)?;
        rows.push(SummaryRow {
            model: label.clone(),
            kpi: curves.get(label).map(|c| c[t - 1]),
            cp: mean_of(label, |s| s.collision)?,
            lifi: if ref_lifi > 0.0 { lifi / ref_lifi } else { f64::NAN },
        });
    }
    Ok(ExperimentSummary { curves, rows })
}

pub fn write_curves_csv<W: Write>(writer: W, summary: &ExperimentSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "model", "r_bar"])?;
    let t = summary.curves.values().next().map(|c| c.len()).unwrap_or(0);
    for k in 0..t {
        for (m, c) in &summary.curves {
            w.write_record([(k + 1).to_string(), m.clone(), c[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_table4_csv<W: Write>(writer: W, summary: &ExperimentSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "KPI", "CP", "LiFi"])?;
    for r in &summary.rows {
        w.write_record([
            r.model.clone(),
            r.kpi.map(|v| v.to_string()).unwrap_or_default(),
            r.cp.to_string(),
            r.lifi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cis_examples() {
        assert_eq!(cis(0.2, 0.15, 0.15).unwrap(), 1.0);
        assert_eq!(cis(0.2, 0.2, 0.15).unwrap(), 0.0);
        assert_abs_diff_eq!(cis(0.200, 0.180, 0.168).unwrap(), 0.625, epsilon = 1e-12);
        assert!(matches!(cis(0.2, 0.1, 0.2), Err(Error::DegeneratePeriod)));
        assert!(cis(0.1, 0.1, 0.2).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(prediction_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(prediction_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(prediction_accuracy::<usize>(&[], &[]).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_performance(&[10.0, 20.0, 15.0]).unwrap(), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_performance(&[3.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert!(normalize_performance(&[1.0]).is_err());
    }

    #[test]
    fn running_average_examples() {
        assert_eq!(running_average(&[0.0, 1.0, 1.0]), vec![0.0, 0.0, 0.5]);
        assert_eq!(running_average(&[0.7]), vec![0.7]);
        assert_eq!(running_average(&[0.25; 5]), vec![0.25; 5]);
    }
}
