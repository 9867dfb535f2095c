//! Small statistics helpers shared by the trace analysis and the studies.

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    /// Within-group variance is zero while between-group variance is not, so
    /// F is infinite and p is reported as 0.
    pub degenerate: bool,
}

/// One-way analysis of variance across `groups`.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::DegenerateGrouping(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::DegenerateGrouping(format!("group with {} member(s); need at least 2", g.len())));
    }
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n_total as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n_total - groups.len();

    // Rounding noise on exactly-equal means must not look like an effect.
    let scale = groups.iter().flat_map(|g| g.iter()).map(|x| (x - grand).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let ss_between = if ss_between <= tol { 0.0 } else { ss_between };
    let ss_within = if ss_within <= tol { 0.0 } else { ss_within };

    let (f, p, degenerate) = match (ss_between == 0.0, ss_within == 0.0) {
        (true, _) => (0.0, 1.0, false),
        (false, true) => (f64::INFINITY, 0.0, true),
        (false, false) => {
            let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
            let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
                .map_err(|e| Error::input(format!("F distribution: {e}")))?;
            (f, dist.sf(f).clamp(0.0, 1.0), false)
        }
    };
    Ok(AnovaResult { f, p, df_between, df_within, ss_between, ss_within, degenerate })
}

/// Ordinary least squares `y = a + b x`. Returns `None` when `x` has no spread.
pub fn simple_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    debug_assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}
