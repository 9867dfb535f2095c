//! Pen-tree antenna alignment: probe the corners and center of a search
//! rectangle, find the heat epicenter of the round-trip times, quarter the
//! area around it and repeat.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRect {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
}

impl SearchRect {
    pub fn new(center: (f64, f64), width: f64, height: f64) -> Result<SearchRect> {
        let r = SearchRect { center, width, height };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.center.0.is_finite() && self.center.1.is_finite();
        if !(finite && self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::input(format!(
                "degenerate search rectangle {}x{} at ({}, {})",
                self.width, self.height, self.center.0, self.center.1
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.center.0 - self.width / 2.0, self.center.0 + self.width / 2.0)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.center.1 - self.height / 2.0, self.center.1 + self.height / 2.0)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let tol = 1e-9 * self.diagonal();
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        p.0 >= x0 - tol && p.0 <= x1 + tol && p.1 >= y0 - tol && p.1 <= y1 + tol
    }

    /// Four corners (counter-clockwise from bottom-left), then the center.
    pub fn probe_points(&self) -> [(f64, f64); 5] {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1), self.center]
    }

    /// Row-major `n × n` lattice spanning the rectangle, edges included.
    pub fn lattice(&self, n: usize) -> Vec<(f64, f64)> {
        let (x0, _) = self.x_range();
        let (y0, _) = self.y_range();
        let step = |len: f64, i: usize| if n > 1 { len * i as f64 / (n - 1) as f64 } else { len / 2.0 };
        let mut v = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                v.push((x0 + step(self.width, c), y0 + step(self.height, r)));
            }
        }
        v
    }

    /// Half-size rectangle centered as close to `at` as fits inside `outer`.
    pub fn quarter_around(&self, at: (f64, f64), outer: &SearchRect) -> SearchRect {
        let (w, h) = (self.width / 2.0, self.height / 2.0);
        let (ox0, ox1) = outer.x_range();
        let (oy0, oy1) = outer.y_range();
        let cx = at.0.clamp(ox0 + w / 2.0, ox1 - w / 2.0);
        let cy = at.1.clamp(oy0 + h / 2.0, oy1 - h / 2.0);
        SearchRect { center: (cx, cy), width: w, height: h }
    }
}

/// Something that answers a ping from a given antenna aim point.
pub trait RttField {
    /// Round-trip time in ms; finite and positive.
    fn probe(&mut self, x: f64, y: f64) -> f64;
}

/// `base + slope · distance-to-optimum`, plus optional Gaussian noise floored
/// at a small positive value.
#[derive(Debug, Clone)]
pub struct RadialField {
    pub optimum: (f64, f64),
    pub base: f64,
    pub slope: f64,
    noise: Option<(Normal<f64>, rand_chacha::ChaCha8Rng)>,
}

impl RadialField {
    pub fn new(optimum: (f64, f64), base: f64, slope: f64) -> RadialField {
        RadialField { optimum, base, slope, noise: None }
    }

    pub fn with_noise(mut self, sd: f64, seed: u64) -> Result<RadialField> {
        if sd > 0.0 {
            let n = Normal::new(0.0, sd).map_err(|e| Error::config(format!("noise sd: {e}")))?;
            self.noise = Some((n, rng::seeded(seed)));
        }
        Ok(self)
    }

    pub fn noiseless_rtt(&self, x: f64, y: f64) -> f64 {
        self.base + self.slope * (x - self.optimum.0).hypot(y - self.optimum.1)
    }
}

impl RttField for RadialField {
    fn probe(&mut self, x: f64, y: f64) -> f64 {
        let v = self.noiseless_rtt(x, y);
        match &mut self.noise {
            Some((n, r)) => (v + n.sample(r as &mut dyn RngCore)).max(1e-3),
            None => v,
        }
    }
}

impl<F: FnMut(f64, f64) -> f64> RttField for F {
    fn probe(&mut self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// Quartic-kernel heat map over a `grid_n × grid_n` lattice of `rect`; lower
/// RTT means more heat. Returns the hottest lattice point, first in row-major
/// order on ties.
pub fn qkde_epicenter(
    points: &[(f64, f64)],
    rtts: &[f64],
    rect: &SearchRect,
    grid_n: usize,
    bandwidth: f64,
) -> Result<(f64, f64)> {
    rect.validate()?;
    if points.is_empty() || points.len() != rtts.len() {
        return Err(Error::input(format!("{} probe points but {} RTTs", points.len(), rtts.len())));
    }
    if grid_n == 0 {
        return Err(Error::config("grid_n must be >= 1"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config("bandwidth must be positive"));
    }
    if let Some(r) = rtts.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::input(format!("round-trip time {r} must be positive and finite")));
    }
    if let Some(p) = points.iter().find(|p| !rect.contains(**p)) {
        return Err(Error::input(format!("probe point ({}, {}) outside the search rectangle", p.0, p.1)));
    }

    let max = rtts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = rtts.iter().map(|r| max - r).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> =
        if total > 0.0 { raw.iter().map(|w| w / total).collect() } else { vec![1.0 / rtts.len() as f64; rtts.len()] };

    let mut best = (f64::NEG_INFINITY, rect.center);
    for g in rect.lattice(grid_n) {
        let heat: f64 = points
            .iter()
            .zip(&weights)
            .map(|(p, w)| {
                let u = (g.0 - p.0).hypot(g.1 - p.1) / bandwidth;
                if u <= 1.0 {
                    w * (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .sum();
        if heat > best.0 {
            best = (heat, g);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub eps: f64,
    pub max_iter: usize,
    pub grid_n: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { eps: 0.01, max_iter: 10, grid_n: 33 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignStep {
    pub iter: usize,
    pub rect: SearchRect,
    pub epicenter: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignResult {
    pub position: (f64, f64),
    pub iterations: usize,
    pub probes: usize,
    pub steps: Vec<AlignStep>,
}

pub fn pen_tree_align(field: &mut dyn RttField, rect0: &SearchRect, config: &AlignConfig) -> Result<AlignResult> {
    rect0.validate()?;
    if !(config.eps > 0.0 && config.eps.is_finite()) {
        return Err(Error::config("eps must be positive"));
    }
    if config.max_iter == 0 {
        return Err(Error::config("max_iter must be >= 1"));
    }
    let mut rect = *rect0;
    let mut prev = rect0.center;
    let mut steps = Vec::with_capacity(config.max_iter);
    let mut probes = 0;
    loop {
        let points = rect.probe_points();
        let rtts: Vec<f64> = points.iter().map(|&(x, y)| field.probe(x, y)).collect();
        probes += points.len();
        let epi = qkde_epicenter(&points, &rtts, &rect, config.grid_n, rect.diagonal())?;
        steps.push(AlignStep { iter: steps.len() + 1, rect, epicenter: epi });
        let moved = (epi.0 - prev.0).hypot(epi.1 - prev.1);
        prev = epi;
        if moved < config.eps || steps.len() >= config.max_iter {
            break;
        }
        rect = rect.quarter_around(epi, rect0);
    }
    Ok(AlignResult { position: prev, iterations: steps.len(), probes, steps })
}

pub fn write_align_csv<W: Write>(writer: W, steps: &[AlignStep]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iter", "cx", "cy", "width", "height", "epicenter_x", "epicenter_y"])?;
    for s in steps {
        w.write_record([
            s.iter.to_string(),
            s.rect.center.0.to_string(),
            s.rect.center.1.to_string(),
            s.rect.width.to_string(),
            s.rect.height.to_string(),
            s.epicenter.0.to_string(),
            s.epicenter.1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
