//! Contextual-bandit control of a steerable LiFi antenna.
//!
//! The antenna can point at one of `C` stations. Pointing at a station moves
//! its traffic off Wi-Fi once the link attaches, `attach_delay` samples after
//! the move. The controller explores round-robin for `T_e` samples, trains a
//! KPI predictor on what it saw, then every `T_s` samples probes each position
//! with a hypothetical context and moves to the best one.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel_sim::{evaluate_channel, period_jitter, smoothed_rates, ChannelConfig, ChannelOutcome};
use crate::error::{Error, Result};
use crate::predictors::{self, Dims, ModelKind, ModelSpec, Objective, PredictorModel, Probe, Sample};
use crate::rng;
use crate::station::StationId;
use crate::workload::{generate_ensemble, LogNormalParams, RatePair, TraceEnsembleConfig};

pub fn kpi_invert(air: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&air) {
        return Err(Error::input(format!("airtime {air} outside [0, 100]")));
    }
    Ok(100.0 - air)
}

/// Per-station `(min, max)` load bounds for one direction.
pub type Bounds = Vec<(f64, f64)>;

/// Min-max normalization per station, then softmax across stations. A station
/// whose bounds coincide normalizes to 0.
pub fn softmax_features(loads: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    let z: Vec<f64> = loads
        .iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| if hi > lo { (x.clamp(lo, hi) - lo) / (hi - lo) } else { 0.0 })
        .collect();
    softmax(&z)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub w_down: Vec<f64>,
    pub w_up: Vec<f64>,
    pub l_down: Vec<f64>,
    pub l_up: Vec<f64>,
    pub position_onehot: Vec<f64>,
}

impl ContextVector {
    /// The four load blocks, without the one-hot (the predictors append the
    /// state themselves).
    pub fn loads(&self) -> Vec<f64> {
        [&self.w_down, &self.w_up, &self.l_down, &self.l_up].into_iter().flatten().copied().collect()
    }

    pub fn position(&self) -> usize {
        self.position_onehot.iter().position(|&v| v == 1.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirBounds {
    pub down: Bounds,
    pub up: Bounds,
}

impl DirBounds {
    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a [RatePair]>) -> DirBounds {
        let mut down: Bounds = Vec::new();
        let mut up: Bounds = Vec::new();
        for row in obs {
            if down.is_empty() {
                down = vec![(f64::INFINITY, f64::NEG_INFINITY); row.len()];
                up = down.clone();
            }
            for (i, r) in row.iter().enumerate() {
                down[i] = (down[i].0.min(r.down), down[i].1.max(r.down));
                up[i] = (up[i].0.min(r.up), up[i].1.max(r.up));
            }
        }
        DirBounds { down, up }
    }
}

/// Context for measured loads `observed` (Wi-Fi for every station except the
/// offloaded one, LiFi for that one).
///
/// Each direction gets one softmax across all stations. The offloaded station's
/// share is moved from the Wi-Fi block to the LiFi block and multiplied by
/// `boost`.
pub fn build_context(
    observed: &[RatePair],
    bounds: &DirBounds,
    offloaded: Option<usize>,
    boost: f64,
    position: usize,
) -> Result<ContextVector> {
    let c = observed.len();
    if bounds.down.len() != c || bounds.up.len() != c {
        return Err(Error::DimensionMismatch { expected: c, found: bounds.down.len() });
    }
    if let Some(q) = offloaded {
        if q >= c {
            return Err(Error::input(format!("offloaded position {q} out of range for {c} stations")));
        }
    }
    if position >= c {
        return Err(Error::input(format!("position {position} out of range for {c} stations")));
    }
    let block = |loads: Vec<f64>, b: &Bounds| {
        let mut w = softmax_features(&loads, b);
        let mut l = vec![0.0; c];
        if let Some(q) = offloaded {
            l[q] = boost * w[q];
            w[q] = 0.0;
        }
        (w, l)
    };
    let (w_down, l_down) = block(observed.iter().map(|r| r.down).collect(), &bounds.down);
    let (w_up, l_up) = block(observed.iter().map(|r| r.up).collect(), &bounds.up);
    let mut position_onehot = vec![0.0; c];
    position_onehot[position] = 1.0;
    Ok(ContextVector { w_down, w_up, l_down, l_up, position_onehot })
}

/// What the measurements would look like with station `q` on LiFi, given
/// per-station demand estimates: `q` is capped at the LiFi capacity, the rest
/// are unchanged.
pub fn offload_view(demand: &[RatePair], q: Option<usize>, lifi_capacity: f64) -> Vec<RatePair> {
    let mut v = demand.to_vec();
    if let Some(q) = q {
        let total = v[q].total();
        if total > lifi_capacity && total > 0.0 {
            let s = lifi_capacity / total;
            v[q] = RatePair { up: v[q].up * s, down: v[q].down * s };
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(rename = "T_e")]
    pub t_e: usize,
    #[serde(rename = "T_s")]
    pub t_s: usize,
    pub h_lifi: f64,
    pub positions: usize,
    /// Samples between pointing the antenna at a station and the station
    /// actually moving to LiFi.
    pub attach_delay: usize,
    /// Decision intervals spent on each position during exploration.
    pub explore_dwell: usize,
    /// Samples run after exploration.
    pub eval_samples: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            t_e: 400,
            t_s: 4,
            h_lifi: 3.5,
            positions: 4,
            attach_delay: 4,
            explore_dwell: 2,
            eval_samples: 150,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.positions == 0 {
            return Err(Error::config("positions must be >= 1"));
        }
        if self.t_e < self.positions {
            return Err(Error::config("T_e must be >= positions"));
        }
        if self.t_s == 0 {
            return Err(Error::config("T_s must be >= 1"));
        }
        if self.explore_dwell == 0 {
            return Err(Error::config("explore_dwell must be >= 1"));
        }
        if !(self.h_lifi >= 1.0 && self.h_lifi.is_finite()) {
            return Err(Error::config("h_lifi must be >= 1"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.t_e + self.eval_samples
    }

    /// Round-robin exploration position in effect at sample `k`.
    pub fn explore_position(&self, k: usize) -> usize {
        (k / (self.t_s * self.explore_dwell)) % self.positions
    }
}

/// Workload and channel of the experiment-mode testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub samples_per_epoch: usize,
    pub epochs_per_period: usize,
    pub rate_cap: f64,
    pub up: LogNormalParams,
    pub down: LogNormalParams,
    pub phy_efficiency_min: f64,
    pub channel: ChannelConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            samples_per_epoch: 1,
            epochs_per_period: 10,
            rate_cap: 100.0,
            up: LogNormalParams::default(),
            down: LogNormalParams::default(),
            phy_efficiency_min: 0.25,
            channel: ChannelConfig { capacity_ref: 800.0, ..ChannelConfig::default() },
        }
    }
}

/// Precomputed per-sample demand for `C` stations plus the channel that turns
/// an antenna state into measurements.
#[derive(Debug, Clone)]
pub struct ExperimentEnv {
    pub stations: Vec<StationId>,
    /// `demand[k][i]`: smoothed offered rates of station `i` at sample `k`.
    pub demand: Vec<Vec<RatePair>>,
    pub phy: Vec<f64>,
    pub channel: ChannelConfig,
    pub noise_seed: u64,
}

impl ExperimentEnv {
    pub fn generate(env: &EnvConfig, positions: usize, samples: usize, seed: u64) -> Result<ExperimentEnv> {
        env.channel.validate()?;
        if env.samples_per_epoch == 0 || env.epochs_per_period == 0 {
            return Err(Error::config("samples_per_epoch and epochs_per_period must be >= 1"));
        }
        let per_period = env.samples_per_epoch * env.epochs_per_period;
        let periods = samples.div_ceil(per_period).max(1);
        let cfg = TraceEnsembleConfig {
            n_candidates: positions,
            n_background: 0,
            candidate_load_factor: 1.0,
            epochs: periods * env.epochs_per_period,
            epochs_per_period: env.epochs_per_period,
            epoch_duration: 1.0,
            rate_cap: env.rate_cap,
            up: env.up,
            down: env.down,
            phy_efficiency_min: env.phy_efficiency_min,
        };
        let traces = generate_ensemble(&cfg, rng::derive_seed(seed, 0))?;
        let by_period: Vec<Vec<RatePair>> =
            (0..periods).map(|p| smoothed_rates(&traces, p, env.channel.smoothing_window)).collect::<Result<_>>()?;
        let demand = (0..samples).map(|k| by_period[k / per_period].clone()).collect();
        Ok(ExperimentEnv {
            stations: traces.iter().map(|t| t.station.clone()).collect(),
            demand,
            phy: traces.iter().map(|t| t.phy_efficiency).collect(),
            channel: env.channel.clone(),
            noise_seed: rng::derive_seed(seed, 1),
        })
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    /// Measurements at sample `k` with `offloaded` on LiFi. Noise depends only
    /// on `(seed, k)`, so every policy sees the same jitter.
    pub fn step(&self, k: usize, offloaded: Option<usize>) -> Result<ChannelOutcome> {
        let demand = self
            .demand
            .get(k)
            .ok_or_else(|| Error::TraceExhausted(format!("sample {k} beyond {} samples", self.len())))?;
        let jitter = period_jitter(&self.channel, self.noise_seed, k);
        Ok(evaluate_channel(&self.stations, demand, &self.phy, offloaded, &self.channel, jitter, None))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Model(ModelSpec),
    /// Picks the position with the best counterfactual KPI at each decision.
    Optimal,
    Worst,
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Model(s) => s.kind.to_string(),
            Policy::Optimal => "Optimal".into(),
            Policy::Worst => "Worst".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogSample {
    pub k: usize,
    pub position: usize,
    /// Station on LiFi during this sample, if the link had attached.
    pub attached: Option<usize>,
    pub kpi: f64,
    pub collision: f64,
    pub lifi_served: f64,
    pub switch: bool,
    /// Measured loads: Wi-Fi for stations on Wi-Fi, LiFi for the attached one.
    pub observed: Vec<RatePair>,
    pub context: Option<ContextVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentLog {
    pub label: String,
    pub t_e: usize,
    pub samples: Vec<LogSample>,
    pub switches: usize,
}

impl ExperimentLog {
    /// Samples after exploration.
    pub fn evaluated(&self) -> &[LogSample] {
        &self.samples[self.t_e.min(self.samples.len())..]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "position", "kpi", "collision", "lifi_served", "switch"])?;
        for s in &self.samples {
            w.write_record([
                s.k.to_string(),
                (s.position + 1).to_string(),
                s.kpi.to_string(),
                s.collision.to_string(),
                s.lifi_served.to_string(),
                (s.switch as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(label: &str, t_e: usize, reader: R) -> Result<ExperimentLog> {
        #[derive(Deserialize)]
        struct Row {
            k: usize,
            position: usize,
            kpi: f64,
            collision: f64,
            lifi_served: f64,
            switch: u8,
        }
        let mut samples = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let r = row?;
            if r.position == 0 {
                return Err(Error::input("positions in experiment logs are 1-based"));
            }
            samples.push(LogSample {
                k: r.k,
                position: r.position - 1,
                attached: None,
                kpi: r.kpi,
                collision: r.collision,
                lifi_served: r.lifi_served,
                switch: r.switch != 0,
                observed: Vec::new(),
                context: None,
            });
        }
        let switches = samples.iter().filter(|s| s.switch).count();
        Ok(ExperimentLog { label: label.to_string(), t_e, samples, switches })
    }
}

fn to_sample(s: &LogSample) -> Sample {
    let ctx = s.context.as_ref().expect("context built before use");
    Sample { context: ctx.loads(), state: s.position, target: s.kpi }
}

/// One controller run over `env`.
pub fn run_experiment(
    env: &ExperimentEnv,
    policy: &Policy,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<ExperimentLog> {
    cfg.validate()?;
    let c = cfg.positions;
    if env.stations.len() != c {
        return Err(Error::DimensionMismatch { expected: c, found: env.stations.len() });
    }
    if env.len() < cfg.t_e {
        return Err(Error::TraceExhausted(format!("{} samples, exploration needs {}", env.len(), cfg.t_e)));
    }
    let n = cfg.total_samples().min(env.len());
    let dims = Dims { context: 4 * c, states: c };
    let lifi_cap = env.channel.lifi_capacity;
    let mut pick_rng = rng::stream(seed, 0x5eed);

    let mut samples: Vec<LogSample> = Vec::with_capacity(n);
    let mut history: Vec<Sample> = Vec::with_capacity(n);
    let mut bounds: Option<DirBounds> = None;
    let mut model: Option<PredictorModel> = None;
    let mut pos = 0usize;
    let mut since_move = cfg.attach_delay;
    let mut switches = 0usize;

    for k in 0..n {
        let mut switched = false;
        if k > 0 && k % cfg.t_s == 0 {
            let next = if k < cfg.t_e {
                cfg.explore_position(k)
            } else {
                match policy {
                    Policy::Optimal | Policy::Worst => {
                        let kpis = (0..c)
                            .map(|q| env.step(k, Some(q)).and_then(|o| kpi_invert(o.air)))
                            .collect::<Result<Vec<_>>>()?;
                        let obj = if *policy == Policy::Optimal { Objective::Maximize } else { Objective::Minimize };
                        predictors::best_index(&kpis, obj)
                    }
                    Policy::Model(spec) if spec.kind == ModelKind::RAND => pick_rng.random_range(0..c),
                    Policy::Model(_) => {
                        let m = model.as_mut().expect("trained at end of exploration");
                        if k > cfg.t_e {
                            m.update(&history, cfg.t_s)?;
                        }
                        let last = samples.last().expect("k > 0");
                        let b = bounds.as_ref().expect("bounds frozen at end of exploration");
                        let probes = (0..c)
                            .map(|q| {
                                let boost = if last.attached == Some(q) { cfg.h_lifi } else { 1.0 };
                                let view = offload_view(&last.observed, Some(q), lifi_cap);
                                let ctx = build_context(&view, b, Some(q), boost, q)?;
                                let observed = samples.iter().rev().find(|s| s.position == q).map(|s| s.kpi);
                                Ok(Probe { context: ctx.loads(), state: q, observed })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        m.select_offload(&probes, Objective::Maximize, &mut pick_rng)?
                    }
                }
            };
            if next != pos {
                switches += 1;
                switched = true;
                since_move = 0;
            }
            pos = next;
        }

        let attached = (since_move >= cfg.attach_delay).then_some(pos);
        let out = env.step(k, attached)?;
        since_move += 1;
        let observed = out
            .per_sta
            .iter()
            .map(|s| RatePair { up: s.wifi_up + s.lifi_up, down: s.wifi_down + s.lifi_down })
            .collect();
        samples.push(LogSample {
            k,
            position: pos,
            attached,
            kpi: kpi_invert(out.air)?,
            collision: out.collision_kpi,
            lifi_served: out.lifi_served,
            switch: switched,
            observed,
            context: None,
        });

        if k + 1 == cfg.t_e {
            let b = DirBounds::from_observations(samples.iter().map(|s| s.observed.as_slice()));
            for s in &mut samples {
                s.context = Some(build_context(&s.observed, &b, s.attached, cfg.h_lifi, s.position)?);
            }
            history.extend(samples.iter().map(to_sample));
            if let Policy::Model(spec) = policy {
                model = Some(predictors::train(spec, dims, &history)?);
            }
            bounds = Some(b);
        } else if let Some(b) = &bounds {
            let s = samples.last_mut().expect("just pushed");
            s.context = Some(build_context(&s.observed, b, s.attached, cfg.h_lifi, s.position)?);
            history.push(to_sample(s));
        }
    }

    Ok(ExperimentLog { label: policy.label(), t_e: cfg.t_e, samples, switches })
}

/// Everything needed to reproduce an experiment-mode study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "T_e")]
    pub t_e: usize,
    #[serde(rename = "T_s")]
    pub t_s: usize,
    pub h_lifi: f64,
    pub positions: usize,
    pub attach_delay: usize,
    pub explore_dwell: usize,
    pub eval_samples: usize,
    /// Hyperparameters shared by the learned models; `kind` is overridden.
    pub model: ModelSpec,
    pub compare: Vec<ModelKind>,
    pub seed: Option<u64>,
    pub replicas: usize,
    pub env: EnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let c = ControllerConfig::default();
        ExperimentConfig {
            t_e: c.t_e,
            t_s: c.t_s,
            h_lifi: c.h_lifi,
            positions: c.positions,
            attach_delay: c.attach_delay,
            explore_dwell: c.explore_dwell,
            eval_samples: c.eval_samples,
            model: ModelSpec::default(),
            compare: vec![ModelKind::NN, ModelKind::LR, ModelKind::RAND],
            seed: None,
            replicas: 5,
            env: EnvConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            t_e: self.t_e,
            t_s: self.t_s,
            h_lifi: self.h_lifi,
            positions: self.positions,
            attach_delay: self.attach_delay,
            explore_dwell: self.explore_dwell,
            eval_samples: self.eval_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.controller().validate()?;
        self.model.validate()?;
        self.env.channel.validate()?;
        if self.replicas == 0 {
            return Err(Error::config("replicas must be >= 1"));
        }
        if self.compare.len() < 2 {
            return Err(Error::config("compare needs at least 2 models"));
        }
        Ok(())
    }

    /// Compared models followed by the two references.
    pub fn policies(&self, replica_seed: u64) -> Vec<Policy> {
        let mut v: Vec<Policy> = self
            .compare
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                Policy::Model(ModelSpec {
                    kind,
                    seed: rng::derive_seed(replica_seed, 100 + i as u64),
                    ..self.model.clone()
                })
            })
            .collect();
        v.push(Policy::Optimal);
        v.push(Policy::Worst);
        v
    }
}

pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    rng::derive_seed(seed, replica as u64)
}

/// All policies of one replica, on a shared environment.
pub fn run_replica(cfg: &ExperimentConfig, seed: u64, replica: usize) -> Result<Vec<ExperimentLog>> {
    let rs = replica_seed(seed, replica);
    let ctl = cfg.controller();
    let env = ExperimentEnv::generate(&cfg.env, ctl.positions, ctl.total_samples(), rs)?;
    cfg.policies(rs)
        .iter()
        .enumerate()
        .map(|(i, p)| run_experiment(&env, p, &ctl, rng::derive_seed(rs, 200 + i as u64)))
        .collect()
}
