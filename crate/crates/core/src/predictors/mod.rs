//! KPI predictors sharing one contract: train on `(context, state) -> KPI`
//! samples, score hypothetical states, pick the best one.

pub mod linear;
pub mod nn;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use linear::LinearModel;
use nn::Mlp;

pub const MODEL_DOC_VERSION: u32 = 1;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(alias = "nn")]
    NN,
    #[serde(alias = "lr")]
    LR,
    #[serde(alias = "col")]
    COL,
    #[serde(alias = "rand")]
    RAND,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::NN, ModelKind::LR, ModelKind::COL, ModelKind::RAND];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::NN => "NN",
            ModelKind::LR => "LR",
            ModelKind::COL => "COL",
            ModelKind::RAND => "RAND",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NN" => Ok(ModelKind::NN),
            "LR" => Ok(ModelKind::LR),
            "COL" => Ok(ModelKind::COL),
            "RAND" => Ok(ModelKind::RAND),
            _ => Err(Error::input(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub nn_hidden: Vec<usize>,
    pub nn_lr: f64,
    pub nn_epochs: usize,
    pub nn_batch: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { kind: ModelKind::NN, nn_hidden: vec![32, 32], nn_lr: 1e-3, nn_epochs: 200, nn_batch: 32, seed: 0 }
    }
}

impl ModelSpec {
    pub fn of(kind: ModelKind, seed: u64) -> ModelSpec {
        ModelSpec { kind, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nn_hidden.contains(&0) {
            return Err(Error::config("nn_hidden widths must be >= 1"));
        }
        if !(self.nn_lr > 0.0 && self.nn_lr.is_finite()) {
            return Err(Error::config("nn_lr must be > 0"));
        }
        if self.nn_batch == 0 {
            return Err(Error::config("nn_batch must be >= 1"));
        }
        Ok(())
    }
}

/// Shapes of the context block and the state one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub context: usize,
    pub states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: Vec<f64>,
    pub state: usize,
    pub target: f64,
}

/// A hypothetical action to score. `observed` is the current KPI for that
/// state where one is known; only COL uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub context: Vec<f64>,
    pub state: usize,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Minimize,
    Maximize,
}

/// Context followed by the state one-hot.
pub fn feature_vector(context: &[f64], state: usize, n_states: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(context.len() + n_states);
    v.extend_from_slice(context);
    v.extend((0..n_states).map(|s| if s == state { 1.0 } else { 0.0 }));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale so they map to 0 rather than NaN.
    pub fn fit(xs: &[Vec<f64>]) -> Standardizer {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for x in xs {
            var.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        let sd = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Fitted {
    Nn { net: Mlp, x: Standardizer, y_mean: f64, y_sd: f64, updates: u64 },
    Linear { lm: LinearModel, x: Standardizer },
    Col,
    Rand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub spec: ModelSpec,
    pub dims: Dims,
    pub fitted: Fitted,
}

fn check_sample(dims: Dims, context: &[f64], state: usize) -> Result<()> {
    if context.len() != dims.context {
        return Err(Error::DimensionMismatch { expected: dims.context, found: context.len() });
    }
    if state >= dims.states {
        return Err(Error::DimensionMismatch { expected: dims.states, found: state + 1 });
    }
    if context.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("context"));
    }
    Ok(())
}

fn design(dims: Dims, samples: &[Sample]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::input("empty training set"));
    }
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        check_sample(dims, &s.context, s.state)?;
        if !s.target.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        xs.push(feature_vector(&s.context, s.state, dims.states));
        ys.push(s.target);
    }
    Ok((xs, ys))
}

fn fit_linear(dims: Dims, samples: &[Sample]) -> Result<Fitted> {
    let (xs, ys) = design(dims, samples)?;
    let x = Standardizer::fit(&xs);
    let zs: Vec<Vec<f64>> = xs.iter().map(|r| x.apply(r)).collect();
    Ok(Fitted::Linear { lm: LinearModel::fit(&zs, &ys)?, x })
}

/// Fits a predictor. NN and LR need samples; COL and RAND ignore them.
pub fn train(spec: &ModelSpec, dims: Dims, samples: &[Sample]) -> Result<PredictorModel> {
    spec.validate()?;
    let fitted = match spec.kind {
        ModelKind::NN => {
            let (xs, ys) = design(dims, samples)?;
            let x = Standardizer::fit(&xs);
            let zs: Vec<Vec<f64>> = xs.iter().map(|r| x.apply(r)).collect();
            let y_mean = crate::stats::mean(&ys);
            let y_var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / ys.len() as f64;
            let y_sd = if y_var > 1e-24 { y_var.sqrt() } else { 1.0 };
            let ts: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_sd).collect();
            let mut net = Mlp::new(zs[0].len(), &spec.nn_hidden, &mut rng::stream(spec.seed, 0));
            net.fit(&zs, &ts, spec.nn_epochs, spec.nn_batch, spec.nn_lr, &mut rng::stream(spec.seed, 1));
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("network weights after training"));
            }
            Fitted::Nn { net, x, y_mean, y_sd, updates: 0 }
        }
        ModelKind::LR => fit_linear(dims, samples)?,
        ModelKind::COL => Fitted::Col,
        ModelKind::RAND => Fitted::Rand,
    };
    Ok(PredictorModel { spec: spec.clone(), dims, fitted })
}

impl PredictorModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Folds new experience in; the last `fresh` rows of `history` are new.
    /// NN takes `nn_epochs / 10` (at least one) SGD steps, each on the fresh
    /// rows topped up with replayed ones, scalers frozen. LR refits on
    /// `history`. COL and RAND keep no state.
    pub fn update(&mut self, history: &[Sample], fresh: usize) -> Result<()> {
        let dims = self.dims;
        match &mut self.fitted {
            Fitted::Nn { net, x, y_mean, y_sd, updates } => {
                let (xs, ys) = design(dims, history)?;
                let zs: Vec<Vec<f64>> = xs.iter().map(|r| x.apply(r)).collect();
                let ts: Vec<f64> = ys.iter().map(|y| (y - *y_mean) / *y_sd).collect();
                *updates += 1;
                let mut r = rng::stream(self.spec.seed, 1 + *updates);
                let steps = (self.spec.nn_epochs / 10).max(1);
                net.replay_steps(&zs, &ts, fresh, steps, self.spec.nn_batch, self.spec.nn_lr, &mut r);
                if net.params().iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite("network weights after update"));
                }
            }
            Fitted::Linear { .. } => self.fitted = fit_linear(dims, history)?,
            Fitted::Col | Fitted::Rand => {}
        }
        Ok(())
    }

    pub fn predict_kpi(&self, probe: &Probe) -> Result<f64> {
        check_sample(self.dims, &probe.context, probe.state)?;
        let v = match &self.fitted {
            Fitted::Nn { net, x, y_mean, y_sd, .. } => {
                let f = feature_vector(&probe.context, probe.state, self.dims.states);
                y_mean + y_sd * net.forward(&x.apply(&f))
            }
            Fitted::Linear { lm, x } => {
                lm.predict(&x.apply(&feature_vector(&probe.context, probe.state, self.dims.states)))
            }
            Fitted::Col => {
                probe.observed.ok_or_else(|| Error::input("COL needs the observed KPI for the probed state"))?
            }
            Fitted::Rand => return Err(Error::SelectionOnly),
        };
        if !v.is_finite() {
            return Err(Error::NonFinite("prediction"));
        }
        Ok(v)
    }

    /// Index of the best probe; ties go to the lowest index. RAND ignores the
    /// probes' contents and draws uniformly from `rng`.
    pub fn select_offload<R: Rng + ?Sized>(
        &self,
        probes: &[Probe],
        objective: Objective,
        rng: &mut R,
    ) -> Result<usize> {
        if probes.is_empty() {
            return Err(Error::input("no candidates to select from"));
        }
        if let Fitted::Rand = self.fitted {
            return Ok(rng.random_range(0..probes.len()));
        }
        let preds = probes.iter().map(|p| self.predict_kpi(p)).collect::<Result<Vec<_>>>()?;
        Ok(best_index(&preds, objective))
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let doc = ModelDocumentRef { version: MODEL_DOC_VERSION, spec: &self.spec, model: self };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<PredictorModel> {
        let doc: ModelDocument = serde_json::from_reader(reader)?;
        if doc.version != MODEL_DOC_VERSION {
            return Err(Error::UnsupportedVersion(doc.version));
        }
        Ok(doc.model)
    }
}

#[derive(Serialize)]
struct ModelDocumentRef<'a> {
    version: u32,
    spec: &'a ModelSpec,
    model: &'a PredictorModel,
}

#[derive(Deserialize)]
struct ModelDocument {
    version: u32,
    #[allow(dead_code)]
    spec: ModelSpec,
    model: PredictorModel,
}

/// Argmin or argmax with ties to the lowest index.
pub fn best_index(values: &[f64], objective: Objective) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        let better = match objective {
            Objective::Minimize => *v < values[best],
            Objective::Maximize => *v > values[best],
        };
        if better {
            best = i;
        }
    }
    best
}

/// Largest relative disagreement between backpropagation and central
/// differences for a freshly initialized network of `spec`'s shape.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters whose true gradient is essentially zero from dominating.
pub fn gradient_check(spec: &ModelSpec, dims: Dims, batch: &[Sample]) -> Result<f64> {
    if spec.kind != ModelKind::NN {
        return Err(Error::config("gradient check applies to NN models only"));
    }
    spec.validate()?;
    let (xs, ys) = design(dims, batch)?;
    let net = Mlp::new(xs[0].len(), &spec.nn_hidden, &mut rng::stream(spec.seed, 0));
    let analytic = net.gradients(&xs, &ys).flatten();
    let numeric = net.numeric_gradient(&xs, &ys, GRAD_CHECK_STEP);
    Ok(max_relative_error(&analytic, &numeric, 1e-8))
}

pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
