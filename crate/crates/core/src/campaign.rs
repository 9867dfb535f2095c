//! Simulation-mode campaigns: seeded runs of five-scenario sweeps, the
//! train/test split built from them, and predictor scoring.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_sim::{candidates_of, scenario_sweep, ChannelConfig, PeriodStats, Scenario, StationPeriod};
use crate::error::{Error, Result};
use crate::evaluation::{self, mean_se};
use crate::predictors::{self, best_index, Dims, ModelKind, ModelSpec, Objective, PredictorModel, Probe, Sample};
use crate::rng;
use crate::station::StationId;
use crate::workload::{generate_ensemble, TraceEnsembleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub ensemble: TraceEnsembleConfig,
    pub channel: ChannelConfig,
    pub train_periods: usize,
    pub test_periods: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            // one period past the test periods so their outcomes exist
            ensemble: TraceEnsembleConfig { epochs: 110, ..TraceEnsembleConfig::default() },
            channel: ChannelConfig::default(),
            train_periods: 8,
            test_periods: 2,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        self.channel.validate()?;
        if self.train_periods == 0 || self.test_periods == 0 {
            return Err(Error::config("train_periods and test_periods must be >= 1"));
        }
        let need = self.train_periods + self.test_periods + 1;
        if self.ensemble.n_periods() < need {
            return Err(Error::config(format!(
                "ensemble.epochs gives {} periods; train_periods + test_periods + 1 = {need}",
                self.ensemble.n_periods()
            )));
        }
        Ok(())
    }
}

/// All sweeps of one run, indexed by period.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub sweeps: Vec<Vec<(Scenario, PeriodStats)>>,
}

pub fn run_seed(seed: u64, run: usize) -> u64 {
    rng::derive_seed(seed, run as u64)
}

pub fn simulate_run(config: &SimulationConfig, seed: u64, run: usize) -> Result<RunResult> {
    config.validate()?;
    let rs = run_seed(seed, run);
    let traces = generate_ensemble(&config.ensemble, rng::derive_seed(rs, 0))?;
    let candidates = candidates_of(&traces);
    let channel_seed = rng::derive_seed(rs, 1);
    let sweeps = (0..config.ensemble.n_periods())
        .map(|p| scenario_sweep(&traces, p, &candidates, &config.channel, channel_seed))
        .collect::<Result<_>>()?;
    Ok(RunResult { run, sweeps })
}

/// Runs `0..runs` in parallel on the current rayon pool; results stay in run
/// order.
pub fn run_campaign(config: &SimulationConfig, seed: u64, runs: usize) -> Result<Vec<RunResult>> {
    config.validate()?;
    (0..runs).into_par_iter().map(|r| simulate_run(config, seed, r)).collect()
}

pub fn write_run_csvs<W1: Write, W2: Write>(run: &RunResult, sweep: W1, stations: W2) -> Result<()> {
    crate::channel_sim::write_sweep_csv(sweep, &run.sweeps)?;
    crate::channel_sim::write_station_csv(stations, &run.sweeps)
}

/// Rebuilds a run from its sweep and per-station CSVs.
pub fn read_run_csvs<R1: Read, R2: Read>(run: usize, sweep: R1, stations: R2) -> Result<RunResult> {
    #[derive(Deserialize)]
    struct SweepRow {
        period: usize,
        scenario: String,
        collision_kpi: f64,
        air: f64,
        lifi_served: f64,
    }
    #[derive(Deserialize)]
    struct StaRow {
        period: usize,
        scenario: String,
        station: String,
        wifi_up: f64,
        wifi_down: f64,
        lifi_up: f64,
        lifi_down: f64,
        collision_prob: f64,
        phy_efficiency: f64,
    }

    let mut sweeps: Vec<Vec<(Scenario, PeriodStats)>> = Vec::new();
    for row in csv::Reader::from_reader(sweep).deserialize::<SweepRow>() {
        let r = row?;
        if r.period > sweeps.len() {
            return Err(Error::IncompleteSweep(format!("run {run}: period {} appears out of order", r.period)));
        }
        if r.period == sweeps.len() {
            sweeps.push(Vec::new());
        }
        sweeps[r.period].push((
            r.scenario.parse()?,
            PeriodStats {
                period: r.period,
                per_sta: Vec::new(),
                collision_kpi: r.collision_kpi,
                air: r.air,
                lifi_served: r.lifi_served,
            },
        ));
    }
    for row in csv::Reader::from_reader(stations).deserialize::<StaRow>() {
        let r = row?;
        let sc: Scenario = r.scenario.parse()?;
        let entry = sweeps.get_mut(r.period).and_then(|p| p.iter_mut().find(|(s, _)| *s == sc)).ok_or_else(|| {
            Error::IncompleteSweep(format!("run {run}: station row for unknown period/scenario {}/{sc}", r.period))
        })?;
        entry.1.per_sta.push(StationPeriod {
            station: r.station.into(),
            wifi_up: r.wifi_up,
            wifi_down: r.wifi_down,
            lifi_up: r.lifi_up,
            lifi_down: r.lifi_down,
            collision_prob: r.collision_prob,
            phy_efficiency: r.phy_efficiency,
        });
    }
    Ok(RunResult { run, sweeps })
}

/// One held-out decision: probes for every candidate and the realized
/// next-period KPI of every scenario (`outcomes[0]` is no-offload).
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub run: usize,
    pub period: usize,
    pub probes: Vec<Probe>,
    pub outcomes: Vec<f64>,
}

impl TestCase {
    /// Candidate index (0-based) with the lowest realized KPI.
    pub fn clairvoyant(&self) -> usize {
        best_index(&self.outcomes[1..], Objective::Minimize)
    }

    pub fn p0(&self) -> f64 {
        self.outcomes[0]
    }

    pub fn outcome_of(&self, candidate: usize) -> f64 {
        self.outcomes[candidate + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub candidates: Vec<StationId>,
    pub train: Vec<Sample>,
    pub test: Vec<TestCase>,
}

/// Raw per-station measurements of one scenario: Wi-Fi up/down of every
/// station, LiFi up/down of every candidate, PHY efficiency of every station.
fn sim_features(per_sta: &[StationPeriod], candidates: &[StationId]) -> Vec<f64> {
    let mut v = Vec::with_capacity(per_sta.len() * 3 + candidates.len() * 2);
    for s in per_sta {
        v.push(s.wifi_up);
        v.push(s.wifi_down);
    }
    for c in candidates {
        let s = per_sta.iter().find(|s| &s.station == c).expect("checked by caller");
        v.push(s.lifi_up);
        v.push(s.lifi_down);
    }
    v.extend(per_sta.iter().map(|s| s.phy_efficiency));
    v
}

fn expected_scenarios(candidates: &[StationId]) -> Vec<Scenario> {
    std::iter::once(Scenario::NoOffload).chain(candidates.iter().cloned().map(Scenario::Offload)).collect()
}

fn check_sweep(run: &RunResult, period: usize, expected: &[Scenario], stations: &[StationId]) -> Result<()> {
    let sweep = run
        .sweeps
        .get(period)
        .ok_or_else(|| Error::IncompleteSweep(format!("run {}: period {period} missing", run.run)))?;
    let got: Vec<&Scenario> = sweep.iter().map(|(s, _)| s).collect();
    if got.len() != expected.len() || got.iter().zip(expected).any(|(a, b)| *a != b) {
        return Err(Error::IncompleteSweep(format!(
            "run {}: period {period} has scenarios {:?}, expected {:?}",
            run.run,
            got.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            expected.iter().map(|s| s.to_string()).collect::<Vec<_>>()
        )));
    }
    for (sc, st) in sweep {
        let ids: Vec<&StationId> = st.per_sta.iter().map(|s| &s.station).collect();
        if ids.len() != stations.len() || ids.iter().zip(stations).any(|(a, b)| *a != b) {
            return Err(Error::IncompleteSweep(format!(
                "run {}: period {period} scenario {sc} has inconsistent station rows",
                run.run
            )));
        }
    }
    Ok(())
}

/// Training samples map `(features of state s at t, s)` to the KPI of `s` at
/// `t+1` for `t < train_periods`. Test cases cover the next `test_periods`
/// periods: candidates are probed from period `t` and scored on `t+1`.
pub fn build_dataset(runs: &[RunResult], train_periods: usize, test_periods: usize) -> Result<Dataset> {
    let first = runs.first().ok_or_else(|| Error::input("no runs"))?;
    let base = first
        .sweeps
        .first()
        .and_then(|p| p.first())
        .ok_or_else(|| Error::IncompleteSweep("run has no periods".into()))?;
    let stations: Vec<StationId> = base.1.per_sta.iter().map(|s| s.station.clone()).collect();
    let candidates: Vec<StationId> = first.sweeps[0].iter().filter_map(|(s, _)| s.offloaded().cloned()).collect();
    if candidates.is_empty() {
        return Err(Error::IncompleteSweep("no offload scenarios".into()));
    }
    let expected = expected_scenarios(&candidates);
    let n_states = expected.len();
    let dims = Dims { context: stations.len() * 3 + candidates.len() * 2, states: n_states };

    let mut train = Vec::with_capacity(runs.len() * train_periods * n_states);
    let mut test = Vec::with_capacity(runs.len() * test_periods);
    for run in runs {
        for p in 0..=train_periods + test_periods {
            check_sweep(run, p, &expected, &stations)?;
        }
        for t in 0..train_periods {
            for s in 0..n_states {
                train.push(Sample {
                    context: sim_features(&run.sweeps[t][s].1.per_sta, &candidates),
                    state: s,
                    target: run.sweeps[t + 1][s].1.collision_kpi,
                });
            }
        }
        for t in train_periods..train_periods + test_periods {
            let probes = (1..n_states)
                .map(|s| Probe {
                    context: sim_features(&run.sweeps[t][s].1.per_sta, &candidates),
                    state: s,
                    observed: Some(run.sweeps[t][s].1.collision_kpi),
                })
                .collect();
            let outcomes = run.sweeps[t + 1].iter().map(|(_, st)| st.collision_kpi).collect();
            test.push(TestCase { run: run.run, period: t, probes, outcomes });
        }
    }
    Ok(Dataset { dims, candidates, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorScore {
    pub model: String,
    pub accuracy: f64,
    pub accuracy_se: f64,
    pub cis: f64,
    pub cis_se: f64,
    /// Test cases whose clairvoyant choice does not improve on no-offload.
    pub degenerate: usize,
    /// Per test case; `None` where degenerate.
    pub cis_per_case: Vec<Option<f64>>,
}

/// One scored decision: the candidate picked, the clairvoyant candidate and
/// the realized collision KPIs of no-offload, the pick and the clairvoyant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub model: String,
    pub run: usize,
    pub period: usize,
    pub selected: StationId,
    pub clairvoyant: StationId,
    pub p0: f64,
    pub p_selected: f64,
    pub p_clairvoyant: f64,
}

pub fn selection_rows(
    model: &str,
    test: &[TestCase],
    candidates: &[StationId],
    selections: &[usize],
) -> Result<Vec<SelectionRow>> {
    if selections.len() != test.len() {
        return Err(Error::DimensionMismatch { expected: test.len(), found: selections.len() });
    }
    test.iter()
        .zip(selections)
        .map(|(tc, &sel)| {
            let cv = tc.clairvoyant();
            let name = |i: usize| {
                candidates.get(i).cloned().ok_or_else(|| Error::input(format!("candidate index {i} out of range")))
            };
            Ok(SelectionRow {
                model: model.to_string(),
                run: tc.run,
                period: tc.period,
                selected: name(sel)?,
                clairvoyant: name(cv)?,
                p0: tc.p0(),
                p_selected: tc.outcome_of(sel),
                p_clairvoyant: tc.outcome_of(cv),
            })
        })
        .collect()
}

/// Accuracy and cis, each with its standard error, over one model's rows.
pub fn score_rows(model: &str, rows: &[SelectionRow]) -> Result<PredictorScore> {
    let selected: Vec<&StationId> = rows.iter().map(|r| &r.selected).collect();
    let clairvoyant: Vec<&StationId> = rows.iter().map(|r| &r.clairvoyant).collect();
    let accuracy = evaluation::prediction_accuracy(&selected, &clairvoyant)?;
    let hits: Vec<f64> = rows.iter().map(|r| (r.selected == r.clairvoyant) as u8 as f64).collect();
    let mut per_case = Vec::with_capacity(rows.len());
    for r in rows {
        match evaluation::cis(r.p0, r.p_selected, r.p_clairvoyant) {
            Ok(v) => per_case.push(Some(v)),
            Err(Error::DegeneratePeriod) => per_case.push(None),
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<f64> = per_case.iter().flatten().copied().collect();
    let (cis, cis_se) = if valid.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&valid) };
    Ok(PredictorScore {
        model: model.to_string(),
        accuracy,
        accuracy_se: mean_se(&hits).1,
        cis,
        cis_se,
        degenerate: per_case.iter().filter(|c| c.is_none()).count(),
        cis_per_case: per_case,
    })
}

pub fn write_selections_csv<W: Write>(writer: W, rows: &[SelectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_selections_csv<R: Read>(reader: R) -> Result<Vec<SelectionRow>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Scores every model found in `rows`, in order of first appearance.
pub fn score_all_rows(rows: &[SelectionRow]) -> Result<Vec<PredictorScore>> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.model.as_str()) {
            order.push(&r.model);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let mine: Vec<SelectionRow> = rows.iter().filter(|r| r.model == m).cloned().collect();
            score_rows(m, &mine)
        })
        .collect()
}

/// Candidate picked by `model` for each test case.
pub fn select_all(model: &PredictorModel, test: &[TestCase], seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng::stream(seed, 0x7e57);
    test.iter().map(|tc| model.select_offload(&tc.probes, Objective::Minimize, &mut rng)).collect()
}

/// A trained model's picks on the test split, as scored rows.
pub fn evaluate_model(model: &PredictorModel, ds: &Dataset) -> Result<Vec<SelectionRow>> {
    let sel = select_all(model, &ds.test, model.spec.seed)?;
    selection_rows(&model.kind().to_string(), &ds.test, &ds.candidates, &sel)
}

/// Trains each spec on the campaign's training split and scores it on the
/// test split.
pub fn simulation_study(
    runs: &[RunResult],
    config: &SimulationConfig,
    specs: &[ModelSpec],
) -> Result<Vec<PredictorScore>> {
    let ds = build_dataset(runs, config.train_periods, config.test_periods)?;
    specs
        .iter()
        .map(|spec| {
            let model = predictors::train(spec, ds.dims, &ds.train)?;
            score_rows(&spec.kind.to_string(), &evaluate_model(&model, &ds)?)
        })
        .collect()
}

/// One spec per kind, sharing the hyperparameters of `template`, each with
/// its own seed derived from `seed`.
pub fn specs_for(kinds: &[ModelKind], template: &ModelSpec, seed: u64) -> Vec<ModelSpec> {
    kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| ModelSpec { kind, seed: rng::derive_seed(seed, 1000 + i as u64), ..template.clone() })
        .collect()
}

pub fn default_specs(seed: u64) -> Vec<ModelSpec> {
    specs_for(&ModelKind::ALL, &ModelSpec::default(), seed)
}

pub fn write_table3_csv<W: Write>(writer: W, scores: &[PredictorScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["predictor", "accuracy", "accuracy_se", "cis", "cis_se", "degenerate"])?;
    for s in scores {
        w.write_record([
            s.model.clone(),
            s.accuracy.to_string(),
            s.accuracy_se.to_string(),
            s.cis.to_string(),
            s.cis_se.to_string(),
            s.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
