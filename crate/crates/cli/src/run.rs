//! Execution of resolved plans. Every file goes under the output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hetnet_core::alignment::{pen_tree_align, write_align_csv, RadialField, SearchRect};
use hetnet_core::campaign::{self, RunResult};
use hetnet_core::controller::{self, ExperimentLog};
use hetnet_core::evaluation;
use hetnet_core::predictors;
use hetnet_core::trace_analysis::{self as ta, Metric};
use hetnet_core::workload;
use hetnet_core::Error;
use rayon::prelude::*;

use crate::fail::Failure;
use crate::manifest;
use crate::plan::*;

#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

struct OutDir<'a> {
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl OutDir<'_> {
    fn create(&mut self, rel: impl AsRef<Path>) -> Result<BufWriter<File>, Failure> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| runtime(&path, e))?;
        }
        let f = File::create(&path).map_err(|e| runtime(&path, e))?;
        self.written.push(rel.to_path_buf());
        Ok(BufWriter::new(f))
    }

    /// Writes one CSV through `f`, which gets a buffered writer.
    fn csv<F>(&mut self, rel: impl AsRef<Path>, f: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> hetnet_core::Result<()>,
    {
        let mut w = self.create(rel)?;
        f(&mut w)?;
        w.flush().map_err(|e| Failure::Runtime(e.to_string()))
    }
}

fn runtime(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn execute(plan: &Plan, out: &Path) -> Result<Outcome, Failure> {
    fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    let mut dir = OutDir { root: out, written: Vec::new() };
    let inputs = match plan {
        Plan::Analyze(p) => analyze(p, &mut dir)?,
        Plan::Gen(p) => gen(p, &mut dir)?,
        Plan::Simulate(p) => simulate(p, &mut dir)?,
        Plan::Train(p) => train(p, &mut dir)?,
        Plan::Experiment(p) => experiment(p, &mut dir)?,
        Plan::Align(p) => align(p, &mut dir)?,
        Plan::Report(p) => report(p, &mut dir)?,
    };
    Ok(Outcome { inputs, outputs: dir.written })
}

fn analyze(p: &AnalyzePlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    let records = ta::read_trace_csv(open(&p.trace)?)?;
    let segments = ta::segment_trace(&records, p.config.segment_duration)?;
    let nis = ta::compute_nis(&segments)?;
    dir.csv("nis.csv", |w| ta::write_nis_report(w, &ta::rank_nis(&nis)))?;

    let metrics = ta::all_station_metrics(&records);
    dir.csv("metrics.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["user".to_string()];
        header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
        c.write_record(&header)?;
        for (user, m) in &metrics {
            let mut row = vec![user.to_string()];
            row.extend(Metric::ALL.iter().map(|k| k.value(m).map(|v| v.to_string()).unwrap_or_default()));
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })?;

    let screen = match ta::anova_screen(&metrics, &nis) {
        Ok(s) => s,
        Err(Error::DegenerateGrouping(msg)) => {
            eprintln!("warning: skipping ANOVA screen: {msg}");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    if !screen.is_empty() {
        dir.csv("anova.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["metric", "f", "p", "significant", "degenerate", "n_top", "n_rest"])?;
            for s in &screen {
                c.write_record([
                    s.metric.name().to_string(),
                    s.f.to_string(),
                    s.p.to_string(),
                    s.significant.to_string(),
                    s.degenerate.to_string(),
                    s.n_top.to_string(),
                    s.n_rest.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }

    if let Some(seed) = p.seed {
        let metric = match &p.config.tercile_metric {
            Some(name) => name.parse::<Metric>()?,
            None => screen.first().map(|s| s.metric).ok_or_else(|| {
                Failure::Validation("no ANOVA result to pick a tercile metric from; set tercile_metric".into())
            })?,
        };
        let study = ta::tercile_prediction_study(
            &metrics,
            &nis,
            metric,
            p.config.tercile_rounds,
            p.config.users_per_round,
            seed,
        )?;
        dir.csv("tercile.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["round", "model", "random"])?;
            for (i, (m, r)) in study.rounds.iter().enumerate() {
                c.write_record([(i + 1).to_string(), m.to_string(), r.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        dir.csv("tercile_summary.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "metric",
                "model_mean",
                "model_halfwidth",
                "random_mean",
                "random_halfwidth",
                "fallbacks",
            ])?;
            c.write_record([
                metric.name().to_string(),
                study.model_mean.to_string(),
                study.model_halfwidth.to_string(),
                study.random_mean.to_string(),
                study.random_halfwidth.to_string(),
                study.fallbacks.to_string(),
            ])?;
            c.flush()?;
            Ok(())
        })?;
    }
    Ok(vec![p.trace.clone()])
}

fn gen(p: &GenPlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    let traces = workload::generate_ensemble(&p.config, p.seed)?;
    dir.csv("ensemble.csv", |w| workload::write_ensemble_csv(w, &traces))?;
    dir.csv("stations.csv", |w| workload::write_stations_csv(w, &traces))?;
    Ok(Vec::new())
}

fn run_files(run: usize) -> (PathBuf, PathBuf) {
    (PathBuf::from(format!("runs/run_{run:04}_sweep.csv")), PathBuf::from(format!("runs/run_{run:04}_stations.csv")))
}

fn simulate(p: &SimulatePlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    if p.runs == 0 {
        return Err(Failure::Validation("--runs must be >= 1".into()));
    }
    let runs = campaign::run_campaign(&p.config, p.seed, p.runs)?;
    for run in &runs {
        let (sweep, stations) = run_files(run.run);
        let mut a = dir.create(sweep)?;
        let mut b = dir.create(stations)?;
        campaign::write_run_csvs(run, &mut a, &mut b)?;
        a.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        b.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(Vec::new())
}

fn train(p: &TrainPlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    let mut inputs = Vec::new();
    let runs: Vec<RunResult> = (0..p.runs)
        .map(|r| {
            let (sweep, stations) = run_files(r);
            let (sweep, stations) = (p.runs_dir.join(sweep), p.runs_dir.join(stations));
            let run = campaign::read_run_csvs(r, open(&sweep)?, open(&stations)?)?;
            inputs.push(sweep);
            inputs.push(stations);
            Ok(run)
        })
        .collect::<Result<_, Failure>>()?;
    let ds = campaign::build_dataset(&runs, p.simulation.train_periods, p.simulation.test_periods)?;
    let specs = campaign::specs_for(&p.config.models, &p.config.model, p.seed);

    let mut rows = Vec::new();
    for spec in &specs {
        let model = predictors::train(spec, ds.dims, &ds.train)?;
        dir.csv(format!("models/{}.json", spec.kind), |w| model.to_json(w))?;
        rows.extend(campaign::evaluate_model(&model, &ds)?);
    }
    dir.csv("selections.csv", |w| campaign::write_selections_csv(w, &rows))?;
    let scores = campaign::score_all_rows(&rows)?;
    dir.csv("table3.csv", |w| campaign::write_table3_csv(w, &scores))?;
    Ok(inputs)
}

fn replica_file(replica: usize, label: &str) -> PathBuf {
    PathBuf::from(format!("replicas/rep_{replica:02}/{label}.csv"))
}

fn experiment(p: &ExperimentPlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    p.config.validate()?;
    let replicas: Vec<Vec<ExperimentLog>> = (0..p.config.replicas)
        .into_par_iter()
        .map(|e| controller::run_replica(&p.config, p.seed, e))
        .collect::<hetnet_core::Result<_>>()?;
    for (e, logs) in replicas.iter().enumerate() {
        for log in logs {
            dir.csv(replica_file(e, &log.label), |w| log.write_csv(w))?;
        }
    }
    dir.csv("switches.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["replica", "model", "switches"])?;
        for (e, logs) in replicas.iter().enumerate() {
            for log in logs {
                c.write_record([e.to_string(), log.label.clone(), log.switches.to_string()])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    let compared: Vec<String> = p.config.compare.iter().map(|k| k.to_string()).collect();
    write_table4(dir, &replicas, &compared)?;
    Ok(Vec::new())
}

const REFERENCE: &str = "Optimal";

fn write_table4(dir: &mut OutDir, replicas: &[Vec<ExperimentLog>], compared: &[String]) -> Result<(), Failure> {
    let summary = evaluation::aggregate_experiments(replicas, compared, REFERENCE)?;
    dir.csv("table4.csv", |w| evaluation::write_table4_csv(w, &summary))?;
    dir.csv("curves.csv", |w| evaluation::write_curves_csv(w, &summary))
}

fn align(p: &AlignPlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    let rect = SearchRect::new((p.width / 2.0, p.height / 2.0), p.width, p.height)?;
    if !rect.contains(p.optimum) {
        return Err(Failure::Validation(format!(
            "optimum ({}, {}) lies outside the {}x{} search area",
            p.optimum.0, p.optimum.1, p.width, p.height
        )));
    }
    if !(p.base_rtt > 0.0 && p.slope >= 0.0) {
        return Err(Failure::Validation("base RTT must be positive and slope non-negative".into()));
    }
    let mut field = RadialField::new(p.optimum, p.base_rtt, p.slope);
    if p.noise_sd > 0.0 {
        field = field.with_noise(p.noise_sd, require_seed(p.seed, "a noisy field")?)?;
    }
    let res = pen_tree_align(&mut field, &rect, &p.search)?;
    dir.csv("align.csv", |w| write_align_csv(w, &res.steps))?;
    Ok(Vec::new())
}

fn report(p: &ReportPlan, dir: &mut OutDir) -> Result<Vec<PathBuf>, Failure> {
    if p.simulation.is_none() && p.experiment.is_none() {
        return Err(Failure::Validation("report needs --simulation and/or --experiment".into()));
    }
    let mut inputs = Vec::new();
    if let Some(sim) = &p.simulation {
        let path = sim.join("selections.csv");
        let rows = campaign::read_selections_csv(open(&path)?)?;
        inputs.push(path);
        let scores = campaign::score_all_rows(&rows)?;
        dir.csv("table3.csv", |w| campaign::write_table3_csv(w, &scores))?;
    }
    if let Some(exp) = &p.experiment {
        let m = manifest::read(exp)?;
        let Plan::Experiment(ep) = m.plan else {
            return Err(Failure::Validation(format!(
                "{} holds a `{}` run, not an experiment",
                exp.display(),
                m.subcommand
            )));
        };
        let mut by_replica: BTreeMap<usize, Vec<ExperimentLog>> = BTreeMap::new();
        for e in 0..ep.config.replicas {
            let labels = ep.config.policies(0).iter().map(|pol| pol.label()).collect::<Vec<_>>();
            for label in labels {
                let path = exp.join(replica_file(e, &label));
                let log = ExperimentLog::read_csv(&label, ep.config.t_e, open(&path)?)?;
                inputs.push(path);
                by_replica.entry(e).or_default().push(log);
            }
        }
        let replicas: Vec<Vec<ExperimentLog>> = by_replica.into_values().collect();
        let compared: Vec<String> = ep.config.compare.iter().map(|k| k.to_string()).collect();
        write_table4(dir, &replicas, &compared)?;
    }
    Ok(inputs)
}
