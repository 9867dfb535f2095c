//! `hetnet`: trace analysis, workload generation, offload simulation,
//! predictor training, controller experiments, antenna alignment and reports.

mod fail;
mod manifest;
mod plan;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use hetnet_core::alignment::AlignConfig;
use hetnet_core::campaign::SimulationConfig;
use hetnet_core::controller::ExperimentConfig;

use fail::Failure;
use plan::*;

#[derive(Parser)]
#[command(name = "hetnet", version, about = "Wi-Fi/LiFi offload analysis and simulation")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "HETNET_OUT")]
    out: Option<PathBuf>,

    /// Replay the run recorded in this manifest (file or directory) into --out.
    #[arg(long)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Rank users by negative impact score and screen station metrics.
    Analyze {
        /// Packet trace CSV.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Segment duration in seconds; overrides the config.
        #[arg(long)]
        segment: Option<f64>,
        /// Seed for the tercile study, which is skipped without one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a workload trace ensemble.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a campaign of five-scenario offload sweeps.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Train and score predictors on a simulate output directory.
    Train {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run controller replicas in experiment mode.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Pen-tree alignment against a synthetic RTT field.
    Align {
        #[arg(long, default_value_t = 4.0)]
        width: f64,
        #[arg(long, default_value_t = 4.0)]
        height: f64,
        /// Planted optimum, x coordinate (search area starts at the origin).
        #[arg(long)]
        optimum_x: f64,
        #[arg(long)]
        optimum_y: f64,
        #[arg(long, default_value_t = 2.0)]
        base_rtt: f64,
        /// RTT increase per meter away from the optimum.
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long, default_value_t = AlignConfig::default().eps)]
        eps: f64,
        #[arg(long, default_value_t = AlignConfig::default().max_iter)]
        max_iter: usize,
        #[arg(long, default_value_t = AlignConfig::default().grid_n)]
        grid_n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild summary tables from train and experiment outputs.
    Report {
        /// Output directory of `train`.
        #[arg(long)]
        simulation: Option<PathBuf>,
        /// Output directory of `experiment`.
        #[arg(long)]
        experiment: Option<PathBuf>,
    },
}

fn resolve(cmd: Command) -> Result<(Plan, Option<usize>), Failure> {
    Ok(match cmd {
        Command::Analyze { trace, config, segment, seed } => {
            let mut config: AnalyzeConfig = load_config(config.as_deref())?;
            if let Some(s) = segment {
                config.segment_duration = s;
            }
            (Plan::Analyze(AnalyzePlan { trace: absolute(&trace)?, config, seed }), None)
        }
        Command::Gen { config, seed } => {
            let config = load_config(config.as_deref())?;
            (Plan::Gen(GenPlan { config, seed: require_seed(seed, "gen")? }), None)
        }
        Command::Simulate { config, runs, seed, parallel } => {
            let config: SimulationConfig = load_config(config.as_deref())?;
            config.validate()?;
            (Plan::Simulate(SimulatePlan { config, runs, seed: require_seed(seed, "simulate")? }), parallel)
        }
        Command::Train { runs_dir, config, seed } => {
            let config: TrainConfig = load_config(config.as_deref())?;
            let seed = require_seed(seed, "train")?;
            let runs_dir = absolute(&runs_dir)?;
            let m = manifest::read(&runs_dir)?;
            let Plan::Simulate(sim) = m.plan else {
                return Err(Failure::Validation(format!(
                    "{} holds a `{}` run, not a simulation",
                    runs_dir.display(),
                    m.subcommand
                )));
            };
            (Plan::Train(TrainPlan { runs_dir, simulation: sim.config, runs: sim.runs, config, seed }), None)
        }
        Command::Experiment { config, seed, replicas, parallel } => {
            let mut config: ExperimentConfig = load_config(config.as_deref())?;
            let seed = require_seed(seed.or(config.seed), "experiment")?;
            config.seed = Some(seed);
            if let Some(r) = replicas {
                config.replicas = r;
            }
            config.validate()?;
            (Plan::Experiment(ExperimentPlan { config, seed }), parallel)
        }
        Command::Align {
            width,
            height,
            optimum_x,
            optimum_y,
            base_rtt,
            slope,
            noise_sd,
            eps,
            max_iter,
            grid_n,
            seed,
        } => (
            Plan::Align(AlignPlan {
                width,
                height,
                optimum: (optimum_x, optimum_y),
                base_rtt,
                slope,
                noise_sd,
                search: AlignConfig { eps, max_iter, grid_n },
                seed,
            }),
            None,
        ),
        Command::Report { simulation, experiment } => (
            Plan::Report(ReportPlan {
                simulation: simulation.as_deref().map(absolute).transpose()?,
                experiment: experiment.as_deref().map(absolute).transpose()?,
            }),
            None,
        ),
    })
}

fn execute(plan: Plan, parallel: Option<usize>, out: &Path) -> Result<(), Failure> {
    let started = manifest::unix_now();
    let outcome = match parallel {
        Some(0) => return Err(Failure::Validation("--parallel must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?
            .install(|| run::execute(&plan, out))?,
        None => run::execute(&plan, out)?,
    };
    manifest::write(out, &manifest::new(plan, started, outcome))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let out = cli.out.ok_or_else(|| Failure::Validation("no output directory: pass --out or set HETNET_OUT".into()))?;
    match (cli.manifest, cli.command) {
        (Some(m), None) => {
            let recorded = manifest::read(&m)?;
            execute(recorded.plan, None, &out)
        }
        (None, Some(cmd)) => {
            let (plan, parallel) = resolve(cmd)?;
            execute(plan, parallel, &out)
        }
        _ => Err(Failure::Validation(format!(
            "expected a subcommand or --manifest\n\n{}",
            Cli::command().render_usage()
        ))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
