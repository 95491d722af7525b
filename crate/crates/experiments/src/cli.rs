//! Command line interface of `gm-design`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gmdesign_core::gradients::{finite_difference_gradient, stochastic_gradient, FD_RELATIVE_STEP};
use gmdesign_core::instances::{random_instance, InstanceSpec};
use gmdesign_core::{Execution, LinearGMModel, RandomStream};

use crate::config::{builtin, parse_config, Scenario, ScenarioId};
use crate::error::{ExperimentError, Result};
use crate::output::{result_record, OutputWriter, RESULTS_HEADER};
use crate::scenario::{run_scenario_with, RunOptions};

pub const THREADS_ENV: &str = "GM_DESIGN_THREADS";
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "gm-design", version, about = "Transfer matrix design for linear models with Gaussian-mixture priors")]
pub struct Cli {
    /// Override the Monte Carlo sample count per evaluation.
    #[arg(long, global = true)]
    pub eval_samples: Option<usize>,
    /// Override the optimizer iteration cap.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sweep described by a JSON config and write result files.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in figure scenario.
    Reproduce {
        #[arg(value_parser = ["fig3", "fig4", "fig5", "fig6", "fig7"])]
        figure: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the closed-form gradient against finite differences on random instances.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the config's sweep without optimizing; prints CSV rows.
    Eval { config: PathBuf },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Worker count from the environment (default 1).
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ExperimentError::Validation {
                field: THREADS_ENV.into(),
                message: format!("expected a positive integer, got {v:?}"),
            }),
        },
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let threads = thread_count()?;
    // Fails only if a pool already exists, which is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let options = RunOptions {
        execution: Execution::Parallel,
        eval_samples: cli.eval_samples,
        max_iterations: cli.max_iters,
        evaluate_only: false,
    };
    if cli.eval_samples == Some(0) {
        return Err(ExperimentError::Validation {
            field: "--eval-samples".into(),
            message: "must be at least 1".into(),
        });
    }
    match &cli.command {
        Command::Run { config, out } => {
            let scenario = parse_config(config)?;
            let dir = out
                .clone()
                .or_else(|| scenario.config.output_dir.clone())
                .unwrap_or_else(|| default_dir(&scenario));
            run_to_dir(&scenario, &options, dir, cli.quiet)
        }
        Command::Reproduce { figure, out, seed } => {
            let id = ScenarioId::parse(figure).expect("clap restricts the figure names");
            let mut config = builtin(id).expect("built-in scenario");
            if let Some(s) = seed {
                config.seed = *s;
            }
            let scenario = config.validate()?;
            let dir = out.clone().unwrap_or_else(|| default_dir(&scenario));
            run_to_dir(&scenario, &options, dir, cli.quiet)
        }
        Command::GradCheck { trials, seed } => {
            let worst = grad_check(*trials, *seed)?;
            if !cli.quiet {
                println!("{trials} instances, worst relative error {worst:e} (tolerance {GRAD_CHECK_TOLERANCE:e})");
            }
            if worst < GRAD_CHECK_TOLERANCE {
                Ok(())
            } else {
                Err(gmdesign_core::Error::InvalidArgument(format!("gradient check failed: relative error {worst:e}")).into())
            }
        }
        Command::Eval { config } => {
            let scenario = parse_config(config)?;
            let options = RunOptions {
                evaluate_only: true,
                ..options
            };
            let stdout = std::io::stdout();
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(stdout.lock());
            let csv_err = |source| ExperimentError::Csv {
                path: "<stdout>".into(),
                source,
            };
            w.write_record(RESULTS_HEADER).map_err(csv_err)?;
            run_scenario_with(&scenario, &options, |p| {
                for row in &p.rows {
                    w.write_record(result_record(row)).map_err(csv_err)?;
                }
                w.flush().map_err(|e| ExperimentError::io("<stdout>", e))
            })
        }
    }
}

fn default_dir(scenario: &Scenario) -> PathBuf {
    PathBuf::from("results").join(scenario.config.scenario.name())
}

fn run_to_dir(scenario: &Scenario, options: &RunOptions, dir: PathBuf, quiet: bool) -> Result<()> {
    let mut writer = OutputWriter::create(&dir, scenario)?;
    let total = scenario.grid.len();
    run_scenario_with(scenario, options, |p| {
        writer.write_point(p)?;
        if !quiet {
            let summary: Vec<String> = p.rows.iter().map(|r| format!("{} {:.4e}", r.estimator, r.report.nmse)).collect();
            eprintln!("[{}/{total}] {} {}", p.index + 1, p.value, summary.join(", "));
            let _ = std::io::stderr().flush();
        }
        Ok(())
    })?;
    writer.finish(scenario)?;
    if !quiet {
        eprintln!("results written to {}", dir.display());
    }
    Ok(())
}

/// Worst relative Frobenius error between the closed-form gradient and
/// central differences over random instances.
pub fn grad_check(trials: usize, seed: u64) -> Result<f64> {
    let spec = InstanceSpec::default();
    let mut worst: f64 = 0.0;
    for i in 0..trials as u64 {
        let inst = random_instance(&mut RandomStream::new(seed, i), &spec)?;
        let model = LinearGMModel::new(inst.h.clone(), &inst.xmix, &inst.nmix)?;
        let g = stochastic_gradient(&model, &inst.draw.x, &inst.draw.n)?;
        let fd = finite_difference_gradient(
            |h| LinearGMModel::new(h.clone(), &inst.xmix, &inst.nmix),
            &inst.h,
            &inst.draw.x,
            &inst.draw.n,
            FD_RELATIVE_STEP,
        )?;
        worst = worst.max((&g - &fd).norm() / fd.norm().max(1e-300));
    }
    Ok(worst)
}
