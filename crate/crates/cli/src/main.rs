use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{OutputFormat, Overrides};

#[derive(Parser, Debug)]
#[command(name = "nlpid", version, about = "Quadrotor cascade PID/NLPID simulation, certification and tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario and write its time series, metrics and manifest.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory (overrides [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Outputs to write; repeatable. Defaults to both.
        #[arg(long, value_enum)]
        format: Vec<OutputFormat>,
    },
    /// Run two scenarios and tabulate them side by side.
    Compare {
        /// Scenario files; give two, or combine with --preset-controller.
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Controller presets to compare on the same trajectory; repeatable.
        #[arg(long)]
        preset_controller: Vec<String>,
        #[arg(long)]
        preset_trajectory: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the Hurwitz sector conditions for every channel of a gain set.
    Stability {
        /// Gain-set file (`kind` plus `[gains.<channel>]` tables).
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        preset_controller: Option<String>,
        /// Scenario file supplying airframe parameters and, absent the
        /// options above, the controller.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write `stability.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Genetic-algorithm tuning from a GA configuration file.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the file's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List built-in controller and trajectory presets.
    Presets {
        /// Print the named controller preset as a gain-set file instead.
        #[arg(long)]
        export: Option<String>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset_controller: Option<String>,
    #[arg(long)]
    preset_trajectory: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset_controller: self.preset_controller.clone(),
            preset_trajectory: self.preset_trajectory.clone(),
            dt: self.dt,
            t_final: self.t_final,
            seed: self.seed,
        }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out, format } => {
            let source = commands::ScenarioSource::load(scenario.config.as_deref())?;
            let out = out
                .or_else(|| source.config.output.dir.clone())
                .context("no output directory: pass --out or set [output] dir")?;
            let formats = if format.is_empty() { source.config.formats() } else { format };
            commands::run(&source, &scenario.overrides(), &out, &formats)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            config,
            preset_controller,
            preset_trajectory,
            dt,
            t_final,
            out,
        } => {
            let mut columns = Vec::new();
            for path in &config {
                let source = commands::ScenarioSource::load(Some(path))?;
                let o = Overrides {
                    preset_trajectory: preset_trajectory.clone(),
                    dt,
                    t_final,
                    ..Default::default()
                };
                columns.push((source, o));
            }
            for name in &preset_controller {
                let o = Overrides {
                    preset_controller: Some(name.clone()),
                    preset_trajectory: preset_trajectory.clone(),
                    dt,
                    t_final,
                    seed: None,
                };
                columns.push((commands::ScenarioSource::load(None)?, o));
            }
            if columns.len() != 2 {
                bail!("compare needs exactly two scenarios, got {}", columns.len());
            }
            commands::compare(&columns, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stability {
            gains,
            preset_controller,
            config,
            out,
        } => commands::stability(gains.as_deref(), preset_controller.as_deref(), config.as_deref(), out.as_deref()),
        Command::Tune { config, out, seed } => {
            commands::tune(&config, &out, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { export: Some(name) } => {
            print!("{}", config::gains_to_toml(&config::named_controller(&name)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { export: None } => {
            print!("{}", commands::presets_listing());
            Ok(ExitCode::SUCCESS)
        }
    }
}
