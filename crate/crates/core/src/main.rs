use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foloc::measurement::ingest_csv;
use foloc::model::SystemModel;
use foloc::pipeline::{
    analyze, export_report, render_report, run_pipeline, Analysis, AnalysisConfig, PipelineConfig, PipelineError,
};
use foloc::simulator::{simulate, Scenario};

const EXIT_NO_FO: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "foloc", version, about = "Forced-oscillation source localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the measurements as CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Locate the FO source in a measurement CSV.
    Locate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        /// Output directory for the report and CSVs.
        #[arg(long, env = "FOLOC_OUTPUT_DIR")]
        out: PathBuf,
        /// Initial STLS threshold.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 3)]
        max_freqs: usize,
        /// Window start in seconds; defaults to the first sample.
        #[arg(long)]
        window_start: Option<f64>,
        #[arg(long, default_value_t = 40.0)]
        window_length: f64,
    },
    /// Run a full analysis described by a TOML configuration file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(err: &PipelineError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID })
}

fn finish(analysis: &Analysis) -> ExitCode {
    print!("{}", render_report(analysis));
    if analysis.source_found() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NO_FO)
    }
}

fn run_simulate(model: PathBuf, scenario: PathBuf, out: PathBuf, seed: Option<u64>) -> Result<(), PipelineError> {
    let model = SystemModel::load(model)?;
    let mut scenario = Scenario::load(scenario)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let window = simulate(&model, &scenario)?;
    window.save_csv(&out)?;
    eprintln!("wrote {} samples to {}", window.n_samples(), out.display());
    Ok(())
}

fn run_locate(
    model: PathBuf,
    measurements: PathBuf,
    out: PathBuf,
    cfg: AnalysisConfig,
) -> Result<Analysis, PipelineError> {
    if !(cfg.stls_lambda > 0.0 && cfg.stls_lambda.is_finite()) {
        return Err(PipelineError::Config(format!("lambda must be positive, got {}", cfg.stls_lambda)));
    }
    if !(1..=3).contains(&cfg.max_frequencies) {
        return Err(PipelineError::Config(format!(
            "max-freqs must be between 1 and 3, got {}",
            cfg.max_frequencies
        )));
    }
    let model = SystemModel::load(model)?;
    let data = ingest_csv(measurements)?;
    let analysis = analyze(&model, &data, &cfg)?;
    export_report(&analysis, out)?;
    Ok(analysis)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Simulate {
            model,
            scenario,
            out,
            seed,
        } => match run_simulate(model, scenario, out, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e),
        },
        Command::Locate {
            model,
            measurements,
            out,
            lambda,
            max_freqs,
            window_start,
            window_length,
        } => {
            let cfg = AnalysisConfig {
                window_start,
                window_length,
                stls_lambda: lambda.unwrap_or(AnalysisConfig::default().stls_lambda),
                max_frequencies: max_freqs,
                ..AnalysisConfig::default()
            };
            match run_locate(model, measurements, out, cfg) {
                Ok(a) => finish(&a),
                Err(e) => fail(&e),
            }
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(&config).map(|mut cfg| {
                if cfg.output_dir.is_none() {
                    cfg.output_dir = std::env::var_os("FOLOC_OUTPUT_DIR").map(PathBuf::from);
                }
                cfg
            });
            match cfg.and_then(|cfg| run_pipeline(&cfg)) {
                Ok(run) => finish(&run.analysis),
                Err(e) => fail(&e),
            }
        }
    }
}
