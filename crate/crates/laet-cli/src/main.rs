//! `laet` — probe, select, fine-tune, and evaluate a layered model from the
//! command line.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config,
//! missing files), 2 on pipeline failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use laet_core::datakit::{SynthSpec, SynthTask};
use laet_core::harness::config::{DataSource, ExperimentConfig};
use laet_core::harness::pipeline::{self, FILE_REPORT};
use laet_core::model::Strategy;
use laet_core::selection::SelectionStrategy;
use laet_core::Error;

#[derive(Parser)]
#[command(
    name = "laet",
    about = "Layer-wise adaptive ensemble tuning: probe layers, select the best, fine-tune them, predict by vote",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSONL dataset path.
    #[arg(long, global = true, conflicts_with = "synth")]
    data: Option<PathBuf>,

    /// Synthetic task in place of a dataset file.
    #[arg(long, global = true, value_parser = parse_synth_task)]
    synth: Option<SynthTask>,

    /// Synthetic dataset size.
    #[arg(long, global = true)]
    size: Option<usize>,

    /// Synthetic class count.
    #[arg(long, global = true)]
    classes: Option<usize>,

    /// Synthetic label-noise fraction.
    #[arg(long, global = true)]
    noise: Option<f64>,

    /// Margin coefficient for the first metric.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Margin coefficient for the second metric.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Layer selection rule.
    #[arg(long, global = true, value_parser = parse_selection)]
    selection: Option<SelectionStrategy>,

    /// Representation reduction used for probing and prediction.
    #[arg(long, global = true, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Probe every layer and write the per-layer metrics table.
    Probe,
    /// Select the best layers from a previously written metrics table.
    Select,
    /// Fine-tune the selected layers plus the shared classifier.
    Finetune,
    /// Predict the test split with the fine-tuned checkpoint.
    Predict,
    /// Assemble the run report from persisted artifacts.
    Report,
    /// Run probe, select, finetune, predict and report end to end.
    Pipeline,
    /// Run the pipeline across a grid of margin coefficients.
    Sweep,
    /// Compare the LT, SaT and AvT probing strategies.
    Strategies,
    /// Generate a synthetic dataset file.
    Synth,
}

fn parse_synth_task(s: &str) -> Result<SynthTask, String> {
    SynthTask::parse(s).map_err(|e| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionStrategy, String> {
    SelectionStrategy::parse(s).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).map_err(|e| e.to_string())
}

fn build_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidArgument(format!("cannot read config '{}': {e}", path.display()))
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(path) = &common.data {
        cfg.data = Some(DataSource::Path { path: path.clone() });
    }
    if let Some(task) = common.synth {
        let mut spec = match &cfg.data {
            Some(DataSource::Synth { spec }) => *spec,
            _ => SynthSpec {
                task,
                size: 2000,
                classes: 3,
                noise: 0.0,
            },
        };
        spec.task = task;
        cfg.data = Some(DataSource::Synth { spec });
    }
    if common.size.is_some() || common.classes.is_some() || common.noise.is_some() {
        match &mut cfg.data {
            Some(DataSource::Synth { spec }) => {
                if let Some(size) = common.size {
                    spec.size = size;
                }
                if let Some(classes) = common.classes {
                    spec.classes = classes;
                }
                if let Some(noise) = common.noise {
                    spec.noise = noise;
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "--size/--classes/--noise require --synth".into(),
                ))
            }
        }
    }
    if let Some(alpha) = common.alpha {
        cfg.select.alpha = alpha;
    }
    if let Some(beta) = common.beta {
        cfg.select.beta = beta;
    }
    if let Some(strategy) = common.selection {
        cfg.select.strategy = strategy;
    }
    if let Some(strategy) = common.strategy {
        cfg.probe.strategy = strategy;
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Error> {
    match cli.command {
        Command::Probe => {
            let table = pipeline::cli_probe(cfg)?;
            println!("probed {} layers -> {}", table.rows.len(), cfg.out.display());
            for row in &table.rows {
                println!("  layer {:>2}: m1={:.6} m2={:.6}", row.layer, row.m1, row.m2);
            }
        }
        Command::Select => {
            let selection = pipeline::cli_select(cfg)?;
            println!(
                "selected layers {:?} via {} (delta1={:.6}, delta2={:.6})",
                selection.selected,
                selection.strategy.name(),
                selection.delta_m1,
                selection.delta_m2
            );
        }
        Command::Finetune => {
            let trace = pipeline::cli_finetune(cfg)?;
            println!(
                "fine-tuned for {} epochs: loss {:.6} -> {:.6}",
                trace.epochs.len(),
                trace.first_loss(),
                trace.final_loss()
            );
        }
        Command::Predict => {
            let rows = pipeline::cli_predict(cfg)?;
            println!("wrote {} predictions -> {}", rows.len(), cfg.out.display());
        }
        Command::Report => {
            let report = pipeline::cli_report(cfg)?;
            print_report_summary(&report);
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(cfg)?;
            print_report_summary(&report);
        }
        Command::Sweep => {
            let rows = pipeline::sweep_alpha_beta(cfg, &cfg.sweep_alphas, &cfg.sweep_betas)?;
            println!("swept {} cells -> {}", rows.len(), cfg.out.join("sweep.csv").display());
            for row in &rows {
                println!(
                    "  alpha={:.2} beta={:.2}: |B|={} acc={} [{}]",
                    row.alpha,
                    row.beta,
                    row.layers,
                    row.accuracy.map_or("-".into(), |v| format!("{v:.4}")),
                    row.status
                );
            }
        }
        Command::Strategies => {
            let rows = pipeline::compare_probe_strategies(cfg)?;
            println!(
                "probed {} strategy/layer pairs -> {}",
                rows.len(),
                cfg.out.join("strategies.csv").display()
            );
        }
        Command::Synth => {
            let path = pipeline::cli_synth(cfg)?;
            println!("wrote dataset -> {}", path.display());
        }
    }
    Ok(())
}

fn print_report_summary(report: &laet_core::harness::RunReport) {
    println!("report -> {}", report.config.out.join(FILE_REPORT).display());
    println!(
        "  selected layers: {:?} ({} of {})",
        report.selection.selected,
        report.selection.selected.len(),
        report.layer_metrics.rows.len()
    );
    println!(
        "  trainable params: {} of {} ({:.2}%)",
        report.params.trainable,
        report.params.total,
        report.params.fraction * 100.0
    );
    let t = &report.test;
    if let Some(acc) = t.accuracy {
        println!(
            "  test: acc={:.4} microF1={:.4} macroF1={:.4} mcc={:.4}",
            acc,
            t.f1_micro.unwrap_or(f64::NAN),
            t.f1_macro.unwrap_or(f64::NAN),
            t.mcc.unwrap_or(f64::NAN)
        );
    }
    if let Some(rmse) = t.rmse {
        println!("  test: rmse={rmse:.4}");
    }
    if let Some(bound) = &report.ensemble_bound {
        println!(
            "  estimated vote-error bound: {:.4} (avg val error {:.4}, {} voters)",
            bound.bound, bound.avg_validation_error, bound.ensemble_size
        );
    }
}

/// Usage errors exit 1, run failures exit 2.
fn classify_exit(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } => 1,
        Error::Stage { .. } => 2,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAET_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is a
            // usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let cfg = match build_config(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify_exit(&e))
        }
    }
}
