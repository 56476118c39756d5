use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spdbci::io::{load_model, load_trials, save_model, save_trials, trials_from_csv};
use spdbci::synthetic::{generate, SyntheticSpec};
use spdbci::train::{bench_inference, evaluate_cv, evaluate_holdout, fit_channel_selection, train, TrainConfig};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "spdbci", version, about = "Filter-bank SPD-manifold EEG classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it as a bundle.
    Train {
        /// Config file; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation.
    EvalCv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        report: PathBuf,
        /// Also write latency rows (they differ between runs).
        #[arg(long)]
        timing: bool,
    },
    /// Train on one set, evaluate on another.
    EvalHoldout {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        timing: bool,
        /// Optionally keep the trained model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Fit channel selection only; write indices and objective trace.
    Select {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-trial inference latency of a trained model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a synthetic trial set described by a spec file.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack single-trial CSV files (rows = channels) into an EEGB file.
    ImportCsv {
        /// `label:path` pairs.
        #[arg(required = true)]
        trials: Vec<String>,
        #[arg(long)]
        sample_rate: f32,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config: cfg, data, out } => {
            let cfg = config(cfg.as_deref())?;
            let trials = load_trials(&data)?;
            let (model, report) = train(&cfg, &trials)?;
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                eprintln!("epoch {epoch}: loss {loss}");
            }
            save_model(&model, &out)?;
            println!("train accuracy {}", report.train_accuracy);
            println!("parameters {}", model.num_parameters());
            println!("selected channels {:?}", model.selection.selected_channels);
        }
        Command::EvalCv {
            config: cfg,
            data,
            folds,
            report,
            timing,
        } => {
            let cfg = config(cfg.as_deref())?;
            let result = evaluate_cv(&cfg, &load_trials(&data)?, folds)?;
            write(&report, &result.to_csv(timing))?;
            println!("accuracy {} (std {} over {folds} folds)", result.mean, result.std);
            eprintln!(
                "latency mean {:.6}s max {:.6}s",
                result.latency.mean, result.latency.max
            );
        }
        Command::EvalHoldout {
            config: cfg,
            train,
            test,
            report,
            timing,
            model_out,
        } => {
            let cfg = config(cfg.as_deref())?;
            let (result, model) = evaluate_holdout(&cfg, &load_trials(&train)?, &load_trials(&test)?)?;
            write(&report, &result.to_csv(timing))?;
            if let Some(path) = model_out {
                save_model(&model, path)?;
            }
            println!("accuracy {}", result.accuracy);
            eprintln!(
                "latency mean {:.6}s max {:.6}s",
                result.latency.mean, result.latency.max
            );
        }
        Command::Select { config: cfg, data, out } => {
            let cfg = config(cfg.as_deref())?;
            let sel = fit_channel_selection(&cfg, &load_trials(&data)?)?;
            let mut csv = String::from("section,key,value\n");
            writeln!(csv, "summary,iterations,{}", sel.iterations_run)?;
            writeln!(csv, "summary,converged,{}", sel.converged)?;
            for (rank, c) in sel.selected_channels.iter().enumerate() {
                writeln!(csv, "channel,{rank},{c}")?;
            }
            for (t, v) in sel.objective_trace.iter().enumerate() {
                writeln!(csv, "objective,{t},{v}")?;
            }
            for (t, v) in sel.stress_trace.iter().enumerate() {
                writeln!(csv, "stress,{t},{v}")?;
            }
            write(&out, &csv)?;
            println!("selected channels {:?}", sel.selected_channels);
        }
        Command::Bench {
            model,
            data,
            reps,
            report,
        } => {
            let model = load_model(&model)?;
            let stats = bench_inference(&model, &load_trials(&data)?, reps)?;
            let mut csv = String::from("section,key,value\n");
            writeln!(csv, "summary,repetitions,{reps}")?;
            writeln!(csv, "latency,mean_s,{}", stats.mean)?;
            writeln!(csv, "latency,median_s,{}", stats.median)?;
            writeln!(csv, "latency,max_s,{}", stats.max)?;
            for (i, s) in stats.samples.iter().enumerate() {
                writeln!(csv, "sample,{i},{s}")?;
            }
            write(&report, &csv)?;
            println!(
                "mean {:.6}s median {:.6}s max {:.6}s",
                stats.mean, stats.median, stats.max
            );
        }
        Command::GenSynthetic { spec, out } => {
            let set = generate(&SyntheticSpec::load(&spec)?)?;
            save_trials(&set, &out)?;
            println!(
                "{} trials, {} channels x {} samples",
                set.len(),
                set.channels(),
                set.samples_per_trial()
            );
        }
        Command::ImportCsv {
            trials,
            sample_rate,
            classes,
            out,
        } => {
            let pairs = trials
                .iter()
                .map(|item| {
                    let (label, path) = item
                        .split_once(':')
                        .ok_or_else(|| format!("`{item}` is not label:path"))?;
                    let label: u32 = label.parse().map_err(|_| format!("bad label in `{item}`"))?;
                    Ok((PathBuf::from(path), label))
                })
                .collect::<Result<Vec<_>>>()?;
            let set = trials_from_csv(&pairs, sample_rate, classes)?;
            save_trials(&set, &out)?;
            println!("{} trials", set.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
