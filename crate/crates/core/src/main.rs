//! Command-line entry point: train, impute, evaluate, ablate, downstream,
//! curves, gen-data. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use tsimpute::checkpoint::{self, Checkpoint};
use tsimpute::config::ExperimentConfig;
use tsimpute::data::{
    denormalize_matrix, load_csv, make_windows, normalize, write_matrix_csv, NormalizationStats,
};
use tsimpute::error::Error;
use tsimpute::eval::{self, ablation, downstream};
use tsimpute::inference::{impute_window, InferenceOptions};
use tsimpute::model::ModelParams;
use tsimpute::synthetic;
use tsimpute::training;
use tsimpute::Result;

#[derive(Parser)]
#[command(
    name = "tsimpute",
    about = "Adversarial imputation toolkit for multivariate time series",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key, e.g. --set batch_size=32. Repeatable;
    /// wins over file values.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory override (highest precedence).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", self.config.display()))
        })?;
        let mut cfg = ExperimentConfig::from_text(&text, &self.set)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.display().to_string();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the model and write a checkpoint plus a metrics log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Resume from a previously written training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Impute a CSV file with a trained checkpoint.
    Impute {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Held-out RMSE of the model and the baselines.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Evaluate this checkpoint instead of training from scratch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Leave-one-out ablation table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Downstream regression protocol on a complete dataset.
    Downstream {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// RMSE versus holdout ratio sweep.
    Curves {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic CSV dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        windows: usize,
        #[arg(long, default_value_t = 48)]
        length: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, default_value_t = 0.05)]
        noise_sd: f64,
        #[arg(long)]
        seed: u64,
        /// Thin the timestamp grid into irregular gaps.
        #[arg(long, default_value_t = false)]
        irregular: bool,
        /// Remove this fraction of cells completely at random.
        #[arg(long, default_value_t = 0.0)]
        missing_ratio: f64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_usage() { 1 } else { 2 });
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => cmd_train(&config.load()?, resume.as_deref()),
        Command::Impute {
            config,
            checkpoint,
            input,
        } => cmd_impute(&config.load()?, &checkpoint, &input),
        Command::Evaluate { config, checkpoint } => {
            cmd_evaluate(&config.load()?, checkpoint.as_deref())
        }
        Command::Ablate { config } => cmd_ablate(&config.load()?),
        Command::Downstream { config } => cmd_downstream(&config.load()?),
        Command::Curves { config } => cmd_curves(&config.load()?),
        Command::GenData {
            out,
            windows,
            length,
            features,
            noise_sd,
            seed,
            irregular,
            missing_ratio,
        } => cmd_gen_data(&out, windows, length, features, noise_sd, seed, irregular, missing_ratio),
    }
}

fn ensure_output_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&dir)?;
    // Persist the resolved configuration next to the outputs so every run is
    // reproducible from its own artifacts.
    std::fs::write(dir.join("config.resolved.toml"), config.to_toml())?;
    Ok(dir)
}

fn cmd_train(config: &ExperimentConfig, resume: Option<&Path>) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let raw = eval::load_source(config)?;
    let windows = make_windows(&raw, config.window_length, config.stride)?;
    let stats = NormalizationStats::fit_windows(&windows)?;
    let normalized: Vec<_> = windows
        .iter()
        .map(|w| normalize(w, &stats))
        .collect::<Result<_>>()?;

    let start = match resume {
        Some(path) => Some(training::state_from_checkpoint(&Checkpoint::read(path)?)?),
        None => None,
    };

    let mut metrics = File::create(dir.join("metrics.jsonl"))?;
    let mut timings = File::create(dir.join("timings.log"))?;
    let run_start = Instant::now();
    let mut last_epoch_end = Instant::now();
    let checkpoint_every = config.checkpoint_every.max(1);
    let dir_for_closure = dir.clone();
    let (state, _records) = training::fit_with(config, &normalized, start, |state, record| {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        writeln!(metrics, "{line}")?;
        let wall = last_epoch_end.elapsed().as_secs_f64();
        last_epoch_end = Instant::now();
        writeln!(timings, "epoch {} wall_time {:.3}s", record.epoch, wall)?;
        eprintln!(
            "epoch {:>4}  l_g {:>10.6}  l_d {:>9.6}  ({wall:.1}s)",
            record.epoch, record.l_g, record.l_d
        );
        if state.epoch % checkpoint_every == 0 {
            training::state_to_checkpoint(state).write(dir_for_closure.join("train_state.tsim"))?;
        }
        Ok(())
    })?;

    training::state_to_checkpoint(&state).write(dir.join("train_state.tsim"))?;
    let mut model_ck = checkpoint::model_to_checkpoint(&state.model);
    attach_stats(&mut model_ck, &stats);
    model_ck.write(dir.join("checkpoint.tsim"))?;
    writeln!(
        timings,
        "total wall_time {:.3}s",
        run_start.elapsed().as_secs_f64()
    )?;
    eprintln!(
        "wrote {} and {}",
        dir.join("checkpoint.tsim").display(),
        dir.join("metrics.jsonl").display()
    );
    Ok(())
}

fn attach_stats(ck: &mut Checkpoint, stats: &NormalizationStats) {
    let d = stats.num_features();
    let mins = Array2::from_shape_fn((1, d), |(_, j)| stats.mins[j]);
    let maxs = Array2::from_shape_fn((1, d), |(_, j)| stats.maxs[j]);
    ck.groups.push(("norm.mins".into(), mins));
    ck.groups.push(("norm.maxs".into(), maxs));
}

fn stats_from_checkpoint(ck: &Checkpoint) -> Option<NormalizationStats> {
    let mins = ck.group("norm.mins")?;
    let maxs = ck.group("norm.maxs")?;
    let mins: Vec<f64> = mins.iter().cloned().collect();
    let maxs: Vec<f64> = maxs.iter().cloned().collect();
    let degenerate = mins.iter().zip(&maxs).map(|(a, b)| a == b).collect();
    Some(NormalizationStats {
        mins,
        maxs,
        degenerate,
        eps: tsimpute::data::NORMALIZATION_EPS,
    })
}

fn cmd_impute(config: &ExperimentConfig, checkpoint_path: &Path, input: &Path) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let ck = Checkpoint::read(checkpoint_path)?;
    let model: ModelParams = checkpoint::model_from_checkpoint(&ck)?;
    let raw = load_csv(input)?;
    if raw.num_features() != model.arch.feature_dim {
        return Err(Error::Config(format!(
            "checkpoint expects {} features, input has {}",
            model.arch.feature_dim,
            raw.num_features()
        )));
    }
    // Prefer the training-time normalization; fall back to the input's own
    // observed range when the checkpoint predates it.
    let stats = match stats_from_checkpoint(&ck) {
        Some(stats) => stats,
        None => tsimpute::data::fit_normalization(&raw)?,
    };
    // Non-overlapping windows so the output assembles uniquely.
    let windows = make_windows(&raw, config.window_length, config.window_length)?;
    let opts = InferenceOptions::from_config(config);

    let t_total = raw.len();
    let d = raw.num_features();
    let mut values = Array2::zeros((t_total, d));
    let mut provenance = Array2::zeros((t_total, d));
    for (i, window) in windows.iter().enumerate() {
        let normalized = normalize(window, &stats)?;
        let result = impute_window(&normalized, &model, &opts, config.seed, i as u64)?;
        let denorm = denormalize_matrix(&result.values, &stats);
        let base = i * config.window_length;
        for t in 0..window.len() {
            let row = base + t;
            if row >= t_total {
                break; // padded remainder rows have no source row
            }
            for j in 0..d {
                if window.mask.is_observed(t, j) {
                    // Observed values pass through in their original units.
                    values[[row, j]] = raw.values[[row, j]];
                    provenance[[row, j]] = 0.0;
                } else {
                    values[[row, j]] = denorm[[t, j]];
                    provenance[[row, j]] = 1.0;
                }
            }
        }
    }

    let imputed_path = dir.join("imputed.csv");
    write_matrix_csv(&imputed_path, &raw.timestamps, &values, &raw.feature_names)?;
    let provenance_path = dir.join("provenance.csv");
    write_matrix_csv(
        &provenance_path,
        &raw.timestamps,
        &provenance,
        &raw.feature_names,
    )?;
    eprintln!(
        "wrote {} and {}",
        imputed_path.display(),
        provenance_path.display()
    );
    Ok(())
}

fn cmd_evaluate(config: &ExperimentConfig, checkpoint_path: Option<&Path>) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let prepared = eval::prepare_direct_eval(config, config.holdout_ratio)?;
    let model = match checkpoint_path {
        Some(path) => checkpoint::load_model(path)?,
        None => {
            let (state, _) = training::fit(config, &prepared.train_windows)?;
            state.model
        }
    };
    let report = eval::evaluate_direct(config, &model, &prepared)?;
    std::fs::write(dir.join("evaluation.csv"), report.to_csv())?;
    std::fs::write(dir.join("evaluation.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_ablate(config: &ExperimentConfig) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let report = ablation::run_ablation(config)?;
    std::fs::write(dir.join("ablation.csv"), report.to_csv())?;
    std::fs::write(dir.join("ablation.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_downstream(config: &ExperimentConfig) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let report = downstream::downstream_eval(config, &config.downstream_ratios)?;
    std::fs::write(dir.join("downstream.csv"), report.to_csv())?;
    std::fs::write(dir.join("downstream.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_curves(config: &ExperimentConfig) -> Result<()> {
    let dir = ensure_output_dir(config)?;
    let report = eval::evaluate_curves(config)?;
    std::fs::write(dir.join("curves.csv"), report.to_csv())?;
    std::fs::write(dir.join("curves.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    out: &Path,
    windows: usize,
    length: usize,
    features: usize,
    noise_sd: f64,
    seed: u64,
    irregular: bool,
    missing_ratio: f64,
) -> Result<()> {
    let mut series = synthetic::gen_sinusoid_mix(windows, length, features, noise_sd, seed)?;
    if irregular {
        series = synthetic::thin_rows(&series, 0.7, seed)?;
    }
    if missing_ratio > 0.0 {
        series = synthetic::corrupt_mcar(&series, missing_ratio, seed)?;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_matrix_csv(out, &series.timestamps, &series.values, &series.feature_names)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
