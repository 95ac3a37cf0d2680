//! Command-line entry points: `ingest | synth | train | eval | predict`.
//!
//! Every artifact embeds the config hash, and `eval` refuses a checkpoint
//! whose hash disagrees with the dataset cache it is being scored on. Exit
//! codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation. `GISNET_SEED` overrides the seed carried by the config file.

mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{
    load_dataset, parse_trajectory_csv, resample_all, save_dataset, segment_samples,
    split_dataset, generate_synthetic, DatasetSplit, Sample, Scenario, SegmentStats,
};
use crate::decoder::PredictedTrajectory;
use crate::error::{Error, Result};
use crate::train::{
    evaluate_rmse, evaluate_rmse_baseline, forward, load_checkpoint, train_loop, EvalReport,
    HORIZONS_S,
};

/// Published GISNet results on the full NGSIM benchmark, quoted in the eval
/// footer for context. Training on full NGSIM is out of desk-scale reach, so
/// these are reference values only, never reproduction targets.
pub const NGSIM_REFERENCE_RMSE: [f64; 5] = [0.33, 0.83, 1.42, 2.14, 3.23];

#[derive(Debug, Parser)]
#[command(name = "gisnet", about = "Graph-based information sharing network for vehicle trajectory prediction", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse NGSIM-format CSVs into a dataset cache.
    Ingest {
        /// Input CSV files (feet, 10 Hz).
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Output cache path; the manifest lands beside it as `<out>.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic scenario cache.
    Synth {
        /// cv | lane-change | congestion | crowded
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional config file; defaults to the built-in configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a cache and write the best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Learning-rate override.
        #[arg(long)]
        lr: Option<f64>,
        /// Also append the JSON-lines log to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint (and optionally the CV baseline) on a cache part.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// `cv` adds the constant-velocity Kalman baseline column.
        #[arg(long)]
        baseline: Option<String>,
        /// Which split to evaluate: train | val | test.
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Predict one sample and export CSV + SVG.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Sample index within the chosen part.
        #[arg(long)]
        sample: usize,
        /// SVG output path.
        #[arg(long)]
        plot: PathBuf,
        /// CSV output path; defaults to the plot path with a .csv extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        part: String,
    },
}

/// Load a config file and apply the `GISNET_SEED` override.
fn load_config(path: &Path) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    apply_seed_override(&mut config)?;
    Ok(config)
}

fn apply_seed_override(config: &mut RunConfig) -> Result<()> {
    if let Ok(text) = std::env::var("GISNET_SEED") {
        let seed = text.parse::<u64>().map_err(|_| {
            Error::argument("GISNET_SEED", format!("not a u64: {text:?}"))
        })?;
        config.seed = seed;
    }
    Ok(())
}

pub fn cmd_ingest(inputs: &[PathBuf], out: &Path, config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let mut samples = Vec::new();
    let mut stats = SegmentStats::default();
    for path in inputs {
        let records = parse_trajectory_csv(path)?;
        if records.is_empty() {
            return Err(Error::format_at(
                "no data rows".to_string(),
                path.display().to_string(),
            ));
        }
        let source = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let trajectories = resample_all(&records, &source, &config);
        let (file_samples, file_stats) = segment_samples(&trajectories, &config);
        stats.samples += file_stats.samples;
        stats.cell_collisions += file_stats.cell_collisions;
        stats.short_history_neighbors += file_stats.short_history_neighbors;
        stats.out_of_grid_neighbors += file_stats.out_of_grid_neighbors;
        samples.extend(file_samples);
    }
    let split = split_dataset(
        samples,
        config.seed,
        (config.split_train, config.split_val, config.split_test),
    )?;
    let manifest = save_dataset(out, &split, &config, stats)?;
    println!(
        "wrote {}: train {} / val {} / test {} samples (config {})",
        out.display(),
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test,
        &manifest.config_hash[..12],
    );
    Ok(())
}

pub fn cmd_synth(
    scenario: &str,
    scenes: usize,
    seed: u64,
    out: &Path,
    config_path: Option<&Path>,
) -> Result<()> {
    let scenario = Scenario::from_str(scenario)?;
    let mut config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.seed = seed;
    let data = generate_synthetic(scenario, scenes, seed, &config)?;
    let split = split_dataset(
        data.samples,
        seed,
        (config.split_train, config.split_val, config.split_test),
    )?;
    let manifest = save_dataset(out, &split, &config, data.stats)?;
    println!(
        "wrote {}: {} scenes -> train {} / val {} / test {} samples (config {})",
        out.display(),
        scenes,
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test,
        &manifest.config_hash[..12],
    );
    Ok(())
}

pub fn cmd_train(
    data: &Path,
    out: &Path,
    config_path: &Path,
    lr_override: Option<f64>,
    log_path: Option<&Path>,
) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(lr) = lr_override {
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::argument("train", format!("bad learning rate {lr}")));
        }
        config.learning_rate = lr;
    }
    let (split, manifest) = load_dataset(data)?;
    if manifest.config_hash != config.hash() {
        return Err(Error::format(format!(
            "dataset cache {} was built with config {} but training config hashes to {}",
            data.display(),
            &manifest.config_hash[..12],
            &config.hash()[..12],
        )));
    }
    let mut log_file: Option<std::fs::File> = match log_path {
        Some(p) => Some(
            std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
        ),
        None => None,
    };
    let stdout = std::io::stdout();
    let mut tee = TeeWriter {
        a: stdout.lock(),
        b: log_file.as_mut(),
    };
    let outcome = train_loop(&split, &config, Some(out), Some(&mut tee))?;
    // A run that never improved on the initial metric still leaves a valid
    // checkpoint behind.
    crate::train::save_checkpoint(out, &outcome.params, &config.hash())?;
    println!(
        "wrote {} after {} epochs (best val {})",
        out.display(),
        outcome.log.len(),
        outcome
            .best_val
            .map(|r| format!(
                "rmse {:.3} m mean over horizons",
                r.rmse_by_horizon.iter().sum::<f64>() / 5.0
            ))
            .unwrap_or_else(|| "n/a".to_string()),
    );
    Ok(())
}

struct TeeWriter<'a, A: Write> {
    a: A,
    b: Option<&'a mut std::fs::File>,
}

impl<A: Write> Write for TeeWriter<'_, A> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.a.write_all(buf)?;
        if let Some(f) = self.b.as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.a.flush()?;
        if let Some(f) = self.b.as_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

fn select_part<'s>(split: &'s DatasetSplit, part: &str, data: &Path) -> Result<&'s [Sample]> {
    let samples = split
        .part(part)
        .ok_or_else(|| Error::argument("eval", format!("unknown part {part:?}")))?;
    if samples.is_empty() {
        return Err(Error::format(format!(
            "{} has no samples in the {part} part",
            data.display()
        )));
    }
    Ok(samples)
}

/// Render the Table-1-shaped report: horizons as rows, models as columns.
pub fn render_eval_table(
    model: &EvalReport,
    baseline: Option<&EvalReport>,
    part: &str,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "RMSE (m) on {part} split, {} samples, config {}\n\n",
        model.sample_count,
        &model.config_hash[..12],
    ));
    out.push_str("Horizon (s)  GISNet");
    if baseline.is_some() {
        out.push_str("      CV");
    }
    out.push('\n');
    for (slot, h) in HORIZONS_S.iter().enumerate() {
        out.push_str(&format!("{h:>11}  {:>6.3}", model.rmse_by_horizon[slot]));
        if let Some(b) = baseline {
            out.push_str(&format!("  {:>6.3}", b.rmse_by_horizon[slot]));
        }
        out.push('\n');
    }
    out.push_str(
        "\nReference: GISNet RMSE on the full NGSIM benchmark is \
         0.33 / 0.83 / 1.42 / 2.14 / 3.23 m at 1-5 s.\n\
         Full-NGSIM training is beyond desk scale; the reference row is \
         context, not a reproduction target.\n",
    );
    out
}

pub fn cmd_eval(data: &Path, ckpt: &Path, baseline: Option<&str>, part: &str) -> Result<()> {
    if let Some(b) = baseline {
        if b != "cv" {
            return Err(Error::argument("eval", format!("unknown baseline {b:?}")));
        }
    }
    let (split, manifest) = load_dataset(data)?;
    let (mut params, ckpt_hash) = load_checkpoint(ckpt, &manifest.config)?;
    if ckpt_hash != manifest.config_hash {
        return Err(Error::format(format!(
            "config-hash mismatch: checkpoint {} was trained under config {} but cache {} carries {}; \
             refusing to mix architectures",
            ckpt.display(),
            &ckpt_hash[..12],
            data.display(),
            &manifest.config_hash[..12],
        )));
    }
    let samples = select_part(&split, part, data)?;
    let report = evaluate_rmse(samples, &mut params, &manifest.config)?;
    let baseline_report = match baseline {
        Some(_) => Some(evaluate_rmse_baseline(samples, &manifest.config)?),
        None => None,
    };
    print!("{}", render_eval_table(&report, baseline_report.as_ref(), part));
    Ok(())
}

pub fn cmd_predict(
    data: &Path,
    ckpt: &Path,
    sample_index: usize,
    plot_path: &Path,
    csv_path: Option<&Path>,
    part: &str,
) -> Result<()> {
    let (split, manifest) = load_dataset(data)?;
    let (mut params, ckpt_hash) = load_checkpoint(ckpt, &manifest.config)?;
    if ckpt_hash != manifest.config_hash {
        return Err(Error::format(
            "config-hash mismatch between cache and checkpoint".to_string(),
        ));
    }
    let samples = select_part(&split, part, data)?;
    let sample = samples.get(sample_index).ok_or_else(|| {
        Error::argument(
            "predict",
            format!(
                "sample index {sample_index} out of range for {} {part} samples",
                samples.len()
            ),
        )
    })?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let pred = forward(
        None,
        &mut params,
        sample,
        &manifest.config,
        crate::autodiff::Mode::Eval,
        &mut rng,
    )?;

    let csv_path = csv_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| plot_path.with_extension("csv"));
    write_prediction_csv(&csv_path, sample, &pred)?;
    let svg = plot::render_scene_svg(sample, &pred, &manifest.config);
    std::fs::write(plot_path, svg).map_err(|e| Error::io(plot_path.display().to_string(), e))?;
    println!("wrote {} and {}", csv_path.display(), plot_path.display());
    Ok(())
}

fn write_prediction_csv(path: &Path, sample: &Sample, pred: &PredictedTrajectory) -> Result<()> {
    let anchor = sample.anchor_position();
    let mut text = String::from("frame,pred_x,pred_y,truth_x,truth_y\n");
    let pred_abs = pred.to_absolute(anchor);
    for (k, (p, t)) in pred_abs.iter().zip(&sample.future).enumerate() {
        let truth_abs = (t.0 + anchor.0, t.1 + anchor.1);
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            k + 1,
            p.0,
            p.1,
            truth_abs.0,
            truth_abs.1
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Run a parsed command, translating errors to process exit codes.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Ingest { input, out, config } => cmd_ingest(input, out, config),
        Command::Synth {
            scenario,
            scenes,
            seed,
            out,
            config,
        } => cmd_synth(scenario, *scenes, *seed, out, config.as_deref()),
        Command::Train {
            data,
            out,
            config,
            lr,
            log,
        } => cmd_train(data, out, config, *lr, log.as_deref()),
        Command::Eval {
            data,
            ckpt,
            baseline,
            part,
        } => cmd_eval(data, ckpt, baseline.as_deref(), part),
        Command::Predict {
            data,
            ckpt,
            sample,
            plot,
            out,
            part,
        } => cmd_predict(data, ckpt, *sample, plot, out.as_deref(), part),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Argument { .. } => 1,
                Error::Format { .. } | Error::Io { .. } => 2,
                Error::Shape { .. } | Error::Invariant(_) => 3,
            }
        }
    }
}
