//! Command-line surface: dataset generation, training, evaluation, ablation
//! runs, threshold sweeps, report rendering and rater-agreement checks.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use egorank::ablate::{run_ablation, AblationConfig};
use egorank::baselines::{baseline_predict, BaselineKind};
use egorank::config::{AppConfig, TrainMode};
use egorank::icc::{icc, ratings_from_records, IccVariant};
use egorank::metrics::{compute_metrics, MetricsReport};
use egorank::model::ImportanceModel;
use egorank::report::{parse_metrics_csv, render_table};
use egorank::scene::{load_dataset, save_dataset, split_dataset, Intention, Scene};
use egorank::sweep::{default_grid, sweep_thresholds};
use egorank::synth::generate_dataset;
use egorank::trainer::{evaluate, train_with_flags, TrainerFlags};

#[derive(Parser)]
#[command(name = "egorank", version, about = "Important-object identification on synthetic egocentric scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file with generator/model/train sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training / generation seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<AppConfig> {
        let mut cfg = match &self.config {
            Some(path) => AppConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => AppConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.generator.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL dataset with oracle labels.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a training-log CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input JSONL dataset.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV path (defaults to `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        /// supervised or ssl.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate a checkpoint on the test split and write a metrics CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate the three rule baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Train and evaluate the standard ablation matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path; a `.wide.csv` summary lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, e.g. `0,1,2`.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Sweep pseudo-label thresholds on a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated alpha1 values (default 0.5..0.9).
        #[arg(long = "grid-a1")]
        grid_a1: Option<String>,
        /// Comma-separated alpha2 values (default 0.5..0.9).
        #[arg(long = "grid-a2")]
        grid_a2: Option<String>,
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Render a plain-text summary table from metrics CSV files.
    Report {
        /// Metrics CSV files produced by eval or ablate.
        files: Vec<PathBuf>,
        /// Optional output path; prints to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Intra-class correlation from a `subject,rater,value` ratings CSV.
    Icc {
        #[arg(long)]
        data: PathBuf,
        /// icc1_1, icc2_1 or icc3_1.
        #[arg(long, default_value = "icc2_1")]
        variant: String,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad grid value {s:?}")))
        .collect()
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = common.load()?;
            let dataset = generate_dataset(&cfg.generator)?;
            save_dataset(&dataset, &out)?;
            println!(
                "wrote {} labeled + {} unlabeled scenes to {}",
                dataset.labeled.len(),
                dataset.unlabeled.len(),
                out.display()
            );
        }
        Command::Train { common, data, out, log, mode } => {
            let mut cfg = common.load()?;
            if let Some(mode) = mode {
                cfg.train.mode = match mode.as_str() {
                    "supervised" => TrainMode::Supervised,
                    "ssl" => TrainMode::Ssl,
                    other => bail!("unknown mode {other:?}; expected supervised or ssl"),
                };
            }
            let dataset = load_dataset(&data)?;
            let (train_scenes, _test) = split_dataset(&dataset.labeled, 0.7, cfg.train.seed)?;
            let train_data = egorank::scene::Dataset {
                labeled: train_scenes,
                unlabeled: dataset.unlabeled,
            };
            let outcome = train_with_flags(&train_data, &cfg.model, &cfg.train, TrainerFlags::default())?;
            outcome.model.save(&out)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone();
                p.set_extension("log.csv");
                p
            });
            outcome.log.save(&log_path)?;
            println!("checkpoint: {}", out.display());
            println!("training log: {}", log_path.display());
        }
        Command::Eval { common, data, checkpoint, out, baselines } => {
            let cfg = common.load()?;
            let dataset = load_dataset(&data)?;
            let (_train, test) = split_dataset(&dataset.labeled, 0.7, cfg.train.seed)?;
            let model = ImportanceModel::load(&cfg.model, &checkpoint)?;
            let test_refs: Vec<&Scene> = test.iter().collect();
            let mut csv = String::from(MetricsReport::csv_header());
            csv.push('\n');
            let report = evaluate(&model, &test_refs, "model", cfg.train.seed)?;
            csv.push_str(&report.csv_rows());
            if baselines {
                let labels: Vec<Vec<u8>> =
                    test.iter().map(|s| s.importance().unwrap().to_vec()).collect();
                let intents: Vec<Intention> = test.iter().map(|s| s.intention).collect();
                for kind in BaselineKind::ALL {
                    let preds: Vec<Vec<u8>> = test
                        .iter()
                        .map(|s| baseline_predict(s, kind))
                        .collect::<egorank::Result<_>>()?;
                    let rep = compute_metrics(&preds, &labels, &intents, kind.name(), cfg.train.seed)?;
                    csv.push_str(&rep.csv_rows());
                }
            }
            fs::write(&out, &csv)?;
            println!("{}", render_table(&parse_metrics_csv(&csv)?));
            println!("metrics: {}", out.display());
        }
        Command::Ablate { common, data, out, seeds } => {
            let cfg = common.load()?;
            let seeds = parse_seeds(&seeds)?;
            let dataset = load_dataset(&data)?;
            let (train_scenes, test) = split_dataset(&dataset.labeled, 0.7, cfg.train.seed)?;
            let configs = AblationConfig::standard_matrix();
            let report = run_ablation(
                &train_scenes,
                &test,
                &dataset.unlabeled,
                &configs,
                &seeds,
                &cfg.model,
                &cfg.train,
            )?;
            fs::write(&out, report.long_csv())?;
            let mut wide = out.clone();
            wide.set_extension("wide.csv");
            fs::write(&wide, report.wide_csv())?;
            println!("{}", render_table(&parse_metrics_csv(&report.long_csv())?));
            println!("ablation rows: {}", out.display());
            println!("summary: {}", wide.display());
        }
        Command::Sweep { common, data, out, grid_a1, grid_a2, seeds } => {
            let cfg = common.load()?;
            let seeds = parse_seeds(&seeds)?;
            let (default_a1, default_a2) = default_grid();
            let a1 = match grid_a1 {
                Some(t) => parse_grid(&t)?,
                None => default_a1,
            };
            let a2 = match grid_a2 {
                Some(t) => parse_grid(&t)?,
                None => default_a2,
            };
            let dataset = load_dataset(&data)?;
            let (train_scenes, test) = split_dataset(&dataset.labeled, 0.7, cfg.train.seed)?;
            let report = sweep_thresholds(
                &train_scenes,
                &test,
                &dataset.unlabeled,
                &a1,
                &a2,
                &seeds,
                &cfg.model,
                &cfg.train,
            )?;
            fs::write(&out, report.grid_csv())?;
            let mut per_seed = out.clone();
            per_seed.set_extension("per_seed.csv");
            fs::write(&per_seed, report.per_seed_csv())?;
            println!("sweep grid: {}", out.display());
        }
        Command::Report { files, out } => {
            if files.is_empty() {
                bail!("report needs at least one metrics CSV file");
            }
            let mut rows = Vec::new();
            for f in &files {
                let text =
                    fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                rows.extend(parse_metrics_csv(&text)?);
            }
            let table = render_table(&rows);
            match out {
                Some(path) => {
                    fs::write(&path, &table)?;
                    println!("report: {}", path.display());
                }
                None => println!("{table}"),
            }
        }
        Command::Icc { data, variant } => {
            let variant = match variant.as_str() {
                "icc1_1" => IccVariant::Icc1_1,
                "icc2_1" => IccVariant::Icc2_1,
                "icc3_1" => IccVariant::Icc3_1,
                other => bail!("unknown icc variant {other:?}"),
            };
            let text = fs::read_to_string(&data)?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.eq_ignore_ascii_case("subject,rater,value") {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 3 {
                    bail!("line {}: expected subject,rater,value", i + 1);
                }
                let value: f64 =
                    fields[2].trim().parse().with_context(|| format!("line {}: bad value", i + 1))?;
                records.push((fields[0].trim().to_string(), fields[1].trim().to_string(), value));
            }
            let matrix = ratings_from_records(&records)?;
            let value = icc(&matrix, variant)?;
            println!("{value}");
        }
    }
    Ok(())
}
