//! Command-line pipeline around the fusion library: synthetic dataset
//! generation, training, evaluation at fixed spectral fractions, fraction
//! sweeps, construction comparisons, and graph inspection dumps.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::FileConfig;
use graphfuse_core::io::{
    atomic_write, compare_csv, confusion_csv, export_graph, history_csv, load_checkpoint,
    load_dataset, metrics_json, save_checkpoint, save_dataset, sweep_csv, Checkpoint,
};
use graphfuse_core::{
    assemble_graph, evaluate, generate_dataset, sample_eds_points, seeding,
    split_dataset, sweep_fractions, train, Dataset, GatNetwork, SplitIndices, TrainConfig,
    TrainOutcome,
};

#[derive(Parser)]
#[command(name = "graphfuse", version, about = "Image + sparse-spectral fusion segmentation pipeline")]
struct Cli {
    /// Overrides every seeded stage (generation and training).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML configuration file; all keys optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "data")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Generate,
    /// Train on a dataset; writes a checkpoint and the per-epoch history.
    Train {
        /// Dataset path (default: <out>/dataset.gfuse).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split at one spectral fraction.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint path (default: <out>/checkpoint.gfckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Spectral fraction in [0, 1].
        #[arg(long)]
        fraction: f64,
    },
    /// Evaluate a checkpoint over a list of fractions; writes a CSV table.
    Sweep {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated fractions, e.g. 0.01,0.05,0.1.
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
    },
    /// Train both edge constructions on the same data and seed, and report
    /// side-by-side test metrics.
    CompareConstruction {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluation fraction for the comparison.
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
    },
    /// Dump one assembled sample graph as text for external plotting.
    InspectGraph {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Sample index within the dataset.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut file_cfg = FileConfig::load(cli.config.as_deref())?;
    file_cfg.override_seed(cli.seed);
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match cli.command {
        Command::Generate => generate_cmd(&cli.out, &file_cfg),
        Command::Train { dataset } => {
            train_cmd(&cli.out, &file_cfg, &resolve(dataset, &cli.out, "dataset.gfuse"))
        }
        Command::Evaluate { dataset, checkpoint, fraction } => evaluate_cmd(
            &cli.out,
            &resolve(dataset, &cli.out, "dataset.gfuse"),
            &resolve(checkpoint, &cli.out, "checkpoint.gfckpt"),
            fraction,
        ),
        Command::Sweep { dataset, checkpoint, fractions } => sweep_cmd(
            &cli.out,
            &resolve(dataset, &cli.out, "dataset.gfuse"),
            &resolve(checkpoint, &cli.out, "checkpoint.gfckpt"),
            &fractions,
        ),
        Command::CompareConstruction { dataset, fraction } => compare_cmd(
            &cli.out,
            &file_cfg,
            &resolve(dataset, &cli.out, "dataset.gfuse"),
            fraction,
        ),
        Command::InspectGraph { dataset, sample, fraction } => inspect_cmd(
            &cli.out,
            &file_cfg,
            &resolve(dataset, &cli.out, "dataset.gfuse"),
            sample,
            fraction,
        ),
    }
}

fn resolve(explicit: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out.join(name))
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        bail!("fraction {fraction} outside [0, 1]");
    }
    Ok(())
}

fn generate_cmd(out: &Path, cfg: &FileConfig) -> Result<()> {
    let data = generate_dataset(&cfg.generate)?;
    let path = out.join("dataset.gfuse");
    save_dataset(&data, &path)?;
    println!(
        "wrote {} ({} samples, {}x{}, {} classes)",
        path.display(),
        data.samples.len(),
        data.height,
        data.width,
        data.n_classes
    );
    Ok(())
}

fn load_with_split(dataset: &Path, seed: u64) -> Result<(Dataset, SplitIndices)> {
    let data = load_dataset(dataset)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let split = split_dataset(data.samples.len(), (0.8, 0.1, 0.1), seed)?;
    Ok((data, split))
}

fn run_training(
    data: &Dataset,
    split: &SplitIndices,
    cfg: &FileConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let gat_cfg = cfg.network.to_gat_config(data.n_classes);
    let net = GatNetwork::init(gat_cfg, seeding::derive(train_cfg.seed, seeding::tag::INIT))?;
    Ok(train(data, split, net, train_cfg)?)
}

fn train_cmd(out: &Path, cfg: &FileConfig, dataset: &Path) -> Result<()> {
    let train_cfg = cfg.train.to_train_config()?;
    let (data, split) = load_with_split(dataset, train_cfg.seed)?;
    let outcome = run_training(&data, &split, cfg, &train_cfg)?;

    let ckpt = Checkpoint {
        net: outcome.net.clone(),
        train_config: train_cfg,
        best_val_f1: outcome.best_val_f1.unwrap_or(-1.0),
        best_epoch: outcome.best_epoch.unwrap_or(0) as u32,
    };
    let ckpt_path = out.join("checkpoint.gfckpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    let history_path = out.join("history.csv");
    atomic_write(&history_path, history_csv(&outcome.history).as_bytes())?;
    println!(
        "wrote {} and {} (best val macro-F1 {:.4} at epoch {})",
        ckpt_path.display(),
        history_path.display(),
        ckpt.best_val_f1,
        ckpt.best_epoch
    );
    Ok(())
}

fn evaluate_cmd(out: &Path, dataset: &Path, checkpoint: &Path, fraction: f64) -> Result<()> {
    check_fraction(fraction)?;
    let ckpt = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (data, split) = load_with_split(dataset, ckpt.train_config.seed)?;
    let metrics = evaluate(
        &data,
        &split.test,
        &ckpt.net,
        ckpt.train_config.construction,
        fraction,
        seeding::derive(ckpt.train_config.seed, seeding::tag::EVAL),
    )?;
    let json_path = out.join("metrics.json");
    atomic_write(&json_path, metrics_json(&metrics).as_bytes())?;
    let conf_path = out.join("confusion.csv");
    atomic_write(&conf_path, confusion_csv(&metrics).as_bytes())?;
    println!(
        "fraction {fraction}: macro precision {:.4}, recall {:.4}, F1 {:.4} -> {}, {}",
        metrics.macro_precision,
        metrics.macro_recall,
        metrics.macro_f1,
        json_path.display(),
        conf_path.display()
    );
    Ok(())
}

fn sweep_cmd(out: &Path, dataset: &Path, checkpoint: &Path, fractions: &[f64]) -> Result<()> {
    for &f in fractions {
        check_fraction(f)?;
    }
    let ckpt = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (data, split) = load_with_split(dataset, ckpt.train_config.seed)?;
    let rows = sweep_fractions(
        &data,
        &split.test,
        &ckpt.net,
        ckpt.train_config.construction,
        fractions,
        seeding::derive(ckpt.train_config.seed, seeding::tag::EVAL),
    )?;
    let path = out.join("sweep.csv");
    atomic_write(&path, sweep_csv(&rows).as_bytes())?;
    for m in &rows {
        println!(
            "fraction {:.4}: precision {:.4} recall {:.4} F1 {:.4}",
            m.fraction, m.macro_precision, m.macro_recall, m.macro_f1
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn compare_cmd(out: &Path, cfg: &FileConfig, dataset: &Path, fraction: f64) -> Result<()> {
    check_fraction(fraction)?;
    let base_cfg = cfg.train.to_train_config()?;
    let (data, split) = load_with_split(dataset, base_cfg.seed)?;
    let eval_seed = seeding::derive(base_cfg.seed, seeding::tag::EVAL);

    let mut rows = Vec::new();
    for construction in [
        graphfuse_core::Construction::Delaunay,
        graphfuse_core::Construction::Knn { k: cfg.train.knn_k },
    ] {
        let run_cfg = TrainConfig { construction, ..base_cfg.clone() };
        let outcome = run_training(&data, &split, cfg, &run_cfg)?;
        let metrics =
            evaluate(&data, &split.test, &outcome.net, construction, fraction, eval_seed)?;
        println!(
            "{construction}: macro precision {:.4} recall {:.4} F1 {:.4}",
            metrics.macro_precision, metrics.macro_recall, metrics.macro_f1
        );
        rows.push((construction.to_string(), metrics));
    }
    let rows_ref: Vec<(String, &graphfuse_core::Metrics)> =
        rows.iter().map(|(n, m)| (n.clone(), m)).collect();
    let path = out.join("compare.csv");
    atomic_write(&path, compare_csv(&rows_ref).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn inspect_cmd(
    out: &Path,
    cfg: &FileConfig,
    dataset: &Path,
    sample: usize,
    fraction: f64,
) -> Result<()> {
    check_fraction(fraction)?;
    let data = load_dataset(dataset)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    if sample >= data.samples.len() {
        bail!("sample {sample} out of range (dataset has {})", data.samples.len());
    }
    let s = &data.samples[sample];
    let mut rng = seeding::rng_from(seeding::derive_chain(
        cfg.train.seed,
        &[seeding::tag::EVAL, sample as u64],
    ));
    let points = sample_eds_points(s, data.width, fraction, &mut rng)?;
    let graph = assemble_graph(
        &s.bse,
        (data.height, data.width),
        &points,
        cfg.train.construction()?,
        &s.validity,
        Some(&s.labels),
    )?;
    let dump = export_graph(&graph)?;
    let path = out.join("graph.txt");
    atomic_write(&path, dump.as_bytes())?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        path.display(),
        graph.n_nodes(),
        graph.edges.len()
    );
    Ok(())
}
