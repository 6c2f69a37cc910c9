//! Command-line driver for the latent-space refinement experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use laser::data::DatasetKind;
use laser::io::read_csv;
use laser::metrics::Bounds;
use laser::pipeline::{compare_report, render_density, Experiment, Preset, RunConfig, RunManifest, StageKind};

#[derive(Parser)]
#[command(name = "laser", version, about = "Latent space refinement of normalizing flows on 2D toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file with [section] headers and key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in hyperparameter preset, used when no --config is given.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// gaussians, double_donut or rings.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override one field, e.g. --set hmc.eps=0.01 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Rerun stages even if outputs of an identical earlier run exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training, truth and reference data.
    GenerateData(ConfigArgs),
    /// Train the baseline flow.
    TrainFlow(ConfigArgs),
    /// Train the reweighting classifier and pull its weights back to latent space.
    TrainClassifier(ConfigArgs),
    /// Train the weighted-GAN latent refiner.
    RefineGan(ConfigArgs),
    /// Sample the reweighted latent density with HMC.
    SampleHmc(ConfigArgs),
    /// Generate samples of every method and score them against truth.
    Score(ConfigArgs),
    /// Run every stage.
    RunAll(ConfigArgs),
    /// Render the density panels of a run, or a single CSV file with --input.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        /// CSV with x0,x1 columns (and optionally w) to render instead of a run.
        #[arg(long, requires = "output")]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        bins: usize,
    },
    /// Print the resolved configuration.
    ShowConfig(ConfigArgs),
    /// Merge score reports of several runs into one table.
    Compare {
        /// Manifest paths, optionally prefixed with a column label: LABEL=PATH.
        #[arg(required = true)]
        manifests: Vec<String>,
        /// Also write the table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let mut c = RunConfig::load(path)?;
            if let Some(d) = &args.dataset {
                c.dataset = d.parse()?;
            }
            c
        }
        None => {
            let preset: Preset = args.preset.parse()?;
            let dataset: DatasetKind = args.dataset.as_deref().unwrap_or("gaussians").parse()?;
            RunConfig::preset(preset, dataset)
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn run_stage(args: &ConfigArgs, stage: StageKind) -> anyhow::Result<()> {
    let config = resolve(args)?;
    let mut exp = Experiment::new(config)?.force(args.force);
    let manifest = exp.run_until(stage)?;
    for rec in &manifest.stages {
        println!("{:<11} {:<7} {:>8.1}s", rec.stage.name(), format!("{:?}", rec.status).to_lowercase(), rec.seconds);
    }
    if stage >= StageKind::Score {
        if let Some(report) = &manifest.scores {
            print!("{}", report.to_table());
        }
        let b0: Vec<String> = manifest.b0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("b0: {}", b0.join(" "));
    }
    println!("outputs in {}", exp.dir().display());
    Ok(())
}

fn render_file(args: &ConfigArgs, input: &PathBuf, output: &PathBuf, bins: usize) -> anyhow::Result<()> {
    let config = resolve(args)?;
    let (header, rows) = read_csv(input)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(i), Some(j)) = (col("x0"), col("x1")) else {
        bail!("{} has no x0,x1 columns", input.display());
    };
    let points = ndarray::stack![ndarray::Axis(1), rows.column(i), rows.column(j)];
    let weights: Option<Vec<f64>> = col("w").map(|k| rows.column(k).to_vec());
    let bounds: Bounds = config.dataset.bounds();
    render_density(&points, weights.as_deref(), bounds, (bins, bins), config.dataset.peak_density(), output)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn compare(manifests: &[String], output: Option<&PathBuf>) -> anyhow::Result<()> {
    let mut loaded = Vec::new();
    for arg in manifests {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(arg)),
        };
        let path = if path.is_dir() { path.join(laser::pipeline::MANIFEST_FILE) } else { path };
        let m = RunManifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
        loaded.push((label.unwrap_or_else(|| m.dataset.name().to_string()), m));
    }
    let table = compare_report(&loaded)?.to_table();
    print!("{table}");
    if let Some(out) = output {
        std::fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenerateData(a) => run_stage(a, StageKind::Data),
        Command::TrainFlow(a) => run_stage(a, StageKind::Flow),
        Command::TrainClassifier(a) => run_stage(a, StageKind::Classifier),
        Command::RefineGan(a) => run_stage(a, StageKind::Refiner),
        Command::SampleHmc(a) => run_stage(a, StageKind::Hmc),
        Command::Score(a) => run_stage(a, StageKind::Score),
        Command::RunAll(a) => run_stage(a, StageKind::Render),
        Command::Render {
            config,
            input: Some(input),
            output: Some(output),
            bins,
        } => render_file(config, input, output, *bins),
        Command::Render { config, .. } => run_stage(config, StageKind::Render),
        Command::ShowConfig(a) => resolve(a).map(|c| print!("{}", c.to_text())),
        Command::Compare { manifests, output } => compare(manifests, output.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(laser::Error::Stage { stage, source }) = e.downcast_ref::<laser::Error>() {
                eprintln!("laser: stage '{stage}' failed: {source}");
            } else {
                eprintln!("laser: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
