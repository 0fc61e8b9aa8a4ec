//! Command-line entry points.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use placement_core::synthetic::{generate_toy_dataset, ToySceneSpec};
use placement_core::train::TrainState;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{read_ndjson, write_toy_dataset, DiskDataset};
use crate::error::{read_text, write_bytes, Error, Result, EXIT_USAGE};
use crate::pipeline::{self, ExternalClassifier};

#[derive(Parser, Debug)]
#[command(
    name = "placement",
    version,
    about = "Scene-graph conditioned object placement"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured number of training steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Noise draws per query at inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub samples: usize,
    /// Config override, e.g. `--set model.gtn.num_layers=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic dataset directory.
    GenData {
        /// Scene generator settings (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of real samples.
        #[arg(long, default_value_t = 300)]
        n: usize,
    },
    /// Train on a dataset directory; writes metrics and checkpoints to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint (its config is used, plus overrides).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict placements; writes predictions NDJSON to --out.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the real samples of a dataset directory as queries.
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        data: Option<PathBuf>,
        /// Queries NDJSON: {"graph": path, "foreground": label, "fg_size": [w, h]}.
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Render predictions onto their dataset backgrounds as PNGs.
    Compose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Spatial metrics of predictions against ground truth, as JSON.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth NDJSON: {"bbox": [x, y, w, h]} per query.
        #[arg(long)]
        truth: PathBuf,
        /// Plausibility classifier command; gets a composite path, prints 0 or 1.
        #[arg(long, requires = "composites")]
        classifier: Option<String>,
        /// Directory of composites written by `compose`.
        #[arg(long)]
        composites: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required_out(g: &GlobalArgs) -> Result<&Path> {
    g.out
        .as_deref()
        .ok_or_else(|| Error::Usage("--out is required for this command".into()))
}

fn run_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(steps) = g.steps {
        config.steps = steps;
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Cmd::GenData { spec, n } => {
            let mut toy = match spec {
                Some(p) => serde_json::from_str::<ToySceneSpec>(&read_text(p)?)
                    .map_err(|e| Error::json(p, e))?,
                None => ToySceneSpec::default(),
            };
            if let Some(seed) = g.seed {
                toy.seed = seed;
            }
            let ds = generate_toy_dataset(&toy, *n)?;
            write_toy_dataset(required_out(g)?, &ds)
        }
        Cmd::Train { data, resume } => {
            let out = required_out(g)?;
            let ds = DiskDataset::open(data)?;
            let (config, state) = match resume {
                Some(path) => {
                    let (saved, state) = checkpoint::load(path)?;
                    let mut table = toml::Table::try_from(&saved).expect("config serializes");
                    for o in &g.overrides {
                        crate::config::apply_override(&mut table, o)?;
                    }
                    let mut config = RunConfig::from_table(table)?;
                    if let Some(steps) = g.steps {
                        config.steps = steps;
                    }
                    (config, state)
                }
                None => {
                    let config = run_config(g)?;
                    let table = pipeline::embedding_table(&config)?;
                    let queries = pipeline::dataset_queries(&ds);
                    let labels = pipeline::vocabulary(
                        queries.iter().map(|q| &q.graph),
                        queries.iter().map(|q| q.foreground.as_str()),
                    );
                    let state = TrainState::new(
                        &config.model,
                        &config.train,
                        &table,
                        &labels,
                        config.seed,
                    )?;
                    (config, state)
                }
            };
            let table = pipeline::embedding_table(&config)?;
            pipeline::train(&config, &ds, &table, state, out).map(|_| ())
        }
        Cmd::Infer {
            checkpoint: ckpt,
            data,
            queries,
        } => {
            let out = required_out(g)?;
            let (config, state) = checkpoint::load(ckpt)?;
            let table = pipeline::embedding_table(&config)?;
            let queries = match (data, queries) {
                (Some(dir), _) => pipeline::dataset_queries(&DiskDataset::open(dir)?),
                (None, Some(file)) => pipeline::read_queries(file)?,
                (None, None) => return Err(Error::Usage("--data or --queries is required".into())),
            };
            let seed = g.seed.unwrap_or(config.seed);
            let predictions = pipeline::infer(&config, &state, &table, &queries, g.samples, seed)?;
            pipeline::write_predictions(out, &predictions)
        }
        Cmd::Compose { data, predictions } => {
            let ds = DiskDataset::open(data)?;
            let predictions = read_ndjson(predictions)?;
            pipeline::compose_predictions(&ds, &predictions, required_out(g)?)
        }
        Cmd::Eval {
            predictions,
            truth,
            classifier,
            composites,
        } => {
            let predictions = read_ndjson(predictions)?;
            let truth = read_ndjson(truth)?;
            let mut judge = match (classifier, composites) {
                (Some(cmd), Some(dir)) => Some(ExternalClassifier::new(cmd, dir.clone())?),
                _ => None,
            };
            let report = pipeline::evaluate(
                &predictions,
                &truth,
                judge
                    .as_mut()
                    .map(|j| j as &mut dyn placement_core::metrics::PlausibilityClassifier),
            )?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match &g.out {
                Some(path) => write_bytes(path, json),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
    }
}
