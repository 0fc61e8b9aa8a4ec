//! The steps behind each command, usable without the CLI.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use placement_core::composer::{compose, PlacementParams};
use placement_core::data::{fit_extent, SampleSource};
use placement_core::embedding::{EmbeddingKind, EmbeddingTable, EMBED_DIM};
use placement_core::metrics::{
    evaluate_run, params_to_bbox, MetricsReport, PlausibilityClassifier, Prediction,
};
use placement_core::model::PlacementQuery;
use placement_core::scene_graph::{BoundingBox, SceneGraph};
use placement_core::train::{predict, stream, training_step, StepMetrics, TrainState};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{read_ndjson, write_ndjson, DiskDataset, TruthRecord};
use crate::embedding_file::load_embedding_table;
use crate::error::{write_bytes, Error, Result};
use crate::image_file::write_png;

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// Random stream for inference noise, distinct from the training streams.
pub const INFER_STREAM: u64 = 4;

pub fn embedding_table(config: &RunConfig) -> Result<EmbeddingTable> {
    match &config.embeddings {
        Some(path) => load_embedding_table(path),
        None => Ok(EmbeddingTable::empty(EMBED_DIM)),
    }
}

/// Every object and relation label in `graphs` plus the foregrounds.
pub fn vocabulary<'a>(
    graphs: impl IntoIterator<Item = &'a SceneGraph>,
    foregrounds: impl IntoIterator<Item = &'a str>,
) -> Vec<(EmbeddingKind, String)> {
    let mut out = std::collections::BTreeSet::new();
    for g in graphs {
        for n in g.nodes() {
            out.insert((EmbeddingKind::Object, n.label.clone()));
        }
        for e in g.edges() {
            out.insert((EmbeddingKind::Relation, e.relation_label.clone()));
        }
    }
    for f in foregrounds {
        out.insert((EmbeddingKind::Object, f.to_string()));
    }
    out.into_iter().collect()
}

/// Trains for `config.steps` steps in total (counting steps already in a
/// resumed `state`), appending one metrics line per step under `out`.
pub fn train(
    config: &RunConfig,
    source: &dyn SampleSource,
    table: &EmbeddingTable,
    mut state: TrainState,
    out: &Path,
) -> Result<TrainState> {
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    write_bytes(&out.join(CONFIG_FILE), config.to_toml())?;
    let metrics_path = out.join(METRICS_FILE);
    let file = if state.step == 0 {
        File::create(&metrics_path)
    } else {
        File::options()
            .append(true)
            .create(true)
            .open(&metrics_path)
    }
    .map_err(Error::io(&metrics_path))?;
    let mut log = BufWriter::new(file);
    while state.step < config.steps {
        let metrics = match training_step(&mut state, source, &config.model, &config.train, table) {
            Ok(m) => m,
            Err(e) => {
                log.flush().map_err(Error::io(&metrics_path))?;
                if matches!(e, placement_core::Error::NonFinite(_)) {
                    checkpoint::save(&out.join(DIAGNOSTIC_FILE), config, &state)?;
                }
                return Err(e.into());
            }
        };
        write_metrics(&mut log, &metrics).map_err(Error::io(&metrics_path))?;
        if config.checkpoint_every > 0 && state.step.is_multiple_of(config.checkpoint_every) {
            log.flush().map_err(Error::io(&metrics_path))?;
            checkpoint::save(
                &out.join(format!("checkpoint-{:06}.bin", state.step)),
                config,
                &state,
            )?;
        }
    }
    log.flush().map_err(Error::io(&metrics_path))?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), config, &state)?;
    Ok(state)
}

fn write_metrics(w: &mut impl Write, m: &StepMetrics) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, m)?;
    w.write_all(b"\n")
}

/// One placement query: a scene, what to place, and its native size.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub graph: SceneGraph,
    pub foreground: String,
    pub fg_size: (f64, f64),
}

/// A line of a queries file; `graph` is relative to the file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub graph: PathBuf,
    pub foreground: String,
    pub fg_size: (f64, f64),
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_ndjson::<QueryRecord>(path)?
        .into_iter()
        .map(|r| {
            Ok(Query {
                graph: crate::graph_file::read_scene_graph(&base.join(&r.graph))?,
                foreground: r.foreground,
                fg_size: r.fg_size,
            })
        })
        .collect()
}

/// The real samples of a dataset, as queries, in manifest order.
pub fn dataset_queries(ds: &DiskDataset) -> Vec<Query> {
    ds.reals()
        .iter()
        .map(|r| Query {
            graph: ds.graph(r).clone(),
            foreground: r.foreground.clone(),
            fg_size: r.fg_size,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Position of the query in the input.
    pub query: usize,
    /// Noise draw for that query, `0..samples`.
    pub draw: usize,
    pub t: [f64; 3],
    pub fg: (f64, f64),
    pub bg: (f64, f64),
}

impl PredictionRecord {
    pub fn prediction(&self) -> Result<Prediction> {
        Ok(Prediction {
            t: PlacementParams::from_array(self.t)?,
            fg: self.fg,
            bg: self.bg,
        })
    }
}

/// `samples` noise draws per query, grouped by query.
pub fn infer(
    config: &RunConfig,
    state: &TrainState,
    table: &EmbeddingTable,
    queries: &[Query],
    samples: usize,
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    if samples == 0 {
        return Err(Error::Usage("--samples must be at least 1".into()));
    }
    let expanded: Vec<PlacementQuery<'_>> = queries
        .iter()
        .flat_map(|q| {
            std::iter::repeat_n(
                PlacementQuery {
                    graph: &q.graph,
                    foreground: &q.foreground,
                },
                samples,
            )
        })
        .collect();
    let mut rng = stream(seed, INFER_STREAM);
    let ts = predict(
        &state.generator,
        &config.model,
        table,
        &expanded,
        &mut rng,
        32,
    )?;
    Ok(ts
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let q = &queries[k / samples];
            PredictionRecord {
                query: k / samples,
                draw: k % samples,
                t: t.to_array(),
                fg: q.fg_size,
                bg: (q.graph.width(), q.graph.height()),
            }
        })
        .collect())
}

#[derive(Serialize)]
struct CompositeInfo<'a> {
    query: usize,
    draw: usize,
    sample: &'a str,
    t: [f64; 3],
    bbox: [f64; 4],
    clamped: bool,
}

/// File name of the composite for prediction `index`.
pub fn composite_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// Renders every prediction onto its dataset background at full
/// resolution, with a JSON sidecar per image.
pub fn compose_predictions(
    ds: &DiskDataset,
    predictions: &[PredictionRecord],
    out: &Path,
) -> Result<()> {
    for (i, p) in predictions.iter().enumerate() {
        let record = ds.reals().get(p.query).ok_or_else(|| {
            Error::Usage(format!(
                "prediction {i} refers to query {} but the dataset has {}",
                p.query,
                ds.num_real()
            ))
        })?;
        let sample = ds.real(p.query)?;
        let t = PlacementParams::from_array(p.t)?;
        let extent = fit_extent(sample.fg_size, sample.canvas());
        let (image, _) = compose(&sample.bg, &sample.fg, &sample.mask, &t, extent)?;
        let png = out.join(composite_name(i));
        write_png(&png, &image)?;
        let (b, clamped) = params_to_bbox(
            &t,
            sample.fg_size,
            (sample.graph.width(), sample.graph.height()),
        );
        let info = CompositeInfo {
            query: p.query,
            draw: p.draw,
            sample: &record.id,
            t: p.t,
            bbox: [b.x, b.y, b.w, b.h],
            clamped,
        };
        write_bytes(
            &png.with_extension("json"),
            serde_json::to_string_pretty(&info).expect("sidecar serializes"),
        )?;
    }
    Ok(())
}

/// Plausibility from an external program: it receives a composite path as
/// its last argument and prints `1` (plausible) or `0`.
pub struct ExternalClassifier {
    pub program: String,
    pub args: Vec<String>,
    pub composites: PathBuf,
}

impl ExternalClassifier {
    pub fn new(command: &str, composites: PathBuf) -> Result<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Usage("empty classifier command".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
            composites,
        })
    }
}

impl PlausibilityClassifier for ExternalClassifier {
    fn is_plausible(&mut self, index: usize, _: &Prediction) -> placement_core::Result<bool> {
        let path = self.composites.join(composite_name(index));
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .output()
            .map_err(|e| {
                placement_core::Error::Config(format!("classifier `{}`: {e}", self.program))
            })?;
        match String::from_utf8_lossy(&out.stdout).trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(placement_core::Error::Config(format!(
                "classifier answered `{other}` for {}",
                path.display()
            ))),
        }
    }
}

/// Scores each prediction against the truth entry of its query.
pub fn evaluate(
    predictions: &[PredictionRecord],
    truth: &[TruthRecord],
    classifier: Option<&mut dyn PlausibilityClassifier>,
) -> Result<MetricsReport> {
    let preds = predictions
        .iter()
        .map(PredictionRecord::prediction)
        .collect::<Result<Vec<_>>>()?;
    let boxes = predictions
        .iter()
        .map(|p| {
            let t = truth.get(p.query).ok_or_else(|| {
                placement_core::Error::Shape(format!(
                    "prediction for query {} but only {} ground-truth boxes",
                    p.query,
                    truth.len()
                ))
            })?;
            Ok(BoundingBox::new(t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_run(&preds, &boxes, classifier)?)
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    write_ndjson(path, predictions)
}
