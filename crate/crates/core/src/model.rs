//! The placement generator: graph encoder, spatial fusion, foreground
//! cross-attention and the parameter regressor, wired together.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::composer;
use crate::composer::RegressorConfig;
use crate::cross_attention::{self, CrossAttentionConfig};
use crate::discriminator::DiscriminatorConfig;
use crate::embedding::{EmbeddingKind, EmbeddingTable, EMBED_DIM};
use crate::error::{Error, Result};
use crate::gtn::{self, AttentionTrace, Features, GraphBatch, GraphStructure, GtnConfig};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::scene_graph::SceneGraph;
use crate::spatial::{self, SpatialVector};
use crate::tensor::Tensor;

pub const GTN_PREFIX: &str = "gtn";
pub const SPATIAL_PREFIX: &str = "spatial";
pub const CROSS_PREFIX: &str = "cross";
pub const REGRESSOR_PREFIX: &str = "regressor";
pub const EMBED_PREFIX: &str = "embed";
pub const DISC_PREFIX: &str = "disc";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gtn: GtnConfig,
    pub spatial_dim: usize,
    pub attention: CrossAttentionConfig,
    pub regressor: RegressorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Graphs keep at most this many of their most confident nodes.
    pub node_budget: usize,
    pub trainable_embeddings: bool,
    /// Seed of the fallback embeddings for labels missing from the table.
    pub embedding_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gtn: GtnConfig::default(),
            spatial_dim: 256,
            attention: CrossAttentionConfig::default(),
            regressor: RegressorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            node_budget: 20,
            trainable_embeddings: false,
            embedding_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the enhanced scene features.
    pub fn d_model(&self) -> usize {
        self.gtn.d_out + self.spatial_dim
    }

    /// Attention settings with the widths implied by the rest of the model.
    pub fn attention(&self) -> CrossAttentionConfig {
        CrossAttentionConfig {
            d_query: EMBED_DIM,
            d_model: self.d_model(),
            ..self.attention
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for r in [self.gtn.validate(), self.attention().validate()] {
            if let Err(Error::Validation(p)) = r {
                problems.extend(p);
            }
        }
        if self.gtn.d_in != EMBED_DIM {
            problems.push(format!(
                "gtn.d_in must equal the embedding width {EMBED_DIM}"
            ));
        }
        if self.spatial_dim == 0 {
            problems.push("spatial_dim must be positive".into());
        }
        if self.node_budget == 0 {
            problems.push("node_budget must be at least 1".into());
        }
        if self.node_budget > self.attention.n_max {
            problems.push(format!(
                "node_budget ({}) exceeds attention.n_max ({})",
                self.node_budget, self.attention.n_max
            ));
        }
        if self.regressor.d_noise == 0 || self.regressor.hidden.contains(&0) {
            problems.push("regressor widths must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Fresh generator parameters.
    pub fn init_generator<T: Scalar>(&self, rng: &mut impl Rng) -> ParamStore<T> {
        let mut store = ParamStore::new();
        self.gtn.init_params(&mut store, GTN_PREFIX, rng);
        spatial::init_params(&mut store, SPATIAL_PREFIX, self.spatial_dim, rng);
        self.attention().init_params(&mut store, CROSS_PREFIX, rng);
        self.regressor
            .init_params(&mut store, REGRESSOR_PREFIX, self.d_model(), rng);
        store
    }

    pub fn init_discriminator<T: Scalar>(&self, rng: &mut impl Rng) -> ParamStore<T> {
        let mut store = ParamStore::new();
        self.discriminator.init_params(&mut store, DISC_PREFIX, rng);
        store
    }
}

pub fn embedding_param_name(kind: EmbeddingKind, label: &str) -> String {
    let k = match kind {
        EmbeddingKind::Object => "object",
        EmbeddingKind::Relation => "relation",
    };
    format!("{EMBED_PREFIX}.{k}.{label}")
}

/// Copies the vectors of `labels` into `store` so they are optimised with
/// the generator.
pub fn register_trainable_embeddings<T: Scalar>(
    store: &mut ParamStore<T>,
    table: &EmbeddingTable,
    seed: u64,
    labels: &[(EmbeddingKind, String)],
) {
    for (kind, label) in labels {
        let v: Vec<T> = table
            .lookup(label, *kind, seed)
            .iter()
            .map(|&x| T::of(x as f64))
            .collect();
        let t = Tensor::new(&[1, v.len()], v).expect("embedding row");
        store.insert(embedding_param_name(*kind, label), t);
    }
}

/// One generator input: a scene and the category to place in it.
#[derive(Clone, Copy, Debug)]
pub struct PlacementQuery<'a> {
    pub graph: &'a SceneGraph,
    pub foreground: &'a str,
}

pub struct GeneratorOutput {
    /// `B × 3` placement parameters.
    pub params: Var,
    pub cross_weights: Vec<Vec<Vec<f64>>>,
    pub gtn_traces: Vec<AttentionTrace>,
    /// Node count of each (truncated) graph.
    pub node_counts: Vec<usize>,
}

/// Rows of the label embedding table used by one batch.
struct LabelTable {
    labels: Vec<String>,
    index: Vec<usize>,
}

impl LabelTable {
    fn new<'a>(labels: impl Iterator<Item = &'a str>) -> Self {
        let mut table = LabelTable {
            labels: Vec::new(),
            index: Vec::new(),
        };
        for l in labels {
            let i = match table.labels.iter().position(|x| x == l) {
                Some(i) => i,
                None => {
                    table.labels.push(l.into());
                    table.labels.len() - 1
                }
            };
            table.index.push(i);
        }
        table
    }
}

fn embedding_rows<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    table: &EmbeddingTable,
    kind: EmbeddingKind,
    labels: &[String],
) -> Result<Var> {
    let dim = table.dim();
    if dim != EMBED_DIM {
        return Err(Error::Shape(format!(
            "embedding table has width {dim}, expected {EMBED_DIM}"
        )));
    }
    if config.trainable_embeddings {
        let mut rows = Vec::with_capacity(labels.len());
        for l in labels {
            let name = embedding_param_name(kind, l);
            rows.push(if store.contains(&name) {
                tape.param(store, &name)?
            } else {
                let v: Vec<T> = table
                    .lookup(l, kind, config.embedding_seed)
                    .iter()
                    .map(|&x| T::of(x as f64))
                    .collect();
                tape.constant(Tensor::new(&[1, dim], v)?)
            });
        }
        return tape.concat_rows(&rows);
    }
    let data: Vec<T> = labels
        .iter()
        .flat_map(|l| table.lookup(l, kind, config.embedding_seed))
        .map(|x| T::of(x as f64))
        .collect();
    Ok(tape.constant(Tensor::new(&[labels.len(), dim], data)?))
}

/// Predicts placement parameters for each query. `noise` is `B × d_noise`.
pub fn generate<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    table: &EmbeddingTable,
    queries: &[PlacementQuery<'_>],
    noise: Var,
) -> Result<GeneratorOutput> {
    if queries.is_empty() {
        return Err(Error::Shape("empty generator batch".into()));
    }
    let graphs: Vec<SceneGraph> = queries
        .iter()
        .map(|q| {
            q.graph
                .truncate_to_top_k(config.node_budget)
                .sorted_by_confidence()
        })
        .collect();
    if let Some(i) = graphs.iter().position(|g| g.node_count() == 0) {
        return Err(Error::Shape(format!("scene {i} has no objects")));
    }
    let structure = Rc::new(GraphStructure::new(
        &graphs
            .iter()
            .map(|g| {
                (
                    g.node_count(),
                    g.edges().iter().map(|e| (e.src, e.dst)).collect(),
                )
            })
            .collect::<Vec<_>>(),
    )?);
    let objects = LabelTable::new(
        graphs
            .iter()
            .flat_map(|g| g.nodes().iter().map(|n| n.label.as_str())),
    );
    let relations = LabelTable::new(
        graphs
            .iter()
            .flat_map(|g| g.edges().iter().map(|e| e.relation_label.as_str())),
    );
    let node_table = embedding_rows(
        tape,
        store,
        config,
        table,
        EmbeddingKind::Object,
        &objects.labels,
    )?;
    let edge_features = if relations.labels.is_empty() {
        Features::Dense(tape.constant(Tensor::zeros(&[0, EMBED_DIM])))
    } else {
        Features::Indexed {
            table: embedding_rows(
                tape,
                store,
                config,
                table,
                EmbeddingKind::Relation,
                &relations.labels,
            )?,
            index: relations.index,
        }
    };
    let batch = GraphBatch {
        nodes: Features::Indexed {
            table: node_table,
            index: objects.index,
        },
        edges: edge_features,
        structure: Rc::clone(&structure),
    };
    let (x, gtn_traces) = gtn::gtn_forward(tape, store, GTN_PREFIX, &config.gtn, batch)?;
    let vectors: Vec<SpatialVector> = graphs
        .iter()
        .flat_map(|g| {
            g.nodes()
                .iter()
                .map(move |n| spatial::spatial_vector(n.bbox, g.width(), g.height()))
        })
        .collect::<Result<_>>()?;
    let scene = spatial::enhance(tape, store, SPATIAL_PREFIX, x, &vectors)?;
    let fg_labels: Vec<String> = queries.iter().map(|q| String::from(q.foreground)).collect();
    let fg_rows = LabelTable::new(fg_labels.iter().map(String::as_str));
    let fg_table = embedding_rows(
        tape,
        store,
        config,
        table,
        EmbeddingKind::Object,
        &fg_rows.labels,
    )?;
    let fg = tape.gather_rows(fg_table, &fg_rows.index)?;
    let query = cross_attention::project_foreground(tape, store, CROSS_PREFIX, fg)?;
    let segments: Vec<_> = (0..graphs.len())
        .map(|b| structure.graph_range(b))
        .collect();
    let attended = cross_attention::cross_attend(
        tape,
        store,
        CROSS_PREFIX,
        &config.attention(),
        query,
        scene,
        &segments,
    )?;
    let params = composer::regress_params(tape, store, REGRESSOR_PREFIX, attended.features, noise)?;
    Ok(GeneratorOutput {
        params,
        cross_weights: attended.weights,
        gtn_traces,
        node_counts: graphs.iter().map(SceneGraph::node_count).collect(),
    })
}
