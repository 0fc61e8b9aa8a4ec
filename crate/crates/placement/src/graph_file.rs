//! Scene-graph documents: one JSON object per file.

use std::path::Path;

use placement_core::scene_graph::{BoundingBox, SceneEdge, SceneGraph, SceneNode, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_bytes, Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    width: f64,
    height: f64,
    complete: bool,
    nodes: Vec<NodeDoc>,
    edges: Vec<SceneEdge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    label: String,
    category_id: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default = "full_confidence")]
    confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

/// Parses a scene-graph document. `origin` only labels errors.
pub fn parse_scene_graph(text: &str, origin: &Path) -> Result<SceneGraph> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| SceneNode {
            category_id: n.category_id,
            label: n.label,
            bbox: BoundingBox::new(n.bbox[0], n.bbox[1], n.bbox[2], n.bbox[3]),
            confidence: n.confidence,
        })
        .collect();
    Ok(SceneGraph::new(
        nodes,
        doc.edges,
        doc.width,
        doc.height,
        doc.complete,
        Vocabulary::default(),
    )?)
}

pub fn scene_graph_to_json(graph: &SceneGraph) -> String {
    let doc = GraphDoc {
        width: graph.width(),
        height: graph.height(),
        complete: graph.is_complete(),
        nodes: graph
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                label: n.label.clone(),
                category_id: n.category_id,
                bbox: [n.bbox.x, n.bbox.y, n.bbox.w, n.bbox.h],
                confidence: n.confidence,
            })
            .collect(),
        edges: graph.edges().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("graph documents always serialize")
}

pub fn read_scene_graph(path: &Path) -> Result<SceneGraph> {
    parse_scene_graph(&read_text(path)?, path)
}

pub fn write_scene_graph(path: &Path, graph: &SceneGraph) -> Result<()> {
    write_bytes(path, scene_graph_to_json(graph))
}
