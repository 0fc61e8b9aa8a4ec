//! Scene graphs: detected objects with boxes, directed typed relations and
//! the background they were detected in.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in background pixels; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    /// Problems with this box inside a `width × height` background.
    pub fn violations(&self, width: f64, height: f64) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            out.push(format!("box {self:?} has non-finite coordinates"));
            return out;
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            out.push(format!("box {self:?} has non-positive size"));
        }
        if self.x < 0.0 || self.y < 0.0 {
            out.push(format!("box {self:?} starts outside the background"));
        }
        if self.right() > width || self.bottom() > height {
            out.push(format!("box {self:?} exceeds background {width}x{height}"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub category_id: usize,
    pub label: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEdge {
    pub src: usize,
    pub dst: usize,
    pub relation_id: usize,
    pub relation_label: String,
}

/// Label vocabulary sizes used for id validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub objects: usize,
    pub relations: usize,
}

impl Default for Vocabulary {
    /// 151 object categories and 51 relation types of the scene-graph
    /// generator vocabulary.
    fn default() -> Self {
        Self {
            objects: 151,
            relations: 51,
        }
    }
}

/// A validated scene graph. Construct through [`SceneGraph::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    nodes: Vec<SceneNode>,
    edges: Vec<SceneEdge>,
    width: f64,
    height: f64,
    complete: bool,
}

impl SceneGraph {
    /// Validates every invariant and reports all violations at once.
    pub fn new(
        nodes: Vec<SceneNode>,
        edges: Vec<SceneEdge>,
        width: f64,
        height: f64,
        complete: bool,
        vocab: Vocabulary,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            problems.push(format!("background {width}x{height} must be positive"));
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.category_id >= vocab.objects {
                problems.push(format!(
                    "node {i}: category_id {} outside vocabulary of {}",
                    node.category_id, vocab.objects
                ));
            }
            if node.label.is_empty() {
                problems.push(format!("node {i}: empty label"));
            }
            if !(0.0..=1.0).contains(&node.confidence) {
                problems.push(format!(
                    "node {i}: confidence {} outside [0, 1]",
                    node.confidence
                ));
            }
            for v in node.bbox.violations(width, height) {
                problems.push(format!("node {i}: {v}"));
            }
        }
        let mut seen = vec![false; n * n];
        for (k, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                problems.push(format!(
                    "edge {k}: ({}, {}) references a node outside 0..{n}",
                    e.src, e.dst
                ));
                continue;
            }
            if e.src == e.dst {
                problems.push(format!("edge {k}: self loop on node {}", e.src));
            }
            if e.relation_id >= vocab.relations {
                problems.push(format!(
                    "edge {k}: relation_id {} outside vocabulary of {}",
                    e.relation_id, vocab.relations
                ));
            }
            let slot = &mut seen[e.src * n + e.dst];
            if *slot {
                problems.push(format!("edge {k}: duplicate pair ({}, {})", e.src, e.dst));
            }
            *slot = true;
        }
        if complete && edges.len() != n * n.saturating_sub(1) {
            problems.push(format!(
                "graph declared complete with {n} nodes must have {} edges, found {}",
                n * n.saturating_sub(1),
                edges.len()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            nodes,
            edges,
            width,
            height,
            complete,
        })
    }

    pub fn nodes(&self) -> &[SceneNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[SceneEdge] {
        &self.edges
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Keeps the `k` most confident nodes in their original order and the
    /// edges among them. Ties keep the earlier node.
    pub fn truncate_to_top_k(&self, k: usize) -> SceneGraph {
        let n = self.nodes.len();
        if n <= k {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.nodes[b]
                .confidence
                .total_cmp(&self.nodes[a].confidence)
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; n];
        for &i in order.iter().take(k) {
            keep[i] = true;
        }
        let mut remap = vec![usize::MAX; n];
        let mut nodes = Vec::with_capacity(k);
        for (i, node) in self.nodes.iter().enumerate() {
            if keep[i] {
                remap[i] = nodes.len();
                nodes.push(node.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.src] && keep[e.dst])
            .map(|e| SceneEdge {
                src: remap[e.src],
                dst: remap[e.dst],
                ..e.clone()
            })
            .collect();
        SceneGraph {
            nodes,
            edges,
            width: self.width,
            height: self.height,
            complete: self.complete,
        }
    }

    /// Reorders nodes by descending confidence (stable), remapping edges.
    pub fn sorted_by_confidence(&self) -> SceneGraph {
        let n = self.nodes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.nodes[b]
                .confidence
                .total_cmp(&self.nodes[a].confidence)
        });
        let mut remap = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            remap[i] = rank;
        }
        SceneGraph {
            nodes: order.iter().map(|&i| self.nodes[i].clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| SceneEdge {
                    src: remap[e.src],
                    dst: remap[e.dst],
                    ..e.clone()
                })
                .collect(),
            width: self.width,
            height: self.height,
            complete: self.complete,
        }
    }

    /// `adj[i][j]` is true iff there is an edge `i → j`.
    pub fn adjacency_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.nodes.len();
        let mut adj = vec![vec![false; n]; n];
        for e in &self.edges {
            adj[e.src][e.dst] = true;
        }
        adj
    }

    /// Mirrors the scene left-to-right (boxes only; labels are unchanged).
    pub fn flipped_horizontally(&self) -> SceneGraph {
        let mut g = self.clone();
        for node in &mut g.nodes {
            node.bbox.x = self.width - node.bbox.x - node.bbox.w;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn node(label: &str, conf: f64) -> SceneNode {
        SceneNode {
            category_id: 1,
            label: label.to_string(),
            bbox: BoundingBox::new(10.0, 10.0, 20.0, 20.0),
            confidence: conf,
        }
    }

    fn complete(confs: &[f64]) -> SceneGraph {
        let nodes: Vec<_> = confs
            .iter()
            .enumerate()
            .map(|(i, &c)| node(&format!("obj{i}"), c))
            .collect();
        let n = nodes.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    edges.push(SceneEdge {
                        src: i,
                        dst: j,
                        relation_id: (i + j) % 51,
                        relation_label: format!("r{i}{j}"),
                    });
                }
            }
        }
        SceneGraph::new(nodes, edges, 100.0, 100.0, true, Vocabulary::default()).unwrap()
    }

    #[test]
    fn smallest_complete_graph() {
        let g = complete(&[1.0, 1.0]);
        assert_eq!((g.node_count(), g.edge_count()), (2, 2));
        assert_eq!(
            g.adjacency_matrix(),
            vec![vec![false, true], vec![true, false]]
        );
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let nodes: Vec<_> = (0..5).map(|i| node(&format!("n{i}"), 1.0)).collect();
        let edges = vec![SceneEdge {
            src: 0,
            dst: 99,
            relation_id: 0,
            relation_label: "on".into(),
        }];
        let err =
            SceneGraph::new(nodes, edges, 100.0, 100.0, false, Vocabulary::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref v) if v[0].contains("99")));
    }

    #[test]
    fn all_violations_are_listed() {
        let mut bad = node("", 1.5);
        bad.category_id = 500;
        bad.bbox = BoundingBox::new(90.0, 0.0, 20.0, 0.0);
        let err = SceneGraph::new(
            vec![bad],
            vec![],
            100.0,
            100.0,
            false,
            Vocabulary::default(),
        )
        .unwrap_err();
        let Error::Validation(v) = err else { panic!() };
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn declared_complete_requires_all_edges() {
        let g = complete(&[1.0, 1.0, 1.0]);
        let mut edges = g.edges().to_vec();
        edges.pop();
        let err = SceneGraph::new(
            g.nodes().to_vec(),
            edges,
            100.0,
            100.0,
            true,
            Vocabulary::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn directed_adjacency() {
        let nodes = vec![node("a", 1.0), node("b", 1.0)];
        let edges = vec![SceneEdge {
            src: 0,
            dst: 1,
            relation_id: 3,
            relation_label: "on".into(),
        }];
        let g = SceneGraph::new(nodes, edges, 100.0, 100.0, false, Vocabulary::default()).unwrap();
        let adj = g.adjacency_matrix();
        assert!(adj[0][1] && !adj[1][0]);
    }

    #[test]
    fn truncation_keeps_most_confident() {
        let g = complete(&[0.9, 0.1, 0.5]);
        let t = g.truncate_to_top_k(2);
        let labels: Vec<_> = t.nodes().iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["obj0", "obj2"]);
        assert_eq!(t.edge_count(), 2);
        assert!(t
            .edges()
            .iter()
            .all(|e| e.relation_label == "r02" || e.relation_label == "r20"));
        assert_eq!(g.truncate_to_top_k(10), g);
    }

    #[test]
    fn truncating_thirty_to_twenty() {
        let confs: Vec<f64> = (0..30).map(|i| (i as f64) / 30.0).collect();
        let t = complete(&confs).truncate_to_top_k(20);
        assert_eq!((t.node_count(), t.edge_count()), (20, 380));
        // Remaining nodes are the 20 most confident, in original order.
        assert_eq!(t.nodes()[0].label, "obj10");
    }
}
