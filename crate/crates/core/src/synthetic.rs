//! Toy scenes with a known placement rule, for training and evaluation
//! without a photographic dataset.
//!
//! A scene holds one or more anchor objects and some distractors, drawn as
//! flat-colored rectangles. The foreground must sit on top of its anchor:
//! centered horizontally, its base on the anchor's top edge, its height a
//! fixed fraction of the anchor's height.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composer::{ImagePlane, PlacementParams};
use crate::data::{CompositeSample, SampleSource};
use crate::embedding::stable_hash;
use crate::error::{Error, Result};
use crate::metrics::{iou, params_to_bbox, scale_ratio};
use crate::scene_graph::{BoundingBox, SceneEdge, SceneGraph, SceneNode, Vocabulary};
use crate::spatial::spatial_vector;

/// Relations between scene objects, chosen by vertical layout only so that
/// they survive horizontal flips.
pub const RELATIONS: [&str; 3] = ["above", "below", "beside"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRule {
    pub foreground: String,
    pub anchor: String,
    /// Foreground height as a fraction of the anchor height.
    pub scale: f64,
    /// Foreground width over height.
    pub aspect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySceneSpec {
    pub canvas: (usize, usize),
    pub rules: Vec<PlacementRule>,
    pub distractors: usize,
    pub distractor_labels: Vec<String>,
    /// Anchor width and height ranges as fractions of the canvas.
    pub anchor_width: (f64, f64),
    pub anchor_height: (f64, f64),
    /// Negatives generated per positive.
    pub fake_ratio: usize,
    pub seed: u64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            canvas: (256, 256),
            rules: vec![PlacementRule {
                foreground: "cup".into(),
                anchor: "table".into(),
                scale: 0.6,
                aspect: 1.0,
            }],
            distractors: 3,
            distractor_labels: ["chair", "lamp", "plant", "window", "book", "clock"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            anchor_width: (0.3, 0.6),
            anchor_height: (0.2, 0.4),
            fake_ratio: 2,
            seed: 0,
        }
    }
}

impl ToySceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            problems.push(format!("canvas {:?} must be positive", self.canvas));
        }
        if self.rules.is_empty() {
            problems.push("at least one placement rule is required".into());
        }
        for (i, r) in self.rules.iter().enumerate() {
            if !(r.scale > 0.0 && r.aspect > 0.0) {
                problems.push(format!("rule {i}: scale and aspect must be positive"));
            }
            if self
                .rules
                .iter()
                .filter(|o| o.foreground == r.foreground)
                .count()
                > 1
            {
                problems.push(format!(
                    "rule {i}: foreground `{}` has several rules",
                    r.foreground
                ));
            }
            if self.distractor_labels.contains(&r.anchor) {
                problems.push(format!(
                    "rule {i}: anchor `{}` is also a distractor",
                    r.anchor
                ));
            }
        }
        if self.distractors > 0 && self.distractor_labels.is_empty() {
            problems.push("distractors requested but no distractor labels given".into());
        }
        for (name, (lo, hi)) in [
            ("anchor_width", self.anchor_width),
            ("anchor_height", self.anchor_height),
        ] {
            if !(0.0 < lo && lo <= hi && hi < 1.0) {
                problems.push(format!(
                    "{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
                ));
            }
        }
        if self.fake_ratio == 0 {
            problems.push("fake_ratio must be at least 1".into());
        }
        if self.labels().len() > Vocabulary::default().objects {
            problems.push("too many labels for the object vocabulary".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Every object label in a stable order; a label's index is its
    /// category id.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let candidates = self
            .rules
            .iter()
            .flat_map(|r| [&r.anchor, &r.foreground])
            .chain(&self.distractor_labels);
        for l in candidates {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }

    fn category_id(&self, label: &str) -> usize {
        self.labels()
            .iter()
            .position(|l| l == label)
            .expect("known label")
    }

    pub fn rule_for(&self, foreground: &str) -> Result<&PlacementRule> {
        self.rules
            .iter()
            .find(|r| r.foreground == foreground)
            .ok_or_else(|| Error::Oracle(format!("no placement rule for `{foreground}`")))
    }

    fn canvas_f64(&self) -> (f64, f64) {
        (self.canvas.0 as f64, self.canvas.1 as f64)
    }
}

/// Where `rule` puts its foreground relative to `anchor`.
pub fn rule_box(anchor: &BoundingBox, rule: &PlacementRule) -> BoundingBox {
    let h = rule.scale * anchor.h;
    let w = h * rule.aspect;
    BoundingBox::new(anchor.x + anchor.w / 2.0 - w / 2.0, anchor.y - h, w, h)
}

/// The anchor the rule refers to: the leftmost matching node, then the
/// topmost.
fn pick_anchor<'a>(scene: &'a SceneGraph, rule: &PlacementRule) -> Result<&'a SceneNode> {
    scene
        .nodes()
        .iter()
        .filter(|n| n.label == rule.anchor)
        .min_by(|a, b| {
            a.bbox
                .x
                .total_cmp(&b.bbox.x)
                .then(a.bbox.y.total_cmp(&b.bbox.y))
        })
        .ok_or_else(|| Error::Oracle(format!("scene has no `{}` anchor", rule.anchor)))
}

/// The rule's box for `fg_category` in `scene`.
pub fn oracle_box(
    scene: &SceneGraph,
    fg_category: &str,
    spec: &ToySceneSpec,
) -> Result<BoundingBox> {
    let rule = spec.rule_for(fg_category)?;
    Ok(rule_box(&pick_anchor(scene, rule)?.bbox, rule))
}

/// Placement parameters that realise the rule exactly.
pub fn oracle_placement(
    scene: &SceneGraph,
    fg_category: &str,
    spec: &ToySceneSpec,
) -> Result<PlacementParams> {
    let bbox = oracle_box(scene, fg_category, spec)?;
    let s = spatial_vector(bbox, scene.width(), scene.height())
        .map_err(|e| Error::Spec(format!("rule box {bbox:?} is not placeable: {e}")))?;
    PlacementParams::new(s.t_r, s.t_x, s.t_y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Positive,
    /// Scale off by more than 3×.
    WrongScale,
    /// Placed away from the anchor.
    WrongPosition,
}

/// A sample before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub graph: SceneGraph,
    pub foreground: String,
    pub fg_size: (f64, f64),
    pub t: PlacementParams,
    pub kind: SampleKind,
}

impl ToySample {
    pub fn is_real(&self) -> bool {
        self.kind == SampleKind::Positive
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub spec: ToySceneSpec,
    pub positives: Vec<ToySample>,
    pub negatives: Vec<ToySample>,
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

const MAX_TRIES: usize = 1000;

fn relation(a: &BoundingBox, b: &BoundingBox) -> usize {
    if a.bottom() <= b.y {
        0
    } else if a.y >= b.bottom() {
        1
    } else {
        2
    }
}

/// Fully connected scene of the given objects, in the given order.
pub fn build_scene(
    spec: &ToySceneSpec,
    objects: &[(String, BoundingBox, f64)],
) -> Result<SceneGraph> {
    let nodes: Vec<SceneNode> = objects
        .iter()
        .map(|(label, bbox, confidence)| SceneNode {
            category_id: spec.category_id(label),
            label: label.clone(),
            bbox: *bbox,
            confidence: *confidence,
        })
        .collect();
    let mut edges = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate() {
            if i != j {
                let r = relation(&a.bbox, &b.bbox);
                edges.push(SceneEdge {
                    src: i,
                    dst: j,
                    relation_id: r,
                    relation_label: RELATIONS[r].into(),
                });
            }
        }
    }
    let (w, h) = spec.canvas_f64();
    SceneGraph::new(nodes, edges, w, h, true, Vocabulary::default())
}

fn random_scene(
    spec: &ToySceneSpec,
    rule: &PlacementRule,
    rng: &mut ChaCha8Rng,
) -> Result<SceneGraph> {
    let (cw, ch) = spec.canvas_f64();
    let mut anchor = None;
    for _ in 0..MAX_TRIES {
        let aw = uniform(rng, spec.anchor_width) * cw;
        let ah = uniform(rng, spec.anchor_height) * ch;
        let ax = uniform(rng, (0.0, cw - aw));
        let ay = uniform(rng, (0.0, ch - ah));
        let a = BoundingBox::new(ax, ay, aw, ah);
        let r = rule_box(&a, rule);
        if r.violations(cw, ch).is_empty() && r.w < cw && r.h < ch {
            anchor = Some(a);
            break;
        }
    }
    let anchor = anchor.ok_or_else(|| {
        Error::Spec(format!(
            "rule `{}` on `{}` never fits the {}x{} canvas",
            rule.foreground, rule.anchor, spec.canvas.0, spec.canvas.1
        ))
    })?;
    let mut objects = vec![(rule.anchor.clone(), anchor, uniform(rng, (0.5, 1.0)))];
    for _ in 0..spec.distractors {
        let label =
            spec.distractor_labels[rng.random_range(0..spec.distractor_labels.len())].clone();
        let w = uniform(rng, (0.08, 0.25)) * cw;
        let h = uniform(rng, (0.08, 0.25)) * ch;
        let bbox = BoundingBox::new(
            uniform(rng, (0.0, cw - w)),
            uniform(rng, (0.0, ch - h)),
            w,
            h,
        );
        objects.push((label, bbox, uniform(rng, (0.5, 1.0))));
    }
    objects.shuffle(rng);
    build_scene(spec, &objects)
}

fn negative(positive: &ToySample, spec: &ToySceneSpec, rng: &mut ChaCha8Rng) -> Result<ToySample> {
    let canvas = spec.canvas_f64();
    let truth = params_to_bbox(&positive.t, positive.fg_size, canvas).0;
    let implausible = |t: &PlacementParams| {
        let b = params_to_bbox(t, positive.fg_size, canvas).0;
        iou(&b, &truth) < 0.2 || scale_ratio(&b, &truth) < 0.33
    };
    let t0 = positive.t;
    for _ in 0..MAX_TRIES {
        let (kind, t) = if rng.random::<bool>() {
            let factor = uniform(rng, (3.5, 5.0));
            let t_r = if rng.random::<bool>() && t0.t_r * factor < 0.95 {
                t0.t_r * factor
            } else {
                t0.t_r / factor
            };
            let jitter =
                |rng: &mut ChaCha8Rng, v: f64| (v + uniform(rng, (-0.1, 0.1))).clamp(0.02, 0.98);
            let (tx, ty) = (jitter(rng, t0.t_x), jitter(rng, t0.t_y));
            (SampleKind::WrongScale, PlacementParams::new(t_r, tx, ty)?)
        } else {
            let tx = uniform(rng, (0.02, 0.98));
            let ty = uniform(rng, (0.02, 0.98));
            (
                SampleKind::WrongPosition,
                PlacementParams::new(t0.t_r, tx, ty)?,
            )
        };
        if t.t_r > 0.01 && implausible(&t) {
            return Ok(ToySample {
                t,
                kind,
                ..positive.clone()
            });
        }
    }
    Err(Error::Spec(
        "could not draw an implausible placement".into(),
    ))
}

/// `n_samples` positives and `fake_ratio × n_samples` negatives. Negative
/// `j` perturbs positive `j / fake_ratio`.
pub fn generate_toy_dataset(spec: &ToySceneSpec, n_samples: usize) -> Result<ToyDataset> {
    spec.validate()?;
    let mut positives = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = sample_rng(spec.seed, i as u64);
        let rule = &spec.rules[rng.random_range(0..spec.rules.len())];
        let graph = random_scene(spec, rule, &mut rng)?;
        let t = oracle_placement(&graph, &rule.foreground, spec)?;
        positives.push(ToySample {
            graph,
            foreground: rule.foreground.clone(),
            fg_size: (64.0 * rule.aspect, 64.0),
            t,
            kind: SampleKind::Positive,
        });
    }
    let mut negatives = Vec::with_capacity(n_samples * spec.fake_ratio);
    for j in 0..n_samples * spec.fake_ratio {
        let mut rng = sample_rng(spec.seed, (1 << 32) + j as u64);
        negatives.push(negative(&positives[j / spec.fake_ratio], spec, &mut rng)?);
    }
    Ok(ToyDataset {
        spec: spec.clone(),
        positives,
        negatives,
    })
}

/// Flat color of a category, derived from its label.
pub fn category_color(label: &str) -> [f32; 3] {
    let h = stable_hash(label.as_bytes());
    core::array::from_fn(|c| 0.15 + 0.7 * ((h >> (c * 16)) & 0xffff) as f32 / 65535.0)
}

pub const BACKGROUND_COLOR: [f32; 3] = [0.85, 0.85, 0.82];

fn fill_rect(img: &mut ImagePlane, bbox: &BoundingBox, mut color: impl FnMut(usize, usize) -> f32) {
    let (h, w) = (img.height(), img.width());
    // Pixel (i, j) is covered when its center lies inside the half-open box.
    let first = |lo: f64| (lo - 0.5).ceil().max(0.0) as usize;
    let (i0, i1) = (first(bbox.y), first(bbox.bottom()).min(h));
    let (j0, j1) = (first(bbox.x).min(w), first(bbox.right()).min(w));
    for c in 0..img.channels() {
        for i in i0..i1 {
            let v = color(c, i);
            let start = (c * h + i) * w;
            img.data_mut()[start + j0..start + j1.max(j0)].fill(v);
        }
    }
}

fn shrink(b: &BoundingBox, factor: f64) -> BoundingBox {
    BoundingBox::new(b.x / factor, b.y / factor, b.w / factor, b.h / factor)
}

/// Background with every scene object drawn as a filled rectangle, larger
/// objects first, on a canvas reduced by `factor`.
pub fn render_background(scene: &SceneGraph, factor: usize) -> ImagePlane {
    let (w, h) = (
        scene.width() as usize / factor,
        scene.height() as usize / factor,
    );
    let mut order: Vec<&SceneNode> = scene.nodes().iter().collect();
    order.sort_by(|a, b| b.bbox.area().total_cmp(&a.bbox.area()));
    let mut img = ImagePlane::from_fn(3, h, w, |c, _, _| BACKGROUND_COLOR[c]);
    for node in order {
        let color = category_color(&node.label);
        fill_rect(&mut img, &shrink(&node.bbox, factor as f64), |c, _| {
            color[c]
        });
    }
    img
}

/// Foreground and mask planes: the object fit and centered on the canvas,
/// with a vertical shading so it is not a single flat color.
pub fn render_foreground(
    label: &str,
    fg_size: (f64, f64),
    canvas: (usize, usize),
) -> (ImagePlane, ImagePlane) {
    let (w, h) = canvas;
    let scale = (w as f64 / fg_size.0).min(h as f64 / fg_size.1);
    let (cw, ch) = (fg_size.0 * scale, fg_size.1 * scale);
    let bbox = BoundingBox::new((w as f64 - cw) / 2.0, (h as f64 - ch) / 2.0, cw, ch);
    let color = category_color(label);
    let mut fg = ImagePlane::filled(3, h, w, 0.0);
    fill_rect(&mut fg, &bbox, |c, i| {
        color[c] * (0.8 + 0.2 * ((i as f64 + 0.5 - bbox.y) / ch) as f32)
    });
    let mut mask = ImagePlane::filled(1, h, w, 0.0);
    fill_rect(&mut mask, &bbox, |_, _| 1.0);
    (fg, mask)
}

impl ToyDataset {
    pub fn render(&self, sample: &ToySample) -> CompositeSample {
        self.render_reduced(sample, 1)
    }

    /// Renders straight onto a canvas reduced by `factor`; scene geometry
    /// and targets stay in full-canvas pixels.
    pub fn render_reduced(&self, sample: &ToySample, factor: usize) -> CompositeSample {
        let (w, h) = self.spec.canvas;
        let (fg, mask) =
            render_foreground(&sample.foreground, sample.fg_size, (w / factor, h / factor));
        CompositeSample {
            graph: sample.graph.clone(),
            foreground: sample.foreground.clone(),
            fg_size: sample.fg_size,
            bg: render_background(&sample.graph, factor),
            fg,
            mask,
            t: sample.t,
            real: sample.is_real(),
        }
    }

    /// Ground-truth boxes of the positives.
    pub fn oracle_boxes(&self) -> Result<Vec<BoundingBox>> {
        self.positives
            .iter()
            .map(|s| oracle_box(&s.graph, &s.foreground, &self.spec))
            .collect()
    }
}

impl ToyDataset {
    fn check_factor(&self, factor: usize) -> Result<()> {
        let (w, h) = self.spec.canvas;
        if factor == 0 || w % factor != 0 || h % factor != 0 {
            return Err(Error::Shape(format!(
                "canvas {w}x{h} is not divisible by {factor}"
            )));
        }
        Ok(())
    }
}

impl SampleSource for ToyDataset {
    fn canvas(&self) -> (usize, usize) {
        self.spec.canvas
    }

    fn num_real(&self) -> usize {
        self.positives.len()
    }

    fn num_fake(&self) -> usize {
        self.negatives.len()
    }

    fn real(&self, index: usize) -> Result<CompositeSample> {
        Ok(self.render(&self.positives[index]))
    }

    fn fake(&self, index: usize) -> Result<CompositeSample> {
        Ok(self.render(&self.negatives[index]))
    }

    fn real_reduced(&self, index: usize, factor: usize) -> Result<CompositeSample> {
        self.check_factor(factor)?;
        Ok(self.render_reduced(&self.positives[index], factor))
    }

    fn fake_reduced(&self, index: usize, factor: usize) -> Result<CompositeSample> {
        self.check_factor(factor)?;
        Ok(self.render_reduced(&self.negatives[index], factor))
    }
}
