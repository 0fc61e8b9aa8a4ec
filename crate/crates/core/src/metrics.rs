//! Box geometry metrics and run-level aggregation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::composer::PlacementParams;
use crate::error::{Error, Result};
use crate::scene_graph::BoundingBox;

pub const IOU_THRESHOLD: f64 = 0.5;
pub const CENTER_THRESHOLD_PX: f64 = 50.0;
pub const SCALE_THRESHOLD: f64 = 0.8;

/// Pixel box for placement `t` of a `fg_w × fg_h` object in a `bg_w × bg_h`
/// background. The flag is set when the box had to be clamped to fit.
pub fn params_to_bbox(t: &PlacementParams, fg: (f64, f64), bg: (f64, f64)) -> (BoundingBox, bool) {
    let (fg_w, fg_h) = fg;
    let (bg_w, bg_h) = bg;
    let aspect = fg_w / fg_h;
    let (mut w, mut h) = if aspect < bg_w / bg_h {
        let h = t.t_r * bg_h;
        (h * aspect, h)
    } else {
        let w = t.t_r * bg_w;
        (w, w / aspect)
    };
    let clamped = w > bg_w || h > bg_h;
    w = w.min(bg_w);
    h = h.min(bg_h);
    let bbox = BoundingBox::new(t.t_x * (bg_w - w), t.t_y * (bg_h - h), w, h);
    (bbox, clamped)
}

/// Intersection over union; boxes that only touch have IoU 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Smaller area over larger area.
pub fn scale_ratio(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (x, y) = (a.area(), b.area());
    x.min(y) / x.max(y)
}

/// One prediction to score: parameters plus the sizes needed to turn them
/// into a pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: PlacementParams,
    pub fg: (f64, f64),
    pub bg: (f64, f64),
}

impl Prediction {
    pub fn bbox(&self) -> BoundingBox {
        params_to_bbox(&self.t, self.fg, self.bg).0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub mean_iou: f64,
    pub iou_ge_50: f64,
    pub mean_center_dist: f64,
    pub center_le_50px: f64,
    pub mean_scale_ratio: f64,
    pub scale_ge_80: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

/// Plausibility judge for composites, e.g. an external classifier.
pub trait PlausibilityClassifier {
    /// Whether the composite of prediction `index` looks plausible.
    fn is_plausible(&mut self, index: usize, prediction: &Prediction) -> Result<bool>;
}

/// Aggregates all metrics in input order. `accuracy` is present only when a
/// classifier is supplied.
pub fn evaluate_run(
    predictions: &[Prediction],
    ground_truth: &[BoundingBox],
    classifier: Option<&mut dyn PlausibilityClassifier>,
) -> Result<MetricsReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth boxes",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("no predictions to evaluate".into()));
    }
    let n = predictions.len() as f64;
    let mut sums = [0.0; 6];
    for (p, gt) in predictions.iter().zip(ground_truth) {
        let bbox = p.bbox();
        let (i, d, s) = (
            iou(&bbox, gt),
            center_distance(&bbox, gt),
            scale_ratio(&bbox, gt),
        );
        sums[0] += i;
        sums[1] += f64::from(u8::from(i >= IOU_THRESHOLD));
        sums[2] += d;
        sums[3] += f64::from(u8::from(d <= CENTER_THRESHOLD_PX));
        sums[4] += s;
        sums[5] += f64::from(u8::from(s >= SCALE_THRESHOLD));
    }
    let accuracy = match classifier {
        Some(c) => {
            let mut hits = 0usize;
            for (i, p) in predictions.iter().enumerate() {
                hits += usize::from(c.is_plausible(i, p)?);
            }
            Some(hits as f64 / n)
        }
        None => None,
    };
    let m: Vec<f64> = sums.iter().map(|s| s / n).collect();
    Ok(MetricsReport {
        n_samples: predictions.len(),
        mean_iou: m[0],
        iou_ge_50: m[1],
        mean_center_dist: m[2],
        center_le_50px: m[3],
        mean_scale_ratio: m[4],
        scale_ge_80: m[5],
        accuracy,
    })
}
