//! Datasets on disk.
//!
//! ```text
//! dir/spec.json          generator settings (synthetic datasets only)
//! dir/manifest.ndjson    one record per sample, reals and fakes
//! dir/truth.ndjson       {"bbox": [x, y, w, h]} per real sample, in order
//! dir/graphs/NNNNN.json  one scene graph per scene
//! dir/images/NNNNN_{bg,fg,mask}.png
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use placement_core::composer::{ImagePlane, PlacementParams};
use placement_core::data::{CompositeSample, SampleSource};
use placement_core::metrics::params_to_bbox;
use placement_core::scene_graph::SceneGraph;
use placement_core::synthetic::{SampleKind, ToyDataset, ToySample};
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_bytes, Error, Result};
use crate::graph_file::{read_scene_graph, write_scene_graph};
use crate::image_file::{read_png, write_png};

pub const MANIFEST: &str = "manifest.ndjson";
pub const TRUTH: &str = "truth.ndjson";
pub const SPEC: &str = "spec.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub scene: usize,
    pub real: bool,
    pub kind: SampleKind,
    pub foreground: String,
    pub fg_size: (f64, f64),
    pub canvas: (usize, usize),
    pub t: [f64; 3],
    pub graph: String,
    pub bg: String,
    pub fg: String,
    pub mask: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub bbox: [f64; 4],
}

/// Writes `records` as NDJSON, one compact object per line.
pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    write_bytes(path, text)
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn record(ds: &ToyDataset, id: String, scene: usize, s: &ToySample) -> ManifestRecord {
    ManifestRecord {
        id,
        scene,
        real: s.is_real(),
        kind: s.kind,
        foreground: s.foreground.clone(),
        fg_size: s.fg_size,
        canvas: ds.spec.canvas,
        t: s.t.to_array(),
        graph: format!("graphs/{scene:05}.json"),
        bg: format!("images/{scene:05}_bg.png"),
        fg: format!("images/{scene:05}_fg.png"),
        mask: format!("images/{scene:05}_mask.png"),
    }
}

/// Writes a synthetic dataset; negatives share their positive's scene.
pub fn write_toy_dataset(dir: &Path, ds: &ToyDataset) -> Result<()> {
    write_bytes(
        &dir.join(SPEC),
        serde_json::to_string_pretty(&ds.spec).expect("spec serializes"),
    )?;
    let mut manifest = Vec::new();
    let mut truth = Vec::new();
    for (scene, s) in ds.positives.iter().enumerate() {
        let r = record(ds, format!("real-{scene:05}"), scene, s);
        write_scene_graph(&dir.join(&r.graph), &s.graph)?;
        let sample = ds.render(s);
        write_png(&dir.join(&r.bg), &sample.bg)?;
        write_png(&dir.join(&r.fg), &sample.fg)?;
        write_png(&dir.join(&r.mask), &sample.mask)?;
        let b = params_to_bbox(
            &s.t,
            s.fg_size,
            (ds.spec.canvas.0 as f64, ds.spec.canvas.1 as f64),
        )
        .0;
        truth.push(TruthRecord {
            bbox: [b.x, b.y, b.w, b.h],
        });
        manifest.push(r);
    }
    for (j, s) in ds.negatives.iter().enumerate() {
        let scene = j / ds.spec.fake_ratio;
        manifest.push(record(ds, format!("fake-{j:05}"), scene, s));
    }
    write_ndjson(&dir.join(MANIFEST), &manifest)?;
    write_ndjson(&dir.join(TRUTH), &truth)
}

/// A dataset directory read through its manifest. Graphs load eagerly;
/// images load on first use and stay cached at the requested reduction.
pub struct DiskDataset {
    dir: PathBuf,
    canvas: (usize, usize),
    reals: Vec<ManifestRecord>,
    fakes: Vec<ManifestRecord>,
    graphs: HashMap<String, SceneGraph>,
    images: RefCell<HashMap<(String, usize), ImagePlane>>,
}

impl DiskDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let records: Vec<ManifestRecord> = read_ndjson(&dir.join(MANIFEST))?;
        let Some(first) = records.first() else {
            return Err(Error::format(&dir.join(MANIFEST), "manifest is empty"));
        };
        let canvas = first.canvas;
        let mut graphs = HashMap::new();
        for r in &records {
            if r.canvas != canvas {
                return Err(Error::format(
                    &dir.join(MANIFEST),
                    format!(
                        "sample {} has canvas {:?}, expected {canvas:?}",
                        r.id, r.canvas
                    ),
                ));
            }
            if !graphs.contains_key(&r.graph) {
                graphs.insert(r.graph.clone(), read_scene_graph(&dir.join(&r.graph))?);
            }
        }
        let (reals, fakes) = records.into_iter().partition(|r| r.real);
        Ok(Self {
            dir: dir.to_path_buf(),
            canvas,
            reals,
            fakes,
            graphs,
            images: RefCell::new(HashMap::new()),
        })
    }

    pub fn reals(&self) -> &[ManifestRecord] {
        &self.reals
    }

    pub fn graph(&self, record: &ManifestRecord) -> &SceneGraph {
        &self.graphs[&record.graph]
    }

    fn image(&self, rel: &str, factor: usize) -> Result<ImagePlane> {
        let key = (rel.to_string(), factor);
        if let Some(img) = self.images.borrow().get(&key) {
            return Ok(img.clone());
        }
        let img = read_png(&self.dir.join(rel))?.downsampled(factor)?;
        self.images.borrow_mut().insert(key, img.clone());
        Ok(img)
    }

    fn sample(&self, r: &ManifestRecord, factor: usize) -> Result<CompositeSample> {
        Ok(CompositeSample {
            graph: self.graph(r).clone(),
            foreground: r.foreground.clone(),
            fg_size: r.fg_size,
            bg: self.image(&r.bg, factor)?,
            fg: self.image(&r.fg, factor)?,
            mask: self.image(&r.mask, factor)?,
            t: PlacementParams::from_array(r.t)?,
            real: r.real,
        })
    }

    fn pick<'a>(
        pool: &'a [ManifestRecord],
        index: usize,
        what: &str,
    ) -> Result<&'a ManifestRecord> {
        pool.get(index).ok_or_else(|| {
            placement_core::Error::Shape(format!("{what} sample {index} of {}", pool.len())).into()
        })
    }
}

fn core(e: Error) -> placement_core::Error {
    match e {
        Error::Core(c) => c,
        other => placement_core::Error::Config(other.to_string()),
    }
}

impl SampleSource for DiskDataset {
    fn canvas(&self) -> (usize, usize) {
        self.canvas
    }

    fn num_real(&self) -> usize {
        self.reals.len()
    }

    fn num_fake(&self) -> usize {
        self.fakes.len()
    }

    fn real(&self, index: usize) -> placement_core::Result<CompositeSample> {
        self.real_reduced(index, 1)
    }

    fn fake(&self, index: usize) -> placement_core::Result<CompositeSample> {
        self.fake_reduced(index, 1)
    }

    fn real_reduced(&self, index: usize, factor: usize) -> placement_core::Result<CompositeSample> {
        Self::pick(&self.reals, index, "real")
            .and_then(|r| self.sample(r, factor))
            .map_err(core)
    }

    fn fake_reduced(&self, index: usize, factor: usize) -> placement_core::Result<CompositeSample> {
        Self::pick(&self.fakes, index, "fake")
            .and_then(|r| self.sample(r, factor))
            .map_err(core)
    }
}
