//! Semantic label embeddings for objects, relations and foreground
//! categories, with a seeded fallback for labels missing from the table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the language-model embeddings the graph encoder consumes.
pub const EMBED_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Object,
    Relation,
}

impl EmbeddingKind {
    fn tag(self) -> u8 {
        match self {
            EmbeddingKind::Object => b'o',
            EmbeddingKind::Relation => b'r',
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    objects: BTreeMap<String, Vec<f32>>,
    relations: BTreeMap<String, Vec<f32>>,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    /// Builds a table from `(label, vector)` entries. A repeated label keeps
    /// its last vector and is counted in [`EmbeddingTable::duplicates`].
    pub fn from_entries(
        dim: usize,
        objects: impl IntoIterator<Item = (String, Vec<f32>)>,
        relations: impl IntoIterator<Item = (String, Vec<f32>)>,
    ) -> Result<Self> {
        let mut table = Self::empty(dim);
        for (label, v) in objects {
            table.insert(EmbeddingKind::Object, label, v)?;
        }
        for (label, v) in relations {
            table.insert(EmbeddingKind::Relation, label, v)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, kind: EmbeddingKind, label: String, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Validation(alloc::vec![format!(
                "{kind:?} `{label}`: vector has length {}, expected {}",
                vector.len(),
                self.dim
            )]));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(alloc::vec![format!(
                "{kind:?} `{label}`: entry {i} is not finite"
            )]));
        }
        let map = match kind {
            EmbeddingKind::Object => &mut self.objects,
            EmbeddingKind::Relation => &mut self.relations,
        };
        if map.insert(label, vector).is_some() {
            self.duplicates += 1;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.objects.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of entries that replaced an earlier vector with the same label.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn entries(&self, kind: EmbeddingKind) -> impl Iterator<Item = (&str, &[f32])> {
        let map = match kind {
            EmbeddingKind::Object => &self.objects,
            EmbeddingKind::Relation => &self.relations,
        };
        map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn get(&self, label: &str, kind: EmbeddingKind) -> Option<&[f32]> {
        match kind {
            EmbeddingKind::Object => self.objects.get(label),
            EmbeddingKind::Relation => self.relations.get(label),
        }
        .map(Vec::as_slice)
    }

    /// Stored vector for `label`, or the seeded fallback when absent.
    pub fn lookup(&self, label: &str, kind: EmbeddingKind, seed: u64) -> Vec<f32> {
        match self.get(label, kind) {
            Some(v) => v.to_vec(),
            None => fallback_embedding(label, kind, seed, self.dim),
        }
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Unit-norm Gaussian direction keyed on `(label, kind, seed)`.
pub fn fallback_embedding(label: &str, kind: EmbeddingKind, seed: u64, dim: usize) -> Vec<f32> {
    let mut key = Vec::with_capacity(label.len() + 1);
    key.push(kind.tag());
    key.extend_from_slice(label.as_bytes());
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&stable_hash(&key).to_le_bytes());
    bytes[8..16].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    raw.iter().map(|v| (v / norm) as f32).collect()
}

/// The foreground object to place.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundQuery {
    pub category_label: String,
    pub embedding: Vec<f32>,
    pub fg_width: f64,
    pub fg_height: f64,
}

impl ForegroundQuery {
    pub fn new(
        category_label: String,
        embedding: Vec<f32>,
        fg_width: f64,
        fg_height: f64,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if !(fg_width > 0.0 && fg_height > 0.0) {
            problems.push(format!(
                "foreground size {fg_width}x{fg_height} must be positive"
            ));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            problems.push(format!("embedding of `{category_label}` is not finite"));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self {
            category_label,
            embedding,
            fg_width,
            fg_height,
        })
    }
}
