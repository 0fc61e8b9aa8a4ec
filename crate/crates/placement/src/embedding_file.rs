//! Embedding tables on disk.
//!
//! Two layouts decode to the same table:
//! - inline JSON: `{"objects": {label: [floats]}, "relations": {...}}`
//! - an index `{"dim": 768, "data": "vectors.f32", "objects": [labels],
//!   "relations": [labels]}` next to raw little-endian f32 rows, objects
//!   first, in index order.

use std::fmt;
use std::path::Path;

use placement_core::embedding::{EmbeddingKind, EmbeddingTable, EMBED_DIM};
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_bytes, Error, Result};

/// Map entries in file order, duplicates included.
#[derive(Default)]
struct Entries(Vec<(String, Vec<f32>)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from label to vector")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry()? {
                    out.push(entry);
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineDoc {
    #[serde(default)]
    objects: Entries,
    #[serde(default)]
    relations: Entries,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexDoc {
    dim: usize,
    data: String,
    objects: Vec<String>,
    relations: Vec<String>,
}

#[derive(Deserialize)]
struct Probe {
    data: Option<serde::de::IgnoredAny>,
}

/// Loads either layout; an empty file is an empty table.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Ok(EmbeddingTable::empty(EMBED_DIM));
    }
    let probe: Probe = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if probe.data.is_some() {
        return load_indexed(path, &text);
    }
    let doc: InlineDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(EmbeddingTable::from_entries(
        EMBED_DIM,
        doc.objects.0,
        doc.relations.0,
    )?)
}

fn load_indexed(path: &Path, text: &str) -> Result<EmbeddingTable> {
    let index: IndexDoc = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    if index.dim != EMBED_DIM {
        return Err(Error::format(
            path,
            format!(
                "dim {} does not match the model width {EMBED_DIM}",
                index.dim
            ),
        ));
    }
    let data_path = path.with_file_name(&index.data);
    let bytes = std::fs::read(&data_path).map_err(Error::io(&data_path))?;
    let rows = index.objects.len() + index.relations.len();
    if bytes.len() != rows * index.dim * 4 {
        return Err(Error::format(
            &data_path,
            format!(
                "{} bytes cannot hold {rows} rows of {} floats",
                bytes.len(),
                index.dim
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut rows = values.chunks_exact(index.dim).map(<[f32]>::to_vec);
    let objects: Vec<_> = index.objects.into_iter().zip(rows.by_ref()).collect();
    let relations: Vec<_> = index.relations.into_iter().zip(rows).collect();
    Ok(EmbeddingTable::from_entries(EMBED_DIM, objects, relations)?)
}

fn labelled_vectors(
    table: &EmbeddingTable,
    kind: EmbeddingKind,
) -> serde_json::Map<String, serde_json::Value> {
    table
        .entries(kind)
        .map(|(label, v)| (label.to_string(), serde_json::json!(v)))
        .collect()
}

pub fn write_inline(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let doc = serde_json::json!({
        "objects": labelled_vectors(table, EmbeddingKind::Object),
        "relations": labelled_vectors(table, EmbeddingKind::Relation),
    });
    write_bytes(path, serde_json::to_string(&doc).expect("json value"))
}

/// Writes the index at `path` and the rows to `data_name` beside it.
pub fn write_indexed(path: &Path, data_name: &str, table: &EmbeddingTable) -> Result<()> {
    let mut bytes = Vec::new();
    let mut labels = |kind| {
        table
            .entries(kind)
            .map(|(label, v)| {
                bytes.extend(v.iter().flat_map(|x| x.to_le_bytes()));
                label.to_string()
            })
            .collect::<Vec<_>>()
    };
    let objects = labels(EmbeddingKind::Object);
    let relations = labels(EmbeddingKind::Relation);
    let index = IndexDoc {
        dim: table.dim(),
        data: data_name.into(),
        objects,
        relations,
    };
    write_bytes(&path.with_file_name(data_name), bytes)?;
    write_bytes(
        path,
        serde_json::to_string_pretty(&index).expect("index serializes"),
    )
}
