//! Training checkpoints.
//!
//! Layout: 8-byte magic, little-endian u64 header length, a JSON header
//! (config echo, counters, rng states, optimizer settings and a tensor
//! directory), then every tensor as little-endian f32 in directory order.

use std::path::Path;

use placement_core::nn::{Adam, ParamStore};
use placement_core::sampler::BatchCursor;
use placement_core::tensor::Tensor;
use placement_core::train::{RngState, TrainState};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{write_bytes, Error, Result};

const MAGIC: &[u8; 8] = b"PLCKPT01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    step: u64,
    cursor: [u64; 2],
    sampler_seed: u64,
    noise_rng: RngState,
    augment_rng: RngState,
    opt_g: AdamSettings,
    opt_d: AdamSettings,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamSettings {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

const GROUPS: [&str; 6] = [
    "generator",
    "discriminator",
    "opt_g.m",
    "opt_g.v",
    "opt_d.m",
    "opt_d.v",
];

fn stores(state: &TrainState) -> [&ParamStore<f32>; 6] {
    [
        &state.generator,
        &state.discriminator,
        &state.opt_g.first_moment,
        &state.opt_g.second_moment,
        &state.opt_d.first_moment,
        &state.opt_d.second_moment,
    ]
}

fn settings(a: &Adam<f32>) -> AdamSettings {
    AdamSettings {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        steps: a.steps,
    }
}

pub fn to_bytes(config: &RunConfig, state: &TrainState) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (group, store) in GROUPS.iter().zip(stores(state)) {
        for (name, t) in store.iter() {
            tensors.push(Entry {
                group: group.to_string(),
                name: name.to_string(),
                shape: t.shape().to_vec(),
            });
            data.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    let header = Header {
        config: config.clone(),
        step: state.step,
        cursor: [state.cursor.epoch, state.cursor.index as u64],
        sampler_seed: state.sampler_seed,
        noise_rng: RngState::capture(&state.noise_rng),
        augment_rng: RngState::capture(&state.augment_rng),
        opt_g: settings(&state.opt_g),
        opt_d: settings(&state.opt_d),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    out
}

pub fn save(path: &Path, config: &RunConfig, state: &TrainState) -> Result<()> {
    write_bytes(path, to_bytes(config, state))
}

pub fn load(path: &Path) -> Result<(RunConfig, TrainState)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    from_bytes(&bytes, path)
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(RunConfig, TrainState)> {
    let bad = |m: &str| Error::format(origin, m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
    if body.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..len]).map_err(|e| Error::json(origin, e))?;
    let mut data = &body[len..];
    let mut groups: [ParamStore<f32>; 6] = Default::default();
    for e in &header.tensors {
        let slot = GROUPS
            .iter()
            .position(|g| *g == e.group)
            .ok_or_else(|| bad(&format!("unknown tensor group `{}`", e.group)))?;
        let n: usize = e.shape.iter().product();
        if data.len() < 4 * n {
            return Err(bad(&format!("tensor `{}` is truncated", e.name)));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        data = &data[4 * n..];
        groups[slot].insert(e.name.clone(), Tensor::new(&e.shape, values)?);
    }
    if !data.is_empty() {
        return Err(bad(&format!("{} trailing bytes", data.len())));
    }
    let [generator, discriminator, gm, gv, dm, dv] = groups;
    let adam = |s: &AdamSettings, m, v| Adam {
        lr: s.lr,
        beta1: s.beta1,
        beta2: s.beta2,
        eps: s.eps,
        steps: s.steps,
        first_moment: m,
        second_moment: v,
    };
    let state = TrainState {
        generator,
        discriminator,
        opt_g: adam(&header.opt_g, gm, gv),
        opt_d: adam(&header.opt_d, dm, dv),
        step: header.step,
        cursor: BatchCursor {
            epoch: header.cursor[0],
            index: header.cursor[1] as usize,
        },
        sampler_seed: header.sampler_seed,
        noise_rng: header.noise_rng.restore(),
        augment_rng: header.augment_rng.restore(),
    };
    Ok((header.config, state))
}
