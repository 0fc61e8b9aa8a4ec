//! Adversarial training: configuration, resumable state and the per-step
//! update schedule.
//!
//! Each step draws two consecutive balanced batches `A` and `B`. The
//! discriminator first ascends `log D` on the reals of `A`, then (unless
//! configured for a single real update) on the reals of `B`. It then ascends
//! `log(1 − D)` on the dataset fakes of both batches and on the generator's
//! composites for both real halves. Finally the generator descends
//! `−log D(G) + λ·L_rec` on those composites, scored by the updated
//! discriminator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::autograd::{Tape, Var};
use crate::composer::{compose_batch, ComposeInput, PlacementParams};
use crate::data::{CompositeSample, SampleSource};
use crate::discriminator::discriminate;
use crate::embedding::{EmbeddingKind, EmbeddingTable};
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{self, ModelConfig, PlacementQuery, DISC_PREFIX};
use crate::nn::{Adam, ParamStore};
use crate::sampler::BatchCursor;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub rec_weight: f64,
    /// Discriminator updates on real samples per step (1 or 2).
    pub real_updates: usize,
    /// When false the discriminator is never trained or consulted and the
    /// generator minimises the reconstruction term alone.
    pub adversarial: bool,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 2e-5,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            rec_weight: 50.0,
            real_updates: 2,
            adversarial: true,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("train.{name} = {v} must be non-negative"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                p.push(format!("train.{name} = {v} must lie in [0, 1)"));
            }
        }
        if self.batch_size < 2 || self.batch_size % 2 == 1 {
            p.push(format!(
                "train.batch_size = {} must be even and at least 2",
                self.batch_size
            ));
        }
        if !(self.rec_weight >= 0.0 && self.rec_weight.is_finite()) {
            p.push(format!(
                "train.rec_weight = {} must be non-negative",
                self.rec_weight
            ));
        }
        if !(1..=2).contains(&self.real_updates) {
            p.push(format!(
                "train.real_updates = {} must be 1 or 2",
                self.real_updates
            ));
        }
        p.extend(self.augment.problems());
        p
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Named random streams.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub const INIT_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;
pub const AUGMENT_STREAM: u64 = 3;

#[derive(Clone)]
pub struct TrainState {
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub step: u64,
    pub cursor: BatchCursor,
    pub sampler_seed: u64,
    pub noise_rng: ChaCha8Rng,
    pub augment_rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh parameters and optimizers. `labels` lists the vocabulary that
    /// becomes trainable when the model asks for trainable embeddings.
    pub fn new(
        model: &ModelConfig,
        train: &TrainConfig,
        table: &EmbeddingTable,
        labels: &[(EmbeddingKind, String)],
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        let problems = train.problems();
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let mut init = stream(seed, INIT_STREAM);
        let mut generator = model.init_generator(&mut init);
        if model.trainable_embeddings {
            model::register_trainable_embeddings(
                &mut generator,
                table,
                model.embedding_seed,
                labels,
            );
        }
        let discriminator = if train.adversarial {
            model.init_discriminator(&mut init)
        } else {
            ParamStore::new()
        };
        Ok(Self {
            generator,
            discriminator,
            opt_g: Adam::new(train.lr_g, train.beta1, train.beta2),
            opt_d: Adam::new(train.lr_d, train.beta1, train.beta2),
            step: 0,
            cursor: BatchCursor::start(),
            sampler_seed: seed,
            noise_rng: stream(seed, NOISE_STREAM),
            augment_rng: stream(seed, AUGMENT_STREAM),
        })
    }
}

/// Losses and statistics of one step. Discriminator quantities are absent
/// when training without the adversarial term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    #[serde(rename = "L_D_real")]
    pub l_d_real: Option<f64>,
    #[serde(rename = "L_D_fake")]
    pub l_d_fake: Option<f64>,
    #[serde(rename = "L_G_adv")]
    pub l_g_adv: Option<f64>,
    #[serde(rename = "L_G_rec")]
    pub l_g_rec: f64,
    pub d_acc_real: Option<f64>,
    pub d_acc_fake: Option<f64>,
    pub mean_t: [f64; 3],
    pub t_abs_err: f64,
}

/// `B × d_noise` standard normal draws.
pub fn noise_tensor(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> Tensor<f32> {
    Tensor::from_fn(&[rows, width], |_| {
        let z: f64 = StandardNormal.sample(rng);
        z as f32
    })
}

fn compose_constant(tape: &mut Tape<f32>, samples: &[CompositeSample]) -> Result<Var> {
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.t.to_array()).collect();
    let t = tape.constant(Tensor::from_f64(&[samples.len(), 3], &flat)?);
    compose_batch(tape, t, &inputs(samples))
}

fn inputs(samples: &[CompositeSample]) -> Vec<ComposeInput<'_>> {
    samples
        .iter()
        .map(|s| ComposeInput {
            bg: &s.bg,
            fg: &s.fg,
            mask: &s.mask,
            fg_extent: s.fg_extent(),
        })
        .collect()
}

fn scores(tape: &Tape<f32>, v: Var) -> Vec<f64> {
    tape.value(v).data().iter().map(|&s| s as f64).collect()
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len().max(1) as f64
}

fn check_finite(step: u64, what: &[(&str, f64)]) -> Result<()> {
    if what.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let snapshot: Vec<String> = what.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Err(Error::NonFinite(format!(
        "step {step}: {}",
        snapshot.join(", ")
    )))
}

/// Discriminator step descending `loss`; returns nothing, updates in place.
fn update_discriminator(state: &mut TrainState, tape: &Tape<f32>, loss: Var) -> Result<()> {
    let grads = tape.backward(loss).params(tape);
    state.opt_d.step(&mut state.discriminator, &grads)
}

/// Integer reduction from a square `canvas` to the discriminator input.
pub fn image_reduction(canvas: (usize, usize), input_size: usize) -> Result<usize> {
    let (w, h) = canvas;
    if w != h || input_size == 0 || w % input_size != 0 {
        return Err(Error::Validation(alloc::vec![format!(
            "canvas {w}x{h} must be square and a multiple of discriminator.input_size ({input_size})"
        )]));
    }
    Ok(w / input_size)
}

/// Runs one full step of the schedule and advances `state`.
pub fn training_step(
    state: &mut TrainState,
    source: &dyn SampleSource,
    model: &ModelConfig,
    train: &TrainConfig,
    table: &EmbeddingTable,
) -> Result<StepMetrics> {
    let (n_real, n_fake) = (source.num_real(), source.num_fake());
    let batch_a = state
        .cursor
        .next_batch(n_real, n_fake, train.batch_size, state.sampler_seed)?;
    let batch_b = state
        .cursor
        .next_batch(n_real, n_fake, train.batch_size, state.sampler_seed)?;
    // Images only ever reach the discriminator, which works at its input
    // size, so they are loaded at that resolution.
    let factor = image_reduction(source.canvas(), model.discriminator.input_size)?;
    let mut load = |ids: &[usize], real: bool| -> Result<Vec<CompositeSample>> {
        ids.iter()
            .map(|&i| {
                let s = if real {
                    source.real_reduced(i, factor)?
                } else {
                    source.fake_reduced(i, factor)?
                };
                Ok(augment::augment(&s, &train.augment, &mut state.augment_rng))
            })
            .collect()
    };
    let reals_a = load(&batch_a.reals, true)?;
    let reals_b = load(&batch_b.reals, true)?;
    let fakes: Vec<CompositeSample> = load(&batch_a.fakes, false)?
        .into_iter()
        .chain(load(&batch_b.fakes, false)?)
        .collect();
    let reals: Vec<CompositeSample> = reals_a.iter().chain(&reals_b).cloned().collect();

    let mut g_tape = Tape::<f32>::new();
    let noise = noise_tensor(&mut state.noise_rng, reals.len(), model.regressor.d_noise);
    let noise = g_tape.constant(noise);
    let queries: Vec<PlacementQuery<'_>> = reals
        .iter()
        .map(|s| PlacementQuery {
            graph: &s.graph,
            foreground: &s.foreground,
        })
        .collect();
    let out = model::generate(&mut g_tape, &state.generator, model, table, &queries, noise)?;
    let t = out.params;
    let target: Vec<[f64; 3]> = reals.iter().map(|s| s.t.to_array()).collect();
    let rec = losses::reconstruction_loss_var(&mut g_tape, t, &target)?;

    let mut metrics = StepMetrics {
        step: state.step,
        l_d_real: None,
        l_d_fake: None,
        l_g_adv: None,
        l_g_rec: g_tape.value(rec).item() as f64,
        d_acc_real: None,
        d_acc_fake: None,
        mean_t: [0.0; 3],
        t_abs_err: 0.0,
    };
    {
        let tv = g_tape.value(t);
        let n = reals.len() as f64;
        for (b, goal) in target.iter().enumerate() {
            for k in 0..3 {
                let v = tv.get2(b, k) as f64;
                metrics.mean_t[k] += v / n;
                metrics.t_abs_err += (v - goal[k]).abs() / (3.0 * n);
            }
        }
    }

    let loss = if train.adversarial {
        let composites = compose_batch(&mut g_tape, t, &inputs(&reals))?;
        let d_cfg = &model.discriminator;

        let mut real_losses = Vec::new();
        let mut real_scores = Vec::new();
        for half in [&reals_a, &reals_b].into_iter().take(train.real_updates) {
            let mut tape = Tape::<f32>::new();
            let images = compose_constant(&mut tape, half)?;
            let s = discriminate(&mut tape, &state.discriminator, DISC_PREFIX, d_cfg, images)?;
            real_scores.extend(scores(&tape, s));
            let l = losses::mean_log(&mut tape, s);
            real_losses.push(tape.value(l).item() as f64);
            let neg = tape.affine(l, -1.0, 0.0);
            update_discriminator(state, &tape, neg)?;
        }

        let mut tape = Tape::<f32>::new();
        let fake_images = compose_constant(&mut tape, &fakes)?;
        let generated = tape.constant(g_tape.value(composites).clone());
        let sf = discriminate(
            &mut tape,
            &state.discriminator,
            DISC_PREFIX,
            d_cfg,
            fake_images,
        )?;
        let sg = discriminate(
            &mut tape,
            &state.discriminator,
            DISC_PREFIX,
            d_cfg,
            generated,
        )?;
        let lf = losses::mean_log_complement(&mut tape, sf);
        let lg = losses::mean_log_complement(&mut tape, sg);
        let l_fake = tape.add(lf, lg)?;
        let fake_scores: Vec<f64> = scores(&tape, sf)
            .into_iter()
            .chain(scores(&tape, sg))
            .collect();
        metrics.l_d_fake = Some(tape.value(l_fake).item() as f64);
        let neg = tape.affine(l_fake, -1.0, 0.0);
        update_discriminator(state, &tape, neg)?;

        metrics.l_d_real = Some(real_losses.iter().sum::<f64>() / real_losses.len() as f64);
        metrics.d_acc_real = Some(fraction(&real_scores, |s| s > 0.5));
        metrics.d_acc_fake = Some(fraction(&fake_scores, |s| s < 0.5));

        let s = discriminate(
            &mut g_tape,
            &state.discriminator,
            DISC_PREFIX,
            d_cfg,
            composites,
        )?;
        let adv = losses::mean_log(&mut g_tape, s);
        let adv = g_tape.affine(adv, -1.0, 0.0);
        metrics.l_g_adv = Some(g_tape.value(adv).item() as f64);
        let weighted = g_tape.affine(rec, train.rec_weight, 0.0);
        g_tape.add(adv, weighted)?
    } else {
        g_tape.affine(rec, train.rec_weight, 0.0)
    };

    check_finite(
        state.step,
        &[
            ("L_D_real", metrics.l_d_real.unwrap_or(0.0)),
            ("L_D_fake", metrics.l_d_fake.unwrap_or(0.0)),
            ("L_G_adv", metrics.l_g_adv.unwrap_or(0.0)),
            ("L_G_rec", metrics.l_g_rec),
        ],
    )?;
    let mut grads = g_tape.backward(loss).params(&g_tape);
    grads.retain(|name, _| !name.starts_with(DISC_PREFIX));
    state.opt_g.step(&mut state.generator, &grads)?;
    if !state.generator.all_finite() {
        return Err(Error::NonFinite(format!(
            "generator parameters after step {}",
            state.step
        )));
    }
    state.step += 1;
    Ok(metrics)
}

/// Predicted placements for `queries`, processed in chunks of `chunk`.
pub fn predict(
    generator: &ParamStore<f32>,
    model: &ModelConfig,
    table: &EmbeddingTable,
    queries: &[PlacementQuery<'_>],
    noise_rng: &mut ChaCha8Rng,
    chunk: usize,
) -> Result<Vec<PlacementParams>> {
    let mut out = Vec::with_capacity(queries.len());
    for part in queries.chunks(chunk.max(1)) {
        let mut tape = Tape::<f32>::new();
        let noise = tape.constant(noise_tensor(noise_rng, part.len(), model.regressor.d_noise));
        let g = model::generate(&mut tape, generator, model, table, part, noise)?;
        let tv = tape.value(g.params);
        for b in 0..part.len() {
            // f32 tanh can round to the closed interval; pull back inside.
            let c = |k: usize| (tv.get2(b, k) as f64).clamp(1e-7, 1.0 - 1e-7);
            out.push(PlacementParams::new(c(0), c(1), c(2))?);
        }
    }
    Ok(out)
}
