//! Joint optimization of the encoder and the diffractive layer phases.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{score_channels_shifted, score_gradient_to_sensor, OpticalDecoder};
use crate::encoder::{backward_frame, encode_frame_tape, sample_frames, EncoderParams, Video, VideoSample};
use crate::error::{Error, Result};
use crate::model::{EvalConfig, HybridModel, Misalignment, VideoDetector};
use crate::muxlayout::{assemble_phase, gather_tile_gradient};
use crate::nn::{bce_with_logit, cosine_lr, sigmoid, AdamW};
use crate::{derive_seed, Label};

const SHUFFLE_STREAM: u64 = 0x5EED_0001;
const FRAME_STREAM: u64 = 0x5EED_0002;
const VACCINE_STREAM: u64 = 0x5EED_0003;

/// Random misalignment injected per training batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vaccination {
    /// Lateral half-range in micrometers.
    pub lateral_range: f64,
    /// Axial range in micrometers (draws are in `[0, axial_range]`).
    pub axial_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    /// Learning rate of the diffractive layer phases.
    pub phase_learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub vaccination: Option<Vaccination>,
    pub fine_tune_fraction: f64,
    pub freeze_encoder: bool,
    pub freeze_stack: bool,
    /// One second-moment estimate per diffractive layer instead of per pixel.
    pub shared_phase_moment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            learning_rate: 1e-3,
            phase_learning_rate: 2e-3,
            weight_decay: 1e-4,
            epochs: 10,
            seed: 0,
            vaccination: None,
            fine_tune_fraction: 0.01,
            freeze_encoder: false,
            freeze_stack: false,
            shared_phase_moment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.fine_tune_fraction > 0.0 && self.fine_tune_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fine_tune_fraction must lie in (0, 1], got {}",
                self.fine_tune_fraction
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("phase_learning_rate", self.phase_learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if let Some(v) = &self.vaccination {
            if !(v.lateral_range >= 0.0 && v.axial_range >= 0.0) {
                return Err(Error::InvalidConfig("vaccination ranges must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Mean per-channel binary cross-entropy between `sigmoid(score / tau)` and the label.
pub fn loss(scores: &[f64], labels: &[Label], temperature: f64) -> Result<f64> {
    Ok(loss_and_gradient(scores, labels, temperature)?.0)
}

/// Loss and its gradient with respect to every score.
pub fn loss_and_gradient(scores: &[f64], labels: &[Label], temperature: f64) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    let grads = scores
        .iter()
        .zip(labels)
        .map(|(&s, l)| {
            let z = s / temperature;
            total += bce_with_logit(z, l.target());
            (sigmoid(z) - l.target()) / (temperature * n)
        })
        .collect();
    Ok((total / n, grads))
}

/// Deterministic stream of per-batch misalignment draws.
#[derive(Clone, Debug)]
pub struct Vaccinator {
    spec: Vaccination,
    rng: ChaCha8Rng,
}

impl Vaccinator {
    pub fn new(spec: Vaccination, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, VACCINE_STREAM)),
        }
    }

    /// Lateral offsets uniform in `[-range, range]`, axial uniform in `[0, range]`.
    pub fn draw(&mut self) -> Misalignment {
        let a = self.spec.lateral_range;
        let z = self.spec.axial_range;
        Misalignment {
            dx: self.rng.gen_range(-a..=a),
            dy: self.rng.gen_range(-a..=a),
            dz: self.rng.gen_range(0.0..=z),
        }
    }
}

/// Single draw for a vaccination spec (seeded).
pub fn vaccinate_sample(spec: Vaccination, seed: u64) -> Misalignment {
    Vaccinator::new(spec, seed).draw()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_ks: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Gradients of the batch loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub encoder: EncoderParams,
    pub layers: Vec<Array2<f64>>,
    pub phase: Array2<f64>,
}

/// Loss of one multiplexed batch and (optionally) every gradient.
pub fn batch_loss(
    model: &HybridModel,
    decoder: &OpticalDecoder,
    batch: &[VideoSample],
    shift: (i64, i64),
    temperature: f64,
    with_gradients: bool,
) -> Result<(f64, Option<Gradients>)> {
    let layout = &model.layout;
    crate::encoder::check_batch(batch, &model.encoder, layout)?;
    let mut tiles = Vec::with_capacity(batch.len());
    let mut tapes = Vec::with_capacity(batch.len());
    for v in batch {
        let mut vt = Vec::with_capacity(v.frames.len());
        let mut vtapes = Vec::with_capacity(v.frames.len());
        for f in &v.frames {
            let (tile, tape) = encode_frame_tape(f, &model.encoder)?;
            vt.push(tile);
            vtapes.push(tape);
        }
        tiles.push(vt);
        tapes.push(vtapes);
    }
    let phase = assemble_phase(&tiles, layout)?;
    let tape = decoder.forward(phase.values(), &model.stack)?;
    let scores = score_channels_shifted(&tape.sensor, layout, shift)?;
    let labels: Vec<Label> = batch.iter().map(|v| v.label).collect();
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let (value, dscores) = loss_and_gradient(&raw, &labels, temperature)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {value}")));
    }
    if !with_gradients {
        return Ok((value, None));
    }
    let grad_sensor = score_gradient_to_sensor(&scores, &dscores, layout, shift);
    let (grad_phase, layer_grads) = decoder.backward(&tape, &model.stack, &grad_sensor)?;
    let mut enc = model.encoder.zeros_like();
    for (v, vtapes) in tapes.iter().enumerate() {
        for (i, t) in vtapes.iter().enumerate() {
            let g = gather_tile_gradient(&grad_phase, v, i, layout)?;
            backward_frame(&model.encoder, t, &g, &mut enc);
        }
    }
    Ok((
        value,
        Some(Gradients {
            encoder: enc,
            layers: layer_grads,
            phase: grad_phase,
        }),
    ))
}

/// Batches for one epoch: shuffled order chunked into groups of `slots`,
/// the last group topped up from the front of the order.
fn epoch_batches(n: usize, slots: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(seed, SHUFFLE_STREAM),
        epoch as u64,
    )));
    let mut k = 0;
    while order.len() % slots != 0 {
        order.push(order[k % n]);
        k += 1;
    }
    order.chunks(slots).map(|c| c.to_vec()).collect()
}

fn sample_batch(data: &[Video], idx: &[usize], frames: usize, seed: u64, epoch: usize, batch: usize) -> Result<Vec<VideoSample>> {
    let base = derive_seed(derive_seed(seed, FRAME_STREAM), ((epoch as u64) << 32) | batch as u64);
    idx.iter()
        .enumerate()
        .map(|(slot, &i)| sample_frames(&data[i], frames, derive_seed(base, slot as u64)))
        .collect()
}

/// Number of optimizer steps one epoch over `n` videos takes.
pub fn steps_per_epoch(n: usize, slots: usize) -> u64 {
    n.div_ceil(slots) as u64
}

/// Mean batch loss over one deterministic pass (no parameter updates).
pub fn dataset_loss(model: &HybridModel, data: &[Video], temperature: f64, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let decoder = model.decoder(0.0)?;
    let batches = epoch_batches(data.len(), model.layout.videos(), seed, 0);
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let batch = sample_batch(data, idx, model.layout.frames(), seed, 0, b)?;
        total += batch_loss(model, &decoder, &batch, (0, 0), temperature, false)?.0;
    }
    Ok(total / batches.len() as f64)
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: HybridModel,
    pub history: TrainHistory,
}

/// Trains for `cfg.epochs` passes over `data`.
pub fn train(model: HybridModel, data: &[Video], validation: Option<&[Video]>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let budget = cfg.epochs as u64 * steps_per_epoch(data.len(), model.layout.videos());
    run(model, data, validation, cfg, budget)
}

/// Continues training a pretrained model for `fine_tune_fraction` of the
/// step budget it was originally trained with.
pub fn fine_tune(model: HybridModel, data: &[Video], validation: Option<&[Video]>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("fine-tuning needs a non-empty dataset".into()));
    }
    let budget = ((model.trained_steps as f64 * cfg.fine_tune_fraction).ceil() as u64).max(1);
    run(model, data, validation, cfg, budget)
}

fn run(
    mut model: HybridModel,
    data: &[Video],
    validation: Option<&[Video]>,
    cfg: &TrainConfig,
    budget: u64,
) -> Result<Trained> {
    let mut history = TrainHistory::default();
    if budget == 0 {
        return Ok(Trained { model, history });
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("training needs a non-empty dataset".into()));
    }
    let slots = model.layout.videos();
    let frames = model.layout.frames();
    let nominal = model.decoder(0.0)?;
    let mut vaccinator = cfg.vaccination.map(|v| Vaccinator::new(v, cfg.seed));

    let enc_sizes: Vec<usize> = model.encoder.tensors().iter().map(|t| t.2.len()).collect();
    let n_enc = enc_sizes.len();
    let mut sizes = enc_sizes;
    sizes.extend(model.stack.layers().iter().map(|l| l.len()));
    let mut opt = AdamW::new(&sizes);
    if cfg.shared_phase_moment {
        for k in n_enc..sizes.len() {
            opt = opt.share_second_moment(k);
        }
    }
    let weight_decay: Vec<f64> = (0..sizes.len())
        .map(|k| {
            if k < n_enc && EncoderParams::is_weight(k) {
                cfg.weight_decay
            } else {
                0.0
            }
        })
        .collect();

    let mut step = 0u64;
    let mut epoch = 0usize;
    while step < budget {
        let batches = epoch_batches(data.len(), slots, cfg.seed, epoch);
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, idx) in batches.iter().enumerate() {
            if step >= budget {
                break;
            }
            let batch = sample_batch(data, idx, frames, cfg.seed, epoch, b)?;
            let (decoder, shift) = match vaccinator.as_mut() {
                Some(v) => {
                    let m = v.draw();
                    let d = if m.dz == 0.0 { nominal.clone() } else { model.decoder(m.dz)? };
                    (d, m.sensor_shift(&model.layout))
                }
                None => (nominal.clone(), (0, 0)),
            };
            let (value, grads) = batch_loss(&model, &decoder, &batch, shift, cfg.temperature, true)?;
            let grads = grads.expect("requested");
            if grads.layers.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("layer gradient at step {step}")));
            }
            let lr_scale = cosine_lr(1.0, step as usize, budget as usize);
            let enc_lr = if cfg.freeze_encoder { 0.0 } else { cfg.learning_rate * lr_scale };
            let phase_lr = if cfg.freeze_stack { 0.0 } else { cfg.phase_learning_rate * lr_scale };
            let lr: Vec<f64> = (0..sizes.len()).map(|k| if k < n_enc { enc_lr } else { phase_lr }).collect();

            let grad_slices: Vec<Vec<f64>> = grads
                .encoder
                .tensors()
                .into_iter()
                .map(|t| t.2.to_vec())
                .chain(grads.layers.iter().map(|g| g.iter().copied().collect()))
                .collect();
            if grad_slices.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("encoder gradient at step {step}")));
            }
            let grad_refs: Vec<&[f64]> = grad_slices.iter().map(|g| g.as_slice()).collect();
            let mut params = model.encoder.tensors_mut();
            for layer in model.stack.layers_mut() {
                params.push(layer.as_slice_mut().expect("layers are contiguous"));
            }
            opt.step(params, &grad_refs, &lr, &weight_decay);

            total += value;
            count += 1;
            step += 1;
        }
        let (val_accuracy, val_ks) = match validation {
            Some(v) if !v.is_empty() => {
                let ev = model.evaluate(
                    v,
                    &EvalConfig {
                        sampling_seeds: vec![derive_seed(cfg.seed, epoch as u64)],
                        shuffle: true,
                    },
                )?;
                let (real, fake) = ev.scores_by_class();
                let ks = crate::metrics::ks_distance(&real, &fake).ok();
                (Some(ev.pooled_accuracy()), ks)
            }
            _ => (None, None),
        };
        let mean = total / count.max(1) as f64;
        log::info!("epoch {epoch}: loss {mean:.5} val_acc {val_accuracy:?}");
        history.epochs.push(EpochRecord {
            epoch,
            steps: step,
            loss: mean,
            val_accuracy,
            val_ks,
        });
        epoch += 1;
    }
    model.trained_steps += step;
    Ok(Trained { model, history })
}

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[i]` against the central difference of `f` at every
/// probed coordinate. Returns the maximum relative error.
pub fn gradcheck<F>(mut f: F, x: &[f64], analytic: &[f64], probes: &[usize], step: f64, floor: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x.to_vec();
    let mut worst = 0.0_f64;
    for &i in probes {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric, floor));
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub encoder: f64,
    pub layers: f64,
    pub phase: f64,
    pub probes_per_group: usize,
    pub step: f64,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.encoder.max(self.layers).max(self.phase)
    }
}

/// Finite-difference check of the end-to-end gradient on one batch:
/// random encoder weights, layer phases and modulator phase entries.
pub fn gradcheck_model(
    model: &HybridModel,
    batch: &[VideoSample],
    temperature: f64,
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let decoder = model.decoder(0.0)?;
    let (_, grads) = batch_loss(model, &decoder, batch, (0, 0), temperature, true)?;
    let grads = grads.expect("requested");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = 1e-7;

    // Encoder: flatten every tensor into one vector.
    let flat_params: Vec<f64> = model.encoder.tensors().iter().flat_map(|t| t.2.iter().copied()).collect();
    let flat_grads: Vec<f64> = grads.encoder.tensors().iter().flat_map(|t| t.2.iter().copied()).collect();
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> { (0..probes).map(|_| rng.gen_range(0..n)).collect() };
    let enc_probes = pick(flat_params.len(), &mut rng);
    let mut scratch = model.clone();
    let encoder = gradcheck(
        |x| {
            let mut off = 0;
            for t in scratch.encoder.tensors_mut() {
                let n = t.len();
                t.copy_from_slice(&x[off..off + n]);
                off += n;
            }
            batch_loss(&scratch, &decoder, batch, (0, 0), temperature, false)
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        },
        &flat_params,
        &flat_grads,
        &enc_probes,
        step,
        floor,
    );

    let mut layers = 0.0_f64;
    if model.stack.depth() > 0 {
        let flat: Vec<f64> = model.stack.layers().iter().flat_map(|l| l.iter().copied()).collect();
        let g: Vec<f64> = grads.layers.iter().flat_map(|l| l.iter().copied()).collect();
        let layer_probes = pick(flat.len(), &mut rng);
        let mut scratch = model.clone();
        layers = gradcheck(
            |x| {
                let mut off = 0;
                for l in scratch.stack.layers_mut() {
                    let n = l.len();
                    l.as_slice_mut().expect("contiguous").copy_from_slice(&x[off..off + n]);
                    off += n;
                }
                batch_loss(&scratch, &decoder, batch, (0, 0), temperature, false)
                    .map(|r| r.0)
                    .unwrap_or(f64::NAN)
            },
            &flat,
            &g,
            &layer_probes,
            step,
            floor,
        );
    }

    let phase0 = model.phase_map(batch)?.into_values();
    let dim = phase0.dim();
    let labels: Vec<Label> = batch.iter().map(|v| v.label).collect();
    let phase_loss = |x: &[f64]| -> f64 {
        let p = Array2::from_shape_vec(dim, x.to_vec()).expect("shape");
        decoder
            .sensor_image(&p, &model.stack)
            .and_then(|img| score_channels_shifted(&img, &model.layout, (0, 0)))
            .and_then(|s| loss(&s.iter().map(|c| c.score).collect::<Vec<_>>(), &labels, temperature))
            .unwrap_or(f64::NAN)
    };
    let flat_phase: Vec<f64> = phase0.iter().copied().collect();
    let flat_gphase: Vec<f64> = grads.phase.iter().copied().collect();
    let phase_probes = pick(flat_phase.len(), &mut rng);
    let phase = gradcheck(phase_loss, &flat_phase, &flat_gphase, &phase_probes, step, floor);

    Ok(GradcheckReport {
        encoder,
        layers,
        phase,
        probes_per_group: probes,
        step,
    })
}

/// Decisions of a model on a batch are a function of the sign of each score only.
pub fn infer_decisions(model: &HybridModel, batch: &[VideoSample]) -> Result<Vec<Label>> {
    let decoder = model.decoder(0.0)?;
    Ok(model
        .score_batch(batch, &decoder, (0, 0))?
        .into_iter()
        .map(|s| s.decision)
        .collect())
}
