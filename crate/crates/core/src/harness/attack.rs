//! Black-box universal perturbations crafted on a digital surrogate, and
//! the all-digital convolutional classifier used as a baseline victim.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sweep::Summary;
use crate::encoder::{sample_indices, Video};
use crate::error::{ensure_shape, Error, Result};
use crate::model::{run_protocol, EvalConfig, Evaluation, VideoDetector};
use crate::nn::{bce_with_logit, cosine_lr, sigmoid, AdamW, Conv2d, Dense, Maps};
use crate::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub channels: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_videos: usize,
    /// Frames averaged per video.
    pub frames: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 16, 16],
            epochs: 20,
            learning_rate: 3e-3,
            weight_decay: 1e-4,
            batch_videos: 8,
            frames: 4,
            seed: 0,
        }
    }
}

/// Stride-2 conv blocks with tanh, global average pooling and an affine
/// head. The video logit is the mean of the frame logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvClassifier {
    pub convs: Vec<Conv2d>,
    pub head: Dense,
    pub frames: usize,
}

struct FrameTape {
    acts: Vec<Maps>,
    pooled: Vec<f64>,
}

impl ConvClassifier {
    pub fn init(channels: &[usize], frames: usize, seed: u64) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) || frames == 0 {
            return Err(Error::InvalidConfig("classifier needs conv channels and frames".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        let convs = channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::init(in_ch, c, &mut rng);
                in_ch = c;
                conv
            })
            .collect();
        Ok(Self {
            convs,
            head: Dense::init(in_ch, 1, &mut rng),
            frames,
        })
    }

    fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(|c| Conv2d::zeros(c.in_ch, c.out_ch)).collect(),
            head: Dense::zeros(self.head.in_dim, 1),
            frames: self.frames,
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    fn frame_forward(&self, frame: &Array2<f64>) -> (f64, FrameTape) {
        let (rows, cols) = frame.dim();
        let input = Maps::from_plane(rows, cols, frame.iter().map(|v| v - 0.5).collect());
        let mut acts = vec![input];
        for conv in &self.convs {
            let mut z = conv.forward(acts.last().expect("input"));
            z.data.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(z);
        }
        let last = acts.last().expect("output");
        let hw = last.plane_len();
        let pooled: Vec<f64> = last.data.chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
        let logit = self.head.forward(&pooled)[0];
        (logit, FrameTape { acts, pooled })
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn frame_backward(&self, tape: &FrameTape, dlogit: f64, grads: &mut Self, want_input: bool) -> Option<Array2<f64>> {
        let dpooled = self.head.backward(&tape.pooled, &[dlogit], &mut grads.head);
        let last = tape.acts.last().expect("output");
        let hw = last.plane_len();
        let mut g: Vec<f64> = (0..last.data.len()).map(|i| dpooled[i / hw] / hw as f64).collect();
        for l in (0..self.convs.len()).rev() {
            let a = &tape.acts[l + 1];
            let dz = Maps {
                data: g.iter().zip(&a.data).map(|(g, y)| g * (1.0 - y * y)).collect(),
                ..a.clone()
            };
            match self.convs[l].backward(&tape.acts[l], &dz, &mut grads.convs[l], l > 0 || want_input) {
                Some(dx) => g = dx.data,
                None => return None,
            }
        }
        let x = &tape.acts[0];
        Some(Array2::from_shape_vec((x.rows, x.cols), g).expect("input plane"))
    }

    /// Mean frame logit of a set of frames.
    pub fn video_logit(&self, frames: &[Array2<f64>]) -> f64 {
        frames.iter().map(|f| self.frame_forward(f).0).sum::<f64>() / frames.len() as f64
    }

    /// Digital FLOPs per frame (multiply-add = 2).
    pub fn flops_per_frame(&self, rows: usize, cols: usize) -> u64 {
        let (mut r, mut c) = (rows, cols);
        let mut total = 0;
        for conv in &self.convs {
            total += conv.flops(r, c);
            r = Conv2d::out_dim(r);
            c = Conv2d::out_dim(c);
        }
        total + self.head.flops()
    }
}

fn frames_of(video: &Video, n: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    Ok(sample_indices(video.frames.len(), n, seed)?
        .into_iter()
        .map(|i| video.frames[i].clone())
        .collect())
}

/// Fits a classifier on `videos` with mini-batch BCE.
pub fn train_classifier(videos: &[Video], cfg: &ClassifierConfig) -> Result<ConvClassifier> {
    if videos.is_empty() {
        return Err(Error::InvalidInput("classifier training needs videos".into()));
    }
    let mut model = ConvClassifier::init(&cfg.channels, cfg.frames, cfg.seed)?;
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut opt = AdamW::new(&sizes);
    let wd: Vec<f64> = (0..sizes.len()).map(|k| if k % 2 == 0 { cfg.weight_decay } else { 0.0 }).collect();
    let batch = cfg.batch_videos.max(1);
    let total_steps = cfg.epochs * videos.len().div_ceil(batch);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        for chunk in order.chunks(batch) {
            let mut grads = model.zeros_like();
            for &i in chunk {
                let seed = derive_seed(derive_seed(cfg.seed, 0xC1A5), ((epoch as u64) << 32) | i as u64);
                let frames = frames_of(&videos[i], cfg.frames, seed)?;
                let fwd: Vec<(f64, FrameTape)> = frames.iter().map(|f| model.frame_forward(f)).collect();
                let logit = fwd.iter().map(|t| t.0).sum::<f64>() / fwd.len() as f64;
                let dlogit = (sigmoid(logit) - videos[i].label.target()) / (chunk.len() * fwd.len()) as f64;
                for (_, tape) in &fwd {
                    model.frame_backward(tape, dlogit, &mut grads, false);
                }
            }
            let lr = vec![cosine_lr(cfg.learning_rate, step, total_steps); sizes.len()];
            let g: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("classifier gradient at step {step}")));
            }
            let refs: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
            opt.step(model.tensors_mut(), &refs, &lr, &wd);
            step += 1;
        }
    }
    Ok(model)
}

impl VideoDetector for ConvClassifier {
    fn name(&self) -> String {
        "digital_cnn".into()
    }

    /// Videos are scored one at a time; the score is `tanh(logit)`.
    fn evaluate(&self, videos: &[Video], cfg: &EvalConfig) -> Result<Evaluation> {
        run_protocol(videos, cfg, 1, |batch, _| {
            batch
                .iter()
                .map(|(v, seed)| Ok(self.video_logit(&frames_of(v, self.frames, *seed)?).tanh()))
                .collect()
        })
    }
}

/// Class-balanced random subset: `fraction` of each class, at least one each.
pub fn balanced_subset(videos: &[Video], fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for fake in [false, true] {
        let mut idx: Vec<usize> = (0..videos.len()).filter(|&i| videos[i].label.is_fake() == fake).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
        out.extend_from_slice(&idx[..k]);
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attacker: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub epochs: usize,
    /// `None` means `epsilon / 4`.
    pub step_size: Option<f64>,
    pub batch_videos: usize,
}

impl AttackSpec {
    pub fn new(attacker: usize, seed: u64, epsilon: f64) -> Self {
        Self {
            attacker,
            seed,
            epsilon,
            epochs: 10,
            step_size: None,
            batch_videos: 8,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 4.0)
    }
}

/// Adds `delta` to every frame and clamps back to `[0, 1]`.
pub fn apply_delta(frames: &[Array2<f64>], delta: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    frames
        .iter()
        .map(|f| {
            ensure_shape("perturbation", delta.dim(), f.dim())?;
            Ok((f + delta).mapv(|v| v.clamp(0.0, 1.0)))
        })
        .collect()
}

pub fn apply_delta_videos(videos: &[Video], delta: &Array2<f64>) -> Result<Vec<Video>> {
    videos
        .iter()
        .map(|v| {
            Ok(Video {
                frames: apply_delta(&v.frames, delta)?,
                label: v.label,
                source_id: v.source_id.clone(),
            })
        })
        .collect()
}

/// Mean surrogate BCE over `videos` with `delta` stamped on every frame.
pub fn surrogate_loss(surrogate: &ConvClassifier, videos: &[Video], delta: &Array2<f64>, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (i, v) in videos.iter().enumerate() {
        let frames = apply_delta(&frames_of(v, surrogate.frames, derive_seed(seed, i as u64))?, delta)?;
        total += bce_with_logit(surrogate.video_logit(&frames), v.label.target());
    }
    Ok(total / videos.len().max(1) as f64)
}

/// Projected signed-gradient ascent of the surrogate BCE over `subset`.
/// Every iterate satisfies `|delta| <= epsilon` elementwise.
pub fn attack_train(spec: &AttackSpec, surrogate: &ConvClassifier, subset: &[Video]) -> Result<Array2<f64>> {
    if !(spec.epsilon >= 0.0) || !spec.epsilon.is_finite() {
        return Err(Error::OutOfRange(format!("epsilon must be finite and >= 0, got {}", spec.epsilon)));
    }
    let first = subset
        .first()
        .and_then(|v| v.frames.first())
        .ok_or_else(|| Error::InvalidInput("attacker subset is empty".into()))?;
    let dim = first.dim();
    let eps = spec.epsilon;
    if eps == 0.0 {
        return Ok(Array2::zeros(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, spec.attacker as u64));
    let mut delta = Array2::from_shape_fn(dim, |_| rng.gen_range(-eps..=eps));
    let alpha = spec.alpha();
    let mut scratch = surrogate.zeros_like();
    let mut order: Vec<usize> = (0..subset.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_videos.max(1)) {
            let mut grad = Array2::<f64>::zeros(dim);
            for &i in chunk {
                let v = &subset[i];
                let seed = derive_seed(derive_seed(spec.seed, 0xA77A), ((epoch as u64) << 32) | i as u64);
                let raw = frames_of(v, surrogate.frames, seed)?;
                let frames = apply_delta(&raw, &delta)?;
                let fwd: Vec<(f64, FrameTape)> = frames.iter().map(|f| surrogate.frame_forward(f)).collect();
                let logit = fwd.iter().map(|t| t.0).sum::<f64>() / fwd.len() as f64;
                let dlogit = (sigmoid(logit) - v.label.target()) / fwd.len() as f64;
                for ((_, tape), x) in fwd.iter().zip(&raw) {
                    let gx = surrogate
                        .frame_backward(tape, dlogit, &mut scratch, true)
                        .expect("input gradient requested");
                    // The clamp to [0, 1] passes gradient only where it is inactive.
                    ndarray::Zip::from(&mut grad).and(&gx).and(x).and(&delta).for_each(|g, &d, &x, &dl| {
                        let y = x + dl;
                        if y > 0.0 && y < 1.0 {
                            *g += d;
                        }
                    });
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("attack gradient for attacker {}", spec.attacker)));
            }
            ndarray::Zip::from(&mut delta).and(&grad).for_each(|d, &g| {
                let s = if g > 0.0 {
                    1.0
                } else if g < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *d = (*d + alpha * s).clamp(-eps, eps);
            });
        }
    }
    Ok(delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub attackers: usize,
    pub subset_fraction: f64,
    pub epsilons: Vec<f64>,
    pub epochs: usize,
    pub step_size: Option<f64>,
    pub surrogate: ClassifierConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            attackers: 10,
            subset_fraction: 0.1,
            epsilons: vec![1.0 / 255.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0],
            epochs: 10,
            step_size: None,
            surrogate: ClassifierConfig {
                channels: vec![8, 8, 16, 16],
                ..ClassifierConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniversalPerturbation {
    pub attacker: usize,
    pub epsilon: f64,
    pub delta: Array2<f64>,
    pub surrogate_loss_before: f64,
    pub surrogate_loss_after: f64,
}

/// Trains one surrogate per attacker on its own balanced subset of
/// `pool` and crafts a perturbation for every budget.
pub fn craft_perturbations(pool: &[Video], cfg: &AttackConfig) -> Result<Vec<UniversalPerturbation>> {
    let mut out = Vec::new();
    for m in 0..cfg.attackers {
        let seed = derive_seed(cfg.seed, m as u64);
        let idx = balanced_subset(pool, cfg.subset_fraction, seed);
        let subset: Vec<Video> = idx.iter().map(|&i| pool[i].clone()).collect();
        let surrogate = train_classifier(
            &subset,
            &ClassifierConfig {
                seed,
                ..cfg.surrogate.clone()
            },
        )?;
        let zero = Array2::zeros(subset[0].frames[0].dim());
        let before = surrogate_loss(&surrogate, &subset, &zero, seed)?;
        for &eps in &cfg.epsilons {
            let spec = AttackSpec {
                epochs: cfg.epochs,
                step_size: cfg.step_size,
                ..AttackSpec::new(m, seed, eps)
            };
            let delta = attack_train(&spec, &surrogate, &subset)?;
            let after = surrogate_loss(&surrogate, &subset, &delta, seed)?;
            log::debug!("attacker {m} eps {eps:.5}: surrogate loss {before:.4} -> {after:.4}");
            out.push(UniversalPerturbation {
                attacker: m,
                epsilon: eps,
                delta,
                surrogate_loss_before: before,
                surrogate_loss_after: after,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub model: String,
    pub epsilon: f64,
    pub attackers: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub success_rate: f64,
}

/// Metrics per `(model, epsilon)`, averaged over every attacker's pattern.
/// The `epsilon = 0` row is the clean evaluation.
pub fn attack_eval(
    models: &[&dyn VideoDetector],
    perturbations: &[UniversalPerturbation],
    testset: &[Video],
    epsilons: &[f64],
    eval: &EvalConfig,
) -> Result<Vec<AttackRow>> {
    let mut rows = Vec::new();
    for model in models {
        for &eps in epsilons {
            let summaries: Vec<Summary> = if eps == 0.0 {
                vec![Summary::of(&model.evaluate(testset, eval)?)?]
            } else {
                let deltas: Vec<&UniversalPerturbation> = perturbations.iter().filter(|p| p.epsilon == eps).collect();
                if deltas.is_empty() {
                    return Err(Error::InvalidInput(format!("no perturbations crafted for epsilon {eps}")));
                }
                deltas
                    .iter()
                    .map(|p| Summary::of(&model.evaluate(&apply_delta_videos(testset, &p.delta)?, eval)?))
                    .collect::<Result<_>>()?
            };
            let n = summaries.len() as f64;
            let acc: Vec<f64> = summaries.iter().map(|s| s.accuracy).collect();
            let mean = acc.iter().sum::<f64>() / n;
            let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            let avg = |f: &dyn Fn(&Summary) -> Option<f64>| {
                let v: Vec<f64> = summaries.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            rows.push(AttackRow {
                model: model.name(),
                epsilon: eps,
                attackers: summaries.len(),
                accuracy: mean,
                accuracy_std: std,
                sensitivity: avg(&|s| s.sensitivity),
                specificity: avg(&|s| s.specificity),
                success_rate: 1.0 - mean,
            });
        }
    }
    Ok(rows)
}
