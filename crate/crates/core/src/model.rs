//! The hybrid model (encoder + diffractive stack on a layout) and the
//! multiplexed evaluation protocol shared by every sweep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{score_channels_shifted, ChannelScore, DiffractiveStack, OpticalDecoder, OpticsConfig};
use crate::encoder::{forward_batch, sample_frames, EncoderConfig, EncoderParams, Video, VideoSample};
use crate::error::{ensure_shape, Error, Result};
use crate::metrics::{channel_report, ChannelReport};
use crate::muxlayout::{MuxLayout, PhaseMap};
use crate::{derive_seed, Label};

/// Sensor-side misalignment: lateral offset of the readout window and an
/// extra axial distance on the final hop, both in micrometers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Misalignment {
    pub fn lateral(dx: f64, dy: f64) -> Self {
        Self { dx, dy, dz: 0.0 }
    }

    /// Readout-window displacement `(rows, cols)` in whole sensor pixels.
    pub fn sensor_shift(&self, layout: &MuxLayout) -> (i64, i64) {
        let p = layout.config().sensor_pitch;
        ((self.dy / p).round() as i64, (self.dx / p).round() as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    pub layout: MuxLayout,
    pub encoder: EncoderParams,
    pub stack: DiffractiveStack,
    pub optics: OpticsConfig,
    /// Optimizer steps taken so far (the budget fine-tuning is measured against).
    pub trained_steps: u64,
}

impl HybridModel {
    pub fn new(layout: MuxLayout, encoder: EncoderParams, stack: DiffractiveStack, optics: OpticsConfig) -> Result<Self> {
        optics.validate()?;
        let cfg = encoder.config();
        ensure_shape("encoder tile", (cfg.tile_rows, cfg.tile_cols), layout.tile_shape())?;
        for l in stack.layers() {
            ensure_shape("diffractive layer", l.dim(), layout.slm_shape())?;
        }
        Ok(Self {
            layout,
            encoder,
            stack,
            optics,
            trained_steps: 0,
        })
    }

    /// Randomly initialized encoder and `k` flat layers splitting the
    /// layout's propagation distance evenly.
    pub fn initialize(
        layout: MuxLayout,
        frame: (usize, usize),
        channels: Vec<usize>,
        k: usize,
        optics: OpticsConfig,
        seed: u64,
    ) -> Result<Self> {
        let cfg = EncoderConfig {
            channels,
            ..EncoderConfig::new(frame, layout.tile_shape())
        };
        let encoder = EncoderParams::init(cfg, seed)?;
        let stack = DiffractiveStack::flat(k, layout.slm_shape(), layout.config().propagation_distance)?;
        Self::new(layout, encoder, stack, optics)
    }

    pub fn decoder(&self, axial_shift: f64) -> Result<OpticalDecoder> {
        OpticalDecoder::new(&self.layout, &self.stack, &self.optics, axial_shift)
    }

    pub fn phase_map(&self, batch: &[VideoSample]) -> Result<PhaseMap> {
        forward_batch(batch, &self.encoder, &self.layout)
    }

    /// One optical pass over `L` sampled videos.
    pub fn score_batch(
        &self,
        batch: &[VideoSample],
        decoder: &OpticalDecoder,
        shift: (i64, i64),
    ) -> Result<Vec<ChannelScore>> {
        let phase = self.phase_map(batch)?;
        let sensor = decoder.sensor_image(phase.values(), &self.stack)?;
        score_channels_shifted(&sensor, &self.layout, shift)
    }

    pub fn evaluate_misaligned(&self, videos: &[Video], cfg: &EvalConfig, mis: Misalignment) -> Result<Evaluation> {
        let decoder = self.decoder(mis.dz)?;
        let shift = mis.sensor_shift(&self.layout);
        run_protocol(videos, cfg, self.layout.videos(), |batch, _| {
            let samples = batch
                .iter()
                .map(|(v, seed)| sample_frames(v, self.layout.frames(), *seed))
                .collect::<Result<Vec<_>>>()?;
            Ok(self
                .score_batch(&samples, &decoder, shift)?
                .into_iter()
                .map(|s| s.score)
                .collect())
        })
    }
}

/// Anything that scores videos under the shared multiplexed protocol.
pub trait VideoDetector {
    fn name(&self) -> String;
    fn evaluate(&self, videos: &[Video], cfg: &EvalConfig) -> Result<Evaluation>;
}

impl VideoDetector for HybridModel {
    fn name(&self) -> String {
        format!("hybrid_k{}", self.stack.depth())
    }

    fn evaluate(&self, videos: &[Video], cfg: &EvalConfig) -> Result<Evaluation> {
        self.evaluate_misaligned(videos, cfg, Misalignment::default())
    }
}

/// Test-time protocol: for every sampling seed the video order is
/// shuffled, chunked into groups of `L` (the last group is topped up with
/// unrecorded videos from the front), and each video gets a fresh frame draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sampling_seeds: Vec<u64>,
    pub shuffle: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampling_seeds: (0..4).collect(),
            shuffle: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub seed: u64,
    pub video: usize,
    pub channel: usize,
    pub score: f64,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub channels: usize,
    pub records: Vec<ScoreRecord>,
}

impl Evaluation {
    pub fn streams(&self) -> Vec<(Vec<f64>, Vec<Label>)> {
        let mut out = vec![(Vec::new(), Vec::new()); self.channels];
        for r in &self.records {
            out[r.channel].0.push(r.score);
            out[r.channel].1.push(r.label);
        }
        out.retain(|s| !s.0.is_empty());
        out
    }

    pub fn report(&self) -> Result<ChannelReport> {
        channel_report(&self.streams())
    }

    /// Fraction of all recorded decisions that are correct.
    pub fn pooled_accuracy(&self) -> f64 {
        let ok = self
            .records
            .iter()
            .filter(|r| crate::decoder::decide(r.score) == r.label)
            .count();
        ok as f64 / self.records.len().max(1) as f64
    }

    pub fn scores_by_class(&self) -> (Vec<f64>, Vec<f64>) {
        let mut real = Vec::new();
        let mut fake = Vec::new();
        for r in &self.records {
            if r.label.is_fake() {
                fake.push(r.score);
            } else {
                real.push(r.score);
            }
        }
        (real, fake)
    }
}

/// Drives the batching protocol; `score` receives `(video, frame seed)`
/// pairs for one pass and returns one score per slot.
pub(crate) fn run_protocol<F>(videos: &[Video], cfg: &EvalConfig, slots: usize, mut score: F) -> Result<Evaluation>
where
    F: FnMut(&[(&Video, u64)], &[usize]) -> Result<Vec<f64>>,
{
    if videos.is_empty() {
        return Err(Error::InvalidInput("no videos to evaluate".into()));
    }
    let mut records = Vec::new();
    for &seed in &cfg.sampling_seeds {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xE7A1)));
        }
        let real_count = order.len();
        let mut k = 0;
        while order.len() % slots != 0 {
            order.push(order[k % real_count]);
            k += 1;
        }
        for (b, chunk) in order.chunks(slots).enumerate() {
            let batch: Vec<(&Video, u64)> = chunk
                .iter()
                .map(|&i| (&videos[i], derive_seed(seed, i as u64)))
                .collect();
            let scores = score(&batch, chunk)?;
            for (channel, (&i, s)) in chunk.iter().zip(scores).enumerate() {
                if b * slots + channel >= real_count {
                    break;
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite(format!("score of video {i}")));
                }
                records.push(ScoreRecord {
                    seed,
                    video: i,
                    channel,
                    score: s,
                    label: videos[i].label,
                });
            }
        }
    }
    Ok(Evaluation {
        channels: slots,
        records,
    })
}
