//! Synthetic real/fake video generator for desk-scale experiments.
//!
//! Real videos are band-limited noise textures evolving as a first-order
//! autoregressive process. Fakes add a faint periodic high-frequency pattern
//! of amplitude `signal * artifact_amplitude` and use a lower temporal
//! correlation. With `signal = 0` both classes share one distribution.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::Video;
use crate::error::{Error, Result};
use crate::imgproc::gaussian_blur;
use crate::{derive_seed, Label};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// Class-separating signal strength in `[0, 1]`.
    pub signal: f64,
    /// Artifact amplitude (in `[0, 1]` intensity units) at `signal = 1`.
    pub artifact_amplitude: f64,
    /// Artifact period in pixels.
    pub artifact_period: f64,
    /// Temporal correlation of real videos.
    pub correlation: f64,
    /// Reduction of the temporal correlation for fakes at `signal = 1`.
    pub correlation_shift: f64,
    /// Spatial smoothing of the texture (pixels).
    pub smoothness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            frames: 8,
            rows: 32,
            cols: 32,
            signal: 1.0,
            artifact_amplitude: 0.15,
            artifact_period: 3.0,
            correlation: 0.9,
            correlation_shift: 0.4,
            smoothness: 1.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::InvalidConfig(format!("signal must lie in [0, 1], got {}", self.signal)));
        }
        if self.videos == 0 || self.frames == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("synthetic set sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.correlation) || self.correlation_shift < 0.0 {
            return Err(Error::InvalidConfig("correlation must lie in [0, 1)".into()));
        }
        if self.artifact_period < 2.0 || self.artifact_amplitude < 0.0 || self.smoothness < 0.0 {
            return Err(Error::InvalidConfig("invalid artifact or smoothness parameters".into()));
        }
        Ok(())
    }
}

fn noise_field(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let white = Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal));
    let smooth = gaussian_blur(&white, sigma);
    let n = smooth.len() as f64;
    let m = smooth.sum() / n;
    let sd = (smooth.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    smooth.mapv(|v| (v - m) / sd)
}

/// Rounds to the nearest 8-bit level.
pub fn quantize_u8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Generates one video. Deterministic in `(config, index)`.
pub fn generate_video(config: &SynthConfig, index: usize, label: Label) -> Video {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index as u64));
    let (rows, cols) = (config.rows, config.cols);
    let s = if label.is_fake() { config.signal } else { 0.0 };
    let rho = (config.correlation - s * config.correlation_shift).max(0.0);
    let innovation = (1.0 - rho * rho).sqrt();
    let brightness = rng.gen_range(0.4..0.6);
    let contrast = rng.gen_range(0.08..0.14);
    let angle = rng.gen_range(0.0..TAU);
    let offset = rng.gen_range(0.0..TAU);
    let (kr, kc) = (angle.sin() * TAU / config.artifact_period, angle.cos() * TAU / config.artifact_period);
    let amp = s * config.artifact_amplitude;

    let mut state = noise_field(rows, cols, config.smoothness, &mut rng);
    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        if t > 0 {
            let eps = noise_field(rows, cols, config.smoothness, &mut rng);
            state = &state * rho + &eps * innovation;
        }
        let frame = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let artifact = amp * (kr * r as f64 + kc * c as f64 + offset).cos();
            quantize_u8(brightness + contrast * state[[r, c]] + artifact)
        });
        frames.push(frame);
    }
    Video {
        frames,
        label,
        source_id: format!("synth-{index:05}"),
    }
}

/// Balanced set: even indices real, odd indices fake.
pub fn generate(config: &SynthConfig) -> Result<Vec<Video>> {
    config.validate()?;
    Ok((0..config.videos)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            generate_video(config, i, label)
        })
        .collect())
}
