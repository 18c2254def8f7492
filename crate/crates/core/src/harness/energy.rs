use serde::{Deserialize, Serialize};

use crate::decoder::{flops_decode, DiffractiveStack, OpticsConfig};
use crate::error::{Error, Result};
use crate::muxlayout::MuxLayout;

/// Inputs of the energy estimate. Powers in watts, rates in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub encoder_flops_per_frame: f64,
    pub frames_per_video: usize,
    pub joules_per_flop: f64,
    pub decoder_power_low: f64,
    pub decoder_power_high: f64,
    pub frame_rate_low: f64,
    pub frame_rate_high: f64,
    pub videos_per_batch: usize,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            encoder_flops_per_frame: 2.7e9,
            frames_per_video: 12,
            joules_per_flop: 5.5e-12,
            decoder_power_low: 3.73,
            decoder_power_high: 7.40,
            frame_rate_low: 120.0,
            frame_rate_high: 180.0,
            videos_per_batch: 15,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.encoder_flops_per_frame,
            self.joules_per_flop,
            self.decoder_power_low,
            self.decoder_power_high,
            self.frame_rate_low,
            self.frame_rate_high,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.frames_per_video == 0 || self.videos_per_batch == 0 {
            return Err(Error::InvalidConfig("energy model inputs must be positive".into()));
        }
        if self.decoder_power_low > self.decoder_power_high || self.frame_rate_low > self.frame_rate_high {
            return Err(Error::InvalidConfig("energy model low bounds exceed high bounds".into()));
        }
        Ok(())
    }
}

/// Energies in joules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub encoder_per_video: f64,
    pub decoder_per_batch: (f64, f64),
    pub decoder_per_video: (f64, f64),
    pub total_per_video: (f64, f64),
    /// Energy of simulating the decoder digitally, when a geometry is given.
    pub digital_twin_decoder_per_batch: Option<f64>,
    pub digital_twin_decoder_per_video: Option<f64>,
    pub decoder_flops: Option<u64>,
}

/// Optical decoder energy bounds follow from power over frame rate and do
/// not depend on the number of passive layers.
pub fn energy_report(model: &EnergyModel, twin: Option<(&MuxLayout, &DiffractiveStack, &OpticsConfig)>) -> Result<EnergyReport> {
    model.validate()?;
    let encoder = model.encoder_flops_per_frame * model.frames_per_video as f64 * model.joules_per_flop;
    let batch = (
        model.decoder_power_low / model.frame_rate_high,
        model.decoder_power_high / model.frame_rate_low,
    );
    let l = model.videos_per_batch as f64;
    let per_video = (batch.0 / l, batch.1 / l);
    let flops = twin.map(|(layout, stack, optics)| flops_decode(layout, stack, optics));
    let twin_batch = flops.map(|f| f as f64 * model.joules_per_flop);
    Ok(EnergyReport {
        encoder_per_video: encoder,
        decoder_per_batch: batch,
        decoder_per_video: per_video,
        total_per_video: (encoder + per_video.0, encoder + per_video.1),
        digital_twin_decoder_per_batch: twin_batch,
        digital_twin_decoder_per_video: twin_batch.map(|e| e / l),
        decoder_flops: flops,
    })
}
