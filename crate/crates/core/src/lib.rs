//! Digital twin, trainer and evaluation harness for spatially multiplexed
//! hybrid digital-optical video authenticity screening.
//!
//! A convolutional encoder turns `N` frames of each of `L` videos into phase
//! tiles, the tiles are packed onto one modulator phase map, and a simulated
//! coherent decoder (free space plus `K` phase-only diffractive layers)
//! focuses light onto paired detectors whose normalized difference scores
//! every video in a single pass.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fft;
pub mod harness;
pub mod imgproc;
pub mod metrics;
pub mod model;
pub mod muxlayout;
pub mod nn;
pub mod synth;
pub mod trainer;
pub mod wavefield;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use serde::{Deserialize, Serialize};

/// Authenticity class of a video. `Fake` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    /// Binary target used by the losses (`fake = 1`).
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::InvalidInput(format!("unknown label '{other}'"))),
        }
    }
}

/// Wraps a phase into `[0, 2pi)`, guarding the rounding case that lands on `2pi`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = x.rem_euclid(two_pi);
    if w >= two_pi {
        0.0
    } else {
        w
    }
}

/// Deterministic sub-seed for stream `stream` of a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
