//! Experiment configuration: one JSON document with a section per stage.
//!
//! A single top-level `seed` drives every random stream; the per-section
//! seed fields are derived from it when the config is resolved.

use std::path::{Path, PathBuf};

use optimux::decoder::OpticsConfig;
use optimux::harness::{AttackConfig, ClassifierConfig, EnergyModel};
use optimux::model::EvalConfig;
use optimux::muxlayout::{LayoutConfig, MuxLayout};
use optimux::synth::SynthConfig;
use optimux::trainer::TrainConfig;
use optimux::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "OPTIMUX_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub layout: LayoutConfig,
    pub encoder: EncoderSection,
    pub stack: StackSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub harness: HarnessSection,
    pub energy: EnergyModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub frame_rows: usize,
    pub frame_cols: usize,
    pub channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackSection {
    /// Number of diffractive layers between modulator and sensor.
    pub layers: usize,
    /// Hop distances in micrometers (`layers + 1` values). Empty splits the
    /// layout's propagation distance evenly.
    pub distances: Vec<f64>,
    pub optics: OpticsConfig,
}

/// Where videos come from. A manifest path takes precedence over the
/// matching synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: SynthConfig,
    pub test: SynthConfig,
    pub finetune: SynthConfig,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub finetune_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub noise_sigmas: Vec<f64>,
    pub blur_sigmas: Vec<f64>,
    pub jpeg_qualities: Vec<f64>,
    /// Lateral offsets (micrometers) combined into a square grid.
    pub lateral_offsets: Vec<f64>,
    pub axial_offsets: Vec<f64>,
    pub attack: AttackConfig,
    /// The deep-digital baseline attacked alongside the hybrid models.
    pub baseline: ClassifierConfig,
    pub histogram_bins: usize,
    /// Guard bands compared by the cross-talk command.
    pub crosstalk_spacings: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            layout: LayoutConfig::toy(4, 4, 32),
            encoder: EncoderSection::default(),
            stack: StackSection::default(),
            data: DataSection::default(),
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            harness: HarnessSection::default(),
            energy: EnergyModel::default(),
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            frame_rows: 32,
            frame_cols: 32,
            channels: vec![8, 16, 16],
        }
    }
}

impl Default for StackSection {
    fn default() -> Self {
        Self {
            layers: 0,
            distances: Vec::new(),
            optics: OpticsConfig::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: SynthConfig {
                videos: 400,
                ..SynthConfig::default()
            },
            test: SynthConfig {
                videos: 80,
                ..SynthConfig::default()
            },
            finetune: SynthConfig {
                videos: 48,
                artifact_period: 4.0,
                ..SynthConfig::default()
            },
            train_manifest: None,
            test_manifest: None,
            finetune_manifest: None,
        }
    }
}

impl Default for HarnessSection {
    fn default() -> Self {
        Self {
            noise_sigmas: vec![0.0, 0.02, 0.05, 0.1, 0.2, 0.5],
            blur_sigmas: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            jpeg_qualities: vec![10.0, 30.0, 50.0, 70.0, 90.0, 100.0],
            lateral_offsets: vec![-48.0, 0.0, 48.0],
            axial_offsets: vec![0.0],
            attack: AttackConfig::default(),
            baseline: ClassifierConfig::default(),
            histogram_bins: 40,
            crosstalk_spacings: Vec::new(),
        }
    }
}

/// Seed streams handed to each stage.
pub mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const FINETUNE_DATA: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const ATTACK: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const NOISE: u64 = 7;
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults), applies environment overrides and the
    /// command-line seed/output, then derives section seeds and validates.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
                serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        apply_env_overrides(&mut value, std::env::vars())?;
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.output_dir = o.to_path_buf();
        }
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn derive_seeds(&mut self) {
        let s = self.seed;
        self.data.train.seed = derive_seed(s, streams::TRAIN_DATA);
        self.data.test.seed = derive_seed(s, streams::TEST_DATA);
        self.data.finetune.seed = derive_seed(s, streams::FINETUNE_DATA);
        self.train.seed = s;
        self.harness.attack.seed = derive_seed(s, streams::ATTACK);
        self.harness.baseline.seed = derive_seed(s, streams::BASELINE);
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, streams::NOISE)
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, streams::MODEL_INIT)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        MuxLayout::new(self.layout.clone())?;
        self.train.validate()?;
        self.energy.validate()?;
        self.stack.optics.validate()?;
        for s in [&self.data.train, &self.data.test, &self.data.finetune] {
            s.validate()?;
        }
        if self.encoder.channels.is_empty() || self.encoder.channels.contains(&0) {
            return bad("encoder.channels must be non-empty and positive".into());
        }
        if self.encoder.frame_rows == 0 || self.encoder.frame_cols == 0 {
            return bad("encoder frame size must be positive".into());
        }
        if !self.stack.distances.is_empty() && self.stack.distances.len() != self.stack.layers + 1 {
            return bad(format!(
                "stack.distances needs {} entries for {} layers, got {}",
                self.stack.layers + 1,
                self.stack.layers,
                self.stack.distances.len()
            ));
        }
        if self.eval.sampling_seeds.is_empty() {
            return bad("eval.sampling_seeds must not be empty".into());
        }
        let h = &self.harness;
        for (name, list) in [("noise_sigmas", &h.noise_sigmas), ("blur_sigmas", &h.blur_sigmas), ("jpeg_qualities", &h.jpeg_qualities)] {
            if list.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("harness.{name} must be sorted ascending"));
            }
        }
        if h.jpeg_qualities.iter().any(|q| !(1.0..=100.0).contains(q) || q.fract() != 0.0) {
            return bad("harness.jpeg_qualities must be integers in [1, 100]".into());
        }
        if h.noise_sigmas.iter().chain(&h.blur_sigmas).any(|s| !(*s >= 0.0)) {
            return bad("harness sigmas must be non-negative".into());
        }
        if h.attack.epsilons.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) || h.attack.attackers == 0 {
            return bad("harness.attack needs attackers > 0 and finite epsilons >= 0".into());
        }
        if !(h.attack.subset_fraction > 0.0 && h.attack.subset_fraction <= 1.0) {
            return bad("harness.attack.subset_fraction must lie in (0, 1]".into());
        }
        if h.histogram_bins < 2 {
            return bad("harness.histogram_bins must be at least 2".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except the output
    /// directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("value serializes")))
    }

    /// Hop distances of the configured stack.
    pub fn distances(&self) -> Vec<f64> {
        if self.stack.distances.is_empty() {
            let k = self.stack.layers + 1;
            vec![self.layout.propagation_distance / k as f64; k]
        } else {
            self.stack.distances.clone()
        }
    }
}

/// `OPTIMUX_TRAIN__EPOCHS=3` sets `train.epochs`. Values are parsed as
/// JSON and fall back to plain strings.
pub fn apply_env_overrides(value: &mut Value, vars: impl Iterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("malformed override variable {key}")));
        }
        if path[0] == "log" {
            continue;
        }
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
        let mut node = &mut *value;
        for (i, part) in path.iter().enumerate() {
            let Value::Object(map) = node else {
                return Err(CliError::Config(format!("{key}: '{}' is not a section", path[..i].join("."))));
            };
            if i + 1 == path.len() {
                map.insert(part.clone(), parsed.clone());
                break;
            }
            node = map.entry(part.clone()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}
