use serde::{Deserialize, Serialize};

use super::perturb::{perturb_videos, PerturbationKind};
use crate::encoder::Video;
use crate::error::{Error, Result};
use crate::metrics::ks_distance;
use crate::model::{EvalConfig, Evaluation, HybridModel, Misalignment, VideoDetector};

/// Channel-aggregate metrics of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Fraction of all decisions that are correct.
    pub accuracy: f64,
    /// Mean and population std of per-channel accuracy.
    pub channel_accuracy: f64,
    pub channel_accuracy_std: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// KS distance of the pooled real and fake score distributions.
    pub ks: Option<f64>,
    pub samples: usize,
}

impl Summary {
    pub fn of(ev: &Evaluation) -> Result<Self> {
        let report = ev.report()?;
        let (real, fake) = ev.scores_by_class();
        let mut tp = 0usize;
        let mut tn = 0usize;
        for r in &ev.records {
            let fake_pred = r.score > 0.0;
            match (r.label.is_fake(), fake_pred) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                _ => {}
            }
        }
        Ok(Self {
            accuracy: ev.pooled_accuracy(),
            channel_accuracy: report.accuracy.mean,
            channel_accuracy_std: report.accuracy.std,
            sensitivity: (!fake.is_empty()).then(|| tp as f64 / fake.len() as f64),
            specificity: (!real.is_empty()).then(|| tn as f64 / real.len() as f64),
            ks: ks_distance(&real, &fake).ok(),
            samples: ev.records.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub magnitude: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Metrics against perturbation magnitude. `magnitudes` must be sorted.
pub fn degradation_sweep(
    model: &dyn VideoDetector,
    testset: &[Video],
    kind: PerturbationKind,
    magnitudes: &[f64],
    eval: &EvalConfig,
    noise_seed: u64,
) -> Result<Vec<SweepRow>> {
    if magnitudes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("magnitudes must be sorted ascending".into()));
    }
    magnitudes
        .iter()
        .map(|&m| {
            let p = kind.at(m, noise_seed)?;
            let videos = perturb_videos(testset, &p)?;
            let ev = model.evaluate(&videos, eval)?;
            Ok(SweepRow {
                magnitude: m,
                summary: Summary::of(&ev)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentRow {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Metrics at every grid point, with the same shift mechanics as training.
pub fn misalignment_sweep(
    model: &HybridModel,
    testset: &[Video],
    grid: &[Misalignment],
    eval: &EvalConfig,
) -> Result<Vec<MisalignmentRow>> {
    grid.iter()
        .map(|m| {
            let ev = model.evaluate_misaligned(testset, eval, *m)?;
            Ok(MisalignmentRow {
                dx: m.dx,
                dy: m.dy,
                dz: m.dz,
                summary: Summary::of(&ev)?,
            })
        })
        .collect()
}

/// Cartesian grid of lateral and axial offsets.
pub fn misalignment_grid(lateral: &[f64], axial: &[f64]) -> Vec<Misalignment> {
    let mut out = Vec::new();
    for &dz in axial {
        for &dy in lateral {
            for &dx in lateral {
                out.push(Misalignment { dx, dy, dz });
            }
        }
    }
    out
}

/// `(min, max)` accuracy over a set of rows.
pub fn accuracy_envelope(rows: &[MisalignmentRow]) -> Option<(f64, f64)> {
    let acc = rows.iter().map(|r| r.summary.accuracy);
    let lo = acc.clone().fold(f64::INFINITY, f64::min);
    let hi = acc.fold(f64::NEG_INFINITY, f64::max);
    (!rows.is_empty()).then_some((lo, hi))
}
