use ndarray::{Array2, Array3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Label;

/// A decoded video: grayscale frames in the canonical `[0, 1]` range.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: Vec<Array2<f64>>,
    pub label: Label,
    pub source_id: String,
}

/// `N` sampled and standardized frames of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub frames: Vec<Array2<f64>>,
    pub label: Label,
    pub source_id: String,
}

/// Frame indices for one draw: uniform without replacement (sorted) when
/// the video is long enough, uniform with replacement (sorted) otherwise.
pub fn sample_indices(available: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if available == 0 {
        return Err(Error::InvalidInput("cannot sample frames from an empty video".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = if available >= n {
        index::sample(&mut rng, available, n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..available)).collect()
    };
    idx.sort_unstable();
    Ok(idx)
}

/// Draws `n` frames (deterministic in `seed`) and standardizes each.
pub fn sample_frames(video: &Video, n: usize, seed: u64) -> Result<VideoSample> {
    let idx = sample_indices(video.frames.len(), n, seed)?;
    Ok(VideoSample {
        frames: idx.iter().map(|&i| standardize(&video.frames[i])).collect(),
        label: video.label,
        source_id: video.source_id.clone(),
    })
}

/// Zero mean, unit (population) variance. Constant frames map to all zeros.
pub fn standardize(frame: &Array2<f64>) -> Array2<f64> {
    let n = frame.len() as f64;
    let mean = frame.sum() / n;
    let var = frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Array2::zeros(frame.dim());
    }
    frame.mapv(|v| (v - mean) / std)
}

/// Luminance of an `H x W x 3` RGB frame.
pub fn to_grayscale(rgb: &Array3<f64>) -> Result<Array2<f64>> {
    if rgb.len_of(Axis(2)) != 3 {
        return Err(Error::Shape("expected 3 colour channels".into()));
    }
    Ok(rgb.map_axis(Axis(2), |px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]))
}
