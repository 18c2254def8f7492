use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::Video;
use crate::error::{Error, Result};
use crate::imgproc::gaussian_blur;
use crate::derive_seed;

/// Frame-level degradation applied in the `[0, 1]` domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    GaussianNoise { sigma: f64, seed: u64 },
    GaussianBlur { sigma: f64 },
    Jpeg { quality: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianNoise,
    GaussianBlur,
    Jpeg,
}

impl PerturbationKind {
    /// The perturbation of this kind at `magnitude` (rounded for JPEG quality).
    pub fn at(self, magnitude: f64, seed: u64) -> Result<Perturbation> {
        let p = match self {
            PerturbationKind::GaussianNoise => Perturbation::GaussianNoise { sigma: magnitude, seed },
            PerturbationKind::GaussianBlur => Perturbation::GaussianBlur { sigma: magnitude },
            PerturbationKind::Jpeg => {
                if !(1.0..=100.0).contains(&magnitude) || magnitude.fract() != 0.0 {
                    return Err(Error::OutOfRange(format!("JPEG quality must be an integer in [1, 100], got {magnitude}")));
                }
                Perturbation::Jpeg { quality: magnitude as u8 }
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" | "gaussian_noise" => Ok(Self::GaussianNoise),
            "blur" | "gaussian_blur" => Ok(Self::GaussianBlur),
            "jpeg" => Ok(Self::Jpeg),
            other => Err(Error::InvalidInput(format!("unknown perturbation kind '{other}'"))),
        }
    }
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::GaussianNoise { sigma, .. } | Perturbation::GaussianBlur { sigma } => {
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::OutOfRange(format!("sigma must be finite and >= 0, got {sigma}")));
                }
            }
            Perturbation::Jpeg { quality } => {
                if !(1..=100).contains(&quality) {
                    return Err(Error::OutOfRange(format!("JPEG quality must lie in [1, 100], got {quality}")));
                }
            }
        }
        Ok(())
    }
}

/// Applies `p` to every frame. Noise draws one stream across all frames.
pub fn perturb(frames: &[Array2<f64>], p: &Perturbation) -> Result<Vec<Array2<f64>>> {
    p.validate()?;
    Ok(match *p {
        Perturbation::GaussianNoise { sigma, seed } => {
            if sigma == 0.0 {
                return Ok(frames.to_vec());
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::OutOfRange(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            frames
                .iter()
                .map(|f| f.mapv(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
                .collect()
        }
        Perturbation::GaussianBlur { sigma } => frames
            .iter()
            .map(|f| gaussian_blur(f, sigma).mapv(|v| v.clamp(0.0, 1.0)))
            .collect(),
        Perturbation::Jpeg { quality } => frames.iter().map(|f| jpeg_roundtrip(f, quality)).collect(),
    })
}

/// Perturbs every frame of every video; noise seeds are derived per video.
pub fn perturb_videos(videos: &[Video], p: &Perturbation) -> Result<Vec<Video>> {
    videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = match *p {
                Perturbation::GaussianNoise { sigma, seed } => Perturbation::GaussianNoise {
                    sigma,
                    seed: derive_seed(seed, i as u64),
                },
                other => other,
            };
            Ok(Video {
                frames: perturb(&v.frames, &p)?,
                label: v.label,
                source_id: v.source_id.clone(),
            })
        })
        .collect()
}

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance quantization table scaled to `quality` (IJG convention).
pub fn quant_table(quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(&LUMA_TABLE) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Quantize-dequantize round trip of a grayscale frame in `[0, 1]`:
/// edge padding to whole 8x8 blocks, level shift, orthonormal block DCT,
/// uniform quantization, inverse, and rounding to 8-bit levels.
pub fn jpeg_roundtrip(frame: &Array2<f64>, quality: u8) -> Array2<f64> {
    let table = quant_table(quality);
    let basis = dct_basis();
    let (rows, cols) = frame.dim();
    let (pr, pc) = (rows.div_ceil(8) * 8, cols.div_ceil(8) * 8);
    let mut out = Array2::<f64>::zeros((rows, cols));
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for br in (0..pr).step_by(8) {
        for bc in (0..pc).step_by(8) {
            for (i, row) in block.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let r = (br + i).min(rows - 1);
                    let c = (bc + j).min(cols - 1);
                    *v = frame[[r, c]].clamp(0.0, 1.0) * 255.0 - 128.0;
                }
            }
            // Forward: C = M X M^T.
            for k in 0..8 {
                for j in 0..8 {
                    tmp[k][j] = (0..8).map(|n| basis[k][n] * block[n][j]).sum();
                }
            }
            for k in 0..8 {
                for l in 0..8 {
                    let c: f64 = (0..8).map(|n| tmp[k][n] * basis[l][n]).sum();
                    let q = table[k * 8 + l];
                    block[k][l] = (c / q).round() * q;
                }
            }
            // Inverse: X = M^T C M.
            for n in 0..8 {
                for l in 0..8 {
                    tmp[n][l] = (0..8).map(|k| basis[k][n] * block[k][l]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let (r, c) = (br + i, bc + j);
                    if r < rows && c < cols {
                        let x: f64 = (0..8).map(|l| tmp[i][l] * basis[l][j]).sum();
                        out[[r, c]] = (x + 128.0).round().clamp(0.0, 255.0) / 255.0;
                    }
                }
            }
        }
    }
    out
}
