//! Digital front-end: a spatial-domain and a Fourier-domain convolutional
//! branch, fused per feature by a learned sigmoid gate, followed by an
//! affine head whose sigmoid output is scaled to a phase tile in `[0, 2pi)`.
//!
//! Frames are encoded independently of each other.

mod video;

pub use video::{sample_frames, sample_indices, standardize, to_grayscale, Video, VideoSample};

use std::f64::consts::TAU;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::fft::{fft2, fftshift};
use crate::muxlayout::{assemble_phase, MuxLayout, PhaseMap};
use crate::nn::{sigmoid, Conv2d, Dense, Maps};

/// Architecture hyperparameters. Fixed once parameters are created.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub frame_rows: usize,
    pub frame_cols: usize,
    /// Output channels of each stride-2 convolution, shared by both branches.
    pub channels: Vec<usize>,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl EncoderConfig {
    pub fn new(frame: (usize, usize), tile: (usize, usize)) -> Self {
        Self {
            frame_rows: frame.0,
            frame_cols: frame.1,
            channels: vec![8, 16, 16],
            tile_rows: tile.0,
            tile_cols: tile.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("encoder needs at least one non-empty conv layer".into()));
        }
        if self.frame_rows == 0 || self.frame_cols == 0 || self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(Error::InvalidConfig("encoder frame and tile sizes must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of the last feature maps.
    pub fn feature_shape(&self) -> (usize, usize) {
        self.channels.iter().fold((self.frame_rows, self.frame_cols), |(r, c), _| {
            (Conv2d::out_dim(r), Conv2d::out_dim(c))
        })
    }

    pub fn fused_len(&self) -> usize {
        let (r, c) = self.feature_shape();
        self.last_channels() * r * c
    }

    fn last_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }
}

/// Trainable encoder parameters. Also used as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    pub spatial: Vec<Conv2d>,
    pub fourier: Vec<Conv2d>,
    /// 1x1 convolution over the concatenated branch outputs (`2C -> C`).
    pub gate: Dense,
    pub head: Dense,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let convs = |cfg: &EncoderConfig| {
            let mut in_ch = 1;
            cfg.channels
                .iter()
                .map(|&out| {
                    let c = Conv2d::zeros(in_ch, out);
                    in_ch = out;
                    c
                })
                .collect::<Vec<_>>()
        };
        let c = config.last_channels();
        Ok(Self {
            spatial: convs(&config),
            fourier: convs(&config),
            gate: Dense::zeros(2 * c, c),
            head: Dense::zeros(config.fused_len(), config.tile_rows * config.tile_cols),
            config,
        })
    }

    /// Fan-in scaled uniform weights and zero biases, fixed by `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config)?;
        for branch in [&mut p.spatial, &mut p.fourier] {
            for conv in branch.iter_mut() {
                *conv = Conv2d::init(conv.in_ch, conv.out_ch, &mut rng);
            }
        }
        p.gate = Dense::init(p.gate.in_dim, p.gate.out_dim, &mut rng);
        p.head = Dense::init(p.head.in_dim, p.head.out_dim, &mut rng);
        Ok(p)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone()).expect("config already validated")
    }

    /// Named tensors in canonical order with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, branch) in [("spatial", &self.spatial), ("fourier", &self.fourier)] {
            for (l, conv) in branch.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), vec![conv.out_ch, conv.in_ch, 3, 3], &conv.weight[..]));
                out.push((format!("{name}.{l}.bias"), vec![conv.out_ch], &conv.bias[..]));
            }
        }
        for (name, d) in [("gate", &self.gate), ("head", &self.head)] {
            out.push((format!("{name}.weight"), vec![d.out_dim, d.in_dim], &d.weight[..]));
            out.push((format!("{name}.bias"), vec![d.out_dim], &d.bias[..]));
        }
        out
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for branch in [&mut self.spatial, &mut self.fourier] {
            for conv in branch.iter_mut() {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
            }
        }
        for d in [&mut self.gate, &mut self.head] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Whether a tensor (by canonical index) is a weight rather than a bias.
    pub fn is_weight(index: usize) -> bool {
        index % 2 == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|t| t.2.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    /// Floating-point operations to encode one frame (multiply-add = 2,
    /// spectrum transform at `5 n log2 n`).
    pub fn flops_per_frame(&self) -> u64 {
        let c = &self.config;
        let mut total = 0u64;
        for branch in [&self.spatial, &self.fourier] {
            let (mut r, mut col) = (c.frame_rows, c.frame_cols);
            for conv in branch {
                total += conv.flops(r, col);
                r = Conv2d::out_dim(r);
                col = Conv2d::out_dim(col);
            }
        }
        let n = (c.frame_rows * c.frame_cols) as f64;
        total += (5.0 * n * n.log2()).round() as u64;
        let (fr, fc) = c.feature_shape();
        total += self.gate.flops() * (fr * fc) as u64;
        total + self.head.flops()
    }
}

/// Activations of one frame's forward pass.
#[derive(Clone, Debug)]
pub struct FrameTape {
    spatial: Vec<Maps>,
    fourier: Vec<Maps>,
    gate: Vec<f64>,
    fused: Vec<f64>,
    squashed: Vec<f64>,
}

/// `log(1 + |centered spectrum|)` with orthonormal DFT scaling.
pub fn log_spectrum(frame: &Array2<f64>) -> Array2<f64> {
    let mut z = frame.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut z);
    let norm = (frame.len() as f64).sqrt();
    fftshift(&z).mapv(|v| (v.norm() / norm).ln_1p())
}

fn run_branch(convs: &[Conv2d], input: Maps) -> Vec<Maps> {
    let mut acts = vec![input];
    for conv in convs {
        let mut z = conv.forward(acts.last().expect("input"));
        z.data.iter_mut().for_each(|v| *v = v.tanh());
        acts.push(z);
    }
    acts
}

fn backward_branch(convs: &[Conv2d], acts: &[Maps], mut grad_out: Vec<f64>, grads: &mut [Conv2d]) {
    for l in (0..convs.len()).rev() {
        let a = &acts[l + 1];
        let dz = Maps {
            data: grad_out.iter().zip(&a.data).map(|(g, y)| g * (1.0 - y * y)).collect(),
            ..a.clone()
        };
        match convs[l].backward(&acts[l], &dz, &mut grads[l], l > 0) {
            Some(dx) => grad_out = dx.data,
            None => break,
        }
    }
}

fn squash_to_phase(s: f64) -> f64 {
    let p = s * TAU;
    if p >= TAU {
        TAU.next_down()
    } else {
        p
    }
}

/// Forward pass of one standardized frame, keeping activations.
pub fn encode_frame_tape(frame: &Array2<f64>, params: &EncoderParams) -> Result<(Array2<f64>, FrameTape)> {
    let cfg = &params.config;
    ensure_shape("encoder frame", frame.dim(), (cfg.frame_rows, cfg.frame_cols))?;
    let (rows, cols) = frame.dim();
    let plane = |a: Array2<f64>| Maps::from_plane(rows, cols, a.as_standard_layout().iter().copied().collect());
    let spatial = run_branch(&params.spatial, plane(frame.clone()));
    let fourier = run_branch(&params.fourier, plane(log_spectrum(frame)));

    let s_out = spatial.last().expect("branch output");
    let f_out = fourier.last().expect("branch output");
    let c = s_out.channels;
    let hw = s_out.plane_len();
    let mut gate = vec![0.0; c * hw];
    let mut fused = vec![0.0; c * hw];
    let mut cat = vec![0.0; 2 * c];
    for p in 0..hw {
        for ch in 0..c {
            cat[ch] = s_out.data[ch * hw + p];
            cat[c + ch] = f_out.data[ch * hw + p];
        }
        let z = params.gate.forward(&cat);
        for ch in 0..c {
            let g = sigmoid(z[ch]);
            gate[ch * hw + p] = g;
            fused[ch * hw + p] = g * cat[ch] + (1.0 - g) * cat[c + ch];
        }
    }
    let squashed: Vec<f64> = params.head.forward(&fused).into_iter().map(sigmoid).collect();
    let tile = Array2::from_shape_vec(
        (cfg.tile_rows, cfg.tile_cols),
        squashed.iter().map(|&s| squash_to_phase(s)).collect(),
    )
    .expect("head output matches tile");
    Ok((
        tile,
        FrameTape {
            spatial,
            fourier,
            gate,
            fused,
            squashed,
        },
    ))
}

/// Phase tile for one standardized frame, every value in `[0, 2pi)`.
pub fn encode_frame(frame: &Array2<f64>, params: &EncoderParams) -> Result<Array2<f64>> {
    Ok(encode_frame_tape(frame, params)?.0)
}

/// Accumulates into `grads` the parameter gradient of an objective whose
/// gradient with respect to this frame's phase tile is `grad_tile`.
pub fn backward_frame(params: &EncoderParams, tape: &FrameTape, grad_tile: &Array2<f64>, grads: &mut EncoderParams) {
    let dy: Vec<f64> = grad_tile
        .iter()
        .zip(&tape.squashed)
        .map(|(g, s)| g * TAU * s * (1.0 - s))
        .collect();
    let dfused = params.head.backward(&tape.fused, &dy, &mut grads.head);

    let s_out = tape.spatial.last().expect("branch output");
    let f_out = tape.fourier.last().expect("branch output");
    let c = s_out.channels;
    let hw = s_out.plane_len();
    let mut ds = vec![0.0; c * hw];
    let mut df = vec![0.0; c * hw];
    let mut cat = vec![0.0; 2 * c];
    let mut dz = vec![0.0; c];
    for p in 0..hw {
        for ch in 0..c {
            let i = ch * hw + p;
            let (s, f, g, d) = (s_out.data[i], f_out.data[i], tape.gate[i], dfused[i]);
            ds[i] = d * g;
            df[i] = d * (1.0 - g);
            dz[ch] = d * (s - f) * g * (1.0 - g);
            cat[ch] = s;
            cat[c + ch] = f;
        }
        let dcat = params.gate.backward(&cat, &dz, &mut grads.gate);
        for ch in 0..c {
            ds[ch * hw + p] += dcat[ch];
            df[ch * hw + p] += dcat[c + ch];
        }
    }
    backward_branch(&params.spatial, &tape.spatial, ds, &mut grads.spatial);
    backward_branch(&params.fourier, &tape.fourier, df, &mut grads.fourier);
}

/// Encodes every frame of every video and packs the tiles onto the modulator.
pub fn forward_batch(videos: &[VideoSample], params: &EncoderParams, layout: &MuxLayout) -> Result<PhaseMap> {
    check_batch(videos, params, layout)?;
    let tiles = videos
        .iter()
        .map(|v| v.frames.iter().map(|f| encode_frame(f, params)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    assemble_phase(&tiles, layout)
}

pub(crate) fn check_batch(videos: &[VideoSample], params: &EncoderParams, layout: &MuxLayout) -> Result<()> {
    if videos.len() != layout.videos() {
        return Err(Error::Shape(format!(
            "batch holds {} videos, layout multiplexes {}",
            videos.len(),
            layout.videos()
        )));
    }
    if let Some(v) = videos.iter().find(|v| v.frames.len() != layout.frames()) {
        return Err(Error::Shape(format!(
            "video '{}' has {} frames, layout expects {}",
            v.source_id,
            v.frames.len(),
            layout.frames()
        )));
    }
    let cfg = params.config();
    ensure_shape("encoder tile", (cfg.tile_rows, cfg.tile_cols), layout.tile_shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            frame_rows: 12,
            frame_cols: 10,
            channels: vec![3, 4],
            tile_rows: 5,
            tile_cols: 6,
        }
    }

    fn frame(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        standardize(&Array2::from_shape_fn((12, 10), |_| rng.gen::<f64>()))
    }

    #[test]
    fn zero_parameters_give_constant_pi() {
        let p = EncoderParams::zeros(cfg()).unwrap();
        let (tile, tape) = encode_frame_tape(&frame(1), &p).unwrap();
        assert!(tape.gate.iter().all(|&g| g == 0.5));
        assert!(tile.iter().all(|&v| v == std::f64::consts::PI));
    }

    #[test]
    fn output_range_even_when_saturated() {
        let mut p = EncoderParams::init(cfg(), 3).unwrap();
        p.head.bias.iter_mut().enumerate().for_each(|(i, b)| *b = if i % 2 == 0 { 1e4 } else { -1e4 });
        let tile = encode_frame(&frame(2), &p).unwrap();
        assert!(tile.iter().all(|&v| (0.0..TAU).contains(&v)));
    }

    #[test]
    fn shape_errors() {
        let p = EncoderParams::init(cfg(), 0).unwrap();
        assert!(matches!(encode_frame(&Array2::zeros((3, 3)), &p), Err(Error::Shape(_))));
        let mut bad = cfg();
        bad.channels.clear();
        assert!(EncoderParams::zeros(bad).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = EncoderParams::init(cfg(), 4).unwrap();
        let x = frame(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let probe = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
        let objective = |p: &EncoderParams| (&encode_frame(&x, p).unwrap() * &probe).sum();
        let (_, tape) = encode_frame_tape(&x, &p).unwrap();
        let mut g = p.zeros_like();
        backward_frame(&p, &tape, &probe, &mut g);
        let analytic: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.2.to_vec()).collect();
        let h = 1e-5;
        for (ti, t) in analytic.iter().enumerate() {
            for k in [0, t.len() / 2, t.len() - 1] {
                let mut q = p.clone();
                q.tensors_mut()[ti][k] += h;
                let up = objective(&q);
                q.tensors_mut()[ti][k] -= 2.0 * h;
                let dn = objective(&q);
                let fd = (up - dn) / (2.0 * h);
                let err = (fd - t[k]).abs() / fd.abs().max(t[k].abs()).max(1e-8);
                assert!(err < 1e-4, "tensor {ti} entry {k}: fd {fd} vs {}", t[k]);
            }
        }
    }

    #[test]
    fn every_parameter_receives_gradient_at_init() {
        let p = EncoderParams::init(cfg(), 9).unwrap();
        let (_, tape) = encode_frame_tape(&frame(10), &p).unwrap();
        let mut g = p.zeros_like();
        backward_frame(&p, &tape, &Array2::from_elem((5, 6), 1.0), &mut g);
        for (name, _, t) in g.tensors() {
            assert!(t.iter().all(|v| v.is_finite()));
            assert!(t.iter().any(|&v| v != 0.0), "{name} has an all-zero gradient");
        }
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let p = EncoderParams::init(EncoderConfig::new((32, 32), (64, 64)), 0).unwrap();
        // 2 * (8*9+8 + 16*8*9+16 + 16*16*9+16) + (32*16+16) + (256*4096+4096)
        let conv = 8 * 9 + 8 + 16 * 8 * 9 + 16 + 16 * 16 * 9 + 16;
        assert_eq!(p.parameter_count(), 2 * conv + 32 * 16 + 16 + 256 * 4096 + 4096);
    }
}
