//! Minimal reverse-mode building blocks: strided 3x3 convolution, dense
//! layer, smooth activations and a decoupled-weight-decay Adam optimizer.
//! Everything is `f64` so finite-difference checks stay tight.

use rand::Rng;

/// Channel-major stack of feature maps, `data[(ch * rows + r) * cols + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Maps {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Maps {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_plane(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            channels: 1,
            rows,
            cols,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target` in {0, 1}.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    (1.0 - target) * logit + softplus(-logit)
}

/// 3x3 convolution, stride 2, zero padding 1. Weight layout `[out][in][3][3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(in_ch, out_ch);
        let bound = 1.0 / ((in_ch * 9) as f64).sqrt();
        c.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        c
    }

    pub fn out_dim(n: usize) -> usize {
        n.div_ceil(2)
    }

    pub fn forward(&self, x: &Maps) -> Maps {
        debug_assert_eq!(x.channels, self.in_ch);
        let (oh, ow) = (Self::out_dim(x.rows), Self::out_dim(x.cols));
        let mut out = Maps::zeros(self.out_ch, oh, ow);
        for o in 0..self.out_ch {
            let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_ch {
                let src = &x.data[i * x.plane_len()..(i + 1) * x.plane_len()];
                let w = &self.weight[(o * self.in_ch + i) * 9..(o * self.in_ch + i + 1) * 9];
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            let r = (2 * y + ky) as isize - 1;
                            if r < 0 || r >= x.rows as isize {
                                continue;
                            }
                            let row = &src[r as usize * x.cols..(r as usize + 1) * x.cols];
                            for kx in 0..3 {
                                let c = (2 * xo + kx) as isize - 1;
                                if c >= 0 && c < x.cols as isize {
                                    acc += w[ky * 3 + kx] * row[c as usize];
                                }
                            }
                        }
                        plane[y * ow + xo] += acc;
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `input_grad` is set.
    pub fn backward(&self, x: &Maps, dout: &Maps, grad: &mut Conv2d, input_grad: bool) -> Option<Maps> {
        let (oh, ow) = (dout.rows, dout.cols);
        let mut dx = input_grad.then(|| Maps::zeros(x.channels, x.rows, x.cols));
        for o in 0..self.out_ch {
            let dplane = &dout.data[o * oh * ow..(o + 1) * oh * ow];
            grad.bias[o] += dplane.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let base = (o * self.in_ch + i) * 9;
                let src = &x.data[i * x.plane_len()..(i + 1) * x.plane_len()];
                for y in 0..oh {
                    for xo in 0..ow {
                        let d = dplane[y * ow + xo];
                        if d == 0.0 {
                            continue;
                        }
                        for ky in 0..3 {
                            let r = (2 * y + ky) as isize - 1;
                            if r < 0 || r >= x.rows as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let c = (2 * xo + kx) as isize - 1;
                                if c < 0 || c >= x.cols as isize {
                                    continue;
                                }
                                let idx = r as usize * x.cols + c as usize;
                                grad.weight[base + ky * 3 + kx] += d * src[idx];
                                if let Some(dx) = dx.as_mut() {
                                    dx.data[i * x.plane_len() + idx] += d * self.weight[base + ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn flops(&self, in_rows: usize, in_cols: usize) -> u64 {
        let out = (Self::out_dim(in_rows) * Self::out_dim(in_cols)) as u64;
        2 * 9 * (self.in_ch * self.out_ch) as u64 * out
    }
}

/// Affine map `y = W x + b`, weight layout `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(in_dim, out_dim);
        let bound = 1.0 / (in_dim as f64).sqrt();
        d.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        d
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for ((g, w), (xi, dxi)) in grow.iter_mut().zip(row).zip(x.iter().zip(dx.iter_mut())) {
                *g += d * xi;
                *dxi += d * w;
            }
        }
        dx
    }

    pub fn flops(&self) -> u64 {
        2 * (self.in_dim * self.out_dim) as u64
    }
}

/// Adam with decoupled weight decay. One moment buffer per parameter tensor.
/// A tensor can share one second-moment estimate across all its entries,
/// which keeps the relative step sizes of its entries proportional to their
/// gradients.
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect(),
        }
    }

    /// Switches tensor `k` to a single shared second moment (mean of `g^2`).
    pub fn share_second_moment(mut self, k: usize) -> Self {
        self.moments[k].1 = vec![0.0];
        self
    }

    /// Updates tensors whose `lr` entry is positive; others are left untouched.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: &[f64], weight_decay: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.into_iter().enumerate() {
            if lr[k] <= 0.0 {
                continue;
            }
            let (m, v) = &mut self.moments[k];
            let g = grads[k];
            if v.len() == 1 && p.len() != 1 {
                let ms = g.iter().map(|g| g * g).sum::<f64>() / g.len().max(1) as f64;
                v[0] = self.beta2 * v[0] + (1.0 - self.beta2) * ms;
                let denom = (v[0] / c2).sqrt() + self.eps;
                for ((x, &g), m) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *x -= lr[k] * ((*m / c1) / denom + weight_decay[k] * *x);
                }
                continue;
            }
            for (((x, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *x -= lr[k] * (update + weight_decay[k] * *x);
            }
        }
    }
}

/// Cosine decay from `base` at step 0 towards 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let t = step as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
