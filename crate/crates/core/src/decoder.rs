//! Digital twin of the optical decoder: unit-amplitude illumination of the
//! modulator, free-space hops interleaved with phase-only diffractive layers,
//! sensor sampling, and differential scoring.

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::imgproc::gaussian_blur;
use crate::muxlayout::{readout_shifted, shifted_ranges, MuxLayout, PhaseMap};
use crate::wavefield::{pad_offset, TransferFunction};
use crate::Label;

/// Numerical options of the simulated optics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    /// Zero-padding factor of the propagation grid (1 or 2).
    pub pad_factor: usize,
    /// Apply the anti-aliasing band limit on every hop.
    pub band_limit: bool,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            pad_factor: 2,
            band_limit: true,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.pad_factor, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "pad_factor must be 1 or 2, got {}",
                self.pad_factor
            )));
        }
        Ok(())
    }
}

/// `K` phase-only layers and the `K + 1` distances around them
/// (`d_0` modulator to first layer, ..., `d_K` last layer to sensor).
/// Layer phases are stored unconstrained; [`DiffractiveStack::wrapped_layers`]
/// maps them into `[0, 2pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffractiveStack {
    layers: Vec<Array2<f64>>,
    distances: Vec<f64>,
}

impl DiffractiveStack {
    pub fn new(layers: Vec<Array2<f64>>, distances: Vec<f64>) -> Result<Self> {
        if distances.len() != layers.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} layers need {} distances, got {}",
                layers.len(),
                layers.len() + 1,
                distances.len()
            )));
        }
        if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidConfig(format!("distance {d} must be positive")));
        }
        if let Some(first) = layers.first() {
            if layers.iter().any(|l| l.dim() != first.dim()) {
                return Err(Error::Shape("diffractive layers differ in size".into()));
            }
        }
        if layers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("layer phase is not finite".into()));
        }
        Ok(Self { layers, distances })
    }

    /// `K = 0`: a single free-space hop.
    pub fn free_space(distance: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![distance])
    }

    /// `K` flat layers splitting `total_distance` into `K + 1` equal hops.
    pub fn flat(k: usize, shape: (usize, usize), total_distance: f64) -> Result<Self> {
        let hop = total_distance / (k + 1) as f64;
        Self::new(vec![Array2::zeros(shape); k], vec![hop; k + 1])
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.layers
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn total_distance(&self) -> f64 {
        self.distances.iter().sum()
    }

    pub fn wrapped_layers(&self) -> Vec<Array2<f64>> {
        self.layers.iter().map(|l| l.mapv(crate::wrap_phase)).collect()
    }
}

/// Area-weighted box integration from the propagation grid onto sensor
/// pixels. Separable: one weight list per sensor row and per sensor column.
#[derive(Clone, Debug)]
pub struct SensorResampler {
    source: (usize, usize),
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SensorResampler {
    pub fn new(layout: &MuxLayout) -> Self {
        let c = layout.config();
        // Sensor pixel footprint measured in modulator pixels.
        let ratio = c.sensor_pitch / c.sensor_scale / c.slm_pitch;
        Self {
            source: layout.slm_shape(),
            rows: axis_weights(c.slm_rows, c.sensor_rows, ratio),
            cols: axis_weights(c.slm_cols, c.sensor_cols, ratio),
        }
    }

    pub fn sensor_shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn forward(&self, img: &Array2<f64>) -> Array2<f64> {
        let mut tmp = Array2::<f64>::zeros((self.rows.len(), self.source.1));
        for (sr, w) in self.rows.iter().enumerate() {
            let mut dst = tmp.row_mut(sr);
            for &(r, wt) in w {
                dst.scaled_add(wt, &img.row(r));
            }
        }
        let mut out = Array2::<f64>::zeros(self.sensor_shape());
        for (sc, w) in self.cols.iter().enumerate() {
            for sr in 0..self.rows.len() {
                out[[sr, sc]] = w.iter().map(|&(c, wt)| wt * tmp[[sr, c]]).sum();
            }
        }
        out
    }

    pub fn adjoint(&self, grad: &Array2<f64>) -> Array2<f64> {
        let mut tmp = Array2::<f64>::zeros((self.rows.len(), self.source.1));
        for (sc, w) in self.cols.iter().enumerate() {
            for sr in 0..self.rows.len() {
                let g = grad[[sr, sc]];
                if g != 0.0 {
                    for &(c, wt) in w {
                        tmp[[sr, c]] += wt * g;
                    }
                }
            }
        }
        let mut out = Array2::<f64>::zeros(self.source);
        for (sr, w) in self.rows.iter().enumerate() {
            for &(r, wt) in w {
                out.row_mut(r).scaled_add(wt, &tmp.row(sr));
            }
        }
        out
    }
}

fn axis_weights(source: usize, sensor: usize, ratio: f64) -> Vec<Vec<(usize, f64)>> {
    (0..sensor)
        .map(|k| {
            let a = source as f64 / 2.0 + (k as f64 - sensor as f64 / 2.0) * ratio;
            let b = a + ratio;
            let lo = a.floor().max(0.0) as usize;
            let hi = (b.ceil().max(0.0) as usize).min(source);
            (lo..hi)
                .filter_map(|j| {
                    let overlap = b.min(j as f64 + 1.0) - a.max(j as f64);
                    (overlap > 0.0).then_some((j, overlap))
                })
                .collect()
        })
        .collect()
}

/// Intermediate fields of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DecodeTape {
    modulator: Array2<Complex64>,
    after_layers: Vec<Array2<Complex64>>,
    output: Array2<Complex64>,
    pub sensor: Array2<f64>,
}

/// A decoder bound to one layout, hop geometry and axial offset. The
/// transfer functions are precomputed; layer phases are passed per call.
#[derive(Clone, Debug)]
pub struct OpticalDecoder {
    slm: (usize, usize),
    padded: (usize, usize),
    offset: (usize, usize),
    hops: Vec<TransferFunction>,
    resampler: SensorResampler,
    illumination: Option<Array2<f64>>,
}

impl OpticalDecoder {
    /// `axial_shift` is added to the final hop (sensor-side defocus).
    pub fn new(
        layout: &MuxLayout,
        stack: &DiffractiveStack,
        optics: &OpticsConfig,
        axial_shift: f64,
    ) -> Result<Self> {
        optics.validate()?;
        let slm = layout.slm_shape();
        let cfg = layout.config();
        let pad = optics.pad_factor;
        let padded = (slm.0 * pad, slm.1 * pad);
        let k = stack.depth();
        let hops = stack
            .distances()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let d = if i == k { d + axial_shift } else { d };
                TransferFunction::new(
                    padded.0,
                    padded.1,
                    cfg.slm_pitch,
                    cfg.wavelength,
                    d,
                    optics.band_limit,
                )
            })
            .collect();
        Ok(Self {
            slm,
            padded,
            offset: pad_offset(slm.0, slm.1, pad),
            hops,
            resampler: SensorResampler::new(layout),
            illumination: None,
        })
    }

    /// Replaces the ideal plane wave with a per-pixel amplitude map.
    pub fn with_illumination(mut self, amplitude: Array2<f64>) -> Result<Self> {
        ensure_shape("illumination map", amplitude.dim(), self.slm)?;
        self.illumination = Some(amplitude);
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.hops.len() - 1
    }

    fn check_stack(&self, stack: &DiffractiveStack) -> Result<()> {
        if stack.depth() != self.depth() {
            return Err(Error::Shape(format!(
                "decoder built for K = {}, stack has K = {}",
                self.depth(),
                stack.depth()
            )));
        }
        for l in stack.layers() {
            ensure_shape("diffractive layer", l.dim(), self.slm)?;
        }
        Ok(())
    }

    fn pad(&self, a: &Array2<Complex64>) -> Array2<Complex64> {
        let (r0, c0) = self.offset;
        let mut p = Array2::zeros(self.padded);
        p.slice_mut(s![r0..r0 + self.slm.0, c0..c0 + self.slm.1]).assign(a);
        p
    }

    fn crop(&self, a: &Array2<Complex64>) -> Array2<Complex64> {
        let (r0, c0) = self.offset;
        a.slice(s![r0..r0 + self.slm.0, c0..c0 + self.slm.1]).to_owned()
    }

    fn apply_layer(&self, field: &mut Array2<Complex64>, layer: &Array2<f64>, conj: bool) {
        let (r0, c0) = self.offset;
        let sign = if conj { -1.0 } else { 1.0 };
        let mut centre = field.slice_mut(s![r0..r0 + self.slm.0, c0..c0 + self.slm.1]);
        Zip::from(&mut centre)
            .and(layer)
            .for_each(|z, &t| *z *= Complex64::from_polar(1.0, sign * t));
    }

    /// Runs the modulator field through every hop; returns the padded fields
    /// after each layer and the final padded field.
    fn run(
        &self,
        modulator: &Array2<Complex64>,
        stack: &DiffractiveStack,
    ) -> (Vec<Array2<Complex64>>, Array2<Complex64>) {
        let mut field = self.pad(modulator);
        self.hops[0].forward_in_place(&mut field);
        let mut after_layers = Vec::with_capacity(stack.depth());
        for (layer, hop) in stack.layers().iter().zip(&self.hops[1..]) {
            self.apply_layer(&mut field, layer, false);
            after_layers.push(field.clone());
            hop.forward_in_place(&mut field);
        }
        (after_layers, field)
    }

    fn modulator_field(&self, phase: &Array2<f64>) -> Array2<Complex64> {
        match &self.illumination {
            None => phase.mapv(|p| Complex64::from_polar(1.0, p)),
            Some(a) => Array2::from_shape_fn(self.slm, |ix| Complex64::from_polar(a[ix], phase[ix])),
        }
    }

    /// Forward pass keeping what the backward pass needs. `phase` may hold
    /// any real values (it need not be wrapped).
    pub fn forward(&self, phase: &Array2<f64>, stack: &DiffractiveStack) -> Result<DecodeTape> {
        ensure_shape("phase map", phase.dim(), self.slm)?;
        self.check_stack(stack)?;
        let modulator = self.modulator_field(phase);
        let (after_layers, last) = self.run(&modulator, stack);
        let output = self.crop(&last);
        let sensor = self.resampler.forward(&output.mapv(|z| z.norm_sqr()));
        Ok(DecodeTape {
            modulator,
            after_layers,
            output,
            sensor,
        })
    }

    /// Sensor image only.
    pub fn sensor_image(&self, phase: &Array2<f64>, stack: &DiffractiveStack) -> Result<Array2<f64>> {
        Ok(self.forward(phase, stack)?.sensor)
    }

    /// Gradients of a real objective with respect to the modulator phase and
    /// every layer phase, given its gradient with respect to the sensor image.
    pub fn backward(
        &self,
        tape: &DecodeTape,
        stack: &DiffractiveStack,
        grad_sensor: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        ensure_shape("sensor gradient", grad_sensor.dim(), self.resampler.sensor_shape())?;
        self.check_stack(stack)?;
        let grad_intensity = self.resampler.adjoint(grad_sensor);
        // d|z|^2 -> 2 z dI (Wirtinger convention: g = dL/dRe + i dL/dIm).
        let grad_out = Zip::from(&tape.output)
            .and(&grad_intensity)
            .map_collect(|z, &g| *z * (2.0 * g));
        let mut g = self.pad(&grad_out);
        let (r0, c0) = self.offset;
        let k = stack.depth();
        let mut layer_grads = vec![Array2::<f64>::zeros(self.slm); k];
        for idx in (0..k).rev() {
            self.hops[idx + 1].adjoint_in_place(&mut g);
            let z = tape.after_layers[idx].slice(s![r0..r0 + self.slm.0, c0..c0 + self.slm.1]);
            let gc = g.slice(s![r0..r0 + self.slm.0, c0..c0 + self.slm.1]);
            layer_grads[idx] = Zip::from(&z).and(&gc).map_collect(|z, g| (z.conj() * g).im);
            self.apply_layer(&mut g, &stack.layers()[idx], true);
        }
        self.hops[0].adjoint_in_place(&mut g);
        let g0 = self.crop(&g);
        let grad_phase = Zip::from(&tape.modulator)
            .and(&g0)
            .map_collect(|z, g| (z.conj() * g).im);
        Ok((grad_phase, layer_grads))
    }

    /// Propagates an arbitrary complex modulator field. Returns the sensor
    /// image and the total energy of the (padded) output plane.
    pub fn propagate_field(
        &self,
        modulator: &Array2<Complex64>,
        stack: &DiffractiveStack,
    ) -> Result<(Array2<f64>, f64)> {
        ensure_shape("modulator field", modulator.dim(), self.slm)?;
        self.check_stack(stack)?;
        let (_, last) = self.run(modulator, stack);
        let energy = last.iter().map(|z| z.norm_sqr()).sum();
        let sensor = self.resampler.forward(&self.crop(&last).mapv(|z| z.norm_sqr()));
        Ok((sensor, energy))
    }
}

/// Sensor intensity for a phase map under unit plane-wave illumination.
pub fn decode(
    phase: &PhaseMap,
    stack: &DiffractiveStack,
    layout: &MuxLayout,
    optics: &OpticsConfig,
) -> Result<Array2<f64>> {
    OpticalDecoder::new(layout, stack, optics, 0.0)?.sensor_image(phase.values(), stack)
}

/// Differential detector reading of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: usize,
    pub i_plus: f64,
    pub i_minus: f64,
    pub score: f64,
    pub decision: Label,
}

/// `(I+ - I-) / (I+ + I-)`, or 0 when both detectors are dark.
pub fn normalized_score(i_plus: f64, i_minus: f64) -> f64 {
    let total = i_plus + i_minus;
    if total > 0.0 {
        (i_plus - i_minus) / total
    } else {
        0.0
    }
}

/// Fake iff the score is strictly positive.
pub fn decide(score: f64) -> Label {
    if score > 0.0 {
        Label::Fake
    } else {
        Label::Real
    }
}

pub fn score_channels(image: &Array2<f64>, layout: &MuxLayout) -> Result<Vec<ChannelScore>> {
    score_channels_shifted(image, layout, (0, 0))
}

pub fn score_channels_shifted(
    image: &Array2<f64>,
    layout: &MuxLayout,
    shift: (i64, i64),
) -> Result<Vec<ChannelScore>> {
    Ok(readout_shifted(image, layout, shift)?
        .into_iter()
        .enumerate()
        .map(|(channel, (i_plus, i_minus))| {
            let score = normalized_score(i_plus, i_minus);
            ChannelScore {
                channel,
                i_plus,
                i_minus,
                score,
                decision: decide(score),
            }
        })
        .collect())
}

/// Sensor-image gradient of an objective given its gradient with respect to
/// each channel's normalized score.
pub(crate) fn score_gradient_to_sensor(
    scores: &[ChannelScore],
    grad_scores: &[f64],
    layout: &MuxLayout,
    shift: (i64, i64),
) -> Array2<f64> {
    let dim = layout.sensor_shape();
    let mut g = Array2::<f64>::zeros(dim);
    for ((cs, &gs), det) in scores.iter().zip(grad_scores).zip(layout.detectors()) {
        let total = cs.i_plus + cs.i_minus;
        if total <= 0.0 || gs == 0.0 {
            continue;
        }
        let d_plus = gs * 2.0 * cs.i_minus / (total * total);
        let d_minus = -gs * 2.0 * cs.i_plus / (total * total);
        for (rect, d) in [(det.positive, d_plus), (det.negative, d_minus)] {
            if let Some((rr, cc)) = shifted_ranges(&rect, shift, dim) {
                g.slice_mut(s![rr, cc]).mapv_inplace(|x| x + d / rect.area() as f64);
            }
        }
    }
    g
}

/// Flat-field correction: divides `raw` by the blurred, mean-normalized
/// reference. Reference values are floored at a tiny positive level.
pub fn illumination_correct(raw: &Array2<f64>, flat_reference: &Array2<f64>, blur_sigma: f64) -> Result<Array2<f64>> {
    ensure_shape("flat reference", flat_reference.dim(), raw.dim())?;
    let blurred = gaussian_blur(flat_reference, blur_sigma);
    let peak = blurred.iter().cloned().fold(0.0_f64, f64::max);
    let floor = (peak * 1e-12).max(f64::MIN_POSITIVE);
    let blurred = blurred.mapv(|v| v.max(floor));
    let mean = blurred.mean().unwrap_or(1.0);
    Ok(Zip::from(raw)
        .and(&blurred)
        .map_collect(|&r, &b| r / (b / mean)))
}

/// Floating-point operation count of one decode pass: a 2D transform of
/// `R x C` points costs `5 R C log2(R C)`, a complex multiply 6, and a
/// squared magnitude 3 per pixel. Each hop is transform, transfer-function
/// multiply and inverse transform on the padded grid; each layer adds one
/// phase multiply; the intensity is taken on the modulator-sized crop.
pub fn flops_decode(layout: &MuxLayout, stack: &DiffractiveStack, optics: &OpticsConfig) -> u64 {
    let (r, c) = layout.slm_shape();
    let p = (r * optics.pad_factor * c * optics.pad_factor) as f64;
    let transform = 5.0 * p * p.log2();
    let k = stack.depth() as f64;
    let hops = k + 1.0;
    let total = hops * (2.0 * transform + 6.0 * p) + k * 6.0 * p + 3.0 * (r * c) as f64;
    total.round() as u64
}
