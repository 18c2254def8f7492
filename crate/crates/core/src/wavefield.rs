//! Scalar coherent wave optics: field container, phase modulation, and
//! angular-spectrum free-space propagation with its adjoint.
//!
//! Lengths are in micrometers throughout.

use std::f64::consts::PI;
use std::sync::Once;

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::fft::{fft2, freq_index, ifft2};

/// A sampled complex optical amplitude on a square-pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    amplitude: Array2<Complex64>,
    pitch: f64,
    wavelength: f64,
}

impl Field {
    pub fn new(amplitude: Array2<Complex64>, pitch: f64, wavelength: f64) -> Result<Self> {
        let (rows, cols) = amplitude.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("field grid must be at least 1x1".into()));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::InvalidInput(format!("pitch must be positive, got {pitch}")));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::InvalidInput(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if amplitude.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidInput("field contains non-finite amplitude".into()));
        }
        Ok(Self {
            amplitude,
            pitch,
            wavelength,
        })
    }

    pub fn zeros(rows: usize, cols: usize, pitch: f64, wavelength: f64) -> Result<Self> {
        Self::new(Array2::zeros((rows, cols)), pitch, wavelength)
    }

    pub fn rows(&self) -> usize {
        self.amplitude.nrows()
    }

    pub fn cols(&self) -> usize {
        self.amplitude.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.amplitude.dim()
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn amplitude(&self) -> &Array2<Complex64> {
        &self.amplitude
    }

    pub fn into_amplitude(self) -> Array2<Complex64> {
        self.amplitude
    }

    /// Sum of `|amplitude|^2` over the grid.
    pub fn energy(&self) -> f64 {
        self.amplitude.iter().map(|z| z.norm_sqr()).sum()
    }

    fn with_amplitude(&self, amplitude: Array2<Complex64>) -> Self {
        Self {
            amplitude,
            pitch: self.pitch,
            wavelength: self.wavelength,
        }
    }
}

/// Parameters of one free-space hop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPlan {
    /// Axial distance; negative values back-propagate.
    pub distance: f64,
    /// Zero spatial frequencies beyond the anti-aliasing bound.
    pub band_limit: bool,
    /// Zero-padding factor (1 or 2) applied before the transform.
    pub pad_factor: usize,
}

impl PropagationPlan {
    pub fn new(distance: f64) -> Self {
        Self {
            distance,
            band_limit: false,
            pad_factor: 1,
        }
    }

    pub fn band_limited(mut self, on: bool) -> Self {
        self.band_limit = on;
        self
    }

    pub fn padded(mut self, pad_factor: usize) -> Self {
        self.pad_factor = pad_factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.distance.is_finite() {
            return Err(Error::InvalidInput("propagation distance must be finite".into()));
        }
        if !matches!(self.pad_factor, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "pad_factor must be 1 or 2, got {}",
                self.pad_factor
            )));
        }
        Ok(())
    }
}

static UNDERSAMPLED: Once = Once::new();

/// Returns a diagnostic when the grid cannot represent every propagating
/// plane wave (pitch coarser than half a wavelength).
pub fn sampling_diagnostic(pitch: f64, wavelength: f64) -> Option<String> {
    (pitch > wavelength / 2.0).then(|| {
        format!(
            "pitch {pitch} um exceeds wavelength/2 = {} um; high-angle propagating waves are not sampled",
            wavelength / 2.0
        )
    })
}

/// Angular-spectrum transfer function sampled on an unshifted DFT grid.
#[derive(Clone, Debug)]
pub struct TransferFunction {
    values: Array2<Complex64>,
    distance: f64,
}

impl TransferFunction {
    pub fn new(
        rows: usize,
        cols: usize,
        pitch: f64,
        wavelength: f64,
        distance: f64,
        band_limit: bool,
    ) -> Self {
        let inv_wl2 = 1.0 / (wavelength * wavelength);
        let dfy = 1.0 / (rows as f64 * pitch);
        let dfx = 1.0 / (cols as f64 * pitch);
        let limit = |df: f64| {
            if band_limit {
                1.0 / (wavelength * ((2.0 * df * distance).powi(2) + 1.0).sqrt())
            } else {
                f64::INFINITY
            }
        };
        let (fy_max, fx_max) = (limit(dfy), limit(dfx));

        let fy: Vec<f64> = (0..rows).map(|k| freq_index(k, rows) * dfy).collect();
        let fx: Vec<f64> = (0..cols).map(|k| freq_index(k, cols) * dfx).collect();

        let values = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let (fy, fx) = (fy[r], fx[c]);
            if fy.abs() > fy_max || fx.abs() > fx_max {
                return Complex64::default();
            }
            let arg = inv_wl2 - fx * fx - fy * fy;
            if arg < 0.0 {
                return Complex64::default();
            }
            Complex64::from_polar(1.0, 2.0 * PI * distance * arg.sqrt())
        });
        Self { values, distance }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// Propagates `a` in place on its own grid (no padding).
    pub(crate) fn forward_in_place(&self, a: &mut Array2<Complex64>) {
        fft2(a);
        Zip::from(&mut *a).and(&self.values).for_each(|x, h| *x *= h);
        ifft2(a);
    }

    /// Conjugate-transpose of [`Self::forward_in_place`].
    pub(crate) fn adjoint_in_place(&self, a: &mut Array2<Complex64>) {
        fft2(a);
        Zip::from(&mut *a).and(&self.values).for_each(|x, h| *x *= h.conj());
        ifft2(a);
    }
}

/// A propagation plan bound to one grid geometry, with its transfer
/// function precomputed. Immutable and safe to share between threads.
#[derive(Clone, Debug)]
pub struct Propagator {
    plan: PropagationPlan,
    rows: usize,
    cols: usize,
    pitch: f64,
    wavelength: f64,
    transfer: TransferFunction,
}

impl Propagator {
    pub fn new(
        rows: usize,
        cols: usize,
        pitch: f64,
        wavelength: f64,
        plan: PropagationPlan,
    ) -> Result<Self> {
        plan.validate()?;
        if rows == 0 || cols == 0 || !(pitch > 0.0) || !(wavelength > 0.0) {
            return Err(Error::InvalidInput("invalid propagation grid".into()));
        }
        if let Some(msg) = sampling_diagnostic(pitch, wavelength) {
            UNDERSAMPLED.call_once(|| log::warn!("{msg}"));
        }
        let transfer = TransferFunction::new(
            rows * plan.pad_factor,
            cols * plan.pad_factor,
            pitch,
            wavelength,
            plan.distance,
            plan.band_limit,
        );
        Ok(Self {
            plan,
            rows,
            cols,
            pitch,
            wavelength,
            transfer,
        })
    }

    pub fn for_field(field: &Field, plan: PropagationPlan) -> Result<Self> {
        Self::new(field.rows(), field.cols(), field.pitch(), field.wavelength(), plan)
    }

    pub fn plan(&self) -> &PropagationPlan {
        &self.plan
    }

    pub fn forward(&self, field: &Field) -> Result<Field> {
        self.check(field)?;
        Ok(field.with_amplitude(self.run(field.amplitude(), false)))
    }

    pub fn adjoint(&self, field: &Field) -> Result<Field> {
        self.check(field)?;
        Ok(field.with_amplitude(self.run(field.amplitude(), true)))
    }

    fn check(&self, field: &Field) -> Result<()> {
        ensure_shape("propagation grid", field.dim(), (self.rows, self.cols))?;
        if field.pitch() != self.pitch || field.wavelength() != self.wavelength {
            return Err(Error::InvalidInput(
                "field pitch/wavelength differ from the propagator's".into(),
            ));
        }
        Ok(())
    }

    fn run(&self, input: &Array2<Complex64>, adjoint: bool) -> Array2<Complex64> {
        let pad = self.plan.pad_factor;
        let (rows, cols) = (self.rows, self.cols);
        let (r0, c0) = pad_offset(rows, cols, pad);
        let mut work = if pad == 1 {
            input.clone()
        } else {
            let mut p = Array2::zeros((rows * pad, cols * pad));
            p.slice_mut(s![r0..r0 + rows, c0..c0 + cols]).assign(input);
            p
        };
        if adjoint {
            self.transfer.adjoint_in_place(&mut work);
        } else {
            self.transfer.forward_in_place(&mut work);
        }
        if pad == 1 {
            work
        } else {
            work.slice(s![r0..r0 + rows, c0..c0 + cols]).to_owned()
        }
    }
}

/// Top-left offset of an `rows x cols` grid centered inside its padded copy.
pub fn pad_offset(rows: usize, cols: usize, pad_factor: usize) -> (usize, usize) {
    ((rows * pad_factor - rows) / 2, (cols * pad_factor - cols) / 2)
}

/// Field at axial offset `plan.distance`.
pub fn propagate(field: &Field, plan: PropagationPlan) -> Result<Field> {
    Propagator::for_field(field, plan)?.forward(field)
}

/// Adjoint of [`propagate`] applied to `cotangent`.
pub fn propagate_adjoint(cotangent: &Field, plan: PropagationPlan) -> Result<Field> {
    Propagator::for_field(cotangent, plan)?.adjoint(cotangent)
}

/// Multiplies each amplitude by `exp(i * phase)`.
pub fn apply_phase(field: &Field, phase: &Array2<f64>) -> Result<Field> {
    ensure_shape("phase grid", phase.dim(), field.dim())?;
    let mut out = field.amplitude().clone();
    Zip::from(&mut out)
        .and(phase)
        .for_each(|z, &p| *z *= Complex64::from_polar(1.0, p));
    Ok(field.with_amplitude(out))
}

/// Element-wise `|amplitude|^2`.
pub fn intensity(field: &Field) -> Array2<f64> {
    field.amplitude().mapv(|z| z.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const WL: f64 = 0.52;

    fn random_field(rows: usize, cols: usize, pitch: f64, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Field::new(a, pitch, WL).unwrap()
    }

    fn rel_diff(a: &Field, b: &Field) -> f64 {
        let num: f64 = a
            .amplitude()
            .iter()
            .zip(b.amplitude())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        (num / b.energy().max(f64::MIN_POSITIVE)).sqrt()
    }

    fn inner(a: &Field, b: &Field) -> Complex64 {
        a.amplitude()
            .iter()
            .zip(b.amplitude())
            .map(|(x, y)| x * y.conj())
            .sum()
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(Field::zeros(0, 3, 1.0, WL).is_err());
        assert!(Field::zeros(2, 2, 0.0, WL).is_err());
        assert!(Field::zeros(2, 2, 1.0, -1.0).is_err());
        let mut a = Array2::zeros((2, 2));
        a[[0, 1]] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(Field::new(a, 1.0, WL), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_field_stays_zero() {
        let f = Field::zeros(16, 12, 8.0, WL).unwrap();
        let out = propagate(&f, PropagationPlan::new(1234.0).padded(2).band_limited(true)).unwrap();
        assert!(out.amplitude().iter().all(|z| *z == Complex64::default()));
    }

    #[test]
    fn zero_distance_is_identity() {
        let f = random_field(24, 20, 8.0, 1);
        let out = propagate(&f, PropagationPlan::new(0.0)).unwrap();
        assert!(rel_diff(&out, &f) < 1e-12);
        let back = propagate_adjoint(&f, PropagationPlan::new(0.0)).unwrap();
        assert!(rel_diff(&back, &f) < 1e-12);
    }

    #[test]
    fn unitary_without_band_limit() {
        for (n, seed) in [(32, 2), (64, 3), (100, 4)] {
            let f = random_field(n, n + 6, 8.0, seed);
            let out = propagate(&f, PropagationPlan::new(25_000.0)).unwrap();
            assert!((out.energy() - f.energy()).abs() / f.energy() < 1e-9);
        }
    }

    #[test]
    fn band_limit_never_adds_energy() {
        let f = random_field(64, 64, 8.0, 5);
        let out = propagate(&f, PropagationPlan::new(200_000.0).band_limited(true)).unwrap();
        assert!(out.energy() <= f.energy() * (1.0 + 1e-12));
        assert!(out.energy() < f.energy() * 0.999, "long hop should clip aliased band");
    }

    #[test]
    fn adjoint_inner_product_identity() {
        for seed in 0..20u64 {
            let band = seed % 2 == 0;
            let pad = 1 + (seed % 3 == 0) as usize;
            let plan = PropagationPlan::new(5_000.0 + 1_000.0 * seed as f64)
                .band_limited(band)
                .padded(pad);
            let u = random_field(64, 64, 8.0, 100 + seed);
            let v = random_field(64, 64, 8.0, 200 + seed);
            let lhs = inner(&propagate(&u, plan).unwrap(), &v);
            let rhs = inner(&u, &propagate_adjoint(&v, plan).unwrap());
            assert!((lhs - rhs).norm() / lhs.norm() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn adjoint_inverts_forward_on_propagating_band() {
        let plan = PropagationPlan::new(40_000.0).band_limited(true);
        let raw = random_field(64, 64, 8.0, 9);
        // Project onto the band-limited subspace first.
        let tf = TransferFunction::new(64, 64, 8.0, WL, plan.distance, true);
        let mut a = raw.amplitude().clone();
        fft2(&mut a);
        Zip::from(&mut a).and(tf.values()).for_each(|x, h| {
            if h.norm() == 0.0 {
                *x = Complex64::default();
            }
        });
        ifft2(&mut a);
        let u = Field::new(a, 8.0, WL).unwrap();
        let round = propagate_adjoint(&propagate(&u, plan).unwrap(), plan).unwrap();
        assert!(rel_diff(&round, &u) < 1e-10);
    }

    #[test]
    fn adjoint_equals_back_propagation_when_unlimited() {
        let u = random_field(32, 48, 8.0, 11);
        let a = propagate_adjoint(&u, PropagationPlan::new(7_000.0)).unwrap();
        let b = propagate(&u, PropagationPlan::new(-7_000.0)).unwrap();
        assert!(rel_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn linear_and_semigroup() {
        let u = random_field(48, 48, 8.0, 12);
        let v = random_field(48, 48, 8.0, 13);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let plan = PropagationPlan::new(9_000.0).padded(2).band_limited(true);
        let combo = Field::new(
            u.amplitude().mapv(|z| z * a) + v.amplitude().mapv(|z| z * b),
            8.0,
            WL,
        )
        .unwrap();
        let lhs = propagate(&combo, plan).unwrap();
        let pu = propagate(&u, plan).unwrap();
        let pv = propagate(&v, plan).unwrap();
        let rhs = Field::new(
            pu.amplitude().mapv(|z| z * a) + pv.amplitude().mapv(|z| z * b),
            8.0,
            WL,
        )
        .unwrap();
        assert!(rel_diff(&lhs, &rhs) < 1e-10);

        let two_hops = propagate(
            &propagate(&u, PropagationPlan::new(3_000.0)).unwrap(),
            PropagationPlan::new(11_000.0),
        )
        .unwrap();
        let one_hop = propagate(&u, PropagationPlan::new(14_000.0)).unwrap();
        assert!(rel_diff(&two_hops, &one_hop) < 1e-9);
    }

    #[test]
    fn apply_phase_cases() {
        let f = random_field(8, 8, 8.0, 14);
        let same = apply_phase(&f, &Array2::zeros((8, 8))).unwrap();
        assert_eq!(same, f);
        let neg = apply_phase(&f, &Array2::from_elem((8, 8), PI)).unwrap();
        for (x, y) in neg.amplitude().iter().zip(f.amplitude()) {
            assert!((x + y).norm() < 1e-12 * y.norm().max(1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let phase = Array2::from_shape_fn((8, 8), |_| rng.gen_range(-10.0..10.0));
        let rot = apply_phase(&f, &phase).unwrap();
        for (x, y) in rot.amplitude().iter().zip(f.amplitude()) {
            assert!((x.norm() - y.norm()).abs() <= 1e-12 * y.norm());
        }
        assert!(matches!(
            apply_phase(&f, &Array2::zeros((8, 7))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn intensity_cases() {
        let mut a = Array2::from_elem((3, 3), Complex64::new(1.0, 0.0));
        let f = Field::new(a.clone(), 1.0, WL).unwrap();
        assert!(intensity(&f).iter().all(|&v| v == 1.0));
        let z = Field::zeros(3, 3, 1.0, WL).unwrap();
        assert!(intensity(&z).iter().all(|&v| v == 0.0));
        a[[1, 2]] = Complex64::new(3.0, 4.0);
        let f = Field::new(a, 1.0, WL).unwrap();
        assert_eq!(intensity(&f)[[1, 2]], 25.0);
    }

    #[test]
    fn plan_validation() {
        assert!(PropagationPlan::new(1.0).padded(3).validate().is_err());
        assert!(PropagationPlan::new(f64::NAN).validate().is_err());
        assert!(sampling_diagnostic(8.0, WL).is_some());
        assert!(sampling_diagnostic(0.2, WL).is_none());
    }
}
