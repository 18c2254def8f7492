//! Spatial multiplexing geometry: where each video's frame tiles sit on the
//! modulator, where each channel's paired detectors sit on the sensor, and
//! how the two planes are read out.

use std::f64::consts::TAU;

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decoder::{DiffractiveStack, OpticalDecoder, OpticsConfig};
use crate::error::{ensure_shape, Error, Result};

/// Serializable description of a multiplexing geometry. Validated into a
/// [`MuxLayout`] before use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// Videos per optical pass (`L`).
    pub videos: usize,
    /// Frames per video (`N`).
    pub frames: usize,
    /// Video tiles as `[rows, cols]`, filled row-major.
    pub video_grid: [usize; 2],
    /// Frame sub-tiles inside one video tile as `[rows, cols]`, filled row-major.
    pub frame_grid: [usize; 2],
    /// Encoder output tile resolution.
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// Nearest-neighbour upsampling factor from encoder tile to modulator pixels.
    pub interp_factor: usize,
    /// Guard band between neighbouring video tiles, modulator pixels.
    pub video_spacing: usize,
    pub slm_rows: usize,
    pub slm_cols: usize,
    /// Modulator pixel pitch, um.
    pub slm_pitch: f64,
    /// Illumination wavelength, um.
    pub wavelength: f64,
    pub sensor_rows: usize,
    pub sensor_cols: usize,
    /// Sensor pixel pitch, um.
    pub sensor_pitch: f64,
    /// Lateral magnification from the modulator-equivalent output plane onto the sensor.
    pub sensor_scale: f64,
    /// Size of one detector rectangle, sensor pixels.
    pub detector_rows: usize,
    pub detector_cols: usize,
    /// Horizontal gap between a channel's positive and negative rectangles, sensor pixels.
    pub detector_gap: usize,
    /// Effective modulator-to-sensor distance, um.
    pub propagation_distance: f64,
}

impl LayoutConfig {
    /// Fifteen-video geometry on a 1920x1056 effective modulator area.
    pub fn bench_l15() -> Self {
        Self {
            videos: 15,
            frames: 12,
            video_grid: [3, 5],
            frame_grid: [3, 4],
            tile_rows: 28,
            tile_cols: 28,
            interp_factor: 3,
            video_spacing: 24,
            slm_rows: 1056,
            slm_cols: 1920,
            slm_pitch: 8.0,
            wavelength: 0.52,
            sensor_rows: 1216,
            sensor_cols: 1936,
            sensor_pitch: 5.86,
            sensor_scale: 0.72,
            detector_rows: 64,
            detector_cols: 64,
            detector_gap: 16,
            propagation_distance: 20_000.0,
        }
    }

    /// Eighteen-video, sixteen-frame variant.
    pub fn bench_l18() -> Self {
        Self {
            videos: 18,
            frames: 16,
            video_grid: [3, 6],
            frame_grid: [4, 4],
            tile_rows: 24,
            tile_cols: 24,
            detector_rows: 56,
            detector_cols: 56,
            ..Self::bench_l15()
        }
    }

    /// Compact desk-scale geometry: unit interpolation, sensor grid identical
    /// to the modulator grid.
    pub fn toy(videos: usize, frames: usize, tile: usize) -> Self {
        Self::toy_upsampled(videos, frames, tile, 1)
    }

    /// [`Self::toy`] with every encoder pixel replicated over `f x f`
    /// modulator pixels.
    pub fn toy_upsampled(videos: usize, frames: usize, tile: usize, f: usize) -> Self {
        let f = f.max(1);
        let video_grid = near_square_grid(videos);
        let frame_grid = near_square_grid(frames);
        let px = tile * f;
        let spacing = (px / 4).max(4);
        let margin = spacing;
        let vt_rows = frame_grid[0] * px;
        let vt_cols = frame_grid[1] * px;
        let slm_rows = video_grid[0] * vt_rows + (video_grid[0] - 1) * spacing + 2 * margin;
        let slm_cols = video_grid[1] * vt_cols + (video_grid[1] - 1) * spacing + 2 * margin;
        let det = (px * 3 / 8).max(2);
        Self {
            videos,
            frames,
            video_grid,
            frame_grid,
            tile_rows: tile,
            tile_cols: tile,
            interp_factor: f,
            video_spacing: spacing,
            slm_rows,
            slm_cols,
            slm_pitch: 8.0,
            wavelength: 0.52,
            sensor_rows: slm_rows,
            sensor_cols: slm_cols,
            sensor_pitch: 8.0,
            sensor_scale: 1.0,
            detector_rows: det,
            detector_cols: det,
            detector_gap: (px / 8).max(1),
            propagation_distance: 10_000.0,
        }
    }
}

/// `rows x cols` grid with `rows = floor(sqrt(n))` holding at least `n` slots.
pub fn near_square_grid(n: usize) -> [usize; 2] {
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    [rows, n.div_ceil(rows)]
}

/// Axis-aligned pixel rectangle `[row, row + rows) x [col, col + cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.row < other.row + other.rows
            && other.row < self.row + self.rows
            && self.col < other.col + other.cols
            && other.col < self.col + self.cols
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        self.row + self.rows <= rows && self.col + self.cols <= cols
    }
}

/// Positive (fake-voting) and negative (real-voting) detector of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorPair {
    pub positive: Rect,
    pub negative: Rect,
}

/// A validated multiplexing geometry. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MuxLayout {
    config: LayoutConfig,
    video_slots: Vec<Rect>,
    detectors: Vec<DetectorPair>,
}

impl MuxLayout {
    pub fn new(config: LayoutConfig) -> Result<Self> {
        let c = &config;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if c.videos == 0 || c.frames == 0 {
            return bad("videos and frames must be at least 1".into());
        }
        if c.videos > c.video_grid[0] * c.video_grid[1] {
            return bad(format!(
                "{} videos do not fit a {}x{} video grid",
                c.videos, c.video_grid[0], c.video_grid[1]
            ));
        }
        if c.frames > c.frame_grid[0] * c.frame_grid[1] {
            return bad(format!(
                "{} frames do not fit a {}x{} frame grid",
                c.frames, c.frame_grid[0], c.frame_grid[1]
            ));
        }
        if c.tile_rows == 0 || c.tile_cols == 0 || c.interp_factor == 0 {
            return bad("tile size and interp_factor must be positive".into());
        }
        for (name, v) in [
            ("slm_pitch", c.slm_pitch),
            ("wavelength", c.wavelength),
            ("sensor_pitch", c.sensor_pitch),
            ("sensor_scale", c.sensor_scale),
            ("propagation_distance", c.propagation_distance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if c.detector_rows == 0 || c.detector_cols == 0 {
            return bad("detector rectangles must be non-empty".into());
        }

        let vt_rows = c.frame_grid[0] * c.tile_rows * c.interp_factor;
        let vt_cols = c.frame_grid[1] * c.tile_cols * c.interp_factor;
        let used_rows = c.video_grid[0] * vt_rows + (c.video_grid[0] - 1) * c.video_spacing;
        let used_cols = c.video_grid[1] * vt_cols + (c.video_grid[1] - 1) * c.video_spacing;
        if used_rows > c.slm_rows || used_cols > c.slm_cols {
            return bad(format!(
                "video tiles need {used_rows}x{used_cols} modulator pixels, only {}x{} available",
                c.slm_rows, c.slm_cols
            ));
        }
        let (r_off, c_off) = ((c.slm_rows - used_rows) / 2, (c.slm_cols - used_cols) / 2);

        let mut video_slots = Vec::with_capacity(c.videos);
        for v in 0..c.videos {
            let (gr, gc) = (v / c.video_grid[1], v % c.video_grid[1]);
            video_slots.push(Rect {
                row: r_off + gr * (vt_rows + c.video_spacing),
                col: c_off + gc * (vt_cols + c.video_spacing),
                rows: vt_rows,
                cols: vt_cols,
            });
        }

        // Slot centres mapped through the output-plane magnification.
        let to_sensor = c.slm_pitch * c.sensor_scale / c.sensor_pitch;
        let mut detectors = Vec::with_capacity(c.videos);
        for slot in &video_slots {
            let cy = slot.row as f64 + slot.rows as f64 / 2.0 - c.slm_rows as f64 / 2.0;
            let cx = slot.col as f64 + slot.cols as f64 / 2.0 - c.slm_cols as f64 / 2.0;
            let sy = c.sensor_rows as f64 / 2.0 + cy * to_sensor;
            let sx = c.sensor_cols as f64 / 2.0 + cx * to_sensor;
            let top = sy - c.detector_rows as f64 / 2.0;
            let left = sx - (2 * c.detector_cols + c.detector_gap) as f64 / 2.0;
            if top < 0.0 || left < 0.0 {
                return bad("detector pair falls outside the sensor".into());
            }
            let (row, col) = (top.round() as usize, left.round() as usize);
            let positive = Rect {
                row,
                col,
                rows: c.detector_rows,
                cols: c.detector_cols,
            };
            let negative = Rect {
                col: col + c.detector_cols + c.detector_gap,
                ..positive
            };
            detectors.push(DetectorPair { positive, negative });
        }

        let rects: Vec<Rect> = detectors
            .iter()
            .flat_map(|d| [d.positive, d.negative])
            .collect();
        for (i, a) in rects.iter().enumerate() {
            if !a.fits(c.sensor_rows, c.sensor_cols) {
                return bad(format!("detector rectangle {i} exceeds the sensor"));
            }
            for (j, b) in rects.iter().enumerate().skip(i + 1) {
                if a.intersects(b) {
                    return bad(format!("detector rectangles {i} and {j} overlap"));
                }
            }
        }

        Ok(Self {
            config,
            video_slots,
            detectors,
        })
    }

    pub fn config(&self) -> &LayoutConfig {
        &self.config
    }

    pub fn videos(&self) -> usize {
        self.config.videos
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn tile_shape(&self) -> (usize, usize) {
        (self.config.tile_rows, self.config.tile_cols)
    }

    pub fn slm_shape(&self) -> (usize, usize) {
        (self.config.slm_rows, self.config.slm_cols)
    }

    pub fn sensor_shape(&self) -> (usize, usize) {
        (self.config.sensor_rows, self.config.sensor_cols)
    }

    pub fn interp_factor(&self) -> usize {
        self.config.interp_factor
    }

    pub fn video_slot(&self, v: usize) -> Rect {
        self.video_slots[v]
    }

    /// Modulator footprint of frame `i` of video `v` (after upsampling).
    pub fn frame_slot(&self, v: usize, i: usize) -> Result<Rect> {
        self.check_index(v, i)?;
        let c = &self.config;
        let vs = self.video_slots[v];
        let (h, w) = (c.tile_rows * c.interp_factor, c.tile_cols * c.interp_factor);
        Ok(Rect {
            row: vs.row + (i / c.frame_grid[1]) * h,
            col: vs.col + (i % c.frame_grid[1]) * w,
            rows: h,
            cols: w,
        })
    }

    pub fn detectors(&self) -> &[DetectorPair] {
        &self.detectors
    }

    /// Copy of this layout with a different guard band between video tiles.
    pub fn with_video_spacing(&self, spacing: usize) -> Result<Self> {
        Self::new(LayoutConfig {
            video_spacing: spacing,
            ..self.config.clone()
        })
    }

    fn check_index(&self, v: usize, i: usize) -> Result<()> {
        if v >= self.videos() || i >= self.frames() {
            return Err(Error::OutOfRange(format!(
                "slot ({v}, {i}) outside {} videos x {} frames",
                self.videos(),
                self.frames()
            )));
        }
        Ok(())
    }
}

/// Modulator phase pattern with every value in `[0, 2pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap {
    values: Array2<f64>,
}

impl PhaseMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && **v < TAU)) {
            return Err(Error::InvalidInput(format!("phase value {bad} outside [0, 2pi)")));
        }
        Ok(Self { values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: Array2::zeros((rows, cols)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Packs `tiles[v][i]` into their slots with `f x f` nearest-neighbour
/// replication. Unused modulator pixels stay at phase 0.
pub fn assemble_phase(tiles: &[Vec<Array2<f64>>], layout: &MuxLayout) -> Result<PhaseMap> {
    if tiles.len() != layout.videos() || tiles.iter().any(|t| t.len() != layout.frames()) {
        return Err(Error::Shape(format!(
            "expected {} videos x {} frames of tiles",
            layout.videos(),
            layout.frames()
        )));
    }
    let (rows, cols) = layout.slm_shape();
    let f = layout.interp_factor();
    let mut out = Array2::<f64>::zeros((rows, cols));
    for (v, video) in tiles.iter().enumerate() {
        for (i, tile) in video.iter().enumerate() {
            ensure_shape("phase tile", tile.dim(), layout.tile_shape())?;
            let slot = layout.frame_slot(v, i)?;
            for ((r, c), &p) in tile.indexed_iter() {
                let val = crate::wrap_phase(p);
                out.slice_mut(s![
                    slot.row + r * f..slot.row + (r + 1) * f,
                    slot.col + c * f..slot.col + (c + 1) * f
                ])
                .fill(val);
            }
        }
    }
    Ok(PhaseMap { values: out })
}

/// Reads slot `(v, i)` back at encoder resolution (top-left sample of each `f x f` block).
pub fn extract_tile(phase: &PhaseMap, v: usize, i: usize, layout: &MuxLayout) -> Result<Array2<f64>> {
    ensure_shape("phase map", phase.dim(), layout.slm_shape())?;
    let slot = layout.frame_slot(v, i)?;
    let f = layout.interp_factor();
    Ok(Array2::from_shape_fn(layout.tile_shape(), |(r, c)| {
        phase.values[[slot.row + r * f, slot.col + c * f]]
    }))
}

/// Sums a full-resolution modulator gradient back onto slot `(v, i)` at
/// encoder resolution (adjoint of the replication in [`assemble_phase`]).
pub(crate) fn gather_tile_gradient(
    grad: &Array2<f64>,
    v: usize,
    i: usize,
    layout: &MuxLayout,
) -> Result<Array2<f64>> {
    let slot = layout.frame_slot(v, i)?;
    let f = layout.interp_factor();
    Ok(Array2::from_shape_fn(layout.tile_shape(), |(r, c)| {
        grad.slice(s![
            slot.row + r * f..slot.row + (r + 1) * f,
            slot.col + c * f..slot.col + (c + 1) * f
        ])
        .sum()
    }))
}

/// Mean intensity inside every channel's positive and negative rectangle.
pub fn readout(image: &Array2<f64>, layout: &MuxLayout) -> Result<Vec<(f64, f64)>> {
    readout_shifted(image, layout, (0, 0))
}

/// [`readout`] with every detector displaced by `(rows, cols)` sensor pixels.
/// Pixels that fall off the sensor contribute zero; the mean is always over
/// the full rectangle area.
pub fn readout_shifted(
    image: &Array2<f64>,
    layout: &MuxLayout,
    shift: (i64, i64),
) -> Result<Vec<(f64, f64)>> {
    ensure_shape("sensor image", image.dim(), layout.sensor_shape())?;
    Ok(layout
        .detectors()
        .iter()
        .map(|d| {
            (
                rect_mean(image, &d.positive, shift),
                rect_mean(image, &d.negative, shift),
            )
        })
        .collect())
}

/// Clipped pixel ranges of a shifted rectangle on an image.
pub(crate) fn shifted_ranges(
    rect: &Rect,
    shift: (i64, i64),
    dim: (usize, usize),
) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let clip = |start: usize, len: usize, d: i64, n: usize| {
        let a = (start as i64 + d).clamp(0, n as i64) as usize;
        let b = (start as i64 + len as i64 + d).clamp(0, n as i64) as usize;
        a..b
    };
    let rr = clip(rect.row, rect.rows, shift.0, dim.0);
    let cc = clip(rect.col, rect.cols, shift.1, dim.1);
    (!rr.is_empty() && !cc.is_empty()).then_some((rr, cc))
}

fn rect_mean(image: &Array2<f64>, rect: &Rect, shift: (i64, i64)) -> f64 {
    match shifted_ranges(rect, shift, image.dim()) {
        Some((rr, cc)) => image.slice(s![rr, cc]).sum() / rect.area() as f64,
        None => 0.0,
    }
}

/// Fraction of output-plane energy reaching each channel's detector pair
/// when a single video tile is lit with unit amplitude and flat phase.
/// Entry `(u, v)`: source tile `u`, detector pair `v`.
pub fn crosstalk_matrix(
    layout: &MuxLayout,
    stack: &DiffractiveStack,
    optics: &OpticsConfig,
) -> Result<Array2<f64>> {
    let decoder = OpticalDecoder::new(layout, stack, optics, 0.0)?;
    let l = layout.videos();
    let mut out = Array2::<f64>::zeros((l, l));
    for u in 0..l {
        let slot = layout.video_slot(u);
        let mut input = Array2::<Complex64>::zeros(layout.slm_shape());
        input
            .slice_mut(s![slot.row..slot.row + slot.rows, slot.col..slot.col + slot.cols])
            .fill(Complex64::new(1.0, 0.0));
        let (sensor, plane_energy) = decoder.propagate_field(&input, stack)?;
        if plane_energy <= 0.0 {
            continue;
        }
        for (v, d) in layout.detectors().iter().enumerate() {
            let e: f64 = [d.positive, d.negative]
                .iter()
                .map(|r| sensor.slice(s![r.row..r.row + r.rows, r.col..r.col + r.cols]).sum())
                .sum();
            out[[u, v]] = e / plane_energy;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> MuxLayout {
        MuxLayout::new(LayoutConfig::toy(4, 4, 8)).unwrap()
    }

    fn random_tiles(layout: &MuxLayout, seed: u64) -> Vec<Vec<Array2<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..layout.videos())
            .map(|_| {
                (0..layout.frames())
                    .map(|_| Array2::from_shape_fn(layout.tile_shape(), |_| rng.gen_range(0.0..TAU)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_slot_placement() {
        let mut cfg = LayoutConfig::toy(1, 1, 6);
        cfg.interp_factor = 2;
        cfg.slm_rows += 12;
        cfg.slm_cols += 12;
        cfg.sensor_rows = cfg.slm_rows;
        cfg.sensor_cols = cfg.slm_cols;
        let layout = MuxLayout::new(cfg).unwrap();
        let tiles = vec![vec![Array2::from_elem((6, 6), std::f64::consts::PI)]];
        let phi = assemble_phase(&tiles, &layout).unwrap();
        let slot = layout.frame_slot(0, 0).unwrap();
        assert_eq!((slot.rows, slot.cols), (12, 12));
        for ((r, c), &v) in phi.values().indexed_iter() {
            let inside = (slot.row..slot.row + 12).contains(&r) && (slot.col..slot.col + 12).contains(&c);
            assert_eq!(v, if inside { std::f64::consts::PI } else { 0.0 });
        }
    }

    #[test]
    fn bench_geometries_validate() {
        let l15 = MuxLayout::new(LayoutConfig::bench_l15()).unwrap();
        assert_eq!(l15.slm_shape(), (1056, 1920));
        assert_eq!(l15.detectors().len(), 15);
        let l18 = MuxLayout::new(LayoutConfig::bench_l18()).unwrap();
        assert_eq!(l18.detectors().len(), 18);
    }

    #[test]
    fn round_trip_and_slot_isolation() {
        let layout = small();
        let tiles = random_tiles(&layout, 1);
        let phi = assemble_phase(&tiles, &layout).unwrap();
        for v in 0..4 {
            for i in 0..4 {
                assert_eq!(extract_tile(&phi, v, i, &layout).unwrap(), tiles[v][i]);
            }
        }
        let mut only = vec![vec![Array2::zeros((8, 8)); 4]; 4];
        only[1][2] = Array2::from_elem((8, 8), 1.0);
        let phi = assemble_phase(&only, &layout).unwrap();
        for v in 0..4 {
            for i in 0..4 {
                let t = extract_tile(&phi, v, i, &layout).unwrap();
                let expect = if (v, i) == (1, 2) { 1.0 } else { 0.0 };
                assert!(t.iter().all(|&x| x == expect));
            }
        }
        let zero = PhaseMap::zeros(layout.slm_shape().0, layout.slm_shape().1);
        assert!(extract_tile(&zero, 3, 3, &layout).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn assembly_is_partial_isometry() {
        let layout = small();
        let phi = assemble_phase(&random_tiles(&layout, 2), &layout).unwrap();
        let total: f64 = phi.values().iter().map(|v| v * v).sum();
        let mut per_slot = 0.0;
        for v in 0..4 {
            for i in 0..4 {
                let r = layout.frame_slot(v, i).unwrap();
                per_slot += phi
                    .values()
                    .slice(s![r.row..r.row + r.rows, r.col..r.col + r.cols])
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>();
            }
        }
        assert!((total - per_slot).abs() <= 1e-9 * total);
    }

    #[test]
    fn assemble_and_extract_errors() {
        let layout = small();
        let mut tiles = random_tiles(&layout, 3);
        tiles.pop();
        assert!(matches!(assemble_phase(&tiles, &layout), Err(Error::Shape(_))));
        let phi = PhaseMap::zeros(layout.slm_shape().0, layout.slm_shape().1);
        assert!(matches!(extract_tile(&phi, 4, 0, &layout), Err(Error::OutOfRange(_))));
        assert!(matches!(extract_tile(&phi, 0, 4, &layout), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn readout_uniform_and_indicator() {
        let layout = MuxLayout::new(LayoutConfig::toy(6, 4, 8)).unwrap();
        let img = Array2::from_elem(layout.sensor_shape(), 2.5);
        assert!(readout(&img, &layout).unwrap().iter().all(|&p| p == (2.5, 2.5)));

        let mut img = Array2::<f64>::zeros(layout.sensor_shape());
        let r = layout.detectors()[3].positive;
        img.slice_mut(s![r.row..r.row + r.rows, r.col..r.col + r.cols]).fill(1.0);
        for (v, p) in readout(&img, &layout).unwrap().into_iter().enumerate() {
            assert_eq!(p, if v == 3 { (1.0, 0.0) } else { (0.0, 0.0) });
        }
        assert!(readout(&Array2::zeros((3, 3)), &layout).is_err());
    }

    #[test]
    fn shifted_readout_drops_off_sensor_pixels() {
        let layout = small();
        let img = Array2::from_elem(layout.sensor_shape(), 1.0);
        let far = readout_shifted(&img, &layout, (10_000, 0)).unwrap();
        assert!(far.iter().all(|&p| p == (0.0, 0.0)));
    }

    #[test]
    fn overlapping_detectors_rejected() {
        let mut cfg = LayoutConfig::toy(4, 4, 8);
        cfg.detector_cols = 40;
        assert!(matches!(MuxLayout::new(cfg), Err(Error::InvalidConfig(_))));
        let mut cfg = LayoutConfig::toy(4, 4, 8);
        cfg.videos = 5;
        assert!(MuxLayout::new(cfg).is_err());
    }

    #[test]
    fn near_square_grids() {
        assert_eq!(near_square_grid(12), [3, 4]);
        assert_eq!(near_square_grid(16), [4, 4]);
        assert_eq!(near_square_grid(15), [3, 5]);
        assert_eq!(near_square_grid(4), [2, 2]);
        assert_eq!(near_square_grid(1), [1, 1]);
    }
}
