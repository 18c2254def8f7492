//! Thin 2D FFT layer over `rustfft` with a per-thread plan cache.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized forward 2D DFT, in place.
pub fn fft2(a: &mut Array2<Complex64>) {
    transform(a, false);
}

/// Inverse 2D DFT normalized by `1 / (rows * cols)`, in place.
pub fn ifft2(a: &mut Array2<Complex64>) {
    transform(a, true);
    let n = a.len() as f64;
    a.mapv_inplace(|z| z / n);
}

fn transform(a: &mut Array2<Complex64>, inverse: bool) {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return;
    }
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().to_owned();
    }
    let buf = a.as_slice_mut().expect("standard layout");

    let row_fft = plan(cols, inverse);
    let col_fft = plan(rows, inverse);
    let mut scratch = vec![
        Complex64::default();
        row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len())
    ];

    if cols > 1 {
        row_fft.process_with_scratch(buf, &mut scratch);
    }
    if rows > 1 {
        let mut t = vec![Complex64::default(); rows * cols];
        transpose(buf, &mut t, rows, cols);
        col_fft.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, cols, rows);
    }
}

/// Blocked transpose of a row-major `rows x cols` buffer into `dst` (`cols x rows`).
fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Signed DFT frequency index for bin `k` of an `n`-point transform.
pub fn freq_index(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Moves the zero-frequency bin to the center (`numpy.fft.fftshift` semantics).
pub fn fftshift<T: Copy + Default>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    let (sr, sc) = (rows / 2, cols / 2);
    let mut out = Array2::<T>::default((rows, cols));
    for ((r, c), v) in a.indexed_iter() {
        out[[(r + sr) % rows, (c + sc) % cols]] = *v;
    }
    out
}
