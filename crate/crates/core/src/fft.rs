//! Two-dimensional FFT helpers on row-major complex buffers.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// Unnormalized in-place 2-D FFT of a `rows × cols` row-major buffer.
pub fn fft2(data: &mut [Complex64], rows: usize, cols: usize, direction: FftDirection) {
    assert_eq!(
        data.len(),
        rows * cols,
        "buffer does not match {rows}x{cols}"
    );
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft(cols, direction);
    row_fft.process(data);

    let mut t = transpose(data, rows, cols);
    let col_fft = planner.plan_fft(rows, direction);
    col_fft.process(&mut t);
    let back = transpose(&t, cols, rows);
    data.copy_from_slice(&back);
}

pub(crate) fn transpose<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(data[r * cols + c]);
        }
    }
    out
}

/// Circularly shifts a grid so that element `(0, 0)` moves to `(dr, dc)`.
pub fn roll2<T: Copy>(data: &[T], rows: usize, cols: usize, dr: usize, dc: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..rows {
        let nr = (r + dr) % rows;
        for c in 0..cols {
            out[nr * cols + (c + dc) % cols] = data[r * cols + c];
        }
    }
    out
}

/// Centered forward DFT: the sample at index `rows/2, cols/2` is treated as the
/// origin in both the input and output frames.
///
/// Equivalent to `fftshift(fft2(ifftshift(x)))`.
pub fn centered_fft2(data: &mut [Complex64], rows: usize, cols: usize) {
    let shifted = roll2(data, rows, cols, rows - rows / 2, cols - cols / 2);
    data.copy_from_slice(&shifted);
    fft2(data, rows, cols, FftDirection::Forward);
    let shifted = roll2(data, rows, cols, rows / 2, cols / 2);
    data.copy_from_slice(&shifted);
}
