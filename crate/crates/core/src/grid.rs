//! Symmetry operations on square grids whose origin sits at pixel `(n/2, n/2)`.
//!
//! Offsets are taken modulo `n`, the same periodic frame the centered DFT uses,
//! so the row and column at offset `-n/2` map onto themselves.

/// Rotates a square row-major grid by 90° about the center pixel.
pub fn rot90_centered<T: Copy>(data: &[T], n: usize) -> Vec<T> {
    assert_eq!(data.len(), n * n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(data[((2 * (n / 2) + n - j) % n) * n + i]);
        }
    }
    out
}

/// Reflects a square row-major grid through the center pixel.
pub fn reflect_centered<T: Copy>(data: &[T], n: usize) -> Vec<T> {
    assert_eq!(data.len(), n * n);
    let c2 = 2 * (n / 2);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(data[((c2 + n - i) % n) * n + (c2 + n - j) % n]);
        }
    }
    out
}

/// `max |a − b| / max |a|`; zero when both grids vanish.
pub fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `‖a − b‖₂ / ‖a‖₂`.
pub fn l2_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
