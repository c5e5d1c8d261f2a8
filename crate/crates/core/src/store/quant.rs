//! Symmetric per-row 8-bit quantization.

use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub rows: usize,
    pub cols: usize,
    /// Row-major codes in `[-127, 127]`.
    pub q: Vec<i8>,
    /// One scale per row.
    pub scales: Vec<f64>,
}

impl QuantTensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Per-row scale `max|row| / 127`, codes rounded half away from zero.
/// All-zero rows get scale 1.
pub fn quantize_symmetric(w: &Mat) -> QuantTensor {
    let (rows, cols) = w.shape();
    let mut q = Vec::with_capacity(rows * cols);
    let mut scales = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = w.row(i);
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
        scales.push(scale);
        // f64::round rounds half away from zero
        q.extend(row.iter().map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8));
    }
    QuantTensor { rows, cols, q, scales }
}

pub fn dequantize(t: &QuantTensor) -> Mat {
    let mut data = Vec::with_capacity(t.q.len());
    for i in 0..t.rows {
        let s = t.scales[i];
        data.extend(t.q[i * t.cols..(i + 1) * t.cols].iter().map(|&c| c as f64 * s));
    }
    Mat::from_raw(t.rows, t.cols, data)
}
