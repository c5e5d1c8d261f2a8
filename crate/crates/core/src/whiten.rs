//! Activation whitening, whitened SVD and first-order singular-value
//! sensitivities.
//!
//! For a layer `W` (m x n) with calibration inputs `X` (n x T), the whitening
//! factor `S` is the Cholesky factor of `X X^T + lambda I`. Truncating the SVD
//! of `A = W S` and mapping back through `S^{-1}` minimizes the activation
//! reconstruction error `||W X - W' X||_F` at a given rank, and the residual
//! equals the energy of the dropped singular values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_ridge, solve_right_inverse, solve_right_inverse_transpose, svd, Mat, Svd};

/// `lambda = rel * trace(C) / n + floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeCfg {
    pub rel: f64,
    pub floor: f64,
}

impl Default for RidgeCfg {
    fn default() -> Self {
        Self {
            rel: 1e-6,
            floor: 1e-10,
        }
    }
}

impl RidgeCfg {
    pub fn floor_only(floor: f64) -> Self {
        Self { rel: 0.0, floor }
    }

    pub fn lambda_for(&self, c: &Mat) -> f64 {
        self.rel * c.trace() / c.rows() as f64 + self.floor
    }
}

/// `C = X X^T`, symmetrized.
pub fn second_moment(x: &Mat) -> Result<Mat> {
    if x.is_empty() {
        return Err(Error::Empty { op: "second_moment" });
    }
    let c = x.matmul_t(x);
    let n = c.rows();
    let mut sym = c.clone();
    for i in 0..n {
        for j in 0..n {
            sym.set(i, j, 0.5 * (c.get(i, j) + c.get(j, i)));
        }
    }
    Ok(sym)
}

/// Whitening factor, whitened matrix and its SVD for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitened {
    pub s: Mat,
    pub lambda: f64,
    pub a: Mat,
    pub svd: Svd,
}

pub fn whiten_layer(w: &Mat, x: &Mat, ridge: RidgeCfg) -> Result<Whitened> {
    if w.cols() != x.rows() {
        return Err(Error::Shape {
            op: "whiten_layer",
            detail: format!("weight is {}x{}, activations have {} rows", w.rows(), w.cols(), x.rows()),
        });
    }
    let c = second_moment(x)?;
    let lambda = ridge.lambda_for(&c);
    let s = cholesky_ridge(&c, lambda)?;
    let a = w.matmul(&s);
    let svd = svd(&a)?;
    Ok(Whitened { s, lambda, a, svd })
}

/// Everything the selector and reconstruction need for one target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedLayer {
    pub layer_id: usize,
    pub s: Mat,
    pub lambda_used: f64,
    pub svd: Svd,
    /// `H = G_W S^{-T}`.
    pub whitened_grad: Mat,
    /// `g_sigma[i] = u_i^T H v_i`.
    pub g_sigma: Vec<f64>,
    /// Predicted loss change from zeroing component `i`: `-sigma_i g_sigma[i]`.
    pub delta_l: Vec<f64>,
    /// Component indices sorted by ascending sigma (ties: lower index first).
    pub order: Vec<usize>,
    /// `ceil(mn / (m + n))`.
    pub k_thr: usize,
}

pub fn k_threshold(m: usize, n: usize) -> usize {
    (m * n).div_ceil(m + n)
}

/// Ascending-sigma permutation, ties broken by lower original index.
pub fn ascending_order(sigma: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[i].total_cmp(&sigma[j]).then(i.cmp(&j)));
    order
}

/// Completes a whitened layer with the first-order sensitivities of every
/// singular component, given the loss gradient `g_w` at the original weight.
pub fn sensitivities(layer_id: usize, wh: Whitened, g_w: &Mat) -> Result<WhitenedLayer> {
    let (m, n) = (wh.a.rows(), wh.a.cols());
    if g_w.shape() != (m, n) {
        return Err(Error::Shape {
            op: "sensitivities",
            detail: format!("gradient is {:?}, weight is {m}x{n}", g_w.shape()),
        });
    }
    let h = solve_right_inverse_transpose(g_w, &wh.s)?;
    let r = wh.svd.sigma.len();
    // u_i^T H v_i, with v_i the i-th row of vt
    let hv = h.matmul_t(&wh.svd.vt); // m x r
    let g_sigma: Vec<f64> = (0..r)
        .map(|i| (0..m).map(|row| wh.svd.u.get(row, i) * hv.get(row, i)).sum())
        .collect();
    let delta_l = wh
        .svd
        .sigma
        .iter()
        .zip(&g_sigma)
        .map(|(s, g)| -s * g)
        .collect();
    let order = ascending_order(&wh.svd.sigma);
    Ok(WhitenedLayer {
        layer_id,
        s: wh.s,
        lambda_used: wh.lambda,
        svd: wh.svd,
        whitened_grad: h,
        g_sigma,
        delta_l,
        order,
        k_thr: k_threshold(m, n),
    })
}

/// Whitens every layer from calibration captures and computes sensitivities.
pub fn analyze_layers(
    weights: &[Mat],
    captures: &[crate::toynet::LayerCapture],
    ridge: RidgeCfg,
) -> Result<Vec<WhitenedLayer>> {
    weights
        .iter()
        .zip(captures)
        .enumerate()
        .map(|(l, (w, cap))| sensitivities(l, whiten_layer(w, &cap.x, ridge)?, &cap.g))
        .collect()
}

impl WhitenedLayer {
    pub fn rows(&self) -> usize {
        self.svd.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.svd.vt.cols()
    }

    pub fn rank_full(&self) -> usize {
        self.svd.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.svd.sigma
    }

    /// Low-rank factors `(W_u, W_v)` keeping the given components.
    pub fn reconstruct(&self, kept: &[usize]) -> Result<(Mat, Mat)> {
        let mut kept = kept.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if let Some(&bad) = kept.iter().find(|&&i| i >= self.rank_full()) {
            return Err(Error::Config(format!(
                "component {bad} out of range for layer {} of rank {}",
                self.layer_id,
                self.rank_full()
            )));
        }
        factors_from_svd(&self.svd, &kept, &self.s)
    }

    /// Re-projects an arbitrary weight onto rank `k` in this layer's whitened
    /// coordinates (original `S`).
    pub fn retruncate(&self, w: &Mat, k: usize) -> Result<(Mat, Mat)> {
        let a = w.matmul(&self.s);
        let svd = svd(&a)?;
        let kept: Vec<usize> = (0..k.min(svd.sigma.len())).collect();
        factors_from_svd(&svd, &kept, &self.s)
    }
}

/// `W_u = U_K Σ_K^{1/2}`, `W_v = Σ_K^{1/2} V_K^T S^{-1}`; `kept` must be
/// sorted ascending (descending sigma).
fn factors_from_svd(svd: &Svd, kept: &[usize], s: &Mat) -> Result<(Mat, Mat)> {
    let root: Vec<f64> = kept.iter().map(|&i| svd.sigma[i].sqrt()).collect();
    let wu = svd.u.select_cols(kept).scale_cols(&root);
    let vk = svd.vt.select_rows(kept).scale_rows(&root);
    let wv = solve_right_inverse(&vk, s)?;
    Ok((wu, wv))
}
