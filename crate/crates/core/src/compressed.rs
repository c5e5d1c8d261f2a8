//! Compressed network representation and its evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::store::quant::{dequantize, quantize_symmetric, QuantTensor};
use crate::toynet::{forward_generic, loss_of_logits, Activation, CalibSet, Evaluation, LinearMap, ToyModel};

/// A stored matrix, either full precision or 8-bit codes with row scales.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Full(Mat),
    Quant(QuantTensor),
}

impl Factor {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Factor::Full(m) => m.shape(),
            Factor::Quant(q) => q.shape(),
        }
    }

    pub fn to_mat(&self) -> Mat {
        match self {
            Factor::Full(m) => m.clone(),
            Factor::Quant(q) => dequantize(q),
        }
    }

    pub fn params(&self) -> usize {
        let (r, c) = self.shape();
        r * c
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Factor::Quant(_))
    }

    pub fn quantized(&self) -> Factor {
        match self {
            Factor::Full(m) => Factor::Quant(quantize_symmetric(m)),
            q @ Factor::Quant(_) => q.clone(),
        }
    }

    /// Nominal bytes when full-precision values take `full_bits` each; codes
    /// take one byte and every row scale takes `full_bits`.
    pub fn footprint_bytes(&self, full_bits: u32) -> f64 {
        let full = full_bits as f64 / 8.0;
        match self {
            Factor::Full(m) => full * (m.rows() * m.cols()) as f64,
            Factor::Quant(q) => q.q.len() as f64 + full * q.scales.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeight {
    Dense(Factor),
    /// `W' = wu * wv`, applied as `wu * (wv * x)`.
    Factored { wu: Factor, wv: Factor },
}

impl LayerWeight {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            LayerWeight::Dense(f) => f.shape(),
            LayerWeight::Factored { wu, wv } => (wu.shape().0, wv.shape().1),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            LayerWeight::Dense(_) => None,
            LayerWeight::Factored { wu, .. } => Some(wu.shape().1),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, LayerWeight::Factored { .. })
    }

    /// The full `m x n` matrix this layer computes.
    pub fn materialize(&self) -> Mat {
        match self {
            LayerWeight::Dense(f) => f.to_mat(),
            LayerWeight::Factored { wu, wv } => wu.to_mat().matmul(&wv.to_mat()),
        }
    }

    pub fn params(&self) -> usize {
        match self {
            LayerWeight::Dense(f) => f.params(),
            LayerWeight::Factored { wu, wv } => wu.params() + wv.params(),
        }
    }

    pub fn footprint_bytes(&self, full_bits: u32) -> f64 {
        match self {
            LayerWeight::Dense(f) => f.footprint_bytes(full_bits),
            LayerWeight::Factored { wu, wv } => wu.footprint_bytes(full_bits) + wv.footprint_bytes(full_bits),
        }
    }
}

/// Resolved matrices used during a forward pass.
enum Resolved {
    Dense(Mat),
    Factored(Mat, Mat),
}

impl LinearMap for Resolved {
    fn out_dim(&self) -> usize {
        match self {
            Resolved::Dense(m) => m.rows(),
            Resolved::Factored(u, _) => u.rows(),
        }
    }
    fn in_dim(&self) -> usize {
        match self {
            Resolved::Dense(m) => m.cols(),
            Resolved::Factored(_, v) => v.cols(),
        }
    }
    fn apply(&self, x: &Mat) -> Mat {
        match self {
            Resolved::Dense(m) => m.matmul(x),
            Resolved::Factored(u, v) => u.matmul(&v.matmul(x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub weight: LayerWeight,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub activation: Activation,
    pub layers: Vec<CompressedLayer>,
}

impl CompressedModel {
    /// Every layer dense, full precision.
    pub fn from_model(model: &ToyModel) -> Self {
        Self {
            activation: model.activation,
            layers: model
                .weights
                .iter()
                .zip(&model.biases)
                .map(|(w, b)| CompressedLayer {
                    weight: LayerWeight::Dense(Factor::Full(w.clone())),
                    bias: b.clone(),
                })
                .collect(),
        }
    }

    /// Dense model with every layer materialized.
    pub fn materialize(&self) -> ToyModel {
        ToyModel {
            activation: self.activation,
            weights: self.layers.iter().map(|l| l.weight.materialize()).collect(),
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            let (m, n) = layer.weight.shape();
            if let LayerWeight::Factored { wu, wv } = &layer.weight {
                if wu.shape().1 != wv.shape().0 {
                    return Err(Error::Shape {
                        op: "CompressedModel",
                        detail: format!("layer {l}: factor ranks {} vs {}", wu.shape().1, wv.shape().0),
                    });
                }
            }
            if layer.bias.len() != m {
                return Err(Error::Shape {
                    op: "CompressedModel",
                    detail: format!("layer {l}: {m} outputs but bias of length {}", layer.bias.len()),
                });
            }
            if l > 0 && self.layers[l - 1].weight.shape().0 != n {
                return Err(Error::Shape {
                    op: "CompressedModel",
                    detail: format!("layer {l} expects {n} inputs"),
                });
            }
        }
        if self.layers.len() < 2 {
            return Err(Error::Config("compressed model needs >= 2 layers".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.params()).sum()
    }

    pub fn footprint_bytes(&self, full_bits: u32) -> f64 {
        self.layers.iter().map(|l| l.weight.footprint_bytes(full_bits)).sum()
    }

    /// Quantizes every target matrix (dense and factored) to 8-bit codes.
    pub fn quantize_all(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            layer.weight = match &layer.weight {
                LayerWeight::Dense(f) => LayerWeight::Dense(f.quantized()),
                LayerWeight::Factored { wu, wv } => LayerWeight::Factored {
                    wu: wu.quantized(),
                    wv: wv.quantized(),
                },
            };
        }
        out
    }

    /// Quantizes only the right factors of factored layers.
    pub fn quantize_right_factors(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            if let LayerWeight::Factored { wv, .. } = &mut layer.weight {
                *wv = wv.quantized();
            }
        }
        out
    }

    /// Loss and perplexity; factored layers are applied as `wu (wv x)`.
    pub fn evaluate(&self, calib: &CalibSet) -> Result<Evaluation> {
        self.validate()?;
        let (classes, n0) = (
            self.layers.last().expect("validated").weight.shape().0,
            self.layers[0].weight.shape().1,
        );
        if calib.inputs.rows() != n0 {
            return Err(Error::Shape {
                op: "evaluate",
                detail: format!("model takes {n0} inputs, calibration tokens have {}", calib.inputs.rows()),
            });
        }
        calib.validate(classes)?;
        let resolved: Vec<Resolved> = self
            .layers
            .iter()
            .map(|l| match &l.weight {
                LayerWeight::Dense(f) => Resolved::Dense(f.to_mat()),
                LayerWeight::Factored { wu, wv } => Resolved::Factored(wu.to_mat(), wv.to_mat()),
            })
            .collect();
        let maps: Vec<&dyn LinearMap> = resolved.iter().map(|r| r as &dyn LinearMap).collect();
        let biases: Vec<Vec<f64>> = self.layers.iter().map(|l| l.bias.clone()).collect();
        let trace = forward_generic(&maps, &biases, self.activation, &calib.inputs);
        Ok(Evaluation::from_loss(loss_of_logits(&trace.logits, &calib.labels)))
    }
}

/// Per-layer storage summary used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub params_before: usize,
    pub params_after: usize,
    /// Bits per full-precision value used for the nominal byte counts.
    pub reference_bits: u32,
    pub bytes_before: f64,
    pub bytes_after: f64,
    pub ratio: f64,
    /// Byte counts follow a storage formula rather than the stored tensors.
    pub simulated: bool,
}
