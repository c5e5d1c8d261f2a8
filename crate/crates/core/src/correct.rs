//! Truncate, correct, re-truncate.
//!
//! After selection each factored layer sits on its rank-`k` manifold. A
//! correction step nudges the materialized weight off the manifold using the
//! loss gradient at the truncated point, then the result is projected back to
//! rank `k` in the layer's original whitened coordinates.

use serde::{Deserialize, Serialize};

use crate::compressed::{CompressedModel, Factor, LayerWeight};
use crate::error::{Error, Result};
use crate::linalg::{effective_rank, frob_inner, numerical_rank, svd, Mat, NUMERICAL_RANK_RTOL};
use crate::select::RankAssignment;
use crate::toynet::{backward, CalibSet, ToyModel};
use crate::whiten::WhitenedLayer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrectionVariant {
    /// Minimum-norm update along the gradient matching `<g, W - W'>`.
    ProjGrad,
    /// `(1 - alpha) W' + alpha W`.
    AlphaBlend { alpha: f64 },
    /// `W' - eta g`.
    GdStep { eta: f64 },
    /// Gradient projected onto the residual direction.
    ProjDelta,
}

impl CorrectionVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorrectionVariant::AlphaBlend { alpha } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
            }
            CorrectionVariant::GdStep { eta } if !(eta >= 0.0 && eta.is_finite()) => {
                Err(Error::Config(format!("eta must be finite and >= 0, got {eta}")))
            }
            _ => Ok(()),
        }
    }

    /// Parses `proj-grad`, `proj-delta`, `alpha-blend:<a>`, `gd:<eta>`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Config(format!("variant {name} needs a value, e.g. {name}:0.5")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value in {s:?}: {e}")))
        };
        let v = match name {
            "proj-grad" => CorrectionVariant::ProjGrad,
            "proj-delta" => CorrectionVariant::ProjDelta,
            "alpha-blend" => CorrectionVariant::AlphaBlend { alpha: num(arg)? },
            "gd" => CorrectionVariant::GdStep { eta: num(arg)? },
            _ => return Err(Error::Config(format!("unknown correction variant {s:?}"))),
        };
        if arg.is_some() && matches!(v, CorrectionVariant::ProjGrad | CorrectionVariant::ProjDelta) {
            return Err(Error::Config(format!("variant {name} takes no value")));
        }
        v.validate()?;
        Ok(v)
    }

    pub fn label(&self) -> String {
        match self {
            CorrectionVariant::ProjGrad => "proj-grad".into(),
            CorrectionVariant::ProjDelta => "proj-delta".into(),
            CorrectionVariant::AlphaBlend { alpha } => format!("alpha-blend:{alpha}"),
            CorrectionVariant::GdStep { eta } => format!("gd:{eta}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionCfg {
    pub variant: CorrectionVariant,
    pub iters: usize,
    /// Tokens used for the gradient each round; 0 means the whole set.
    pub calib_subset: usize,
}

impl Default for CorrectionCfg {
    fn default() -> Self {
        Self {
            variant: CorrectionVariant::ProjGrad,
            iters: 0,
            calib_subset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub delta: Mat,
    /// The gradient was zero, so no direction was available.
    pub degenerate: bool,
}

/// `(<g, dW> / <g, g>) g`: the smallest update whose first-order loss change
/// equals that of `dW`.
pub fn project_correction(g: &Mat, delta_w: &Mat) -> Result<Projection> {
    let gg = frob_inner(g, g)?;
    let gd = frob_inner(g, delta_w)?;
    if gg == 0.0 {
        return Ok(Projection {
            delta: Mat::zeros(g.rows(), g.cols()),
            degenerate: true,
        });
    }
    Ok(Projection {
        delta: g.scale(gd / gg),
        degenerate: false,
    })
}

/// Full updated matrix `W+` for one correction variant.
pub fn variant_update(variant: CorrectionVariant, w_orig: &Mat, w_trunc: &Mat, g: &Mat) -> Result<Mat> {
    if w_orig.shape() != w_trunc.shape() || g.shape() != w_orig.shape() {
        return Err(Error::Shape {
            op: "variant_update",
            detail: format!("{:?}, {:?}, {:?}", w_orig.shape(), w_trunc.shape(), g.shape()),
        });
    }
    variant.validate()?;
    let residual = w_orig.sub(w_trunc);
    Ok(match variant {
        CorrectionVariant::ProjGrad => w_trunc.add(&project_correction(g, &residual)?.delta),
        CorrectionVariant::AlphaBlend { alpha } => w_trunc.scale(1.0 - alpha).add_scaled(w_orig, alpha),
        CorrectionVariant::GdStep { eta } => w_trunc.add_scaled(g, -eta),
        CorrectionVariant::ProjDelta => {
            let rr = frob_inner(&residual, &residual)?;
            if rr == 0.0 {
                w_trunc.clone()
            } else {
                w_trunc.add_scaled(&residual, frob_inner(g, &residual)? / rr)
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLog {
    /// Calibration loss on the gradient subset before each round.
    pub round_losses: Vec<f64>,
    /// Layers whose gradient vanished, per round.
    pub degenerate_layers: Vec<Vec<usize>>,
}

/// Runs `cfg.iters` rounds of correction followed by re-truncation to each
/// factored layer's current rank. Dense layers are left untouched.
pub fn correct_iterate(
    model_orig: &ToyModel,
    layers: &[WhitenedLayer],
    compressed: &CompressedModel,
    calib: &CalibSet,
    cfg: &CorrectionCfg,
) -> Result<(CompressedModel, CorrectionLog)> {
    cfg.variant.validate()?;
    let mut log = CorrectionLog {
        round_losses: Vec::new(),
        degenerate_layers: Vec::new(),
    };
    if cfg.iters == 0 {
        return Ok((compressed.clone(), log));
    }
    if layers.len() != compressed.layers.len() || model_orig.num_layers() != layers.len() {
        return Err(Error::Shape {
            op: "correct_iterate",
            detail: "model, analysis and compressed model disagree on layer count".into(),
        });
    }
    if compressed
        .layers
        .iter()
        .any(|l| matches!(&l.weight, LayerWeight::Factored { wu, wv } if wu.is_quantized() || wv.is_quantized()))
    {
        return Err(Error::Config("correction runs before quantization".into()));
    }
    let subset = calib.prefix(cfg.calib_subset);
    let mut current = compressed.clone();
    for _ in 0..cfg.iters {
        let dense = current.materialize();
        let bw = backward(&dense, &subset)?;
        log.round_losses.push(bw.loss);
        let mut degenerate = Vec::new();
        for (l, layer) in current.layers.iter_mut().enumerate() {
            let Some(k) = layer.weight.rank() else { continue };
            let w_cur = &dense.weights[l];
            let g = &bw.captures[l].g;
            if cfg.variant == CorrectionVariant::ProjGrad && frob_inner(g, g)? == 0.0 {
                degenerate.push(l);
            }
            let updated = variant_update(cfg.variant, &model_orig.weights[l], w_cur, g)?;
            let (wu, wv) = layers[l].retruncate(&updated, k)?;
            layer.weight = LayerWeight::Factored {
                wu: Factor::Full(wu),
                wv: Factor::Full(wv),
            };
        }
        log.degenerate_layers.push(degenerate);
    }
    Ok((current, log))
}

/// Convenience wrapper keyed by an assignment: checks every factored layer
/// carries its assigned rank before correcting.
pub fn correct_assigned(
    model_orig: &ToyModel,
    layers: &[WhitenedLayer],
    assignment: &RankAssignment,
    compressed: &CompressedModel,
    calib: &CalibSet,
    cfg: &CorrectionCfg,
) -> Result<(CompressedModel, CorrectionLog)> {
    for (lr, layer) in assignment.layers.iter().zip(&compressed.layers) {
        if let Some(k) = layer.weight.rank() {
            if k != lr.rank {
                return Err(Error::Config(format!(
                    "layer {} is stored at rank {k} but assigned {}",
                    lr.layer_id, lr.rank
                )));
            }
        }
    }
    correct_iterate(model_orig, layers, compressed, calib, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEnergyRow {
    pub layer_id: usize,
    pub assigned_rank: usize,
    pub k_tau_weight: usize,
    pub k_tau_grad: Option<usize>,
    pub ratio: Option<f64>,
    /// Gradient spectrum was identically zero.
    pub zero_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEnergyReport {
    pub tau: f64,
    pub tokens: usize,
    pub rows: Vec<RankEnergyRow>,
}

/// Spectrum with values below the numerical-rank threshold zeroed.
fn clean_spectrum(sigma: &[f64]) -> Vec<f64> {
    let top = sigma.first().copied().unwrap_or(0.0);
    sigma
        .iter()
        .map(|&s| if s > NUMERICAL_RANK_RTOL * top { s } else { 0.0 })
        .collect()
}

/// Effective ranks at energy threshold `tau` of every factored layer's weight
/// and of the loss gradient at that weight.
pub fn rank_energy_report(compressed: &CompressedModel, calib: &CalibSet, tau: f64) -> Result<RankEnergyReport> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    let dense = compressed.materialize();
    let bw = backward(&dense, calib)?;
    let mut rows = Vec::new();
    for (l, layer) in compressed.layers.iter().enumerate() {
        let Some(k) = layer.weight.rank() else { continue };
        let ws = clean_spectrum(&svd(&dense.weights[l])?.sigma);
        let gs = clean_spectrum(&svd(&bw.captures[l].g)?.sigma);
        let k_w = if numerical_rank(&ws) == 0 { 0 } else { effective_rank(&ws, tau)? };
        let (k_g, zero) = if numerical_rank(&gs) == 0 {
            (None, true)
        } else {
            (Some(effective_rank(&gs, tau)?), false)
        };
        rows.push(RankEnergyRow {
            layer_id: l,
            assigned_rank: k,
            k_tau_weight: k_w,
            k_tau_grad: k_g,
            ratio: k_g.filter(|_| k_w > 0).map(|g| g as f64 / k_w as f64),
            zero_gradient: zero,
        });
    }
    Ok(RankEnergyReport {
        tau,
        tokens: calib.tokens(),
        rows,
    })
}
