//! End-to-end compression: analyze, select, assemble, correct, quantize.

use serde::{Deserialize, Serialize};

use crate::compressed::{CompressedModel, Footprint, LayerWeight};
use crate::correct::{correct_iterate, rank_energy_report, CorrectionCfg, CorrectionLog};
use crate::error::{Error, Result};
use crate::select::{
    apply_assignment, homogeneous_baseline, hq_plan, profiles, run_strategy, Accounting, BudgetMode, RankAssignment,
    Strategy,
};
use crate::store::report::{
    BudgetSummary, CorrectionSummary, LayerReport, LossSummary, Report, RunSummary, Seeds, SigmaSummary, REPORT_SCHEMA,
};
use crate::toynet::{backward, evaluate, CalibSet, ToyModel};
use crate::whiten::{analyze_layers, RidgeCfg, WhitenedLayer};

/// Bits per full-precision value in reported byte counts.
pub const REFERENCE_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    Remap,
    Hq,
    Exact,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Mode::Standard),
            "remap" => Some(Mode::Remap),
            "hq" => Some(Mode::Hq),
            "exact" => Some(Mode::Exact),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Remap => "remap",
            Mode::Hq => "hq",
            Mode::Exact => "exact",
        }
    }

    pub fn budget_mode(self) -> BudgetMode {
        match self {
            Mode::Standard => BudgetMode::standard(),
            Mode::Remap => Accounting::Remap.into(),
            Mode::Hq => BudgetMode {
                accounting: Accounting::Standard,
                hq: true,
            },
            Mode::Exact => Accounting::ExactStorage.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Strategy(Strategy),
    /// Same rank rule in every layer.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressConfig {
    pub ratio: f64,
    pub mode: Mode,
    pub selector: Selector,
    pub correction: CorrectionCfg,
    pub ridge: RidgeCfg,
    pub tau: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            ratio: 0.6,
            mode: Mode::Standard,
            selector: Selector::Strategy(Strategy::ZERO_SUM),
            correction: CorrectionCfg::default(),
            ridge: RidgeCfg::default(),
            tau: 0.95,
        }
    }
}

impl CompressConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio must lie in (0, 1], got {}", self.ratio)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.ridge.rel >= 0.0 && self.ridge.floor >= 0.0 && self.ridge.rel.is_finite() && self.ridge.floor.is_finite())
        {
            return Err(Error::Config("ridge terms must be finite and non-negative".into()));
        }
        if let Selector::Strategy(s) = self.selector {
            s.validate()?;
        }
        if self.mode == Mode::Remap && self.correction.iters > 0 {
            return Err(Error::Config("correction is not supported with remap accounting".into()));
        }
        self.correction.variant.validate()
    }

    fn strategy_label(&self) -> String {
        match self.selector {
            Selector::Homogeneous => "homogeneous".into(),
            Selector::Strategy(s) if s.per_w_sorted => s.rule.name().into(),
            Selector::Strategy(s) => format!("{}-unsorted", s.rule.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub layers: Vec<WhitenedLayer>,
    pub assignment: RankAssignment,
    /// Model right after assembly, before correction and quantization.
    pub selected: CompressedModel,
    pub compressed: CompressedModel,
    pub correction: CorrectionLog,
    pub report: Report,
}

/// Whitening and sensitivities for every layer at the model's weights.
pub fn analyze(model: &ToyModel, calib: &CalibSet, ridge: RidgeCfg) -> Result<Vec<WhitenedLayer>> {
    let bw = backward(model, calib)?;
    analyze_layers(&model.weights, &bw.captures, ridge)
}

/// Select ranks from an existing analysis.
pub fn select(layers: &[WhitenedLayer], cfg: &CompressConfig) -> Result<RankAssignment> {
    let ps = profiles(layers);
    let ratio = selection_ratio(cfg)?;
    match cfg.selector {
        Selector::Homogeneous => homogeneous_baseline(&ps, ratio),
        Selector::Strategy(s) => run_strategy(ps, cfg.mode.budget_mode(), ratio, s),
    }
}

fn selection_ratio(cfg: &CompressConfig) -> Result<f64> {
    Ok(match cfg.mode {
        Mode::Hq => hq_plan(cfg.ratio)?.selection_ratio,
        _ => cfg.ratio,
    })
}

fn footprint(model: &ToyModel, compressed: &CompressedModel, mode: Mode) -> Footprint {
    let full = REFERENCE_BITS as f64 / 8.0;
    let params_before: usize = model.weights.iter().map(|w| w.rows() * w.cols()).sum();
    let bytes_before = full * params_before as f64;
    let simulated = mode == Mode::Remap;
    let bytes_after = if simulated {
        // packed layout: k rows of length max(m, n)
        compressed
            .layers
            .iter()
            .map(|l| match &l.weight {
                LayerWeight::Factored { .. } => {
                    let (m, n) = l.weight.shape();
                    full * (l.weight.rank().unwrap_or(0) * m.max(n)) as f64
                }
                w => w.footprint_bytes(REFERENCE_BITS),
            })
            .sum()
    } else {
        compressed.footprint_bytes(REFERENCE_BITS)
    };
    Footprint {
        params_before,
        params_after: compressed.params(),
        reference_bits: REFERENCE_BITS,
        bytes_before,
        bytes_after,
        ratio: bytes_after / bytes_before,
        simulated,
    }
}

pub fn compress(model: &ToyModel, calib: &CalibSet, cfg: &CompressConfig, seeds: Option<Seeds>) -> Result<CompressOutcome> {
    cfg.validate()?;
    model.validate()?;
    let before = evaluate(model, calib)?;
    let layers = analyze(model, calib, cfg.ridge)?;
    let assignment = select(&layers, cfg)?;
    let selected = apply_assignment(model, &layers, &assignment)?;
    let after_selection = selected.evaluate(calib)?;
    let (corrected, log) = correct_iterate(model, &layers, &selected, calib, &cfg.correction)?;

    let mut warnings = Vec::new();
    if assignment.exhausted {
        warnings.push(format!(
            "candidates exhausted before the budget was met ({} of {})",
            assignment.budget_used, assignment.budget_total
        ));
    }
    let hq = if cfg.mode == Mode::Hq { Some(hq_plan(cfg.ratio)?) } else { None };
    if let Some(w) = hq.as_ref().and_then(|h| h.warning.clone()) {
        warnings.push(w);
    }
    for (round, layers) in log.degenerate_layers.iter().enumerate() {
        for l in layers {
            warnings.push(format!("round {round}: zero gradient at layer {l}, correction skipped"));
        }
    }

    let rank_energy = if corrected.layers.iter().any(|l| l.weight.is_factored()) {
        let r = rank_energy_report(&corrected, calib, cfg.tau)?;
        for row in r.rows.iter().filter(|r| r.zero_gradient) {
            warnings.push(format!("layer {}: zero gradient spectrum in rank-energy report", row.layer_id));
        }
        Some(r)
    } else {
        None
    };

    let compressed = match cfg.mode {
        Mode::Hq => corrected.quantize_all(),
        Mode::Remap => corrected.quantize_right_factors(),
        _ => corrected,
    };
    let after = compressed.evaluate(calib)?;

    let mut costs = vec![0.0; layers.len()];
    for step in &assignment.trace {
        costs[step.layer_id] += step.cost;
    }
    let layer_reports = layers
        .iter()
        .zip(&assignment.layers)
        .zip(&compressed.layers)
        .map(|((wl, lr), cl)| {
            let sigma = wl.sigma();
            let energy: f64 = sigma.iter().map(|s| s * s).sum();
            let kept_energy = lr.kept().iter().map(|&i| sigma[i] * sigma[i]).sum();
            LayerReport {
                layer_id: lr.layer_id,
                rows: lr.rows,
                cols: lr.cols,
                rank_full: lr.rank_full,
                k_thr: lr.k_thr,
                rank: lr.rank,
                dense_fallback: lr.dense_fallback,
                lambda: wl.lambda_used,
                sigma: SigmaSummary {
                    count: sigma.len(),
                    max: sigma.first().copied().unwrap_or(0.0),
                    min: sigma.last().copied().unwrap_or(0.0),
                    energy,
                    kept_energy: if lr.dense_fallback { energy } else { kept_energy },
                },
                removed_dl: lr.removed_dl,
                removed: lr.removed.len(),
                params: cl.weight.params(),
                budget_cost: costs[lr.layer_id],
            }
        })
        .collect();

    let report = Report {
        schema_version: REPORT_SCHEMA.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: RunSummary {
            dims: model.dims(),
            activation: model.activation.name().to_string(),
            tokens: calib.tokens(),
            mode: cfg.mode.name().to_string(),
            strategy: cfg.strategy_label(),
            target_ratio: cfg.ratio,
            selection_ratio: selection_ratio(cfg)?,
            quantize_bits: match cfg.mode {
                Mode::Hq | Mode::Remap => Some(8),
                _ => None,
            },
            ridge_rel: cfg.ridge.rel,
            ridge_floor: cfg.ridge.floor,
            tau: cfg.tau,
        },
        seeds,
        budget: BudgetSummary {
            total: assignment.budget_total,
            used: assignment.budget_used,
            drift: assignment.predicted_drift,
            exhausted: assignment.exhausted,
            steps: assignment.trace.len(),
        },
        layers: layer_reports,
        footprint: footprint(model, &compressed, cfg.mode),
        loss: LossSummary {
            before,
            after_selection,
            after,
        },
        correction: (cfg.correction.iters > 0).then(|| CorrectionSummary::new(&cfg.correction, log.round_losses.clone())),
        rank_energy,
        trace: assignment.trace.clone(),
        warnings,
    };

    Ok(CompressOutcome {
        layers,
        assignment,
        selected,
        compressed,
        correction: log,
        report,
    })
}
