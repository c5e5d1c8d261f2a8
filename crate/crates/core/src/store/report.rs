//! Run reports: pretty-printed JSON with a fixed key order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compressed::Footprint;
use crate::correct::{CorrectionCfg, RankEnergyReport};
use crate::error::Result;
use crate::select::StepRecord;
use crate::store::tensor_file::write_atomic;
use crate::toynet::Evaluation;

pub const REPORT_SCHEMA: &str = "lowrank-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub teacher: u64,
    pub fuzz: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            model: seed,
            teacher: seed.wrapping_add(1),
            fuzz: seed.wrapping_add(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dims: Vec<usize>,
    pub activation: String,
    pub tokens: usize,
    pub mode: String,
    pub strategy: String,
    pub target_ratio: f64,
    pub selection_ratio: f64,
    pub quantize_bits: Option<u32>,
    pub ridge_rel: f64,
    pub ridge_floor: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub total: f64,
    pub used: f64,
    pub drift: f64,
    pub exhausted: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub count: usize,
    pub max: f64,
    pub min: f64,
    pub energy: f64,
    pub kept_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank_full: usize,
    pub k_thr: usize,
    pub rank: usize,
    pub dense_fallback: bool,
    pub lambda: f64,
    pub sigma: SigmaSummary,
    /// Sum of predicted loss changes of the dropped components.
    pub removed_dl: f64,
    pub removed: usize,
    pub params: usize,
    pub budget_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub before: Evaluation,
    pub after_selection: Evaluation,
    pub after: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub variant: String,
    pub iters: usize,
    pub calib_subset: usize,
    pub round_losses: Vec<f64>,
}

impl CorrectionSummary {
    pub fn new(cfg: &CorrectionCfg, round_losses: Vec<f64>) -> Self {
        Self {
            variant: cfg.variant.label(),
            iters: cfg.iters,
            calib_subset: cfg.calib_subset,
            round_losses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub tool_version: String,
    pub config: RunSummary,
    pub seeds: Option<Seeds>,
    pub budget: BudgetSummary,
    pub layers: Vec<LayerReport>,
    pub footprint: Footprint,
    pub loss: LossSummary,
    pub correction: Option<CorrectionSummary>,
    pub rank_energy: Option<RankEnergyReport>,
    pub trace: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

pub fn report_to_string(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_atomic(path, report_to_string(report)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<Report> {
    let s = std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
