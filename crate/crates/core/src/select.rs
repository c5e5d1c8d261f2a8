//! Global singular-component selection under a parameter budget.
//!
//! Within each matrix components are removed from the smallest singular value
//! upward. Across matrices the zero-sum rule keeps two min-heaps of the next
//! candidate of every layer, partitioned by the sign of its predicted loss
//! change and keyed by magnitude: when the running sum `s` of removed
//! predictions is `<= 0` a non-negative candidate is taken, otherwise a
//! negative one, so the cumulative predicted drift keeps returning to zero.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::compressed::{CompressedLayer, CompressedModel, Factor, LayerWeight};
use crate::error::{Error, Result};
use crate::toynet::ToyModel;
use crate::whiten::{ascending_order, k_threshold, WhitenedLayer};

/// Selector view of one target matrix: its spectrum and predicted loss
/// changes. Built from a [`WhitenedLayer`] or synthesized for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub sigma: Vec<f64>,
    pub delta_l: Vec<f64>,
    pub order: Vec<usize>,
    pub k_thr: usize,
}

impl LayerProfile {
    pub fn new(layer_id: usize, rows: usize, cols: usize, sigma: Vec<f64>, delta_l: Vec<f64>) -> Result<Self> {
        if sigma.len() != rows.min(cols) || delta_l.len() != sigma.len() {
            return Err(Error::Shape {
                op: "LayerProfile",
                detail: format!(
                    "{rows}x{cols} layer needs {} components, got {} sigmas and {} deltas",
                    rows.min(cols),
                    sigma.len(),
                    delta_l.len()
                ),
            });
        }
        Ok(Self {
            layer_id,
            rows,
            cols,
            order: ascending_order(&sigma),
            k_thr: k_threshold(rows, cols),
            sigma,
            delta_l,
        })
    }

    pub fn rank_full(&self) -> usize {
        self.sigma.len()
    }

    pub fn dense_params(&self) -> usize {
        self.rows * self.cols
    }

    pub fn factored_params(&self, k: usize) -> usize {
        k * (self.rows + self.cols)
    }

    /// Cheapest representation at rank `k`.
    pub fn storage(&self, k: usize) -> usize {
        self.dense_params().min(self.factored_params(k))
    }
}

impl From<&WhitenedLayer> for LayerProfile {
    fn from(wl: &WhitenedLayer) -> Self {
        Self {
            layer_id: wl.layer_id,
            rows: wl.rows(),
            cols: wl.cols(),
            sigma: wl.sigma().to_vec(),
            delta_l: wl.delta_l.clone(),
            order: wl.order.clone(),
            k_thr: wl.k_thr,
        }
    }
}

pub fn profiles(layers: &[WhitenedLayer]) -> Vec<LayerProfile> {
    layers.iter().map(LayerProfile::from).collect()
}

/// How removals are charged against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// `m + n` per drop once the rank is at or below `k_thr`, else 0.
    Standard,
    /// `max(m, n)` per drop from the first one (packed-factor storage).
    Remap,
    /// The true storage reduction `storage(k + 1) - storage(k)`.
    ExactStorage,
}

impl Accounting {
    pub fn name(self) -> &'static str {
        match self {
            Accounting::Standard => "standard",
            Accounting::Remap => "remap",
            Accounting::ExactStorage => "exact",
        }
    }

    fn initial_cost(self, p: &LayerProfile) -> f64 {
        match self {
            Accounting::Remap => p.rows.max(p.cols) as f64,
            _ => 0.0,
        }
    }

    /// Budget credited for the drop that leaves `k_after` components.
    pub fn drop_cost(self, p: &LayerProfile, k_after: usize) -> f64 {
        match self {
            Accounting::Standard => {
                if k_after <= p.k_thr {
                    (p.rows + p.cols) as f64
                } else {
                    0.0
                }
            }
            Accounting::Remap => p.rows.max(p.cols) as f64,
            Accounting::ExactStorage => p.storage(k_after + 1).saturating_sub(p.storage(k_after)) as f64,
        }
    }

    /// Largest cost a single drop from this layer can be charged.
    pub fn max_cost(self, p: &LayerProfile) -> f64 {
        match self {
            Accounting::Remap => p.rows.max(p.cols) as f64,
            _ => (p.rows + p.cols) as f64,
        }
    }

    /// Whether a layer left at rank `k` keeps its dense weight.
    pub fn keeps_dense(self, p: &LayerProfile, k: usize) -> bool {
        match self {
            Accounting::Standard => k > p.k_thr,
            Accounting::ExactStorage => p.factored_params(k) >= p.dense_params(),
            Accounting::Remap => k == p.rank_full(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetMode {
    pub accounting: Accounting,
    /// Half-prune plus 8-bit quantization.
    pub hq: bool,
}

impl BudgetMode {
    pub fn new(accounting: Accounting, hq: bool) -> Result<Self> {
        if hq && accounting == Accounting::Remap {
            return Err(Error::Config("remap accounting and hq are mutually exclusive".into()));
        }
        Ok(Self { accounting, hq })
    }

    pub fn standard() -> Self {
        Self {
            accounting: Accounting::Standard,
            hq: false,
        }
    }
}

impl From<Accounting> for BudgetMode {
    fn from(accounting: Accounting) -> Self {
        Self { accounting, hq: false }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(())
}

/// `(1 - ratio) * sum m n`.
pub fn budget_total(profiles: &[LayerProfile], ratio: f64) -> f64 {
    let total: usize = profiles.iter().map(LayerProfile::dense_params).sum();
    (1.0 - ratio) * total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub layer_id: usize,
    pub comp: usize,
    pub dl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeapSide {
    Plus,
    Minus,
}

impl HeapSide {
    pub fn of(dl: f64) -> Self {
        if dl >= 0.0 {
            HeapSide::Plus
        } else {
            HeapSide::Minus
        }
    }
}

/// Heap entry ordered by `(key, layer index, component)`.
#[derive(Debug, Clone, Copy)]
struct Keyed {
    key: f64,
    slot: usize,
    comp: usize,
    dl: f64,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Keyed {}
impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.slot.cmp(&other.slot))
            .then(self.comp.cmp(&other.comp))
    }
}

type MinHeap = BinaryHeap<Reverse<Keyed>>;

/// One executed removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub layer_id: usize,
    pub comp: usize,
    pub dl: f64,
    pub heap: HeapSide,
    pub s_after: f64,
    pub cost: f64,
    pub b_after: f64,
    pub rank_after: usize,
}

/// Mutable state of the zero-sum selector.
#[derive(Debug, Clone)]
pub struct SelectionState {
    profiles: Vec<LayerProfile>,
    q_plus: MinHeap,
    q_minus: MinHeap,
    pub s: f64,
    /// Per layer, removed component indices in removal order.
    pub removed: Vec<Vec<usize>>,
    /// Per layer, number of components removed so far (`p - 1`).
    pub pointer: Vec<usize>,
    pub budget_total: f64,
    pub budget_used: f64,
    pub cost: Vec<f64>,
    pub mode: BudgetMode,
    pub ratio: f64,
    pub trace: Vec<StepRecord>,
}

impl SelectionState {
    pub fn new(profiles: Vec<LayerProfile>, mode: BudgetMode, ratio: f64) -> Result<Self> {
        check_ratio(ratio)?;
        if profiles.is_empty() {
            return Err(Error::Config("selection needs at least one layer".into()));
        }
        let budget_total = budget_total(&profiles, ratio);
        let cost = profiles.iter().map(|p| mode.accounting.initial_cost(p)).collect();
        let mut state = Self {
            q_plus: MinHeap::new(),
            q_minus: MinHeap::new(),
            s: 0.0,
            removed: vec![Vec::new(); profiles.len()],
            pointer: vec![0; profiles.len()],
            budget_total,
            budget_used: 0.0,
            cost,
            mode,
            ratio,
            trace: Vec::new(),
            profiles,
        };
        for slot in 0..state.profiles.len() {
            state.push_next(slot);
        }
        Ok(state)
    }

    pub fn profiles(&self) -> &[LayerProfile] {
        &self.profiles
    }

    pub fn heap_sizes(&self) -> (usize, usize) {
        (self.q_plus.len(), self.q_minus.len())
    }

    /// Candidates currently queued, `(plus, minus)`, in pop order.
    pub fn queued(&self) -> (Vec<Candidate>, Vec<Candidate>) {
        let dump = |h: &MinHeap| {
            let mut v: Vec<Keyed> = h.iter().map(|r| r.0).collect();
            v.sort();
            v.into_iter()
                .map(|k| Candidate {
                    layer_id: self.profiles[k.slot].layer_id,
                    comp: k.comp,
                    dl: k.dl,
                })
                .collect()
        };
        (dump(&self.q_plus), dump(&self.q_minus))
    }

    fn push_next(&mut self, slot: usize) {
        let p = &self.profiles[slot];
        let ptr = self.pointer[slot];
        if ptr >= p.rank_full() {
            return;
        }
        let comp = p.order[ptr];
        let dl = p.delta_l[comp];
        let entry = Reverse(Keyed {
            key: dl.abs(),
            slot,
            comp,
            dl,
        });
        match HeapSide::of(dl) {
            HeapSide::Plus => self.q_plus.push(entry),
            HeapSide::Minus => self.q_minus.push(entry),
        }
    }

    pub fn budget_met(&self) -> bool {
        self.budget_used >= self.budget_total
    }

    pub fn exhausted(&self) -> bool {
        self.q_plus.is_empty() && self.q_minus.is_empty()
    }

    /// Pops one candidate by the zero-sum rule. `None` once both heaps are
    /// empty.
    pub fn step(&mut self) -> Option<StepRecord> {
        let prefer_plus = self.s <= 0.0;
        let (first, second, first_side, second_side) = if prefer_plus {
            (&mut self.q_plus, &mut self.q_minus, HeapSide::Plus, HeapSide::Minus)
        } else {
            (&mut self.q_minus, &mut self.q_plus, HeapSide::Minus, HeapSide::Plus)
        };
        let (entry, heap) = match first.pop() {
            Some(Reverse(e)) => (e, first_side),
            None => (second.pop()?.0, second_side),
        };

        let slot = entry.slot;
        self.s += entry.dl;
        self.removed[slot].push(entry.comp);
        self.pointer[slot] += 1;
        let p = &self.profiles[slot];
        let rank_after = p.rank_full() - self.pointer[slot];
        let cost = self.mode.accounting.drop_cost(p, rank_after);
        self.cost[slot] = cost;
        self.budget_used += cost;
        let rec = StepRecord {
            layer_id: p.layer_id,
            comp: entry.comp,
            dl: entry.dl,
            heap,
            s_after: self.s,
            cost,
            b_after: self.budget_used,
            rank_after,
        };
        self.push_next(slot);
        self.trace.push(rec);
        Some(rec)
    }

    /// Steps until the budget is met or no candidates remain.
    pub fn run(mut self) -> RankAssignment {
        while !self.budget_met() {
            if self.step().is_none() {
                break;
            }
        }
        let exhausted = !self.budget_met();
        RankAssignment::build(
            &self.profiles,
            self.mode.accounting,
            &self.removed,
            self.s,
            self.budget_total,
            self.budget_used,
            exhausted,
            self.trace,
        )
    }
}

/// Final per-layer rank decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRank {
    pub layer_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank_full: usize,
    pub k_thr: usize,
    pub rank: usize,
    pub dense_fallback: bool,
    /// Removed component indices in removal order.
    pub removed: Vec<usize>,
    /// Sum of predicted loss changes over removed components.
    pub removed_dl: f64,
}

impl LayerRank {
    /// Kept component indices, ascending (descending sigma).
    pub fn kept(&self) -> Vec<usize> {
        let mut mask = vec![true; self.rank_full];
        self.removed.iter().for_each(|&i| mask[i] = false);
        (0..self.rank_full).filter(|&i| mask[i]).collect()
    }

    /// Parameters stored for this layer after assembly.
    pub fn stored_params(&self) -> usize {
        if self.dense_fallback {
            self.rows * self.cols
        } else {
            self.rank * (self.rows + self.cols)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAssignment {
    pub accounting: Accounting,
    pub layers: Vec<LayerRank>,
    /// Final running sum `s` of predicted loss changes.
    pub predicted_drift: f64,
    pub budget_total: f64,
    pub budget_used: f64,
    /// Candidates ran out before the budget was met.
    pub exhausted: bool,
    pub trace: Vec<StepRecord>,
}

impl RankAssignment {
    #[allow(clippy::too_many_arguments)]
    fn build(
        profiles: &[LayerProfile],
        accounting: Accounting,
        removed: &[Vec<usize>],
        drift: f64,
        budget_total: f64,
        budget_used: f64,
        exhausted: bool,
        trace: Vec<StepRecord>,
    ) -> Self {
        let layers = profiles
            .iter()
            .zip(removed)
            .map(|(p, rem)| {
                let rank = p.rank_full() - rem.len();
                LayerRank {
                    layer_id: p.layer_id,
                    rows: p.rows,
                    cols: p.cols,
                    rank_full: p.rank_full(),
                    k_thr: p.k_thr,
                    rank,
                    dense_fallback: accounting.keeps_dense(p, rank),
                    removed: rem.clone(),
                    removed_dl: rem.iter().map(|&i| p.delta_l[i]).sum(),
                }
            })
            .collect();
        Self {
            accounting,
            layers,
            predicted_drift: drift,
            budget_total,
            budget_used,
            exhausted,
            trace,
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.rank).collect()
    }

    pub fn stored_params(&self) -> usize {
        self.layers.iter().map(LayerRank::stored_params).sum()
    }

    pub fn dense_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols).sum()
    }
}

/// Zero-sum selection from freshly initialized state.
pub fn run_selection(profiles: Vec<LayerProfile>, mode: BudgetMode, ratio: f64) -> Result<RankAssignment> {
    Ok(SelectionState::new(profiles, mode, ratio)?.run())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ZeroSum,
    /// Globally most negative predicted loss change first.
    MostNegative,
    /// Globally smallest `|ΔL|` first.
    MinAbsDl,
    /// Globally smallest singular value first.
    MinSigma,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::ZeroSum => "zero-sum",
            Rule::MostNegative => "most-negative",
            Rule::MinAbsDl => "min-abs-dl",
            Rule::MinSigma => "min-sigma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero-sum" | "zerosum" => Some(Rule::ZeroSum),
            "most-negative" => Some(Rule::MostNegative),
            "min-abs-dl" => Some(Rule::MinAbsDl),
            "min-sigma" => Some(Rule::MinSigma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub rule: Rule,
    /// Restrict each layer to its next smallest-sigma component.
    pub per_w_sorted: bool,
}

impl Strategy {
    pub const ZERO_SUM: Strategy = Strategy {
        rule: Rule::ZeroSum,
        per_w_sorted: true,
    };

    pub fn new(rule: Rule, per_w_sorted: bool) -> Result<Self> {
        let s = Self { rule, per_w_sorted };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rule == Rule::ZeroSum && !self.per_w_sorted {
            return Err(Error::Config("zero-sum selection requires per-matrix sigma ordering".into()));
        }
        Ok(())
    }

    fn key(&self, p: &LayerProfile, comp: usize) -> f64 {
        match self.rule {
            Rule::MostNegative => p.delta_l[comp],
            Rule::MinAbsDl => p.delta_l[comp].abs(),
            Rule::MinSigma => p.sigma[comp],
            Rule::ZeroSum => unreachable!("zero-sum uses the two-heap selector"),
        }
    }
}

/// Single-heap greedy ablation strategies with the same budget accounting as
/// the zero-sum selector.
pub fn run_strategy(
    profiles: Vec<LayerProfile>,
    mode: BudgetMode,
    ratio: f64,
    strategy: Strategy,
) -> Result<RankAssignment> {
    strategy.validate()?;
    if strategy.rule == Rule::ZeroSum {
        return run_selection(profiles, mode, ratio);
    }
    check_ratio(ratio)?;
    if profiles.is_empty() {
        return Err(Error::Config("selection needs at least one layer".into()));
    }
    let budget_total = budget_total(&profiles, ratio);
    let mut heap = MinHeap::new();
    let mut removed: Vec<Vec<usize>> = vec![Vec::new(); profiles.len()];
    let push = |heap: &mut MinHeap, slot: usize, comp: usize| {
        let p = &profiles[slot];
        heap.push(Reverse(Keyed {
            key: strategy.key(p, comp),
            slot,
            comp,
            dl: p.delta_l[comp],
        }));
    };
    for (slot, p) in profiles.iter().enumerate() {
        if strategy.per_w_sorted {
            if let Some(&first) = p.order.first() {
                push(&mut heap, slot, first);
            }
        } else {
            for comp in 0..p.rank_full() {
                push(&mut heap, slot, comp);
            }
        }
    }

    let (mut s, mut b) = (0.0, 0.0);
    let mut trace = Vec::new();
    while b < budget_total {
        let Some(Reverse(e)) = heap.pop() else { break };
        let p = &profiles[e.slot];
        removed[e.slot].push(e.comp);
        s += e.dl;
        let count = removed[e.slot].len();
        let rank_after = p.rank_full() - count;
        let cost = mode.accounting.drop_cost(p, rank_after);
        b += cost;
        trace.push(StepRecord {
            layer_id: p.layer_id,
            comp: e.comp,
            dl: e.dl,
            heap: HeapSide::of(e.dl),
            s_after: s,
            cost,
            b_after: b,
            rank_after,
        });
        if strategy.per_w_sorted && count < p.rank_full() {
            push(&mut heap, e.slot, p.order[count]);
        }
    }
    let exhausted = b < budget_total;
    Ok(RankAssignment::build(
        &profiles,
        mode.accounting,
        &removed,
        s,
        budget_total,
        b,
        exhausted,
        trace,
    ))
}

/// Same rank `floor(ratio * mn / (m + n))` rule for every layer, keeping the
/// largest singular values.
pub fn homogeneous_baseline(profiles: &[LayerProfile], ratio: f64) -> Result<RankAssignment> {
    check_ratio(ratio)?;
    let mut removed = Vec::with_capacity(profiles.len());
    let mut used = 0.0;
    for p in profiles {
        let k = homogeneous_rank(p.rows, p.cols, ratio).min(p.rank_full());
        removed.push(p.order[..p.rank_full() - k].to_vec());
        used += (p.dense_params() - p.factored_params(k)) as f64;
    }
    let drift = profiles
        .iter()
        .zip(&removed)
        .map(|(p, r)| r.iter().map(|&i| p.delta_l[i]).sum::<f64>())
        .sum();
    let mut a = RankAssignment::build(
        profiles,
        Accounting::Standard,
        &removed,
        drift,
        budget_total(profiles, ratio),
        used,
        false,
        Vec::new(),
    );
    a.layers.iter_mut().for_each(|l| l.dense_fallback = false);
    Ok(a)
}

pub fn homogeneous_rank(m: usize, n: usize, ratio: f64) -> usize {
    (ratio * (m * n) as f64 / (m + n) as f64).floor() as usize
}

/// Selection ratio and bit-width for half-prune plus quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HqPlan {
    pub target_ratio: f64,
    pub selection_ratio: f64,
    pub quantize_bits: u32,
    /// Nominal footprint relative to the unquantized dense model.
    pub footprint_ratio: f64,
    pub warning: Option<String>,
}

pub fn hq_plan(target_ratio: f64) -> Result<HqPlan> {
    check_ratio(target_ratio)?;
    let selection_ratio = (2.0 * target_ratio).min(1.0);
    let warning = (target_ratio > 0.5).then(|| {
        format!("hq target ratio {target_ratio} exceeds 0.5; selection ratio clamped to 1")
    });
    Ok(HqPlan {
        target_ratio,
        selection_ratio,
        quantize_bits: 8,
        footprint_ratio: selection_ratio / 2.0,
        warning,
    })
}

/// Assembles the compressed model: dense copies for fallback layers, low-rank
/// factors over the kept components otherwise. Biases are copied unchanged.
pub fn apply_assignment(
    model: &ToyModel,
    layers: &[WhitenedLayer],
    assignment: &RankAssignment,
) -> Result<CompressedModel> {
    if layers.len() != model.num_layers() || assignment.layers.len() != layers.len() {
        return Err(Error::Shape {
            op: "apply_assignment",
            detail: format!(
                "model has {} layers, whitened {}, assignment {}",
                model.num_layers(),
                layers.len(),
                assignment.layers.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(layers.len());
    for ((w, wl), lr) in model.weights.iter().zip(layers).zip(&assignment.layers) {
        if (wl.rows(), wl.cols()) != w.shape() || (lr.rows, lr.cols) != w.shape() {
            return Err(Error::Shape {
                op: "apply_assignment",
                detail: format!("layer {} shape disagrees with its analysis", lr.layer_id),
            });
        }
        let weight = if lr.dense_fallback {
            LayerWeight::Dense(Factor::Full(w.clone()))
        } else {
            let (wu, wv) = wl.reconstruct(&lr.kept())?;
            LayerWeight::Factored {
                wu: Factor::Full(wu),
                wv: Factor::Full(wv),
            }
        };
        out.push(weight);
    }
    Ok(CompressedModel {
        activation: model.activation,
        layers: out
            .into_iter()
            .zip(&model.biases)
            .map(|(weight, b)| CompressedLayer {
                weight,
                bias: b.clone(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: usize, m: usize, n: usize, dl: Vec<f64>) -> LayerProfile {
        let r = m.min(n);
        // sigma ascending with index reversed: component r-1 is smallest
        let sigma = (0..r).map(|i| (r - i) as f64).collect();
        LayerProfile::new(id, m, n, sigma, dl).unwrap()
    }

    #[test]
    fn init_budget_and_costs() {
        let ps = vec![profile(0, 4, 4, vec![0.1; 4]), profile(1, 4, 4, vec![0.1; 4])];
        let st = SelectionState::new(ps, BudgetMode::standard(), 0.5).unwrap();
        assert_eq!(st.budget_total, 16.0);
        assert_eq!(st.cost, vec![0.0, 0.0]);
        assert_eq!((st.s, st.budget_used), (0.0, 0.0));

        let ps = vec![profile(0, 6, 4, vec![0.1; 4])];
        let st = SelectionState::new(ps, Accounting::Remap.into(), 0.5).unwrap();
        assert_eq!(st.cost, vec![6.0]);

        let ps = vec![profile(0, 3, 3, vec![-1.0, -2.0, -3.0])];
        let st = SelectionState::new(ps, BudgetMode::standard(), 0.5).unwrap();
        assert_eq!(st.heap_sizes(), (0, 1));
        // smallest sigma is the last component
        assert_eq!(st.queued().1[0].comp, 2);
    }

    #[test]
    fn ratio_validation() {
        let ps = vec![profile(0, 2, 2, vec![0.0; 2])];
        assert!(SelectionState::new(ps.clone(), BudgetMode::standard(), 0.0).is_err());
        assert!(SelectionState::new(ps.clone(), BudgetMode::standard(), 1.5).is_err());
        assert!(SelectionState::new(vec![], BudgetMode::standard(), 0.5).is_err());
        assert!(BudgetMode::new(Accounting::Remap, true).is_err());
        assert!(homogeneous_baseline(&ps, -1.0).is_err());
    }

    #[test]
    fn two_layer_trace_by_hand() {
        // layer 0 (A): next candidates +0.4 then -0.1; layer 1 (B): -0.3
        let a = profile(0, 3, 3, vec![9.0, -0.1, 0.4]);
        let b = profile(1, 3, 3, vec![9.0, 9.0, -0.3]);
        let mut st = SelectionState::new(vec![a, b], BudgetMode::standard(), 0.1).unwrap();
        let r1 = st.step().unwrap();
        assert_eq!((r1.layer_id, r1.dl, r1.heap), (0, 0.4, HeapSide::Plus));
        assert!((st.s - 0.4).abs() < 1e-15);
        let r2 = st.step().unwrap();
        assert_eq!((r2.layer_id, r2.dl, r2.heap), (0, -0.1, HeapSide::Minus));
        assert!((st.s - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_square_layer_hand_trace() {
        let p = profile(0, 4, 4, vec![0.5, -0.2, 0.3, -0.1]);
        assert_eq!(p.k_thr, 2);
        let mut st = SelectionState::new(vec![p], BudgetMode::standard(), 0.5).unwrap();
        assert_eq!(st.budget_total, 8.0);
        let s1 = st.step().unwrap();
        assert_eq!((s1.rank_after, s1.cost, s1.b_after), (3, 0.0, 0.0));
        let s2 = st.step().unwrap();
        assert_eq!((s2.rank_after, s2.cost, s2.b_after), (2, 8.0, 8.0));
        assert!(st.budget_met());
        let a = st.run();
        assert_eq!(a.layers[0].rank, 2);
        assert!(!a.layers[0].dense_fallback);
        assert_eq!(a.trace.len(), 2);
    }

    #[test]
    fn full_ratio_does_nothing() {
        let ps = vec![profile(0, 4, 6, vec![0.1; 4]), profile(1, 5, 3, vec![-0.1; 3])];
        let a = run_selection(ps, BudgetMode::standard(), 1.0).unwrap();
        assert!(a.trace.is_empty());
        assert!(a.layers.iter().all(|l| l.dense_fallback && l.rank == l.rank_full));
        assert!(!a.exhausted);
    }

    #[test]
    fn zero_deltas_follow_tie_break() {
        let ps = vec![profile(0, 3, 3, vec![0.0; 3]), profile(1, 2, 2, vec![0.0; 2])];
        let mut st = SelectionState::new(ps, BudgetMode::standard(), 0.01).unwrap();
        let mut seq = Vec::new();
        while let Some(r) = st.step() {
            seq.push((r.layer_id, r.comp));
        }
        // all keys 0: layer 0 drains first (lower layer id), ascending sigma
        assert_eq!(seq, vec![(0, 2), (0, 1), (0, 0), (1, 1), (1, 0)]);
    }

    #[test]
    fn exhaustion_is_flagged() {
        // tiny budget impossible to meet in Standard: 1x1 layer
        let ps = vec![profile(0, 1, 1, vec![0.2])];
        let a = run_selection(ps, Accounting::ExactStorage.into(), 0.01).unwrap();
        // dropping the only component saves exactly 1 >= 0.99
        assert!(!a.exhausted);
        let ps = vec![profile(0, 2, 2, vec![0.2, 0.1])];
        let mut st = SelectionState::new(ps, BudgetMode::standard(), 0.01).unwrap();
        st.budget_total = 1e9;
        let a = st.run();
        assert!(a.exhausted);
        assert_eq!(a.layers[0].rank, 0);
    }

    #[test]
    fn strategy_validation_and_degeneracies() {
        assert!(Strategy::new(Rule::ZeroSum, false).is_err());
        let ps = vec![profile(0, 6, 5, vec![0.3, -0.2, 0.1, -0.4, 0.05])];
        let mut sets = Vec::new();
        for rule in [Rule::ZeroSum, Rule::MostNegative, Rule::MinAbsDl, Rule::MinSigma] {
            let a = run_strategy(ps.clone(), BudgetMode::standard(), 0.5, Strategy::new(rule, true).unwrap()).unwrap();
            sets.push(a.layers[0].removed.clone());
        }
        assert!(sets.windows(2).all(|w| w[0] == w[1]), "{sets:?}");
    }

    #[test]
    fn min_sigma_is_global_merge() {
        let a = LayerProfile::new(0, 3, 3, vec![5.0, 3.0, 1.0], vec![0.0; 3]).unwrap();
        let b = LayerProfile::new(1, 3, 3, vec![4.0, 2.0, 0.5], vec![0.0; 3]).unwrap();
        let res = run_strategy(
            vec![a, b],
            BudgetMode::standard(),
            0.01,
            Strategy::new(Rule::MinSigma, true).unwrap(),
        )
        .unwrap();
        let seq: Vec<(usize, usize)> = res.trace.iter().map(|r| (r.layer_id, r.comp)).collect();
        assert_eq!(seq, [(1, 2), (0, 2), (1, 1)]);
    }

    #[test]
    fn unsorted_strategies_may_skip_order() {
        let p = LayerProfile::new(0, 4, 4, vec![4.0, 3.0, 2.0, 1.0], vec![-5.0, 0.1, 0.2, 0.3]).unwrap();
        let res = run_strategy(vec![p], BudgetMode::standard(), 0.9, Strategy::new(Rule::MostNegative, false).unwrap())
            .unwrap();
        assert_eq!(res.layers[0].removed[0], 0);
    }

    #[test]
    fn homogeneous_rule() {
        assert_eq!(homogeneous_rank(8, 8, 1.0), 4);
        assert_eq!(homogeneous_rank(64, 32, 0.6), 12);
        let p = profile(0, 64, 32, vec![0.0; 32]);
        let a = homogeneous_baseline(&[p], 0.6).unwrap();
        assert_eq!(a.layers[0].rank, 12);
        assert!(a.layers[0].stored_params() as f64 <= 0.6 * 2048.0);
        // keeps the largest sigma: removed are the 20 smallest
        assert_eq!(a.layers[0].kept(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn hq_plans() {
        let p = hq_plan(0.4).unwrap();
        assert_eq!((p.selection_ratio, p.quantize_bits, p.footprint_ratio), (0.8, 8, 0.4));
        let p = hq_plan(0.5).unwrap();
        assert_eq!(p.selection_ratio, 1.0);
        assert!(p.warning.is_none());
        assert_eq!(hq_plan(0.25).unwrap().footprint_ratio, 0.25);
        let p = hq_plan(0.7).unwrap();
        assert_eq!(p.selection_ratio, 1.0);
        assert!(p.warning.is_some());
    }

    #[test]
    fn exact_storage_costs() {
        let p = profile(0, 4, 4, vec![0.0; 4]);
        // storage: k=4 -> 16, k=3 -> 16, k=2 -> 16, k=1 -> 8, k=0 -> 0
        let acc = Accounting::ExactStorage;
        assert_eq!(acc.drop_cost(&p, 3), 0.0);
        assert_eq!(acc.drop_cost(&p, 2), 0.0);
        assert_eq!(acc.drop_cost(&p, 1), 8.0);
        assert_eq!(acc.drop_cost(&p, 0), 8.0);
        assert!(acc.keeps_dense(&p, 2));
        assert!(!acc.keeps_dense(&p, 1));
    }
}
