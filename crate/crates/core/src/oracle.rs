//! Brute-force validators.
//!
//! Each check recomputes its claim from linear-algebra primitives only, never
//! through the module it is checking: the whitened-residual check multiplies out both
//! sides, the selector check replays a heap-free linear scan, and so on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_ridge, solve_right_inverse, svd, Mat, NUMERICAL_RANK_RTOL};
use crate::select::{Accounting, BudgetMode, LayerProfile, SelectionState};
use crate::toynet::{backward, build_model, forward_loss, gen_calibration, Activation, CalibSet, ModelSpec, ToyModel};
use crate::whiten::{analyze_layers, RidgeCfg, WhitenedLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub context: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, pass: bool, measured: f64, tolerance: f64, context: String) -> Self {
        Self {
            name: name.into(),
            pass,
            measured,
            tolerance,
            context,
        }
    }
}

pub(crate) fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect();
    Mat::from_vec(rows, cols, data).expect("finite gaussian draws")
}

#[cfg(test)]
fn rank_k_approx(a: &Mat, k: usize) -> Result<Mat> {
    let d = svd(a)?;
    let k = k.min(d.sigma.len());
    let idx: Vec<usize> = (0..k).collect();
    Ok(d.u.select_cols(&idx).scale_cols(&d.sigma[..k]).matmul(&d.vt.select_rows(&idx)))
}

/// Relative gap between `‖WX − W'_k X‖²` and `Σ_{i>k} σᵢ²`, both computed by
/// direct multiplication, with `λ = ridge_floor` only.
pub fn check_whitened_residual(w: &Mat, x: &Mat, k: usize, ridge_floor: f64) -> Result<CheckResult> {
    const TOL: f64 = 1e-6;
    if w.cols() != x.rows() {
        return Err(Error::Shape {
            op: "check_whitened_residual",
            detail: format!("W is {:?}, X is {:?}", w.shape(), x.shape()),
        });
    }
    let c = x.matmul_t(x);
    let s = cholesky_ridge(&c, ridge_floor)?;
    let a = w.matmul(&s);
    let d = svd(&a)?;
    let r = d.sigma.len();
    let k = k.min(r);
    let idx: Vec<usize> = (0..k).collect();
    let a_k = d.u.select_cols(&idx).scale_cols(&d.sigma[..k]).matmul(&d.vt.select_rows(&idx));
    let w_k = solve_right_inverse(&a_k, &s)?;
    let lhs = w.matmul(x).sub(&w_k.matmul(x)).frob_norm_sq();
    let rhs: f64 = d.sigma[k..].iter().map(|v| v * v).sum();
    let total: f64 = d.sigma.iter().map(|v| v * v).sum();
    let gap = if total > 0.0 { (lhs - rhs).abs() / total } else { (lhs - rhs).abs() };
    Ok(CheckResult::new(
        "whitened_residual",
        gap <= TOL,
        gap,
        TOL,
        format!("W {:?}, T {}, k {k}, lambda {ridge_floor:e}", w.shape(), x.cols()),
    ))
}

/// `‖A − A_k‖_F ≤ ‖A − B‖_F` for random rank-`k` matrices `B` and random
/// perturbations of the factors of `A_k`. `measured` is the most negative
/// margin seen, relative to `‖A‖_F`.
pub fn check_eckart_young(a: &Mat, k: usize, trials: usize, seed: u64) -> Result<CheckResult> {
    if trials == 0 {
        return Err(Error::Config("eckart-young check needs at least one trial".into()));
    }
    let (m, n) = a.shape();
    let d = svd(a)?;
    let k = k.min(d.sigma.len());
    let idx: Vec<usize> = (0..k).collect();
    let left = d.u.select_cols(&idx).scale_cols(&d.sigma[..k]);
    let right = d.vt.select_rows(&idx);
    let best = a.sub(&left.matmul(&right)).frob_norm();
    let norm = a.frob_norm().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut violations = 0usize;
    for t in 0..trials {
        let b = if t % 2 == 0 {
            let scale = norm / ((m * n) as f64).sqrt() * rng.random_range(0.1..3.0);
            gaussian(m, k, &mut rng).matmul(&gaussian(k, n, &mut rng)).scale(scale / (k.max(1) as f64).sqrt())
        } else {
            let eps = 10f64.powf(rng.random_range(-4.0..-1.0)) * norm;
            let l = left.add(&gaussian(m, k, &mut rng).scale(eps / (m as f64).sqrt()));
            let r = right.add(&gaussian(k, n, &mut rng).scale(eps / norm / (n as f64).sqrt()));
            l.matmul(&r)
        };
        let margin = (a.sub(&b).frob_norm() - best) / norm;
        worst = worst.min(margin);
        // equality is only reachable up to roundoff
        if margin < -1e-12 {
            violations += 1;
        }
    }
    Ok(CheckResult::new(
        "eckart_young",
        violations == 0,
        worst,
        -1e-12,
        format!("A {m}x{n}, k {k}, {trials} trials, seed {seed}, {violations} violations"),
    ))
}

/// Central-difference slopes along one whitened singular direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdLadder {
    pub predicted: f64,
    pub eps: Vec<f64>,
    pub slopes: Vec<f64>,
    pub errors: Vec<f64>,
    /// Roundoff level of each slope, `~ulp(L) / eps`.
    pub noise: Vec<f64>,
}

pub const FD_EPS: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_DEGENERATE: f64 = 1e-10;

/// Loss slopes when `W` moves along `uᵢ vᵢᵀ S⁻¹` (that is, `A` along
/// `uᵢ vᵢᵀ`), for a caller-supplied loss of the layer weight.
pub fn fd_ladder(loss: &dyn Fn(&Mat) -> Result<f64>, w: &Mat, layer: &WhitenedLayer, i: usize, eps: &[f64]) -> Result<FdLadder> {
    if i >= layer.rank_full() {
        return Err(Error::Config(format!("component {i} out of range for rank {}", layer.rank_full())));
    }
    let u = Mat::from_cols(layer.rows(), &[layer.svd.u.col(i)]);
    let v = Mat::from_vec(1, layer.cols(), layer.svd.vt.row(i).to_vec())?;
    let dir = u.matmul(&solve_right_inverse(&v, &layer.s)?);
    let base = loss(w)?;
    let mut out = FdLadder {
        predicted: layer.g_sigma[i],
        eps: eps.to_vec(),
        slopes: Vec::new(),
        errors: Vec::new(),
        noise: Vec::new(),
    };
    for &e in eps {
        let plus = loss(&w.add_scaled(&dir, e))?;
        let minus = loss(&w.add_scaled(&dir, -e))?;
        let slope = (plus - minus) / (2.0 * e);
        out.slopes.push(slope);
        out.errors.push((slope - out.predicted).abs());
        out.noise.push(64.0 * f64::EPSILON * base.abs().max(1.0) / e);
    }
    Ok(out)
}

/// Pass rule: slope error at `ε = 1e−4` within `FD_REL_TOL` relative, and the
/// error shrinking by ≥ 3 per decade until it reaches the roundoff level.
pub fn judge_ladder(l: &FdLadder) -> (bool, f64) {
    let scale = l.predicted.abs();
    let at = l.eps.iter().position(|&e| e == 1e-4).unwrap_or(l.eps.len() / 2);
    let rel = l.errors[at] / scale.max(f64::MIN_POSITIVE);
    let converging = l.errors.windows(2).zip(l.noise.windows(2)).all(|(e, nz)| {
        // below the noise floor the ratio is meaningless
        e[0] <= 3.0 * nz[0] || e[1] <= nz[1] || e[0] >= 3.0 * e[1]
    });
    (rel <= FD_REL_TOL && converging, rel)
}

/// FD ladder check of `g_σ,i` for `layer` of a toy model.
pub fn check_deltal_fd(
    model: &ToyModel,
    calib: &CalibSet,
    layer: usize,
    i: usize,
    eps: &[f64],
    ridge: RidgeCfg,
) -> Result<CheckResult> {
    if layer >= model.num_layers() {
        return Err(Error::Config(format!("layer {layer} out of range")));
    }
    let bw = backward(model, calib)?;
    let layers = analyze_layers(&model.weights, &bw.captures, ridge)?;
    let loss = |w: &Mat| -> Result<f64> {
        let mut m = model.clone();
        m.weights[layer] = w.clone();
        Ok(forward_loss(&m, calib)?.loss)
    };
    let ladder = fd_ladder(&loss, &model.weights[layer], &layers[layer], i, eps)?;
    let (pass, rel) = judge_ladder(&ladder);
    let degenerate = ladder.predicted.abs() < FD_DEGENERATE;
    Ok(CheckResult::new(
        "deltal_fd",
        pass,
        rel,
        FD_REL_TOL,
        format!(
            "layer {layer}, component {i}, g_sigma {:.3e}, errors {:?}{}",
            ladder.predicted,
            ladder.errors,
            if degenerate { ", degenerate" } else { "" }
        ),
    ))
}

/// Numerical rank by the trailing-singular-value test.
pub fn numerical_rank_of(m: &Mat) -> Result<usize> {
    let s = svd(m)?.sigma;
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > NUMERICAL_RANK_RTOL * top).count())
}

/// `rank(A + B) ≤ rank(A) + rank(B)` for random low-rank `A`, `B` of shape
/// `m x n`.
pub fn check_rank_bound(seed_a: u64, seed_b: u64, a_rank: usize, b_rank: usize, m: usize, n: usize) -> Result<CheckResult> {
    let low_rank = |seed: u64, r: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(m, r, &mut rng).matmul(&gaussian(r, n, &mut rng))
    };
    let a = low_rank(seed_a, a_rank);
    let b = low_rank(seed_b, b_rank);
    let rank = numerical_rank_of(&a.add(&b))?;
    Ok(CheckResult::new(
        "rank_bound",
        rank <= a_rank + b_rank,
        rank as f64,
        (a_rank + b_rank) as f64,
        format!("{m}x{n}, ranks {a_rank}+{b_rank}, seeds ({seed_a}, {seed_b})"),
    ))
}

/// A fuzzed selector input.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorInstance {
    pub profiles: Vec<LayerProfile>,
    pub accounting: Accounting,
    pub ratio: f64,
}

pub fn fuzz_instance(seed: u64) -> SelectorInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(2..=8);
    let profiles = (0..layers)
        .map(|id| {
            let m = rng.random_range(1..=24);
            let n = rng.random_range(1..=24);
            let r = m.min(n);
            // a few repeated values exercise the tie rules
            let mut sigma: Vec<f64> = (0..r)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        1.0
                    } else {
                        rng.random_range(0.0..5.0)
                    }
                })
                .collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            let delta_l = (0..r)
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => 0.25,
                    2 => -0.25,
                    _ => rng.random_range(-1.0..1.0),
                })
                .collect();
            LayerProfile::new(id, m, n, sigma, delta_l).expect("fuzzed profile")
        })
        .collect();
    let accounting = match rng.random_range(0..3) {
        0 => Accounting::Standard,
        1 => Accounting::Remap,
        _ => Accounting::ExactStorage,
    };
    let ratio = rng.random_range(0.05..=1.0);
    SelectorInstance {
        profiles,
        accounting,
        ratio,
    }
}

/// One step of the linear-scan replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanStep {
    pub slot: usize,
    pub comp: usize,
    pub s: f64,
    pub b: f64,
    pub preferred_side_empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub budget: f64,
    pub steps: Vec<ScanStep>,
}

fn ascending_scan(sigma: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..sigma.len()).collect();
    let mut out = Vec::with_capacity(sigma.len());
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (left[j], left[best]);
            if sigma[a] < sigma[b] || (sigma[a] == sigma[b] && a < b) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn scan_cost(acc: Accounting, m: usize, n: usize, k: usize) -> f64 {
    let storage = |k: usize| (m * n).min(k * (m + n));
    match acc {
        Accounting::Standard => {
            if k <= (m * n).div_ceil(m + n) {
                (m + n) as f64
            } else {
                0.0
            }
        }
        Accounting::Remap => m.max(n) as f64,
        Accounting::ExactStorage => (storage(k + 1) - storage(k)) as f64,
    }
}

/// Heap-free zero-sum selection: every step scans each layer's next
/// component and picks the smallest `|ΔL|` on the preferred sign side.
pub fn linear_scan_select(inst: &SelectorInstance) -> ScanResult {
    let ps = &inst.profiles;
    let orders: Vec<Vec<usize>> = ps.iter().map(|p| ascending_scan(&p.sigma)).collect();
    let mut next = vec![0usize; ps.len()];
    let dense: usize = ps.iter().map(|p| p.rows * p.cols).sum();
    let budget = (1.0 - inst.ratio) * dense as f64;
    let (mut s, mut b) = (0.0f64, 0.0f64);
    let mut steps = Vec::new();
    while b < budget {
        let mut best: [Option<(f64, usize, usize)>; 2] = [None, None];
        for (slot, p) in ps.iter().enumerate() {
            let Some(&comp) = orders[slot].get(next[slot]) else { continue };
            let dl = p.delta_l[comp];
            let side = usize::from(dl < 0.0);
            let cand = (dl.abs(), slot, comp);
            let better = match best[side] {
                None => true,
                Some(cur) => cand.0 < cur.0 || (cand.0 == cur.0 && (cand.1, cand.2) < (cur.1, cur.2)),
            };
            if better {
                best[side] = Some(cand);
            }
        }
        let preferred = if s <= 0.0 { 0 } else { 1 };
        let (pick, fallback) = match (best[preferred], best[1 - preferred]) {
            (Some(c), _) => (c, false),
            (None, Some(c)) => (c, true),
            (None, None) => break,
        };
        let (_, slot, comp) = pick;
        let p = &ps[slot];
        s += p.delta_l[comp];
        next[slot] += 1;
        let k = p.sigma.len() - next[slot];
        b += scan_cost(inst.accounting, p.rows, p.cols, k);
        steps.push(ScanStep {
            slot,
            comp,
            s,
            b,
            preferred_side_empty: fallback,
        });
    }
    ScanResult { budget, steps }
}

/// Replays the heap selector against [`linear_scan_select`] on one fuzzed
/// instance, and checks sign discipline, prefix removal and the budget
/// bracket along the way.
pub fn check_selector_trace(fuzz_seed: u64) -> Result<CheckResult> {
    let inst = fuzz_instance(fuzz_seed);
    check_selector_instance(&inst, &format!("fuzz seed {fuzz_seed}"))
}

pub fn check_selector_instance(inst: &SelectorInstance, label: &str) -> Result<CheckResult> {
    let oracle = linear_scan_select(inst);
    let mut state = SelectionState::new(inst.profiles.clone(), BudgetMode::from(inst.accounting), inst.ratio)?;
    let mut problems = Vec::new();
    if state.budget_total != oracle.budget {
        problems.push(format!("budget {} vs {}", state.budget_total, oracle.budget));
    }
    let mut steps = 0usize;
    while !state.budget_met() {
        let s_before = state.s;
        let (plus, minus) = state.heap_sizes();
        let Some(rec) = state.step() else { break };
        let Some(want) = oracle.steps.get(steps) else {
            problems.push(format!("extra step {steps}"));
            break;
        };
        let slot = inst.profiles.iter().position(|p| p.layer_id == rec.layer_id).unwrap_or(usize::MAX);
        if (slot, rec.comp) != (want.slot, want.comp) || rec.s_after != want.s || rec.b_after != want.b {
            problems.push(format!(
                "step {steps}: got ({slot}, {}, s {}, b {}), want ({}, {}, s {}, b {})",
                rec.comp, rec.s_after, rec.b_after, want.slot, want.comp, want.s, want.b
            ));
            break;
        }
        // sign discipline: the preferred side is used whenever it has candidates
        let preferred_plus = s_before <= 0.0;
        let preferred_len = if preferred_plus { plus } else { minus };
        let took_plus = rec.dl >= 0.0;
        if preferred_len > 0 && took_plus != preferred_plus {
            problems.push(format!("step {steps}: left the preferred heap"));
        }
        if preferred_len == 0 && !want.preferred_side_empty {
            problems.push(format!("step {steps}: heap sizes disagree with the scan"));
        }
        steps += 1;
    }
    if steps != oracle.steps.len() {
        problems.push(format!("{steps} steps, scan took {}", oracle.steps.len()));
    }
    for (p, removed) in inst.profiles.iter().zip(&state.removed) {
        let order = ascending_scan(&p.sigma);
        if removed[..] != order[..removed.len()] {
            problems.push(format!("layer {}: removal set is not a prefix", p.layer_id));
        }
    }
    // budget bracket, only meaningful while candidates remain
    let max_cost = inst
        .profiles
        .iter()
        .map(|p| match inst.accounting {
            Accounting::Remap => p.rows.max(p.cols) as f64,
            _ => (p.rows + p.cols) as f64,
        })
        .fold(0.0, f64::max);
    if !state.exhausted() && !(state.budget_used >= state.budget_total && state.budget_used < state.budget_total + max_cost) {
        problems.push(format!("budget {} outside [{}, +{max_cost})", state.budget_used, state.budget_total));
    }
    Ok(CheckResult::new(
        "selector_trace",
        problems.is_empty(),
        problems.len() as f64,
        0.0,
        format!(
            "{label}: {} layers, {}, ratio {:.3}, {steps} steps{}",
            inst.profiles.len(),
            inst.accounting.name(),
            inst.ratio,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    WhitenedResidual,
    EckartYoung,
    DeltaLFd,
    RankBound,
    Selector,
}

impl CheckKind {
    pub const ALL: [CheckKind; 5] = [
        CheckKind::WhitenedResidual,
        CheckKind::EckartYoung,
        CheckKind::DeltaLFd,
        CheckKind::RankBound,
        CheckKind::Selector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::WhitenedResidual => "whitened-residual",
            CheckKind::EckartYoung => "eckart-young",
            CheckKind::DeltaLFd => "deltal-fd",
            CheckKind::RankBound => "rank-bound",
            CheckKind::Selector => "selector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCfg {
    pub checks: Vec<CheckKind>,
    pub seed: u64,
    /// Ridge for the whitened-residual instances.
    pub ridge_floor: f64,
    pub ridge: RidgeCfg,
}

impl Default for SuiteCfg {
    fn default() -> Self {
        Self {
            checks: CheckKind::ALL.to_vec(),
            seed: 0,
            ridge_floor: 1e-10,
            ridge: RidgeCfg::default(),
        }
    }
}

/// Runs the selected checks at default sizes.
pub fn run_suite(cfg: &SuiteCfg) -> Result<Vec<CheckResult>> {
    if cfg.checks.is_empty() {
        return Err(Error::Config("no checks selected".into()));
    }
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for &kind in &cfg.checks {
        match kind {
            CheckKind::WhitenedResidual => {
                for _ in 0..10 {
                    let m = rng.random_range(1..=16);
                    let n = rng.random_range(1..=16);
                    let w = gaussian(m, n, &mut rng);
                    let x = gaussian(n, 4 * n, &mut rng);
                    for k in 0..=m.min(n) {
                        out.push(check_whitened_residual(&w, &x, k, cfg.ridge_floor)?);
                    }
                }
            }
            CheckKind::EckartYoung => {
                for t in 0..5 {
                    let m = rng.random_range(2..=12);
                    let n = rng.random_range(2..=12);
                    let a = gaussian(m, n, &mut rng);
                    let k = rng.random_range(1..=m.min(n));
                    out.push(check_eckart_young(&a, k, 200, cfg.seed.wrapping_add(t))?);
                }
            }
            CheckKind::DeltaLFd => {
                let spec = ModelSpec::new(vec![32, 64, 48, 10], Activation::GeluTanh, cfg.seed);
                let model = build_model(&spec)?;
                let calib = gen_calibration(&spec, cfg.seed, 512)?;
                for _ in 0..10 {
                    let layer = rng.random_range(0..model.num_layers());
                    let (m, n) = model.weights[layer].shape();
                    let i = rng.random_range(0..m.min(n));
                    out.push(check_deltal_fd(&model, &calib, layer, i, &FD_EPS, cfg.ridge)?);
                }
            }
            CheckKind::RankBound => {
                for t in 0..20u64 {
                    let a = rng.random_range(0..=4);
                    let b = rng.random_range(0..=4);
                    let base = cfg.seed.wrapping_mul(1000).wrapping_add(2 * t);
                    out.push(check_rank_bound(base, base + 1, a, b, 10, 10)?);
                }
            }
            CheckKind::Selector => {
                for t in 0..100u64 {
                    out.push(check_selector_trace(cfg.seed.wrapping_mul(1000).wrapping_add(t))?);
                }
            }
        }
    }
    Ok(out)
}

/// Removal order of a fuzzed instance, for inspection.
pub fn scan_removals(inst: &SelectorInstance) -> Vec<(usize, usize)> {
    linear_scan_select(inst).steps.iter().map(|s| (s.slot, s.comp)).collect()
}
