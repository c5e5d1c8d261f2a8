//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification checks, 2 configuration or
//! usage errors, 3 I/O and file-format errors, 4 numerical failures.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::correct::{CorrectionCfg, CorrectionVariant};
use crate::error::{Error, Result};
use crate::oracle::{run_suite, CheckKind, SuiteCfg};
use crate::pipeline::{compress, CompressConfig, Mode, Selector};
use crate::select::{Rule, Strategy};
use crate::store::report::{report_to_string, Seeds};
use crate::store::{load_calib, load_compressed, save_calib, save_compressed, save_model, write_report};
use crate::toynet::{build_model, gen_calibration, Activation, CalibSet, ModelSpec, ToyModel};
use crate::whiten::RidgeCfg;

#[derive(Debug, Parser)]
#[command(name = "lowrank", version, about = "Whitened low-rank compression with zero-sum component selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a seeded toy model and calibration set and write them to disk.
    Init(InitArgs),
    /// Compress a model and write the compressed model and a report.
    Compress(CompressArgs),
    /// Print loss and perplexity of one or more model files.
    Evaluate(EvaluateArgs),
    /// Print spectra, sensitivities, rank-energy and drift traces as columns.
    Analyze(CompressArgs),
    /// Run the oracle suite; exits 0 only if every check passes.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Model file; conflicts with --spec.
    #[arg(long, conflicts_with = "spec")]
    pub model: Option<PathBuf>,
    /// Inline layer widths, e.g. 32,64,48,10.
    #[arg(long, value_delimiter = ',')]
    pub spec: Option<Vec<usize>>,
    /// Activation for --spec models: gelu_tanh or tanh.
    #[arg(long, default_value = "gelu_tanh", conflicts_with = "model")]
    pub activation: String,
    /// Calibration file; conflicts with --tokens and --teacher-seed.
    #[arg(long, conflicts_with_all = ["tokens", "teacher_seed"])]
    pub calib: Option<PathBuf>,
    /// Tokens to generate when no calibration file is given.
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Base seed: model = seed, teacher = seed + 1, fuzz = seed + 2.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the derived teacher seed.
    #[arg(long)]
    pub teacher_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub calib_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Fraction of dense parameters to keep, in (0, 1].
    #[arg(long, default_value_t = 0.6)]
    pub ratio: f64,
    /// standard, remap, hq or exact.
    #[arg(long, default_value = "standard")]
    pub mode: String,
    /// zero-sum, most-negative, min-abs-dl, min-sigma or homogeneous.
    #[arg(long, default_value = "zero-sum")]
    pub strategy: String,
    /// Let strategies remove components out of spectral order.
    #[arg(long)]
    pub unsorted: bool,
    /// proj-grad, proj-delta, alpha-blend:<a> or gd:<eta>.
    #[arg(long)]
    pub correct: Option<String>,
    /// Correction rounds; defaults to 1 when --correct is given.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Tokens per correction round; 0 uses all.
    #[arg(long, default_value_t = 0)]
    pub subset: usize,
    #[arg(long)]
    pub ridge_rel: Option<f64>,
    #[arg(long)]
    pub ridge_floor: Option<f64>,
    /// Energy threshold for effective ranks.
    #[arg(long, default_value_t = 0.95)]
    pub tau: f64,
    /// Compressed model output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model files (plain or compressed).
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[arg(long, conflicts_with_all = ["tokens", "teacher_seed"])]
    pub calib: Option<PathBuf>,
    /// Tokens to generate when no calibration file is given.
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub teacher_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated subset of whitened-residual, eckart-young, deltal-fd,
    /// rank-bound, selector.
    #[arg(long, value_delimiter = ',')]
    pub checks: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ridge used by the whitened-residual instances.
    #[arg(long, default_value_t = 1e-10)]
    pub ridge_floor: f64,
    /// Also write results as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

const DEFAULT_TOKENS: usize = 512;

fn activation(s: &str) -> Result<Activation> {
    Activation::parse(s).ok_or_else(|| Error::Config(format!("unknown activation {s:?}")))
}

fn load_source(src: &SourceArgs) -> Result<(ToyModel, CalibSet, Seeds)> {
    let mut seeds = Seeds::from_base(src.seed);
    if let Some(t) = src.teacher_seed {
        seeds.teacher = t;
    }
    if src.tokens == Some(0) {
        return Err(Error::Config("--tokens must be at least 1".into()));
    }
    let (model, spec) = match (&src.model, &src.spec) {
        (Some(p), None) => {
            let m = crate::store::load_model(p)?;
            let spec = ModelSpec::new(m.dims(), m.activation, seeds.teacher);
            (m, spec)
        }
        (None, Some(dims)) => {
            let spec = ModelSpec::new(dims.clone(), activation(&src.activation)?, seeds.model);
            spec.validate()?;
            (build_model(&spec)?, spec)
        }
        (None, None) => return Err(Error::Config("give either --model or --spec".into())),
        (Some(_), Some(_)) => return Err(Error::Config("--model and --spec are mutually exclusive".into())),
    };
    let calib = match &src.calib {
        Some(p) => load_calib(p)?,
        None => gen_calibration(&spec, seeds.teacher, src.tokens.unwrap_or(DEFAULT_TOKENS))?,
    };
    calib.validate(model.classes())?;
    Ok((model, calib, seeds))
}

impl CompressArgs {
    /// Validates every flag without touching inputs.
    pub fn config(&self) -> Result<CompressConfig> {
        let mode = Mode::parse(&self.mode).ok_or_else(|| Error::Config(format!("unknown mode {:?}", self.mode)))?;
        let selector = if self.strategy == "homogeneous" {
            if self.unsorted {
                return Err(Error::Config("--unsorted does not apply to the homogeneous baseline".into()));
            }
            Selector::Homogeneous
        } else {
            let rule = Rule::parse(&self.strategy)
                .ok_or_else(|| Error::Config(format!("unknown strategy {:?}", self.strategy)))?;
            Selector::Strategy(Strategy::new(rule, !self.unsorted)?)
        };
        let variant = match &self.correct {
            Some(v) => CorrectionVariant::parse(v)?,
            None => CorrectionVariant::ProjGrad,
        };
        let iters = match (&self.correct, self.iters) {
            (_, Some(i)) => i,
            (Some(_), None) => 1,
            (None, None) => 0,
        };
        let defaults = RidgeCfg::default();
        let cfg = CompressConfig {
            ratio: self.ratio,
            mode,
            selector,
            correction: CorrectionCfg {
                variant,
                iters,
                calib_subset: self.subset,
            },
            ridge: RidgeCfg {
                rel: self.ridge_rel.unwrap_or(defaults.rel),
                floor: self.ridge_floor.unwrap_or(defaults.floor),
            },
            tau: self.tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_init(a: &InitArgs) -> Result<String> {
    let (model, calib, seeds) = load_source(&a.source)?;
    save_model(&a.out, &model)?;
    if let Some(p) = &a.calib_out {
        save_calib(p, &calib)?;
    }
    Ok(format!(
        "wrote model {:?} (dims {:?}, seed {}){}\n",
        a.out,
        model.dims(),
        seeds.model,
        a.calib_out
            .as_ref()
            .map(|p| format!(" and {} calibration tokens to {p:?}", calib.tokens()))
            .unwrap_or_default()
    ))
}

pub fn cmd_compress(a: &CompressArgs) -> Result<String> {
    let cfg = a.config()?;
    let (model, calib, seeds) = load_source(&a.source)?;
    let out = compress(&model, &calib, &cfg, Some(seeds))?;
    if let Some(p) = &a.out {
        save_compressed(p, &out.compressed)?;
    }
    if let Some(p) = &a.report {
        write_report(p, &out.report)?;
    }
    let r = &out.report;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "mode {} ratio {} (selection {}), strategy {}",
        r.config.mode, r.config.target_ratio, r.config.selection_ratio, r.config.strategy
    );
    let _ = writeln!(s, "layer\tshape\trank\tk_thr\tdense\tparams");
    for l in &r.layers {
        let _ = writeln!(
            s,
            "{}\t{}x{}\t{}\t{}\t{}\t{}",
            l.layer_id, l.rows, l.cols, l.rank, l.k_thr, l.dense_fallback, l.params
        );
    }
    let _ = writeln!(
        s,
        "budget {:.1}/{:.1}, drift {:.6e}, params {} -> {}, footprint ratio {:.4}",
        r.budget.used, r.budget.total, r.budget.drift, r.footprint.params_before, r.footprint.params_after, r.footprint.ratio
    );
    let _ = writeln!(
        s,
        "loss {:.6} -> {:.6} (ppl {:.4} -> {:.4})",
        r.loss.before.loss, r.loss.after.loss, r.loss.before.perplexity, r.loss.after.perplexity
    );
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    if out.report.loss.after.loss.is_nan() {
        return Err(Error::NonFinite { what: "compressed loss" });
    }
    Ok(s)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<String> {
    let mut s = String::from("model\tloss\tperplexity\tparams\n");
    let mut calib_cache: Option<CalibSet> = None;
    for p in &a.models {
        let cm = load_compressed(p)?;
        let calib = match (&a.calib, &calib_cache) {
            (_, Some(c)) => c.clone(),
            (Some(cp), None) => load_calib(cp)?,
            (None, None) => {
                let dense = cm.materialize();
                let teacher = a.teacher_seed.unwrap_or(a.seed.wrapping_add(1));
                let spec = ModelSpec::new(dense.dims(), dense.activation, teacher);
                gen_calibration(&spec, teacher, a.tokens.unwrap_or(DEFAULT_TOKENS))?
            }
        };
        let ev = cm.evaluate(&calib)?;
        let _ = writeln!(s, "{}\t{:.9}\t{:.6}\t{}", p.display(), ev.loss, ev.perplexity, cm.params());
        calib_cache = Some(calib);
    }
    Ok(s)
}

fn cmd_analyze(a: &CompressArgs) -> Result<String> {
    let cfg = a.config()?;
    let (model, calib, seeds) = load_source(&a.source)?;
    let out = compress(&model, &calib, &cfg, Some(seeds))?;
    let mut s = String::new();
    let _ = writeln!(s, "# spectra\nlayer\tindex\tsigma\tg_sigma\tdelta_l\tkept");
    for (wl, lr) in out.layers.iter().zip(&out.assignment.layers) {
        let kept = lr.kept();
        for i in 0..wl.rank_full() {
            let _ = writeln!(
                s,
                "{}\t{i}\t{:.9e}\t{:.9e}\t{:.9e}\t{}",
                wl.layer_id,
                wl.sigma()[i],
                wl.g_sigma[i],
                wl.delta_l[i],
                u8::from(lr.dense_fallback || kept.binary_search(&i).is_ok())
            );
        }
    }
    let _ = writeln!(s, "\n# drift\nstep\tlayer\tcomp\tdelta_l\ts\tcost\tb\trank");
    for (t, r) in out.assignment.trace.iter().enumerate() {
        let _ = writeln!(
            s,
            "{t}\t{}\t{}\t{:.9e}\t{:.9e}\t{}\t{}\t{}",
            r.layer_id, r.comp, r.dl, r.s_after, r.cost, r.b_after, r.rank_after
        );
    }
    let _ = writeln!(s, "\n# rank_energy tau={}\nlayer\trank\tk_tau_weight\tk_tau_grad\tratio", cfg.tau);
    if let Some(re) = &out.report.rank_energy {
        for r in &re.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.layer_id,
                r.assigned_rank,
                r.k_tau_weight,
                r.k_tau_grad.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                r.ratio.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
            );
        }
    }
    if let Some(p) = &a.report {
        write_report(p, &out.report)?;
    }
    Ok(s)
}

/// Returns the printed summary and whether every check passed.
pub fn cmd_verify(a: &VerifyArgs) -> Result<(String, bool)> {
    let checks = match &a.checks {
        None => CheckKind::ALL.to_vec(),
        Some(list) => list
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| CheckKind::parse(s).ok_or_else(|| Error::Config(format!("unknown check {s:?}"))))
            .collect::<Result<Vec<_>>>()?,
    };
    let results = run_suite(&SuiteCfg {
        checks,
        seed: a.seed,
        ridge_floor: a.ridge_floor,
        ridge: RidgeCfg::default(),
    })?;
    let mut s = String::new();
    let mut by_name: Vec<(String, usize, usize)> = Vec::new();
    for r in &results {
        match by_name.iter_mut().find(|e| e.0 == r.name) {
            Some(e) => {
                e.1 += usize::from(r.pass);
                e.2 += 1;
            }
            None => by_name.push((r.name.clone(), usize::from(r.pass), 1)),
        }
        if !r.pass {
            let _ = writeln!(s, "FAIL {}: measured {:e} (tolerance {:e}) {}", r.name, r.measured, r.tolerance, r.context);
        }
    }
    for (name, pass, total) in &by_name {
        let _ = writeln!(s, "{name}: {pass}/{total} passed");
    }
    if let Some(p) = &a.report {
        let mut json = serde_json::to_string_pretty(&results)?;
        json.push('\n');
        crate::store::tensor_file::write_atomic(p, json.as_bytes())?;
    }
    Ok((s, results.iter().all(|r| r.pass)))
}

/// Runs one parsed command and returns its exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Init(a) => cmd_init(a).map(|s| (s, true)),
        Command::Compress(a) => cmd_compress(a).map(|s| (s, true)),
        Command::Evaluate(a) => cmd_evaluate(a).map(|s| (s, true)),
        Command::Analyze(a) => cmd_analyze(a).map(|s| (s, true)),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok((text, ok)) => {
            print!("{text}");
            if ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}

pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

/// Report text for a compress invocation, without writing files.
pub fn compress_report_text(a: &CompressArgs) -> Result<String> {
    let cfg = a.config()?;
    let (model, calib, seeds) = load_source(&a.source)?;
    report_to_string(&compress(&model, &calib, &cfg, Some(seeds))?.report)
}
