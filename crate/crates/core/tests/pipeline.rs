use lowrank::compressed::LayerWeight;
use lowrank::correct::{CorrectionCfg, CorrectionVariant};
use lowrank::pipeline::{compress, CompressConfig, Mode, Selector};
use lowrank::select::{Rule, Strategy};
use lowrank::store::report::{report_to_string, Seeds};
use lowrank::toynet::{build_model, gen_calibration, Activation, CalibSet, ModelSpec, ToyModel};

fn setup(seed: u64) -> (ToyModel, CalibSet) {
    let spec = ModelSpec::new(vec![16, 32, 24, 6], Activation::Tanh, seed);
    let model = build_model(&spec).unwrap();
    let calib = gen_calibration(&spec, seed, 128).unwrap();
    (model, calib)
}

fn cfg(ratio: f64, mode: Mode) -> CompressConfig {
    CompressConfig {
        ratio,
        mode,
        ..CompressConfig::default()
    }
}

#[test]
fn report_is_internally_consistent() {
    let (model, calib) = setup(11);
    for mode in [Mode::Standard, Mode::Exact, Mode::Hq, Mode::Remap] {
        for ratio in [0.3, 0.6, 0.9] {
            let out = compress(&model, &calib, &cfg(ratio, mode), Some(Seeds::from_base(11))).unwrap();
            let r = &out.report;
            let a = &out.assignment;
            let removed: f64 = a.layers.iter().map(|l| l.removed_dl).sum();
            assert!((removed - r.budget.drift).abs() < 1e-12 * (1.0 + removed.abs()), "{mode:?} {ratio}");
            let used: f64 = r.trace.iter().map(|s| s.cost).sum();
            assert!((used - r.budget.used).abs() < 1e-9);
            assert!(r.budget.exhausted || r.budget.used >= r.budget.total);
            assert_eq!(r.footprint.params_after, out.compressed.params());
            assert_eq!(out.selected.params(), a.stored_params());
            for (lr, cl) in r.layers.iter().zip(&out.compressed.layers) {
                assert_eq!(cl.weight.rank().is_none(), lr.dense_fallback);
                if let Some(k) = cl.weight.rank() {
                    assert_eq!(k, lr.rank);
                }
            }
        }
    }
}

#[test]
fn exact_mode_meets_the_parameter_target() {
    let (model, calib) = setup(3);
    for ratio in [0.2, 0.5, 0.8] {
        let out = compress(&model, &calib, &cfg(ratio, Mode::Exact), None).unwrap();
        let dense = out.assignment.dense_params() as f64;
        assert!(out.compressed.params() as f64 <= ratio * dense + 1e-9, "ratio {ratio}");
    }
}

#[test]
fn full_ratio_keeps_the_loss() {
    let (model, calib) = setup(5);
    let out = compress(&model, &calib, &cfg(1.0, Mode::Standard), None).unwrap();
    assert!((out.report.loss.after.loss - out.report.loss.before.loss).abs() <= 1e-6);
}

#[test]
fn zero_iterations_leave_selection_untouched() {
    let (model, calib) = setup(2);
    let out = compress(&model, &calib, &cfg(0.5, Mode::Standard), None).unwrap();
    assert_eq!(out.selected, out.compressed);
    assert!(out.report.correction.is_none());
}

#[test]
fn correction_keeps_ranks_and_logs_rounds() {
    let (model, calib) = setup(8);
    for variant in [
        CorrectionVariant::ProjGrad,
        CorrectionVariant::ProjDelta,
        CorrectionVariant::AlphaBlend { alpha: 0.5 },
        CorrectionVariant::GdStep { eta: 1e-3 },
    ] {
        let mut c = cfg(0.5, Mode::Standard);
        c.correction = CorrectionCfg {
            variant,
            iters: 3,
            calib_subset: 64,
        };
        let out = compress(&model, &calib, &c, None).unwrap();
        assert_eq!(out.correction.round_losses.len(), 3);
        for (s, f) in out.selected.layers.iter().zip(&out.compressed.layers) {
            assert_eq!(s.weight.rank(), f.weight.rank());
        }
        let summary = out.report.correction.unwrap();
        assert_eq!(summary.iters, 3);
        assert_eq!(summary.variant, variant.label());
    }
}

#[test]
fn remap_quantizes_right_factors_only() {
    let (model, calib) = setup(4);
    let out = compress(&model, &calib, &cfg(0.5, Mode::Remap), None).unwrap();
    assert!(out.report.footprint.simulated);
    let mut factored = 0;
    for l in &out.compressed.layers {
        if let LayerWeight::Factored { wu, wv } = &l.weight {
            factored += 1;
            assert!(!wu.is_quantized());
            assert!(wv.is_quantized());
        }
    }
    assert!(factored > 0);
}

#[test]
fn strategies_and_homogeneous_run_to_budget() {
    let (model, calib) = setup(6);
    let mut selectors = vec![Selector::Homogeneous];
    for rule in [Rule::ZeroSum, Rule::MostNegative, Rule::MinAbsDl, Rule::MinSigma] {
        selectors.push(Selector::Strategy(Strategy::new(rule, true).unwrap()));
    }
    selectors.push(Selector::Strategy(Strategy::new(Rule::MinAbsDl, false).unwrap()));
    for selector in selectors {
        let c = CompressConfig {
            selector,
            ..cfg(0.5, Mode::Standard)
        };
        let out = compress(&model, &calib, &c, None).unwrap();
        assert!(out.report.loss.after.loss.is_finite(), "{selector:?}");
        assert!(out.compressed.params() < out.assignment.dense_params(), "{selector:?}");
    }
}

#[test]
fn runs_are_deterministic() {
    let (model, calib) = setup(9);
    let a = compress(&model, &calib, &cfg(0.4, Mode::Hq), Some(Seeds::from_base(9))).unwrap();
    let b = compress(&model, &calib, &cfg(0.4, Mode::Hq), Some(Seeds::from_base(9))).unwrap();
    assert_eq!(report_to_string(&a.report).unwrap(), report_to_string(&b.report).unwrap());
    assert_eq!(a.compressed, b.compressed);
}

#[test]
fn invalid_configs_are_rejected() {
    let (model, calib) = setup(1);
    for ratio in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(compress(&model, &calib, &cfg(ratio, Mode::Standard), None).is_err());
    }
    let mut c = cfg(0.5, Mode::Remap);
    c.correction.iters = 1;
    assert!(compress(&model, &calib, &c, None).is_err());
    let c = CompressConfig {
        tau: 0.0,
        ..cfg(0.5, Mode::Standard)
    };
    assert!(compress(&model, &calib, &c, None).is_err());
}
