//! Correct-and-retruncate rounds after selection, for each update rule.
//!
//! `cargo run --example correction_loop`

use lowrank::correct::{CorrectionCfg, CorrectionVariant};
use lowrank::pipeline::{compress, CompressConfig};
use lowrank::toynet::{build_model, gen_calibration, ModelSpec};

fn main() -> lowrank::Result<()> {
    let spec = ModelSpec::default_with_seed(5);
    let model = build_model(&spec)?;
    let calib = gen_calibration(&spec, 5, 512)?;
    for variant in [
        CorrectionVariant::ProjGrad,
        CorrectionVariant::ProjDelta,
        CorrectionVariant::AlphaBlend { alpha: 0.5 },
        CorrectionVariant::GdStep { eta: 0.05 },
    ] {
        let cfg = CompressConfig {
            ratio: 0.4,
            correction: CorrectionCfg {
                variant,
                iters: 4,
                calib_subset: 0,
            },
            ..CompressConfig::default()
        };
        let out = compress(&model, &calib, &cfg, None)?;
        let losses: Vec<String> = out.correction.round_losses.iter().map(|l| format!("{l:.4}")).collect();
        println!(
            "{:<16} selected {:.4} rounds [{}]",
            variant.label(),
            out.report.loss.after_selection.loss,
            losses.join(", ")
        );
    }
    Ok(())
}
