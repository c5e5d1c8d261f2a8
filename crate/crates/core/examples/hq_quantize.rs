//! Half-prune plus int8 against plain pruning at the same target.
//!
//! `cargo run --example hq_quantize`

use lowrank::pipeline::{compress, CompressConfig, Mode};
use lowrank::toynet::{build_model, gen_calibration, ModelSpec};

fn main() -> lowrank::Result<()> {
    let spec = ModelSpec::default_with_seed(0);
    let model = build_model(&spec)?;
    let calib = gen_calibration(&spec, 0, 512)?;
    println!("mode\tselect\tfootprint\tloss");
    for mode in [Mode::Standard, Mode::Exact, Mode::Hq] {
        let cfg = CompressConfig {
            ratio: 0.4,
            mode,
            ..CompressConfig::default()
        };
        let r = compress(&model, &calib, &cfg, None)?.report;
        println!(
            "{}\t{}\t{:.4}\t{:.4}",
            mode.name(),
            r.config.selection_ratio,
            r.footprint.ratio,
            r.loss.after.loss
        );
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
