//! Loss after compression for each selection strategy and the homogeneous
//! baseline, over a few seeds.
//!
//! `cargo run --release --example strategy_ablation`

use lowrank::pipeline::{compress, CompressConfig, Selector};
use lowrank::select::{Rule, Strategy};
use lowrank::toynet::{build_model, gen_calibration, ModelSpec};

fn main() -> lowrank::Result<()> {
    let mut selectors = vec![("homogeneous".to_string(), Selector::Homogeneous)];
    for rule in [Rule::ZeroSum, Rule::MostNegative, Rule::MinAbsDl, Rule::MinSigma] {
        for sorted in [true, false] {
            // zero-sum needs the per-matrix order, so it has no unsorted form
            if let Ok(s) = Strategy::new(rule, sorted) {
                let name = format!("{}{}", rule.name(), if sorted { "" } else { "-unsorted" });
                selectors.push((name, Selector::Strategy(s)));
            }
        }
    }

    for ratio in [0.6, 0.4] {
        println!("ratio {ratio}");
        for (name, selector) in &selectors {
            let mut total = 0.0;
            for seed in 0..4 {
                let spec = ModelSpec::default_with_seed(seed);
                let model = build_model(&spec)?;
                let calib = gen_calibration(&spec, seed, 512)?;
                let cfg = CompressConfig {
                    ratio,
                    selector: *selector,
                    ..CompressConfig::default()
                };
                total += compress(&model, &calib, &cfg, None)?.report.loss.after.loss;
            }
            println!("  {name:<22} {:.4}", total / 4.0);
        }
    }
    Ok(())
}
