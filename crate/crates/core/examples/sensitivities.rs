//! First-order loss changes per singular component, checked against the
//! true change from dropping each one.
//!
//! `cargo run --example sensitivities`

use lowrank::pipeline::analyze;
use lowrank::toynet::{build_model, evaluate, gen_calibration, ModelSpec};
use lowrank::whiten::RidgeCfg;

fn main() -> lowrank::Result<()> {
    let spec = ModelSpec::default_with_seed(3);
    let model = build_model(&spec)?;
    let calib = gen_calibration(&spec, 3, 512)?;
    let base = evaluate(&model, &calib)?.loss;
    let layers = analyze(&model, &calib, RidgeCfg::default())?;

    let layer = &layers[2];
    println!("layer 2, base loss {base:.6}");
    println!("i\tsigma\tpredicted\tactual");
    for &i in layer.order.iter().take(8) {
        let kept: Vec<usize> = (0..layer.rank_full()).filter(|&j| j != i).collect();
        let (wu, wv) = layer.reconstruct(&kept)?;
        let mut m = model.clone();
        m.weights[2] = wu.matmul(&wv);
        let actual = evaluate(&m, &calib)?.loss - base;
        println!("{i}\t{:.4}\t{:+.3e}\t{actual:+.3e}", layer.sigma()[i], layer.delta_l[i]);
    }
    Ok(())
}
