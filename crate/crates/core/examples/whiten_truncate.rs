//! Whitened truncation versus plain SVD truncation on one layer.
//!
//! `cargo run --example whiten_truncate`

use lowrank::linalg::svd;
use lowrank::toynet::{backward, build_model, gen_calibration, ModelSpec};
use lowrank::whiten::{analyze_layers, RidgeCfg};

fn main() -> lowrank::Result<()> {
    let spec = ModelSpec::default_with_seed(0);
    let model = build_model(&spec)?;
    let calib = gen_calibration(&spec, 0, 512)?;
    let bw = backward(&model, &calib)?;
    let layers = analyze_layers(&model.weights, &bw.captures, RidgeCfg::default())?;

    let (w, x) = (&model.weights[1], &bw.captures[1].x);
    let layer = &layers[1];
    let plain = svd(w)?;
    println!("layer 1: {}x{}, k_thr {}", w.rows(), w.cols(), layer.k_thr);
    println!("k\twhitened\tplain");
    for k in [4, 8, 16, 24, 32] {
        let (wu, wv) = layer.reconstruct(&(0..k).collect::<Vec<_>>())?;
        let whitened = w.sub(&wu.matmul(&wv)).matmul(x).frob_norm();
        let naive = w.sub(&plain.truncated(k)).matmul(x).frob_norm();
        println!("{k}\t{whitened:.4}\t{naive:.4}");
    }
    Ok(())
}
