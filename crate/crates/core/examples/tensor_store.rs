//! Writing and reading the binary tensor container, and what a damaged file
//! looks like.
//!
//! `cargo run --example tensor_store`

use lowrank::store::tensor_file::{decode, encode};
use lowrank::store::{read_tensors, write_tensors, Tensor, TensorData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tensors = vec![
        Tensor::f64("layer0.wu", vec![3, 2], vec![1.0, -2.0, 0.5, 0.25, 3.0, 4.0]),
        Tensor::i8("layer0.wv_q", vec![2, 2], vec![127, -3, 0, -127]),
        Tensor::new("notes", vec![2], TensorData::F32(vec![0.5, 1.5])),
    ];
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.zstn");
    write_tensors(&path, &tensors)?;
    let back = read_tensors(&path)?;
    assert_eq!(back, tensors);
    println!("{} tensors, {} bytes", back.len(), std::fs::metadata(&path)?.len());
    for t in &back {
        println!("  {} {:?} {:?}", t.name, t.data.dtype(), t.dims);
    }

    let bytes = encode(&tensors).expect("valid tensors");
    let mut bad = bytes.clone();
    bad[4] = 9;
    println!("wrong version: {}", decode(&bad).unwrap_err());
    println!("truncated: {}", decode(&bytes[..bytes.len() - 3]).unwrap_err());
    let mut extra = bytes;
    extra.push(0);
    println!("trailing byte: {}", decode(&extra).unwrap_err());
    Ok(())
}
