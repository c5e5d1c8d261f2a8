//! Models, compressed models and calibration sets as tensor files.
//!
//! Reserved names per layer `i`:
//!
//! | name                                    | contents                         |
//! |-----------------------------------------|----------------------------------|
//! | `layer{i}.dense`                        | full-precision dense weight      |
//! | `layer{i}.dense_q`, `layer{i}.dense_scales` | quantized dense weight       |
//! | `layer{i}.wu` / `layer{i}.wu_q`, `layer{i}.wu_scales` | left factor        |
//! | `layer{i}.wv` / `layer{i}.wv_q`, `layer{i}.scales`    | right factor       |
//! | `layer{i}.bias`                         | bias                             |
//!
//! plus `meta.activation` (one i8 code). A plain model is a compressed
//! model whose layers are all dense and full precision.

use std::collections::BTreeMap;
use std::path::Path;

use crate::compressed::{CompressedLayer, CompressedModel, Factor, LayerWeight};
use crate::error::{FormatError, Result};
use crate::linalg::Mat;
use crate::store::quant::QuantTensor;
use crate::store::tensor_file::{read_tensors, write_tensors, Tensor, TensorData};
use crate::toynet::{Activation, CalibSet, ToyModel};

fn mat_tensor(name: String, m: &Mat) -> Tensor {
    Tensor::f64(name, vec![m.rows() as u64, m.cols() as u64], m.data().to_vec())
}

fn push_factor(out: &mut Vec<Tensor>, full: String, codes: String, scales: String, f: &Factor) {
    match f {
        Factor::Full(m) => out.push(mat_tensor(full, m)),
        Factor::Quant(q) => {
            out.push(Tensor::i8(codes, vec![q.rows as u64, q.cols as u64], q.q.clone()));
            out.push(Tensor::f64(scales, vec![q.rows as u64], q.scales.clone()));
        }
    }
}

pub fn compressed_to_tensors(cm: &CompressedModel) -> Result<Vec<Tensor>> {
    cm.validate()?;
    let mut out = vec![Tensor::i8("meta.activation", vec![1], vec![cm.activation.code() as i8])];
    for (i, layer) in cm.layers.iter().enumerate() {
        let p = format!("layer{i}");
        match &layer.weight {
            LayerWeight::Dense(f) => push_factor(
                &mut out,
                format!("{p}.dense"),
                format!("{p}.dense_q"),
                format!("{p}.dense_scales"),
                f,
            ),
            LayerWeight::Factored { wu, wv } => {
                push_factor(&mut out, format!("{p}.wu"), format!("{p}.wu_q"), format!("{p}.wu_scales"), wu);
                push_factor(&mut out, format!("{p}.wv"), format!("{p}.wv_q"), format!("{p}.scales"), wv);
            }
        }
        out.push(Tensor::f64(format!("{p}.bias"), vec![layer.bias.len() as u64], layer.bias.clone()));
    }
    Ok(out)
}

fn bad(name: &str, reason: impl Into<String>) -> FormatError {
    FormatError::BadTensor {
        name: name.to_string(),
        reason: reason.into(),
    }
}

struct Named(BTreeMap<String, Tensor>);

impl Named {
    fn take(&mut self, name: &str) -> Option<Tensor> {
        self.0.remove(name)
    }

    fn require(&mut self, name: &str) -> std::result::Result<Tensor, FormatError> {
        self.take(name).ok_or_else(|| FormatError::MissingTensor { name: name.to_string() })
    }

    fn mat(&mut self, name: &str) -> std::result::Result<Option<Mat>, FormatError> {
        let Some(t) = self.take(name) else { return Ok(None) };
        let TensorData::F64(data) = t.data else {
            return Err(bad(name, "expected f64 data"));
        };
        if t.dims.len() != 2 {
            return Err(bad(name, format!("expected 2 dims, found {}", t.dims.len())));
        }
        Mat::from_vec(t.dims[0] as usize, t.dims[1] as usize, data)
            .map(Some)
            .map_err(|e| bad(name, e.to_string()))
    }

    fn vector(&mut self, name: &str) -> std::result::Result<Vec<f64>, FormatError> {
        let t = self.require(name)?;
        let TensorData::F64(data) = t.data else {
            return Err(bad(name, "expected f64 data"));
        };
        if t.dims.len() != 1 {
            return Err(bad(name, format!("expected 1 dim, found {}", t.dims.len())));
        }
        Ok(data)
    }

    fn quant(&mut self, codes: &str, scales: &str) -> std::result::Result<Option<QuantTensor>, FormatError> {
        let Some(t) = self.take(codes) else { return Ok(None) };
        let TensorData::I8(q) = t.data else {
            return Err(bad(codes, "expected i8 data"));
        };
        if t.dims.len() != 2 {
            return Err(bad(codes, format!("expected 2 dims, found {}", t.dims.len())));
        }
        if q.contains(&i8::MIN) {
            return Err(bad(codes, "code -128 is outside the symmetric range"));
        }
        let (rows, cols) = (t.dims[0] as usize, t.dims[1] as usize);
        let s = self.vector(scales)?;
        if s.len() != rows {
            return Err(bad(scales, format!("{} scales for {rows} rows", s.len())));
        }
        if s.iter().any(|&x| x <= 0.0) {
            return Err(bad(scales, "scales must be positive"));
        }
        Ok(Some(QuantTensor { rows, cols, q, scales: s }))
    }

    fn factor(&mut self, full: &str, codes: &str, scales: &str) -> std::result::Result<Option<Factor>, FormatError> {
        let f = self.mat(full)?.map(Factor::Full);
        let q = self.quant(codes, scales)?.map(Factor::Quant);
        match (f, q) {
            (Some(_), Some(_)) => Err(bad(full, format!("both {full} and {codes} present"))),
            (f, q) => Ok(f.or(q)),
        }
    }
}

pub fn compressed_from_tensors(tensors: Vec<Tensor>) -> Result<CompressedModel> {
    let mut named = Named(tensors.into_iter().map(|t| (t.name.clone(), t)).collect());
    let act = named.require("meta.activation")?;
    let activation = match (&act.data, act.dims.as_slice()) {
        (TensorData::I8(v), [1]) => Activation::from_code(v[0] as u8)
            .ok_or_else(|| bad("meta.activation", format!("unknown activation code {}", v[0])))?,
        _ => return Err(bad("meta.activation", "expected a single i8").into()),
    };
    let mut layers = Vec::new();
    for i in 0.. {
        let p = format!("layer{i}");
        if !named.0.contains_key(&format!("{p}.bias")) {
            break;
        }
        let bias = named.vector(&format!("{p}.bias"))?;
        let dense = named.factor(&format!("{p}.dense"), &format!("{p}.dense_q"), &format!("{p}.dense_scales"))?;
        let wu = named.factor(&format!("{p}.wu"), &format!("{p}.wu_q"), &format!("{p}.wu_scales"))?;
        let wv = named.factor(&format!("{p}.wv"), &format!("{p}.wv_q"), &format!("{p}.scales"))?;
        let weight = match (dense, wu, wv) {
            (Some(d), None, None) => LayerWeight::Dense(d),
            (None, Some(wu), Some(wv)) => LayerWeight::Factored { wu, wv },
            _ => return Err(bad(&p, "needs either a dense weight or both factors").into()),
        };
        layers.push(CompressedLayer { weight, bias });
    }
    if let Some(extra) = named.0.keys().next() {
        return Err(bad(extra, "unexpected tensor in a model file").into());
    }
    let cm = CompressedModel { activation, layers };
    cm.validate()?;
    Ok(cm)
}

pub fn save_compressed(path: &Path, cm: &CompressedModel) -> Result<()> {
    write_tensors(path, &compressed_to_tensors(cm)?)
}

pub fn load_compressed(path: &Path) -> Result<CompressedModel> {
    compressed_from_tensors(read_tensors(path)?)
}

pub fn save_model(path: &Path, model: &ToyModel) -> Result<()> {
    model.validate()?;
    save_compressed(path, &CompressedModel::from_model(model))
}

/// Loads a model file; compressed files are accepted and materialized.
pub fn load_model(path: &Path) -> Result<ToyModel> {
    let m = load_compressed(path)?.materialize();
    m.validate()?;
    Ok(m)
}

pub fn calib_to_tensors(c: &CalibSet) -> Vec<Tensor> {
    vec![
        mat_tensor("calib.inputs".into(), &c.inputs),
        Tensor::f64(
            "calib.labels",
            vec![c.labels.len() as u64],
            c.labels.iter().map(|&l| l as f64).collect(),
        ),
    ]
}

pub fn calib_from_tensors(tensors: Vec<Tensor>) -> Result<CalibSet> {
    let mut named = Named(tensors.into_iter().map(|t| (t.name.clone(), t)).collect());
    let inputs = named
        .mat("calib.inputs")?
        .ok_or_else(|| FormatError::MissingTensor { name: "calib.inputs".into() })?;
    let raw = named.vector("calib.labels")?;
    if let Some(extra) = named.0.keys().next() {
        return Err(bad(extra, "unexpected tensor in a calibration file").into());
    }
    let mut labels = Vec::with_capacity(raw.len());
    for &l in &raw {
        if l < 0.0 || l.fract() != 0.0 || l > u32::MAX as f64 {
            return Err(bad("calib.labels", format!("label {l} is not a class index")).into());
        }
        labels.push(l as usize);
    }
    if labels.len() != inputs.cols() {
        return Err(bad(
            "calib.labels",
            format!("{} labels for {} tokens", labels.len(), inputs.cols()),
        )
        .into());
    }
    Ok(CalibSet { inputs, labels })
}

pub fn save_calib(path: &Path, c: &CalibSet) -> Result<()> {
    write_tensors(path, &calib_to_tensors(c))
}

pub fn load_calib(path: &Path) -> Result<CalibSet> {
    calib_from_tensors(read_tensors(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::tensor_file::encode;
    use crate::toynet::{build_model, gen_calibration, ModelSpec};

    fn factored() -> (CompressedModel, CalibSet) {
        let spec = ModelSpec::new(vec![5, 8, 3], Activation::Tanh, 3);
        let model = build_model(&spec).unwrap();
        let calib = gen_calibration(&spec, 4, 20).unwrap();
        let mut cm = CompressedModel::from_model(&model);
        let w = model.weights[0].clone();
        cm.layers[0].weight = LayerWeight::Factored {
            wu: Factor::Full(w.first_cols(2)),
            wv: Factor::Full(Mat::identity(5).select_rows(&[0, 1])),
        };
        (cm, calib)
    }

    #[test]
    fn compressed_round_trip_is_exact() {
        let (cm, calib) = factored();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.zstn");
        save_compressed(&p, &cm).unwrap();
        let back = load_compressed(&p).unwrap();
        assert_eq!(back, cm);
        assert_eq!(back.evaluate(&calib).unwrap().loss, cm.evaluate(&calib).unwrap().loss);
        let again = encode(&compressed_to_tensors(&back).unwrap()).unwrap();
        assert_eq!(again, std::fs::read(&p).unwrap());
    }

    #[test]
    fn quantized_round_trip() {
        let (cm, calib) = factored();
        let q = cm.quantize_all();
        let back = compressed_from_tensors(compressed_to_tensors(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        assert_eq!(back.evaluate(&calib).unwrap().loss, q.evaluate(&calib).unwrap().loss);
        let names: Vec<String> = compressed_to_tensors(&cm.quantize_right_factors())
            .unwrap()
            .into_iter()
            .map(|t| t.name)
            .collect();
        assert!(names.contains(&"layer0.wv_q".to_string()));
        assert!(names.contains(&"layer0.scales".to_string()));
        assert!(names.contains(&"layer0.wu".to_string()));
    }

    #[test]
    fn calib_round_trip() {
        let (_, calib) = factored();
        let back = calib_from_tensors(calib_to_tensors(&calib)).unwrap();
        assert_eq!(back, calib);
    }

    #[test]
    fn rejects_malformed_models() {
        let (cm, _) = factored();
        let mut ts = compressed_to_tensors(&cm).unwrap();
        ts.retain(|t| t.name != "layer0.wv");
        assert!(compressed_from_tensors(ts).is_err());

        let mut ts = compressed_to_tensors(&cm).unwrap();
        ts.push(Tensor::f64("junk", vec![1], vec![0.0]));
        assert!(compressed_from_tensors(ts).is_err());

        let mut ts = compressed_to_tensors(&cm).unwrap();
        ts.retain(|t| t.name != "meta.activation");
        assert!(compressed_from_tensors(ts).is_err());
    }
}
