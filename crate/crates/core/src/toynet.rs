//! A small fully connected classifier that stands in for a large pretrained
//! network: it supplies calibration activations, a token-mean cross-entropy
//! loss and exact reverse-mode weight gradients.
//!
//! Activations are stored one token per column, so the input to layer `l` is
//! an `n_{l-1} x T` matrix and weight `W_l` is `n_l x n_{l-1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    GeluTanh,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::GeluTanh => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::GeluTanh),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::GeluTanh => "gelu_tanh",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gelu_tanh" | "gelu" => Some(Activation::GeluTanh),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::GeluTanh => {
                let inner = Self::GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::GeluTanh => {
                let inner = Self::GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                let dinner = Self::GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Layer widths `[n_0, ..., n_L]`; the last width is the number of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(dims: Vec<usize>, activation: Activation, seed: u64) -> Self {
        Self {
            dims,
            activation,
            seed,
        }
    }

    /// `[32, 64, 48, 10]` with GELU.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::new(vec![32, 64, 48, 10], Activation::GeluTanh, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 {
            return Err(Error::Config(format!(
                "need at least two layers (three widths), got {:?}",
                self.dims
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("layer widths must be >= 1, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().expect("validated spec")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub activation: Activation,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl ToyModel {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].cols()];
        d.extend(self.weights.iter().map(Mat::rows));
        d
    }

    pub fn classes(&self) -> usize {
        self.weights.last().map_or(0, Mat::rows)
    }

    /// Checks weight/bias shapes chain together.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() < 2 || self.weights.len() != self.biases.len() {
            return Err(Error::Config("model needs >= 2 layers with one bias each".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.rows() != b.len() {
                return Err(Error::Shape {
                    op: "ToyModel",
                    detail: format!("layer {l}: weight {}x{} with bias of length {}", w.rows(), w.cols(), b.len()),
                });
            }
            if l > 0 && self.weights[l - 1].rows() != w.cols() {
                return Err(Error::Shape {
                    op: "ToyModel",
                    detail: format!("layer {l} expects {} inputs, previous layer emits {}", w.cols(), self.weights[l - 1].rows()),
                });
            }
        }
        Ok(())
    }
}

/// Weights ~ N(0, 1/fan_in), biases zero. Bit-identical for identical specs.
pub fn build_model(spec: &ModelSpec) -> Result<ToyModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights = Vec::with_capacity(spec.num_layers());
    let mut biases = Vec::with_capacity(spec.num_layers());
    for pair in spec.dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        weights.push(Mat::from_raw(fan_out, fan_in, data));
        biases.push(vec![0.0; fan_out]);
    }
    Ok(ToyModel {
        activation: spec.activation,
        weights,
        biases,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibSet {
    /// `n_0 x T`, one token per column.
    pub inputs: Mat,
    pub labels: Vec<usize>,
}

impl CalibSet {
    pub fn tokens(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.labels.is_empty() || self.inputs.cols() != self.labels.len() {
            return Err(Error::Shape {
                op: "CalibSet",
                detail: format!("{} input columns vs {} labels", self.inputs.cols(), self.labels.len()),
            });
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(())
    }

    /// The first `t` tokens (all of them when `t` is 0 or exceeds the size).
    pub fn prefix(&self, t: usize) -> CalibSet {
        if t == 0 || t >= self.tokens() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..t).collect();
        CalibSet {
            inputs: self.inputs.select_cols(&idx),
            labels: self.labels[..t].to_vec(),
        }
    }
}

/// Unit-variance Gaussian inputs labelled by the argmax of a teacher network
/// built from the same widths with `teacher_seed`.
pub fn gen_calibration(spec: &ModelSpec, teacher_seed: u64, t: usize) -> Result<CalibSet> {
    spec.validate()?;
    if t == 0 {
        return Err(Error::Config("calibration set needs at least one token".into()));
    }
    let teacher = build_model(&ModelSpec {
        seed: teacher_seed,
        ..spec.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(teacher_seed);
    rng.set_stream(1);
    let n0 = spec.dims[0];
    let data = (0..n0 * t).map(|_| StandardNormal.sample(&mut rng)).collect();
    let inputs = Mat::from_raw(n0, t, data);
    let logits = forward_dense(&teacher, &inputs).logits;
    let labels = (0..t)
        .map(|j| {
            let mut best = 0;
            for c in 1..logits.rows() {
                if logits.get(c, j) > logits.get(best, j) {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(CalibSet { inputs, labels })
}

/// A linear map `x -> W x` that may be stored in factored or quantized form.
pub trait LinearMap {
    fn out_dim(&self) -> usize;
    fn in_dim(&self) -> usize;
    fn apply(&self, x: &Mat) -> Mat;
}

impl LinearMap for Mat {
    fn out_dim(&self) -> usize {
        self.rows()
    }
    fn in_dim(&self) -> usize {
        self.cols()
    }
    fn apply(&self, x: &Mat) -> Mat {
        self.matmul(x)
    }
}

pub(crate) struct ForwardTrace {
    /// Input to every linear layer.
    pub inputs: Vec<Mat>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Mat>,
    pub logits: Mat,
}

pub(crate) fn forward_generic(
    layers: &[&dyn LinearMap],
    biases: &[Vec<f64>],
    activation: Activation,
    x0: &Mat,
) -> ForwardTrace {
    let n_layers = layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut x = x0.clone();
    for (l, (layer, b)) in layers.iter().zip(biases).enumerate() {
        let mut z = layer.apply(&x);
        for (i, &bi) in b.iter().enumerate() {
            z.row_mut(i).iter_mut().for_each(|v| *v += bi);
        }
        inputs.push(x);
        if l + 1 == n_layers {
            return ForwardTrace {
                inputs,
                pre,
                logits: z,
            };
        }
        let a = Mat::from_raw(
            z.rows(),
            z.cols(),
            z.data().iter().map(|&v| activation.apply(v)).collect(),
        );
        pre.push(z);
        x = a;
    }
    unreachable!("at least one layer")
}

fn forward_dense(model: &ToyModel, x0: &Mat) -> ForwardTrace {
    let layers: Vec<&dyn LinearMap> = model.weights.iter().map(|w| w as &dyn LinearMap).collect();
    forward_generic(&layers, &model.biases, model.activation, x0)
}

/// Per-token losses and the softmax of the logits.
fn cross_entropy(logits: &Mat, labels: &[usize]) -> (f64, Mat) {
    let (c, t) = logits.shape();
    let mut probs = Mat::zeros(c, t);
    let mut total = 0.0;
    for j in 0..t {
        let mut max = f64::NEG_INFINITY;
        for i in 0..c {
            max = max.max(logits.get(i, j));
        }
        let mut z = 0.0;
        for i in 0..c {
            let e = (logits.get(i, j) - max).exp();
            probs.set(i, j, e);
            z += e;
        }
        for i in 0..c {
            probs.set(i, j, probs.get(i, j) / z);
        }
        total += max + z.ln() - logits.get(labels[j], j);
    }
    (total / t as f64, probs)
}

pub(crate) fn loss_of_logits(logits: &Mat, labels: &[usize]) -> f64 {
    cross_entropy(logits, labels).0
}

fn check_compat(dims_in: usize, classes: usize, calib: &CalibSet) -> Result<()> {
    if calib.inputs.rows() != dims_in {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("model takes {dims_in} inputs, calibration tokens have {}", calib.inputs.rows()),
        });
    }
    calib.validate(classes)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    /// Input activations to each linear layer, `n_{l-1} x T`.
    pub activations: Vec<Mat>,
}

/// Token-mean softmax cross-entropy plus the input to every linear layer.
pub fn forward_loss(model: &ToyModel, calib: &CalibSet) -> Result<ForwardOutput> {
    model.validate()?;
    check_compat(model.weights[0].cols(), model.classes(), calib)?;
    let trace = forward_dense(model, &calib.inputs);
    Ok(ForwardOutput {
        loss: loss_of_logits(&trace.logits, &calib.labels),
        activations: trace.inputs,
    })
}

/// Calibration statistics for one compressible layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCapture {
    /// Input activations, `n_{l-1} x T`.
    pub x: Mat,
    /// Gradient of the mean loss with respect to the layer weight.
    pub g: Mat,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: f64,
    pub captures: Vec<LayerCapture>,
    /// Bias gradients; computed for completeness, biases are never compressed.
    pub bias_grads: Vec<Vec<f64>>,
}

/// Exact reverse-mode gradients of the token-mean loss.
pub fn backward(model: &ToyModel, calib: &CalibSet) -> Result<BackwardOutput> {
    model.validate()?;
    check_compat(model.weights[0].cols(), model.classes(), calib)?;
    let trace = forward_dense(model, &calib.inputs);
    let (loss, probs) = cross_entropy(&trace.logits, &calib.labels);
    let t = calib.tokens() as f64;

    // dL/dlogits = (softmax - onehot) / T
    let mut delta = probs;
    for (j, &lab) in calib.labels.iter().enumerate() {
        delta.set(lab, j, delta.get(lab, j) - 1.0);
    }
    let delta_data: Vec<f64> = delta.data().iter().map(|v| v / t).collect();
    let mut delta = Mat::from_raw(delta.rows(), delta.cols(), delta_data);

    let n_layers = model.num_layers();
    let mut grads = vec![Mat::zeros(0, 0); n_layers];
    let mut bias_grads = vec![Vec::new(); n_layers];
    for l in (0..n_layers).rev() {
        grads[l] = delta.matmul_t(&trace.inputs[l]);
        bias_grads[l] = (0..delta.rows()).map(|i| delta.row(i).iter().sum()).collect();
        if l == 0 {
            break;
        }
        let upstream = model.weights[l].transpose().matmul(&delta);
        let z = &trace.pre[l - 1];
        let data = upstream
            .data()
            .iter()
            .zip(z.data())
            .map(|(&g, &zv)| g * model.activation.derivative(zv))
            .collect();
        delta = Mat::from_raw(upstream.rows(), upstream.cols(), data);
    }

    let captures = trace
        .inputs
        .into_iter()
        .zip(grads)
        .map(|(x, g)| LayerCapture { x, g })
        .collect();
    Ok(BackwardOutput {
        loss,
        captures,
        bias_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub perplexity: f64,
}

impl Evaluation {
    pub fn from_loss(loss: f64) -> Self {
        Self {
            loss,
            perplexity: loss.exp(),
        }
    }
}

/// Loss and perplexity of an uncompressed model.
pub fn evaluate(model: &ToyModel, calib: &CalibSet) -> Result<Evaluation> {
    Ok(Evaluation::from_loss(forward_loss(model, calib)?.loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;

    fn small() -> (ToyModel, CalibSet) {
        let spec = ModelSpec::new(vec![6, 8, 5, 4], Activation::GeluTanh, 3);
        let model = build_model(&spec).unwrap();
        let calib = gen_calibration(&spec, 4, 40).unwrap();
        (model, calib)
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let spec = ModelSpec::new(vec![4, 3, 2], Activation::GeluTanh, 11);
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights[0].shape(), (3, 4));
        assert_eq!(a.weights[1].shape(), (2, 3));
        let c = build_model(&ModelSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn spec_validation() {
        assert!(build_model(&ModelSpec::new(vec![4, 3], Activation::Tanh, 0)).is_err());
        assert!(build_model(&ModelSpec::new(vec![4, 0, 3], Activation::Tanh, 0)).is_err());
    }

    #[test]
    fn calibration_generation() {
        let spec = ModelSpec::default_with_seed(1);
        let one = gen_calibration(&spec, 2, 1).unwrap();
        assert_eq!(one.tokens(), 1);
        assert!(one.labels[0] < 10);
        assert_eq!(gen_calibration(&spec, 2, 64).unwrap(), gen_calibration(&spec, 2, 64).unwrap());
        assert!(gen_calibration(&spec, 2, 0).is_err());
        let big = gen_calibration(&spec, 2, 2048).unwrap();
        let mut hist = [0usize; 10];
        big.labels.iter().for_each(|&l| hist[l] += 1);
        assert!(hist.iter().filter(|&&c| c > 0).count() >= 2, "{hist:?}");
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (mut model, calib) = small();
        let last = model.num_layers() - 1;
        model.weights[last] = Mat::zeros(4, 5);
        let out = forward_loss(&model, &calib).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-14);
        let ev = evaluate(&model, &calib).unwrap();
        assert_eq!(ev.perplexity, ev.loss.exp());
    }

    #[test]
    fn default_loss_range() {
        let spec = ModelSpec::default_with_seed(1);
        let model = build_model(&spec).unwrap();
        let calib = gen_calibration(&spec, 2, 512).unwrap();
        let loss = forward_loss(&model, &calib).unwrap().loss;
        assert!(loss > 0.0 && loss < 10f64.ln() + 2.0, "{loss}");
    }

    #[test]
    fn activations_are_layer_inputs() {
        let (model, calib) = small();
        let out = forward_loss(&model, &calib).unwrap();
        assert_eq!(out.activations.len(), 3);
        assert_eq!(out.activations[0], calib.inputs);
        assert_eq!(out.activations[1].shape(), (8, 40));
        assert_eq!(out.activations[2].shape(), (5, 40));
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        for act in [Activation::GeluTanh, Activation::Tanh] {
            let spec = ModelSpec::new(vec![6, 8, 5, 4], act, 3);
            let model = build_model(&spec).unwrap();
            let calib = gen_calibration(&spec, 4, 40).unwrap();
            let bw = backward(&model, &calib).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let h = 1e-4;
            for _ in 0..20 {
                let l = rng.random_range(0..model.num_layers());
                let (r, c) = model.weights[l].shape();
                let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
                let mut plus = model.clone();
                plus.weights[l].set(i, j, model.weights[l].get(i, j) + h);
                let mut minus = model.clone();
                minus.weights[l].set(i, j, model.weights[l].get(i, j) - h);
                let fd = (forward_loss(&plus, &calib).unwrap().loss
                    - forward_loss(&minus, &calib).unwrap().loss)
                    / (2.0 * h);
                let g = bw.captures[l].g.get(i, j);
                assert!((g - fd).abs() <= 1e-5 * (1.0 + g.abs()), "layer {l} ({i},{j}): {g} vs {fd}");
            }
        }
    }

    #[test]
    fn gradient_invariant_under_token_duplication() {
        let (model, calib) = small();
        let g1 = backward(&model, &calib).unwrap();
        let t = calib.tokens();
        let idx: Vec<usize> = (0..t).chain(0..t).collect();
        let doubled = CalibSet {
            inputs: calib.inputs.select_cols(&idx),
            labels: idx.iter().map(|&i| calib.labels[i]).collect(),
        };
        let g2 = backward(&model, &doubled).unwrap();
        for (a, b) in g1.captures.iter().zip(&g2.captures) {
            assert!(a.g.sub(&b.g).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_rank_bounded_by_tokens() {
        let spec = ModelSpec::default_with_seed(5);
        let model = build_model(&spec).unwrap();
        let calib = gen_calibration(&spec, 6, 7).unwrap();
        let bw = backward(&model, &calib).unwrap();
        for cap in &bw.captures {
            let s = svd(&cap.g).unwrap();
            let r = s.sigma.len();
            if 7 < r {
                assert!(s.sigma[7] <= 1e-8 * s.sigma[0], "{:?}", &s.sigma[..9]);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (model, _) = small();
        let bad = CalibSet {
            inputs: Mat::zeros(3, 2),
            labels: vec![0, 1],
        };
        assert!(forward_loss(&model, &bad).is_err());
        let bad_label = CalibSet {
            inputs: Mat::zeros(6, 1),
            labels: vec![9],
        };
        assert!(backward(&model, &bad_label).is_err());
    }
}
