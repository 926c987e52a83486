//! Stacked GRU regression network trained from scratch: gated recurrent
//! layers, a single linear output neuron, inverted dropout between layers,
//! L2 on input kernels, Adam, and best-validation-epoch checkpointing.

mod network;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{cell_forward, loss, network_forward, Gradients, Mode};
pub use train::{objective_gradient, predict, train, train_from, Network, TrainOutcome, TrainingHistory};

/// Floating-point type the network runs in.
pub trait Scalar:
    Float + AddAssign + Sum + Debug + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    fn lit(x: f64) -> Self {
        Self::from(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float32" => Ok(Precision::F32),
            "f64" | "float64" => Ok(Precision::F64),
            other => Err(Error::Domain(format!("unknown precision '{other}'"))),
        }
    }
}

/// Candidate-state activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Domain(format!("unknown activation '{other}'"))),
        }
    }
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, a: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    pub layer_sizes: Vec<usize>,
    pub input_dim: usize,
    pub sequence_length: usize,
    /// Sequences per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub precision: Precision,
    pub activation: Activation,
}

impl Default for GruConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![512, 256, 128],
            input_dim: 3,
            sequence_length: 6,
            batch_size: 500,
            epochs: 150,
            learning_rate: 0.0009,
            dropout_rate: 0.3,
            l2_lambda: 0.00001,
            seed: 0,
            precision: Precision::F64,
            activation: Activation::Relu,
        }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return bad(format!("layer sizes must be non-empty and positive, got {:?}", self.layer_sizes));
        }
        if self.input_dim == 0 || self.sequence_length == 0 || self.batch_size == 0 {
            return bad("input_dim, sequence_length and batch_size must be >= 1".into());
        }
        for (name, v) in
            [("learning_rate", self.learning_rate), ("dropout_rate", self.dropout_rate), ("l2_lambda", self.l2_lambda)]
        {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the architecture-defining fields,
    /// stored alongside serialized weights.
    pub fn fingerprint(&self) -> String {
        let key = format!(
            "{:?}|{}|{}|{:?}|{:?}",
            self.layer_sizes, self.input_dim, self.sequence_length, self.precision, self.activation
        );
        let mut h: u64 = 0xcbf29ce484222325;
        for b in key.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
        Self { rows, cols, data }
    }

    /// `out += M x`
    pub(crate) fn mul_add(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut s = T::zero();
            for (a, b) in row.iter().zip(x) {
                s += *a * *b;
            }
            *o += s;
        }
    }

    /// `out += M^T y`
    pub(crate) fn mul_t_add(&self, y: &[T], out: &mut [T]) {
        for (i, yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += *a * *yi;
            }
        }
    }

    /// `M += y x^T`
    pub(crate) fn outer_add(&mut self, y: &[T], x: &[T]) {
        for (i, yi) in y.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (m, xj) in row.iter_mut().zip(x) {
                *m += *yi * *xj;
            }
        }
    }
}

/// Parameters of one GRU layer. Gate order is update (`z`), reset (`r`),
/// candidate (`o`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GruLayer<T> {
    pub w_z: Matrix<T>,
    pub w_r: Matrix<T>,
    pub w_o: Matrix<T>,
    pub u_z: Matrix<T>,
    pub u_r: Matrix<T>,
    pub u_o: Matrix<T>,
    pub b_z: Vec<T>,
    pub b_r: Vec<T>,
    pub b_o: Vec<T>,
}

impl<T: Scalar> GruLayer<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_o: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_o: Matrix::zeros(hidden, hidden),
            b_z: vec![T::zero(); hidden],
            b_r: vec![T::zero(); hidden],
            b_o: vec![T::zero(); hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    fn kernels(&self) -> [&Matrix<T>; 3] {
        [&self.w_z, &self.w_r, &self.w_o]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<T>; 9] {
        [
            &mut self.w_z.data,
            &mut self.w_r.data,
            &mut self.w_o.data,
            &mut self.u_z.data,
            &mut self.u_r.data,
            &mut self.u_o.data,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_o,
        ]
    }
}

/// Kind of a parameter, for per-class gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    InputKernel,
    RecurrentKernel,
    Bias,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GruWeights<T> {
    pub layers: Vec<GruLayer<T>>,
    pub dense_w: Vec<T>,
    pub dense_b: T,
}

impl<T: Scalar> GruWeights<T> {
    pub fn zeros(input_dim: usize, layer_sizes: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut inp = input_dim;
        for &h in layer_sizes {
            layers.push(GruLayer::zeros(inp, h));
            inp = h;
        }
        Self { layers, dense_w: vec![T::zero(); inp], dense_b: T::zero() }
    }

    /// Glorot-uniform kernels, zero biases.
    pub fn init(config: &GruConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut w = Self::zeros(config.input_dim, &config.layer_sizes);
        for layer in &mut w.layers {
            let (i, h) = (layer.input_dim(), layer.hidden_dim());
            layer.w_z = Matrix::glorot(h, i, &mut rng);
            layer.w_r = Matrix::glorot(h, i, &mut rng);
            layer.w_o = Matrix::glorot(h, i, &mut rng);
            layer.u_z = Matrix::glorot(h, h, &mut rng);
            layer.u_r = Matrix::glorot(h, h, &mut rng);
            layer.u_o = Matrix::glorot(h, h, &mut rng);
        }
        let top = w.dense_w.len();
        w.dense_w = Matrix::<T>::glorot(1, top, &mut rng).data;
        Ok(w)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_dim()).collect()
    }

    /// Checks that shapes chain and all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let mut inp = self.input_dim();
        for (k, l) in self.layers.iter().enumerate() {
            let h = l.hidden_dim();
            let ok = l.kernels().iter().all(|m| m.rows == h && m.cols == inp && m.data.len() == h * inp)
                && [&l.u_z, &l.u_r, &l.u_o].iter().all(|m| m.rows == h && m.cols == h && m.data.len() == h * h)
                && [&l.b_z, &l.b_r, &l.b_o].iter().all(|b| b.len() == h);
            if !ok {
                return Err(Error::Shape(format!("layer {k} shapes do not chain from input width {inp}")));
            }
            inp = h;
        }
        if self.dense_w.len() != inp {
            return Err(Error::Shape(format!("dense layer expects {inp} inputs, has {}", self.dense_w.len())));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("non-finite weight".into()));
        }
        Ok(())
    }

    /// Sum of squared input-kernel entries.
    pub fn kernel_sq_norm(&self) -> T {
        self.layers.iter().flat_map(|l| l.kernels()).flat_map(|m| m.data.iter()).map(|v| *v * *v).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| 3 * l.hidden_dim() * (l.input_dim() + l.hidden_dim() + 1)).sum::<usize>()
            + self.dense_w.len()
            + 1
    }

    /// All parameters in a fixed order: per layer `W_z, W_r, W_o, U_z, U_r,
    /// U_o, b_z, b_r, b_o`, then the dense weights and bias.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for m in [&l.w_z, &l.w_r, &l.w_o, &l.u_z, &l.u_r, &l.u_o] {
                out.extend_from_slice(&m.data);
            }
            for b in [&l.b_z, &l.b_r, &l.b_o] {
                out.extend_from_slice(b);
            }
        }
        out.extend_from_slice(&self.dense_w);
        out.push(self.dense_b);
        out
    }

    /// Inverse of [`flatten`](Self::flatten) on a same-shaped network.
    pub fn assign(&mut self, flat: &[T]) {
        let mut pos = 0;
        for l in &mut self.layers {
            for t in l.tensors_mut() {
                let n = t.len();
                t.copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        let n = self.dense_w.len();
        self.dense_w.copy_from_slice(&flat[pos..pos + n]);
        self.dense_b = flat[pos + n];
    }

    /// Class of each entry of [`flatten`](Self::flatten).
    pub fn param_classes(&self) -> Vec<ParamClass> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            let (i, h) = (l.input_dim(), l.hidden_dim());
            out.extend(std::iter::repeat_n(ParamClass::InputKernel, 3 * h * i));
            out.extend(std::iter::repeat_n(ParamClass::RecurrentKernel, 3 * h * h));
            out.extend(std::iter::repeat_n(ParamClass::Bias, 3 * h));
        }
        out.extend(std::iter::repeat_n(ParamClass::Dense, self.dense_w.len() + 1));
        out
    }

    /// Mask marking input-kernel entries of [`flatten`](Self::flatten).
    pub(crate) fn kernel_mask(&self) -> Vec<bool> {
        self.param_classes().into_iter().map(|c| c == ParamClass::InputKernel).collect()
    }
}

/// Serialized form of trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeightsDocument<T> {
    pub input_dim: usize,
    pub layer_sizes: Vec<usize>,
    pub precision: Precision,
    pub config_fingerprint: String,
    pub weights: GruWeights<T>,
}

impl<T: Scalar> WeightsDocument<T> {
    pub fn new(config: &GruConfig, weights: GruWeights<T>) -> Self {
        Self {
            input_dim: weights.input_dim(),
            layer_sizes: weights.layer_sizes(),
            precision: config.precision,
            config_fingerprint: config.fingerprint(),
            weights,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks the document against `config`.
    pub fn from_json(s: &str, config: &GruConfig) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.config_fingerprint != config.fingerprint() {
            return Err(Error::Shape("weights were produced under a different network configuration".into()));
        }
        if doc.layer_sizes != doc.weights.layer_sizes() || doc.input_dim != doc.weights.input_dim() {
            return Err(Error::Shape("shape metadata does not match the stored weights".into()));
        }
        doc.weights.validate()?;
        Ok(doc)
    }
}

/// Fixed-length feature windows with scalar targets, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    sequence_length: usize,
    input_dim: usize,
    /// `len * sequence_length * input_dim` values, step-major within a window.
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(sequence_length: usize, input_dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let width = sequence_length * input_dim;
        if width == 0 || features.len() != targets.len() * width {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} windows of {sequence_length} x {input_dim}",
                features.len(),
                targets.len()
            )));
        }
        if !features.iter().chain(&targets).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("training data contains non-finite values".into()));
        }
        Ok(Self { sequence_length, input_dim, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.sequence_length * self.input_dim;
        &self.features[i * w..(i + 1) * w]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Windows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let w = self.sequence_length * self.input_dim;
        Self {
            sequence_length: self.sequence_length,
            input_dim: self.input_dim,
            features: self.features[start * w..end * w].to_vec(),
            targets: self.targets[start..end].to_vec(),
        }
    }

    /// Splits off the chronological tail holding `round(fraction * len)`
    /// windows for validation.
    pub fn split_validation(&self, fraction: f64) -> Result<(Self, Self)> {
        let n_val = (fraction * self.len() as f64).round() as usize;
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::InsufficientData(format!(
                "validation fraction {fraction} leaves an empty split of {} windows",
                self.len()
            )));
        }
        let cut = self.len() - n_val;
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }
}

/// Per-column standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows`, each of width `dim`. Constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InsufficientData("cannot standardize zero rows".into()));
        };
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GruConfig {
        GruConfig { layer_sizes: vec![3, 2], input_dim: 2, sequence_length: 4, ..Default::default() }
    }

    #[test]
    fn flatten_round_trip_and_classes() {
        let w = GruWeights::<f64>::init(&tiny()).unwrap();
        let flat = w.flatten();
        assert_eq!(flat.len(), w.param_count());
        assert_eq!(w.param_classes().len(), flat.len());
        let mut z = GruWeights::<f64>::zeros(2, &[3, 2]);
        z.assign(&flat);
        assert_eq!(z, w);
        let kernels = w.kernel_mask().iter().filter(|m| **m).count();
        assert_eq!(kernels, 3 * 3 * 2 + 3 * 2 * 3);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = GruWeights::<f64>::init(&tiny()).unwrap();
        let b = GruWeights::<f64>::init(&tiny()).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.b_z.iter().chain(&l.b_r).chain(&l.b_o).all(|v| *v == 0.0)));
        let c = GruWeights::<f64>::init(&GruConfig { seed: 1, ..tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn weights_document_round_trip() {
        let cfg = tiny();
        let w = GruWeights::<f32>::init(&cfg).unwrap();
        let doc = WeightsDocument::new(&cfg, w);
        let back = WeightsDocument::<f32>::from_json(&doc.to_json().unwrap(), &cfg).unwrap();
        assert_eq!(back, doc);
        let other = GruConfig { layer_sizes: vec![3, 3], ..cfg };
        assert!(WeightsDocument::<f32>::from_json(&doc.to_json().unwrap(), &other).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GruConfig::default().validate().is_ok());
        assert!(GruConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(GruConfig { layer_sizes: vec![], ..Default::default() }.validate().is_err());
        assert!(GruConfig { sequence_length: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn validation_split_is_chronological_tail() {
        let set = TrainingSet::new(1, 1, (0..9).map(f64::from).collect(), (0..9).map(f64::from).collect()).unwrap();
        let (tr, va) = set.split_validation(1.0 / 3.0).unwrap();
        assert_eq!(tr.targets(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(va.targets(), &[6.0, 7.0, 8.0]);
    }

    #[test]
    fn standardizer_centers_columns() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
    }
}
