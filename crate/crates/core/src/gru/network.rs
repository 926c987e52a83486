use rand::Rng;

use super::{Activation, GruConfig, GruLayer, GruWeights, Scalar};
use crate::error::{Error, Result};

/// Gradients share the weights' shape.
pub type Gradients<T> = GruWeights<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

struct StepOut<T> {
    z: Vec<T>,
    r: Vec<T>,
    a_o: Vec<T>,
    o_hat: Vec<T>,
    h: Vec<T>,
}

fn step<T: Scalar>(l: &GruLayer<T>, act: Activation, x: &[T], h_prev: &[T]) -> StepOut<T> {
    let n = l.hidden_dim();
    let mut z = l.b_z.clone();
    l.w_z.mul_add(x, &mut z);
    l.u_z.mul_add(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = l.b_r.clone();
    l.w_r.mul_add(x, &mut r);
    l.u_r.mul_add(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(a, b)| *a * *b).collect();
    let mut a_o = l.b_o.clone();
    l.w_o.mul_add(x, &mut a_o);
    l.u_o.mul_add(&rh, &mut a_o);
    let o_hat: Vec<T> = a_o.iter().map(|a| act.apply(*a)).collect();
    let h = (0..n).map(|i| (T::one() - z[i]) * h_prev[i] + z[i] * o_hat[i]).collect();
    StepOut { z, r, a_o, o_hat, h }
}

/// One GRU step: update and reset gates, candidate state, convex update.
pub fn cell_forward<T: Scalar>(layer: &GruLayer<T>, x: &[T], o_prev: &[T], activation: Activation) -> Result<Vec<T>> {
    if x.len() != layer.input_dim() || o_prev.len() != layer.hidden_dim() {
        return Err(Error::Shape(format!(
            "cell expects input {} and state {}, got {} and {}",
            layer.input_dim(),
            layer.hidden_dim(),
            x.len(),
            o_prev.len()
        )));
    }
    Ok(step(layer, activation, x, o_prev).h)
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Cache<T> {
    /// Per layer, per step.
    inputs: Vec<Vec<Vec<T>>>,
    states: Vec<Vec<Vec<T>>>,
    z: Vec<Vec<Vec<T>>>,
    r: Vec<Vec<Vec<T>>>,
    a_o: Vec<Vec<Vec<T>>>,
    o_hat: Vec<Vec<Vec<T>>>,
    /// Masked top-layer output at the last step.
    top: Vec<T>,
}

/// Inverted-dropout masks for each layer's output sequence.
pub(crate) fn dropout_masks<T: Scalar, R: Rng + ?Sized>(
    w: &GruWeights<T>,
    seq_len: usize,
    rate: f64,
    rng: &mut R,
) -> Vec<Vec<Vec<T>>> {
    let keep = T::lit(1.0 / (1.0 - rate));
    w.layers
        .iter()
        .map(|l| {
            (0..seq_len)
                .map(|_| {
                    (0..l.hidden_dim()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()
                })
                .collect()
        })
        .collect()
}

fn check_sequence<T: Scalar>(w: &GruWeights<T>, seq_len: usize, seq: &[T]) -> Result<()> {
    if seq_len == 0 || seq.len() != seq_len * w.input_dim() {
        return Err(Error::Shape(format!(
            "sequence has {} values, expected {seq_len} steps of {} features",
            seq.len(),
            w.input_dim()
        )));
    }
    Ok(())
}

pub(crate) fn forward_cached<T: Scalar>(
    w: &GruWeights<T>,
    act: Activation,
    seq: &[T],
    seq_len: usize,
    masks: Option<&[Vec<Vec<T>>]>,
) -> (T, Cache<T>) {
    let d = w.input_dim();
    let mut xs: Vec<Vec<T>> = (0..seq_len).map(|t| seq[t * d..(t + 1) * d].to_vec()).collect();
    let mut cache =
        Cache { inputs: vec![], states: vec![], z: vec![], r: vec![], a_o: vec![], o_hat: vec![], top: vec![] };
    for (k, l) in w.layers.iter().enumerate() {
        let mut h = vec![T::zero(); l.hidden_dim()];
        let mut states = vec![h.clone()];
        let (mut zs, mut rs, mut aos, mut ohs) = (vec![], vec![], vec![], vec![]);
        let mut outs = Vec::with_capacity(seq_len);
        for (t, x) in xs.iter().enumerate() {
            let s = step(l, act, x, &h);
            h = s.h;
            states.push(h.clone());
            zs.push(s.z);
            rs.push(s.r);
            aos.push(s.a_o);
            ohs.push(s.o_hat);
            let out = match masks {
                Some(m) => h.iter().zip(&m[k][t]).map(|(a, b)| *a * *b).collect(),
                None => h.clone(),
            };
            outs.push(out);
        }
        cache.inputs.push(std::mem::replace(&mut xs, outs));
        cache.states.push(states);
        cache.z.push(zs);
        cache.r.push(rs);
        cache.a_o.push(aos);
        cache.o_hat.push(ohs);
    }
    cache.top = xs.pop().expect("sequence_length >= 1");
    let y = cache.top.iter().zip(&w.dense_w).map(|(a, b)| *a * *b).sum::<T>() + w.dense_b;
    (y, cache)
}

/// Accumulates `dy * d(prediction)/d(weights)` into `grad`.
pub(crate) fn backward<T: Scalar>(
    w: &GruWeights<T>,
    act: Activation,
    cache: &Cache<T>,
    masks: Option<&[Vec<Vec<T>>]>,
    dy: T,
    grad: &mut Gradients<T>,
) {
    let seq_len = cache.inputs[0].len();
    for (g, h) in grad.dense_w.iter_mut().zip(&cache.top) {
        *g += dy * *h;
    }
    grad.dense_b += dy;
    // gradient w.r.t. the masked output sequence of the current layer
    let top_h = w.layers.last().expect("at least one layer").hidden_dim();
    let mut d_out: Vec<Vec<T>> = vec![vec![T::zero(); top_h]; seq_len];
    d_out[seq_len - 1] = w.dense_w.iter().map(|v| dy * *v).collect();

    for k in (0..w.layers.len()).rev() {
        let l = &w.layers[k];
        let g = &mut grad.layers[k];
        let n = l.hidden_dim();
        let mut d_in: Vec<Vec<T>> = vec![vec![T::zero(); l.input_dim()]; seq_len];
        let mut carry = vec![T::zero(); n];
        for t in (0..seq_len).rev() {
            let x = &cache.inputs[k][t];
            let h_prev = &cache.states[k][t];
            let z = &cache.z[k][t];
            let r = &cache.r[k][t];
            let a_o = &cache.a_o[k][t];
            let o_hat = &cache.o_hat[k][t];
            let dh: Vec<T> = (0..n)
                .map(|i| {
                    let m = masks.map_or(T::one(), |m| m[k][t][i]);
                    d_out[t][i] * m + carry[i]
                })
                .collect();
            let mut da_z = vec![T::zero(); n];
            let mut da_o = vec![T::zero(); n];
            let mut dh_prev = vec![T::zero(); n];
            for i in 0..n {
                let dz = dh[i] * (o_hat[i] - h_prev[i]);
                da_z[i] = dz * z[i] * (T::one() - z[i]);
                da_o[i] = dh[i] * z[i] * act.derivative(a_o[i], o_hat[i]);
                dh_prev[i] = dh[i] * (T::one() - z[i]);
            }
            let rh: Vec<T> = r.iter().zip(h_prev).map(|(a, b)| *a * *b).collect();
            let mut d_rh = vec![T::zero(); n];
            l.u_o.mul_t_add(&da_o, &mut d_rh);
            let mut da_r = vec![T::zero(); n];
            for i in 0..n {
                da_r[i] = d_rh[i] * h_prev[i] * r[i] * (T::one() - r[i]);
                dh_prev[i] += d_rh[i] * r[i];
            }
            g.w_z.outer_add(&da_z, x);
            g.w_r.outer_add(&da_r, x);
            g.w_o.outer_add(&da_o, x);
            g.u_z.outer_add(&da_z, h_prev);
            g.u_r.outer_add(&da_r, h_prev);
            g.u_o.outer_add(&da_o, &rh);
            for i in 0..n {
                g.b_z[i] += da_z[i];
                g.b_r[i] += da_r[i];
                g.b_o[i] += da_o[i];
            }
            l.u_z.mul_t_add(&da_z, &mut dh_prev);
            l.u_r.mul_t_add(&da_r, &mut dh_prev);
            l.w_z.mul_t_add(&da_z, &mut d_in[t]);
            l.w_r.mul_t_add(&da_r, &mut d_in[t]);
            l.w_o.mul_t_add(&da_o, &mut d_in[t]);
            carry = dh_prev;
        }
        d_out = d_in;
    }
}

/// Prediction for one feature window (`sequence_length` steps, step-major).
/// Train mode draws inverted-dropout masks from `rng`; eval mode ignores it.
pub fn network_forward<T: Scalar, R: Rng + ?Sized>(
    weights: &GruWeights<T>,
    config: &GruConfig,
    sequence: &[T],
    mode: Mode,
    rng: &mut R,
) -> Result<T> {
    check_sequence(weights, config.sequence_length, sequence)?;
    let masks = match mode {
        Mode::Train if config.dropout_rate > 0.0 => {
            Some(dropout_masks(weights, config.sequence_length, config.dropout_rate, rng))
        }
        _ => None,
    };
    Ok(forward_cached(weights, config.activation, sequence, config.sequence_length, masks.as_deref()).0)
}

/// Mean squared error plus `l2_lambda` times the squared input kernels.
pub fn loss<T: Scalar>(predictions: &[f64], targets: &[f64], weights: &GruWeights<T>, l2_lambda: f64) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientData("loss of an empty batch".into()));
    }
    let mse = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predictions.len() as f64;
    let penalty = weights.kernel_sq_norm().to_f64().unwrap_or(f64::NAN);
    Ok(mse + l2_lambda * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_layer(input: usize, hidden: usize, seed: u64) -> GruLayer<f64> {
        let cfg = GruConfig { layer_sizes: vec![hidden], input_dim: input, seed, ..Default::default() };
        let mut w = GruWeights::<f64>::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let l = &mut w.layers[0];
        for b in [&mut l.b_z, &mut l.b_r, &mut l.b_o] {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        w.layers.remove(0)
    }

    #[test]
    fn zero_cell_gives_half_gates_and_zero_state() {
        let l = GruLayer::<f64>::zeros(3, 2);
        let s = step(&l, Activation::Relu, &[1.0, -2.0, 0.5], &[0.0, 0.0]);
        assert_eq!(s.z, vec![0.5, 0.5]);
        assert_eq!(s.r, vec![0.5, 0.5]);
        assert_eq!(s.h, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_copies_candidate() {
        let mut l = random_layer(2, 3, 4);
        l.b_z = vec![50.0; 3];
        let x = [0.3, -0.7];
        let h0 = [0.2, -0.1, 0.4];
        let s = step(&l, Activation::Tanh, &x, &h0);
        for (h, o) in s.h.iter().zip(&s.o_hat) {
            assert!((h - o).abs() < 1e-12);
        }
    }

    #[test]
    fn two_unit_cell_matches_scalar_evaluation() {
        let l = random_layer(2, 2, 9);
        let x = [0.4, -1.3];
        let h = [0.25, -0.6];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let m = |a: &Matrix<f64>, i: usize, j: usize| a.data[i * a.cols + j];
        for act in [Activation::Relu, Activation::Tanh] {
            let out = cell_forward(&l, &x, &h, act).unwrap();
            for i in 0..2 {
                let z = sig(m(&l.w_z, i, 0) * x[0]
                    + m(&l.w_z, i, 1) * x[1]
                    + m(&l.u_z, i, 0) * h[0]
                    + m(&l.u_z, i, 1) * h[1]
                    + l.b_z[i]);
                let r0 = sig(m(&l.w_r, 0, 0) * x[0]
                    + m(&l.w_r, 0, 1) * x[1]
                    + m(&l.u_r, 0, 0) * h[0]
                    + m(&l.u_r, 0, 1) * h[1]
                    + l.b_r[0]);
                let r1 = sig(m(&l.w_r, 1, 0) * x[0]
                    + m(&l.w_r, 1, 1) * x[1]
                    + m(&l.u_r, 1, 0) * h[0]
                    + m(&l.u_r, 1, 1) * h[1]
                    + l.b_r[1]);
                let a = m(&l.w_o, i, 0) * x[0]
                    + m(&l.w_o, i, 1) * x[1]
                    + m(&l.u_o, i, 0) * r0 * h[0]
                    + m(&l.u_o, i, 1) * r1 * h[1]
                    + l.b_o[i];
                let cand = match act {
                    Activation::Relu => a.max(0.0),
                    Activation::Tanh => a.tanh(),
                };
                let expect = (1.0 - z) * h[i] + z * cand;
                assert!((out[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let l = GruLayer::<f64>::zeros(3, 2);
        assert!(matches!(cell_forward(&l, &[1.0], &[0.0, 0.0], Activation::Relu), Err(Error::Shape(_))));
    }

    #[test]
    fn single_unit_network_unrolls_the_cell() {
        let cfg = GruConfig {
            layer_sizes: vec![1],
            input_dim: 1,
            sequence_length: 5,
            dropout_rate: 0.0,
            activation: Activation::Tanh,
            ..Default::default()
        };
        let mut w = GruWeights::<f64>::zeros(1, &[1]);
        w.layers[0].w_o.data[0] = 1.0;
        w.layers[0].u_o.data[0] = 1.0;
        w.layers[0].w_z.data[0] = 0.5;
        w.dense_w[0] = 1.0;
        let seq = [0.7; 5];
        let mut h = vec![0.0];
        for _ in 0..5 {
            h = cell_forward(&w.layers[0], &[0.7], &h, Activation::Tanh).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = network_forward(&w, &cfg, &seq, Mode::Eval, &mut rng).unwrap();
        assert!((y - h[0]).abs() < 1e-15);
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let cfg = GruConfig { layer_sizes: vec![4, 3], input_dim: 2, sequence_length: 3, ..Default::default() };
        let w = GruWeights::<f64>::init(&cfg).unwrap();
        let seq = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = network_forward(&w, &cfg, &seq, Mode::Eval, &mut rng).unwrap();
        let b = network_forward(&w, &cfg, &seq, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        let no_drop = GruConfig { dropout_rate: 0.0, ..cfg };
        let c = network_forward(&w, &no_drop, &seq, Mode::Train, &mut rng).unwrap();
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let w = GruWeights::<f64>::zeros(1, &[1]);
        assert_eq!(loss(&[1.0, 2.0], &[1.0, 2.0], &w, 0.0).unwrap(), 0.0);
        assert_eq!(loss(&[0.0, 0.0], &[1.0, 2.0], &w, 0.0).unwrap(), 2.5);
        assert!(matches!(loss(&[0.0], &[1.0, 2.0], &w, 0.0), Err(Error::LengthMismatch { .. })));
        let cfg = GruConfig { layer_sizes: vec![2, 2], input_dim: 3, ..Default::default() };
        let w = GruWeights::<f64>::init(&cfg).unwrap();
        let direct: f64 =
            w.layers.iter().flat_map(|l| [&l.w_z, &l.w_r, &l.w_o]).flat_map(|m| m.data.iter()).map(|v| v * v).sum();
        assert!((loss(&[1.0], &[1.0], &w, 0.01).unwrap() - 0.01 * direct).abs() < 1e-15);
    }
}
