use rand::Rng;

use super::matrix::{gemm, Matrix, Operand};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network. Parameters live in one flat vector; layer `l`
/// stores its `out x in` weight matrix row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Gradient of a scalar with respect to every parameter of an [`Mlp`], in
/// the same flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer(Vec<f64>);

/// Per-layer activations recorded by [`Mlp::forward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds the input at least")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// All-zero network.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Input(format!(
                "layer sizes must have at least two non-zero entries, got {sizes:?}"
            )));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; Self::param_count(sizes)],
        })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = (w[0] + 1) * w[1];
            for p in &mut net.params[off..off + n] {
                *p = rng.random_range(-bound..bound);
            }
            off += n;
        }
        Ok(net)
    }

    pub fn from_params(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        if params.len() != net.params.len() {
            return Err(Error::shape("Mlp::from_params", net.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_params(&self, layer: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + (n_in + 1) * n_out];
        (w, b)
    }

    pub fn weights(&self, layer: usize) -> Matrix {
        let (w, _) = self.layer_params(layer);
        Matrix::from_vec(self.sizes[layer + 1], self.sizes[layer], w.to_vec())
            .expect("layer layout")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        self.layer_params(layer).1
    }

    pub fn set_layer(&mut self, layer: usize, weights: &Matrix, bias: &[f64]) -> Result<()> {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        if weights.rows() != n_out || weights.cols() != n_in {
            return Err(Error::shape("Mlp::set_layer", n_in * n_out, weights.rows() * weights.cols()));
        }
        if bias.len() != n_out {
            return Err(Error::shape("Mlp::set_layer bias", n_out, bias.len()));
        }
        let off = self.layer_offset(layer);
        self.params[off..off + n_in * n_out].copy_from_slice(weights.as_slice());
        self.params[off + n_in * n_out..off + (n_in + 1) * n_out].copy_from_slice(bias);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("Mlp::forward", self.input_dim(), input.len()));
        }
        let mut x = input.to_vec();
        for layer in 0..self.num_layers() {
            let (w, b) = self.layer_params(layer);
            let act = self.layer_activation(layer);
            let n_in = x.len();
            x = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    act.apply(bias + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
                })
                .collect();
        }
        Ok(x)
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self
            .forward_tape(input)?
            .activations
            .pop()
            .expect("non-empty tape"))
    }

    /// Batched forward pass keeping every layer's output for [`Mlp::backward_batch`].
    pub fn forward_tape(&self, input: &Matrix) -> Result<Tape> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward_tape", self.input_dim(), input.cols()));
        }
        let batch = input.rows();
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.clone());
        for layer in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let (w, b) = self.layer_params(layer);
            let mut z = Matrix::zeros(batch, n_out);
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(b);
            }
            let prev = activations.last().unwrap();
            gemm(
                Operand::plain(prev),
                Operand::raw_t(w, n_out, n_in),
                z.as_mut_slice(),
                1.0,
            );
            let act = self.layer_activation(layer);
            if act != Activation::Identity {
                z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            activations.push(z);
        }
        Ok(Tape { activations })
    }

    /// Gradients of `sum_rows <output_row, upstream_row>` with respect to all
    /// parameters (summed over the batch) and with respect to each input row.
    pub fn backward_batch(&self, tape: &Tape, upstream: &Matrix) -> Result<(GradientBuffer, Matrix)> {
        let out = tape.output();
        if upstream.cols() != self.output_dim() {
            return Err(Error::shape("Mlp::backward_batch", self.output_dim(), upstream.cols()));
        }
        if upstream.rows() != out.rows() {
            return Err(Error::shape("Mlp::backward_batch rows", out.rows(), upstream.rows()));
        }
        let batch = upstream.rows();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for layer in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let act = self.layer_activation(layer);
            if act != Activation::Identity {
                let a = &tape.activations[layer + 1];
                for (d, &av) in delta.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *d *= act.derivative_from_output(av);
                }
            }
            let off = self.layer_offset(layer);
            let prev = &tape.activations[layer];
            let (gw, gb) = grads[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            // dW = delta^T * prev
            gemm(
                Operand::raw_t(delta.as_slice(), batch, n_out),
                Operand::plain(prev),
                gw,
                0.0,
            );
            for r in 0..batch {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            let (w, _) = self.layer_params(layer);
            let mut next = Matrix::zeros(batch, n_in);
            gemm(
                Operand::plain(&delta),
                Operand::raw(w, n_out, n_in),
                next.as_mut_slice(),
                0.0,
            );
            delta = next;
        }
        Ok((GradientBuffer(grads), delta))
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(GradientBuffer, Vec<f64>)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let tape = self.forward_tape(&x)?;
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        let (g, dx) = self.backward_batch(&tape, &up)?;
        Ok((g, dx.into_vec()))
    }
}

impl GradientBuffer {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientBuffer(vec![0.0; net.params.len()])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        GradientBuffer(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|g| *g *= k);
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape("GradientBuffer::add_assign", self.len(), other.len()));
        }
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&g| g == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_net() -> Mlp {
        // 2-3-1, relu hidden, identity output
        let mut net = Mlp::zeros(&[2, 3, 1], Activation::Relu, Activation::Identity).unwrap();
        let w0 = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.5, -3.0]]).unwrap();
        net.set_layer(0, &w0, &[0.1, 0.2, -0.6]).unwrap();
        let w1 = Matrix::from_rows(&[[2.0, -1.0, 4.0]]).unwrap();
        net.set_layer(1, &w1, &[0.3]).unwrap();
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Relu, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_unrolled_forward() {
        // hidden pre = (1.1, -0.8, -0.1) -> relu (1.1, 0, 0); out = 2.2 + 0.3
        let out = hand_net().forward(&[1.0, 0.0]).unwrap();
        assert!((out[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_output_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init_uniform(&[4, 8, 3], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        for k in 0..50 {
            let x = [k as f64 - 25.0, 1.0, -0.5 * k as f64, 3.0];
            for y in net.forward(&x).unwrap() {
                assert!(y > 0.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let net = hand_net();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(net.backward(&[1.0, 0.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (g, dx) = hand_net().backward(&[0.3, -0.7], &[0.0]).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_input_gradient_is_transpose_product() {
        let mut net = Mlp::zeros(&[3, 2], Activation::Relu, Activation::Identity).unwrap();
        let w = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]]).unwrap();
        net.set_layer(0, &w, &[0.7, -0.2]).unwrap();
        let up = [2.0, -1.0];
        let (_, dx) = net.backward(&[0.1, 0.2, 0.3], &up).unwrap();
        let expect = w.transpose().matvec(&up).unwrap();
        assert_eq!(dx, expect);
    }

    #[test]
    fn batch_forward_agrees_with_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::init_uniform(&[5, 7, 4], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let batch = net.forward_batch(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = net.forward(r).unwrap();
            for (a, b) in single.iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_bit_identical_on_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init_uniform(&[4, 8, 8, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = [0.1, -0.4, 2.0, 0.0];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(Mlp::param_count(&[20, 64, 32, 1]), 21 * 64 + 65 * 32 + 33);
    }
}
