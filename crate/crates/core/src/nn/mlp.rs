use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Hidden-layer nonlinearity. The output layer is always the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
    /// No nonlinearity; the whole network is affine.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// `c = op(a) * op(b) + beta * c` for row-major buffers, where `op(a)` is `m x k` and
/// `op(b)` is `k x n`. A transposed operand is stored in its untransposed shape.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted buffer extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fully connected network with a flat parameter vector.
///
/// Layer `l` maps `widths[l]` inputs to `widths[l + 1]` outputs; its weights are stored
/// input-major (`W[i * fan_out + j]`) followed by its biases.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    generation: u64,
}

/// Activations cached by [`Mlp::forward_batch`] for a later [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    batch: usize,
    generation: u64,
    /// Input to each layer (layer 0 input is the network input).
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    pub fn zeros(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "network widths {widths:?} need at least two positive entries"
            )));
        }
        let n = param_count(&widths);
        Ok(Self {
            widths,
            activation,
            params: vec![0.0; n],
            generation: next_generation(),
        })
    }

    /// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(widths: Vec<usize>, activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        let mut offset = 0;
        for l in 0..net.widths.len() - 1 {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + (fan_in + 1) * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += (fan_in + 1) * fan_out;
        }
        Ok(net)
    }

    pub fn from_parts(widths: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Any tape recorded before this call becomes stale.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset: usize = param_count(&self.widths[..=l]);
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Forward pass over `batch` row-major inputs, keeping activations for backprop.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        let n_layers = self.widths.len() - 1;
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut current = inputs.to_vec();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = self.layer(l);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, fan_in, fan_out, &current, false, w, false, 1.0, &mut z);
            let next = if l + 1 < n_layers {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                a
            } else {
                z
            };
            layer_inputs.push(std::mem::replace(&mut current, next));
        }
        Ok(Tape {
            batch,
            generation: self.generation,
            layer_inputs,
            pre,
            output: current,
        })
    }

    /// Reverse-mode gradients of a scalar loss given `upstream = dLoss/dOutput`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<Gradients> {
        if tape.generation != self.generation {
            return Err(Error::StaleCache {
                tape: tape.generation,
                net: self.generation,
            });
        }
        let batch = tape.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.output_dim(),
                got: upstream.len(),
            });
        }
        let n_layers = self.widths.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            offset -= (fan_in + 1) * fan_out;
            let (gw, gb) = grads[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            gemm(fan_in, batch, fan_out, &tape.layer_inputs[l], true, &delta, false, 0.0, gw);
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let (w, _) = self.layer(l);
            let mut d_in = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &delta, false, w, true, 0.0, &mut d_in);
            if l > 0 {
                let z = &tape.pre[l - 1];
                let a = &tape.layer_inputs[l];
                for ((d, &zv), &av) in d_in.iter_mut().zip(z).zip(a) {
                    *d *= self.activation.derivative(zv, av);
                }
            }
            delta = d_in;
        }
        Ok(Gradients {
            params: grads,
            inputs: delta,
        })
    }
}
