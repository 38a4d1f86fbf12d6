//! Dense tanh networks over one-hot observation inputs, with hand-written
//! backpropagation.
//!
//! Parameters are one flat vector. Each layer stores its weight matrix
//! input-major (`w[i * fan_out + j]`) followed by its bias. The first layer
//! reads a sparse one-hot input, given as the list of active positions.

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    input: usize,
    /// Hidden widths followed by the output width.
    widths: Vec<usize>,
}

impl Layout {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(output);
        Layout { input, widths }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[..self.widths.len() - 1]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("layout has an output layer")
    }

    /// `(fan_in, fan_out, offset of the weights)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        let mut fan_in = self.input;
        self.widths.iter().map(move |&fan_out| {
            let item = (fan_in, fan_out, offset);
            offset += fan_in * fan_out + fan_out;
            fan_in = fan_out;
            item
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|(i, o, _)| i * o + o).sum()
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for (fan_in, fan_out, off) in self.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        params
    }
}

/// Cached forward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    active: Vec<usize>,
    /// Post-tanh outputs of each hidden layer.
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward(layout: &Layout, params: &[f64], active: &[usize], acts: &mut Activations) {
    let n_layers = layout.widths.len();
    acts.active.clear();
    acts.active.extend_from_slice(active);
    acts.hidden.resize(n_layers - 1, Vec::new());
    for (l, (fan_in, fan_out, off)) in layout.layers().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        let mut z = b.to_vec();
        if l == 0 {
            for &k in active {
                let col = &w[k * fan_out..(k + 1) * fan_out];
                for (zj, &wj) in z.iter_mut().zip(col) {
                    *zj += wj;
                }
            }
        } else {
            let x = &acts.hidden[l - 1];
            for (i, &xi) in x.iter().enumerate() {
                let row = &w[i * fan_out..(i + 1) * fan_out];
                for (zj, &wj) in z.iter_mut().zip(row) {
                    *zj += xi * wj;
                }
            }
        }
        if l + 1 < n_layers {
            for v in &mut z {
                *v = v.tanh();
            }
            acts.hidden[l] = z;
        } else {
            acts.output = z;
        }
    }
}

/// Adds `d output · ∂output/∂params` into `grad`.
pub fn backward(
    layout: &Layout,
    params: &[f64],
    acts: &Activations,
    d_output: &[f64],
    grad: &mut [f64],
) {
    let layers: Vec<_> = layout.layers().collect();
    let mut delta = d_output.to_vec();
    for l in (0..layers.len()).rev() {
        let (fan_in, fan_out, off) = layers[l];
        let b_off = off + fan_in * fan_out;
        for (g, &d) in grad[b_off..b_off + fan_out].iter_mut().zip(&delta) {
            *g += d;
        }
        if l == 0 {
            for &k in &acts.active {
                let g = &mut grad[off + k * fan_out..off + (k + 1) * fan_out];
                for (gj, &d) in g.iter_mut().zip(&delta) {
                    *gj += d;
                }
            }
        } else {
            let x = &acts.hidden[l - 1];
            let w = &params[off..b_off];
            let mut prev = vec![0.0; fan_in];
            for (i, &xi) in x.iter().enumerate() {
                let g = &mut grad[off + i * fan_out..off + (i + 1) * fan_out];
                let row = &w[i * fan_out..(i + 1) * fan_out];
                let mut dot = 0.0;
                for j in 0..fan_out {
                    g[j] += xi * delta[j];
                    dot += row[j] * delta[j];
                }
                prev[i] = dot * (1.0 - xi * xi);
            }
            delta = prev;
        }
    }
}
