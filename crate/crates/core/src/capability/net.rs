use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{CinError, Result};
use crate::gridworld::{check_kernel_size, extract_patch, State, WorldMap, NUM_ACTIONS};
use crate::planner::KernelSource;
use crate::seed;

pub const DEFAULT_HIDDEN: [usize; 4] = [64; 4];

const MAGIC: &[u8] = b"CINNET v1\n";

/// Feed-forward classifier from an `F x F` patch to one next-state
/// distribution over the `F x F` window per action.
///
/// Hidden layers use ReLU; the output layer is split into `NUM_ACTIONS`
/// groups of `F^2` logits, each normalised by its own softmax. Parameters
/// live in one flat vector: for each layer the row-major `out x in` weight
/// matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityNet {
    kernel_size: usize,
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer inputs and the output distribution of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    inputs: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl CapabilityNet {
    /// He-uniform weights, zero biases.
    pub fn new(kernel_size: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        if hidden.contains(&0) {
            return Err(CinError::InvalidParameter("hidden layer of width 0".into()));
        }
        let window = kernel_size * kernel_size;
        let mut sizes = vec![window];
        sizes.extend_from_slice(hidden);
        sizes.push(NUM_ACTIONS * window);

        let mut rng = seed::rng(seed);
        let mut params = Vec::with_capacity(param_count(&sizes));
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(CapabilityNet {
            kernel_size,
            sizes,
            params,
        })
    }

    /// Four hidden layers of width 64.
    pub fn standard(kernel_size: usize, seed: u64) -> Result<Self> {
        CapabilityNet::new(kernel_size, &DEFAULT_HIDDEN, seed)
    }

    pub fn from_parts(kernel_size: usize, sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let window = kernel_size * kernel_size;
        if sizes.len() < 2 || sizes[0] != window || *sizes.last().unwrap() != NUM_ACTIONS * window {
            return Err(CinError::InvalidParameter(format!(
                "layer sizes {sizes:?} do not fit kernel size {kernel_size}"
            )));
        }
        if sizes.contains(&0) {
            return Err(CinError::InvalidParameter("layer of width 0".into()));
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(CinError::ShapeMismatch {
                expected,
                found: params.len(),
            });
        }
        Ok(CapabilityNet {
            kernel_size,
            sizes,
            params,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for pair in self.sizes.windows(2).take(l) {
            off += pair[0] * pair[1] + pair[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Per-action next-state distributions for one patch.
    pub fn forward(&self, patch: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(patch, false)?.probs)
    }

    pub(crate) fn forward_cached(&self, patch: &[f64]) -> Result<Activations> {
        self.run(patch, true)
    }

    fn run(&self, patch: &[f64], keep: bool) -> Result<Activations> {
        if patch.len() != self.input_size() {
            return Err(CinError::ShapeMismatch {
                expected: self.input_size(),
                found: patch.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(if keep { layers } else { 0 });
        let mut x = patch.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..b_off];
            let b = &self.params[b_off..b_off + fan_out];
            let mut z = Vec::with_capacity(fan_out);
            for (row, bias) in w.chunks_exact(fan_in).zip(b) {
                let mut acc = *bias;
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                z.push(acc);
            }
            if l + 1 < layers {
                // written so that NaN propagates
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if keep {
                inputs.push(std::mem::replace(&mut x, z));
            } else {
                x = z;
            }
        }
        let window = self.kernel_size * self.kernel_size;
        for group in x.chunks_exact_mut(window) {
            softmax_in_place(group);
        }
        Ok(Activations { inputs, probs: x })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// gradient with respect to the output probabilities is `d_probs`.
    pub(crate) fn backward(&self, acts: &Activations, d_probs: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let window = self.kernel_size * self.kernel_size;
        let mut dz: Vec<f64> = Vec::with_capacity(d_probs.len());
        for (p, dp) in acts.probs.chunks_exact(window).zip(d_probs.chunks_exact(window)) {
            let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            dz.extend(p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - inner)));
        }
        let layers = self.sizes.len() - 1;
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let x = &acts.inputs[l];
            let mut dx = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = dz[o];
                if g == 0.0 {
                    continue;
                }
                grad[b_off + o] += g;
                let row = w_off + o * fan_in;
                for i in 0..fan_in {
                    grad[row + i] += g * x[i];
                    dx[i] += g * self.params[row + i];
                }
            }
            if l > 0 {
                // x is a ReLU output
                for (d, xi) in dx.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dx;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + 4 * self.sizes.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.kernel_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| CinError::Format(format!("model file: {msg}"));
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing CINNET v1 header"))?;
        let mut cursor = rest;
        let read_u32 = |cursor: &mut &[u8]| -> Result<usize> {
            if cursor.len() < 4 {
                return Err(bad("truncated header"));
            }
            let (head, tail) = cursor.split_at(4);
            *cursor = tail;
            Ok(u32::from_le_bytes(head.try_into().unwrap()) as usize)
        };
        let kernel_size = read_u32(&mut cursor)?;
        let count = read_u32(&mut cursor)?;
        if count > 1024 {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..count)
            .map(|_| read_u32(&mut cursor))
            .collect::<Result<Vec<_>>>()?;
        let expected = param_count(&sizes);
        if cursor.len() != expected * 8 {
            return Err(bad("parameter block has the wrong length"));
        }
        let params = cursor
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        CapabilityNet::from_parts(kernel_size, sizes, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CapabilityNet::from_bytes(&fs::read(path)?)
    }
}

impl KernelSource for CapabilityNet {
    fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    fn kernels_at(&self, map: &WorldMap, s: State) -> Result<Vec<f64>> {
        let patch = extract_patch(map, s, self.kernel_size)?;
        self.forward(&patch.values)
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
