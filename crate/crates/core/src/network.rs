//! The forward model: blocks of linear -> layer-norm -> tanh, with exact
//! analytic gradients for both the block weights and the block inputs.
//!
//! A block maps a batch `h_prev` (B x N_in) to `tanh(layernorm(h_prev * W))`.
//! Layer norm is per row, uses population variance, and carries no learnable
//! affine parameters; gradients account for the mean and variance paths.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// One trainable block: weight matrix plus the normalization/activation that
/// follows it. Weights have shape N_in x N_out so a batch multiplies from the
/// left.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub weights: Matrix,
    pub use_layernorm: bool,
    pub ln_eps: f64,
}

impl LayerBlock {
    pub fn new(weights: Matrix, use_layernorm: bool) -> Self {
        LayerBlock {
            weights,
            use_layernorm,
            ln_eps: DEFAULT_LN_EPS,
        }
    }

    /// Gaussian-initialized block with std `1/sqrt(n_in)`.
    pub fn init(rng: &mut Rng, n_in: usize, n_out: usize, use_layernorm: bool) -> Self {
        let std = 1.0 / (n_in as f64).sqrt();
        LayerBlock::new(rng.gaussian_matrix(n_in, n_out, 0.0, std), use_layernorm)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Intermediates of one block forward pass, kept for the backward formulas.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Block input h_{l-1}, B x N_in.
    pub input: Matrix,
    /// Pre-normalization z = input * W, B x N_out.
    pub pre_norm: Matrix,
    /// Normalized u (equals z when layer norm is off), B x N_out.
    pub normalized: Matrix,
    /// Block output h = tanh(u), B x N_out.
    pub output: Matrix,
    /// Per-row layer-norm statistics: 1/sqrt(var + eps).
    pub inv_std: Vec<f64>,
}

/// Runs one block over a batch, returning the output and the cache needed to
/// compute gradients.
pub fn forward_block(block: &LayerBlock, h_prev: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if h_prev.cols() != block.input_dim() {
        return Err(Error::dim(
            "forward_block",
            h_prev.shape(),
            block.weights.shape(),
        ));
    }
    let pre_norm = h_prev.matmul(&block.weights)?;
    let rows = pre_norm.rows();
    let cols = pre_norm.cols();

    let mut normalized = pre_norm.clone();
    let mut inv_std = vec![1.0; rows];
    if block.use_layernorm {
        for (r, inv_slot) in inv_std.iter_mut().enumerate() {
            let row = normalized.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + block.ln_eps).sqrt();
            *inv_slot = inv;
            for z in row.iter_mut() {
                *z = (*z - mean) * inv;
            }
        }
    }

    let mut output = normalized.clone();
    for v in output.data_mut() {
        *v = v.tanh();
    }

    let cache = ForwardCache {
        input: h_prev.clone(),
        pre_norm,
        normalized,
        output: output.clone(),
        inv_std,
    };
    Ok((output, cache))
}

/// Pulls an upstream gradient dL/dh back through tanh and layer norm,
/// yielding dL/dz (gradient at the pre-normalization linear output).
fn upstream_to_pre_norm(block: &LayerBlock, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
    if upstream.shape() != cache.output.shape() {
        return Err(Error::dim(
            "block gradient",
            upstream.shape(),
            cache.output.shape(),
        ));
    }
    let rows = upstream.rows();
    let cols = upstream.cols();

    // Through tanh: dL/du = dL/dh * (1 - h^2).
    let mut grad_u = Matrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let h = cache.output.data()[i];
        grad_u.data_mut()[i] = upstream.data()[i] * (1.0 - h * h);
    }

    if !block.use_layernorm {
        return Ok(grad_u);
    }

    // Per row: dL/dz_j = inv_std * (g_j - mean(g) - u_j * mean(g .* u)).
    let mut grad_z = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let g = grad_u.row(r);
        let u = cache.normalized.row(r);
        let inv = cache.inv_std[r];
        let mean_g = g.iter().sum::<f64>() / cols as f64;
        let mean_gu = g.iter().zip(u).map(|(&a, &b)| a * b).sum::<f64>() / cols as f64;
        let out = grad_z.row_mut(r);
        for j in 0..cols {
            out[j] = inv * (g[j] - mean_g - u[j] * mean_gu);
        }
    }
    Ok(grad_z)
}

/// Gradient of the loss w.r.t. the block weights: dL/dW = input^T * dL/dz.
pub fn grad_block_params(block: &LayerBlock, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
    let grad_z = upstream_to_pre_norm(block, cache, upstream)?;
    cache.input.transpose_matmul(&grad_z)
}

/// Gradient of the loss w.r.t. the block input: dL/dh_prev = dL/dz * W^T.
pub fn grad_block_input(block: &LayerBlock, cache: &ForwardCache, upstream: &Matrix) -> Result<Matrix> {
    let grad_z = upstream_to_pre_norm(block, cache, upstream)?;
    grad_z.matmul_transpose_b(&block.weights)
}

/// Both gradients from one shared backward pass (for end-to-end training).
pub fn grad_block(
    block: &LayerBlock,
    cache: &ForwardCache,
    upstream: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let grad_z = upstream_to_pre_norm(block, cache, upstream)?;
    let grad_w = cache.input.transpose_matmul(&grad_z)?;
    let grad_in = grad_z.matmul_transpose_b(&block.weights)?;
    Ok((grad_w, grad_in))
}

/// Forward through a prefix of the stack, keeping every cache.
pub fn forward_stack(blocks: &[LayerBlock], x: &Matrix) -> Result<(Matrix, Vec<ForwardCache>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x.clone();
    for block in blocks {
        let (next, cache) = forward_block(block, &h)?;
        caches.push(cache);
        h = next;
    }
    Ok((h, caches))
}

/// Features at the output of `blocks[..=layer]`, without caches.
pub fn features_at(blocks: &[LayerBlock], x: &Matrix, layer: usize) -> Result<Matrix> {
    if layer >= blocks.len() {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            len: blocks.len(),
        });
    }
    let mut h = x.clone();
    for block in &blocks[..=layer] {
        let (next, _) = forward_block(block, &h)?;
        h = next;
    }
    Ok(h)
}

/// Chains an upstream gradient at the output of `blocks[..=layer]` back to
/// the raw input, using the caches from [`forward_stack`].
pub fn grad_input_through(
    blocks: &[LayerBlock],
    caches: &[ForwardCache],
    layer: usize,
    upstream: &Matrix,
) -> Result<Matrix> {
    let mut grad = upstream.clone();
    for l in (0..=layer).rev() {
        grad = grad_block_input(&blocks[l], &caches[l], &grad)?;
    }
    Ok(grad)
}
