use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{
    gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, linear_backward, linear_param_grads,
    softmax_in_place, LnCache, View, ViewMut,
};
use super::params::{BlockParams, ModelConfig, ModelParams};
use crate::error::{param_err, Result};
use crate::patching::Patch;

/// The selected patches of one image with their grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    /// `len x patch_dim`, row-major; each row is one patch's interleaved RGB pixels.
    pub patches: Vec<f64>,
    pub coords: Vec<(usize, usize)>,
}

impl PatchSequence {
    pub fn new(patches: Vec<f64>, coords: Vec<(usize, usize)>) -> Self {
        Self { patches, coords }
    }

    pub fn from_patches(patches: &[Patch]) -> Self {
        Self {
            patches: patches.iter().flat_map(|p| p.pixels.iter().copied()).collect(),
            coords: patches.iter().map(|p| (p.row, p.col)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Reorders patches and coordinates together.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let dim = self.patches.len() / self.len().max(1);
        Self {
            patches: order
                .iter()
                .flat_map(|&i| self.patches[i * dim..(i + 1) * dim].iter().copied())
                .collect(),
            coords: order.iter().map(|&i| self.coords[i]).collect(),
        }
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.is_empty() {
            return param_err("a patch sequence needs at least one patch");
        }
        if self.patches.len() != self.len() * cfg.patch_dim() {
            return param_err(format!(
                "{} patch values for {} patches of dimension {}",
                self.patches.len(),
                self.len(),
                cfg.patch_dim()
            ));
        }
        let side = cfg.grid_side();
        if let Some(&(r, c)) = self.coords.iter().find(|(r, c)| *r >= side || *c >= side) {
            return param_err(format!("coordinate ({r}, {c}) outside the {side}x{side} grid"));
        }
        Ok(())
    }
}

/// Tokens of one example; row 0 is the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub dim: usize,
    pub tokens: Vec<f64>,
    /// Grid coordinates of tokens `1..`.
    pub coords: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    fn with_tokens(&self, tokens: Vec<f64>) -> Self {
        Self {
            dim: self.dim,
            tokens,
            coords: self.coords.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are drawn from `seed` and the example's batch index.
    Train { seed: u64 },
}

/// Grid coordinates scaled to `[0, 1]`.
pub fn normalized_coord(row: usize, col: usize, grid_rows: usize, grid_cols: usize) -> [f64; 2] {
    let span = |n: usize| (n.saturating_sub(1)).max(1) as f64;
    [row as f64 / span(grid_rows), col as f64 / span(grid_cols)]
}

fn coord_features(coords: &[(usize, usize)], cfg: &ModelConfig) -> Vec<f64> {
    let side = cfg.grid_side();
    coords
        .iter()
        .flat_map(|&(r, c)| normalized_coord(r, c, side, side))
        .collect()
}

/// Patch embedding plus coordinate encoding, with the class token prepended.
pub fn encode_input(input: &PatchSequence, params: &ModelParams, cfg: &ModelConfig) -> Result<TokenSequence> {
    input.validate(cfg)?;
    let s = input.len();
    let emb = linear(&input.patches, s, &params.patch_embed_w, &params.patch_embed_b);
    let pos = linear(&coord_features(&input.coords, cfg), s, &params.pos_w, &params.pos_b);
    let mut tokens = params.class_token.data.clone();
    tokens.extend(emb.iter().zip(&pos).map(|(a, b)| a + b));
    Ok(TokenSequence {
        dim: cfg.embed_dim,
        tokens,
        coords: input.coords.clone(),
    })
}

struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

fn attention_forward(x: &[f64], n: usize, block: &BlockParams, cfg: &ModelConfig) -> (Vec<f64>, AttnCache) {
    let (d, heads, dh) = (cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let q = linear(x, n, &block.q_w, &block.q_b);
    let k = linear(x, n, &block.k_w, &block.k_b);
    let v = linear(x, n, &block.v_w, &block.v_b);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(
            scale,
            View::dense(&q, n, d).cols(h * dh, dh),
            View::dense(&k, n, d).cols(h * dh, dh).t(),
            0.0,
            ViewMut::dense(p, n),
        );
        p.chunks_exact_mut(n).for_each(softmax_in_place);
        gemm(
            1.0,
            View::dense(p, n, n),
            View::dense(&v, n, d).cols(h * dh, dh),
            0.0,
            ViewMut::cols(&mut ctx, d, h * dh),
        );
    }
    let out = linear(&ctx, n, &block.o_w, &block.o_b);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Returns `dx` and accumulates projection gradients.
fn attention_backward(
    x: &[f64],
    n: usize,
    dout: &[f64],
    block: &BlockParams,
    cache: &AttnCache,
    grad: &mut BlockParams,
    cfg: &ModelConfig,
) -> Vec<f64> {
    let (d, heads, dh) = (cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let dctx = linear_backward(&cache.ctx, n, &block.o_w, dout, &mut grad.o_w, &mut grad.o_b);
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n * n];
    for h in 0..heads {
        let p = &cache.probs[h * n * n..(h + 1) * n * n];
        gemm(
            1.0,
            View::dense(&dctx, n, d).cols(h * dh, dh),
            View::dense(&cache.v, n, d).cols(h * dh, dh).t(),
            0.0,
            ViewMut::dense(&mut dp, n),
        );
        gemm(
            1.0,
            View::dense(p, n, n).t(),
            View::dense(&dctx, n, d).cols(h * dh, dh),
            0.0,
            ViewMut::cols(&mut dv, d, h * dh),
        );
        for (dpr, pr) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (g, &pv) in dpr.iter_mut().zip(pr) {
                *g = pv * (*g - dot) * scale;
            }
        }
        gemm(
            1.0,
            View::dense(&dp, n, n),
            View::dense(&cache.k, n, d).cols(h * dh, dh),
            0.0,
            ViewMut::cols(&mut dq, d, h * dh),
        );
        gemm(
            1.0,
            View::dense(&dp, n, n).t(),
            View::dense(&cache.q, n, d).cols(h * dh, dh),
            0.0,
            ViewMut::cols(&mut dk, d, h * dh),
        );
    }
    let mut dx = linear_backward(x, n, &block.q_w, &dq, &mut grad.q_w, &mut grad.q_b);
    let dxk = linear_backward(x, n, &block.k_w, &dk, &mut grad.k_w, &mut grad.k_b);
    let dxv = linear_backward(x, n, &block.v_w, &dv, &mut grad.v_w, &mut grad.v_b);
    for ((a, b), c) in dx.iter_mut().zip(&dxk).zip(&dxv) {
        *a += b + c;
    }
    dx
}

/// Scaled dot-product attention over all heads followed by the output projection.
/// No normalization or residual is applied.
pub fn multi_head_attention(seq: &TokenSequence, block: &BlockParams, cfg: &ModelConfig) -> TokenSequence {
    let (out, _) = attention_forward(&seq.tokens, seq.len(), block, cfg);
    seq.with_tokens(out)
}

/// Attention probabilities of every head, `heads x n x n`.
pub fn attention_probabilities(seq: &TokenSequence, block: &BlockParams, cfg: &ModelConfig) -> Vec<f64> {
    attention_forward(&seq.tokens, seq.len(), block, cfg).1.probs
}

struct BlockCache {
    ln1: LnCache,
    h1: Vec<f64>,
    attn: AttnCache,
    attn_mask: Option<Vec<f64>>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    mlp_mask: Option<Vec<f64>>,
}

fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn block_forward(
    x: &[f64],
    n: usize,
    block: &BlockParams,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, BlockCache) {
    let d = cfg.embed_dim;
    let (mut attn_mask, mut mlp_mask) = (None, None);
    let mut rng = rng.filter(|_| cfg.dropout_rate > 0.0);

    let (h1, ln1) = layer_norm(x, d, &block.norm1_scale, &block.norm1_shift);
    let (mut a, attn) = attention_forward(&h1, n, block, cfg);
    if let Some(r) = rng.as_deref_mut() {
        let m = dropout_mask(a.len(), cfg.dropout_rate, r);
        a.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
        attn_mask = Some(m);
    }
    let mid: Vec<f64> = x.iter().zip(&a).map(|(u, v)| u + v).collect();

    let (h2, ln2) = layer_norm(&mid, d, &block.norm2_scale, &block.norm2_shift);
    let pre = linear(&h2, n, &block.mlp1_w, &block.mlp1_b);
    let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let mut m_out = linear(&act, n, &block.mlp2_w, &block.mlp2_b);
    if let Some(r) = rng.as_deref_mut() {
        let m = dropout_mask(m_out.len(), cfg.dropout_rate, r);
        m_out.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
        mlp_mask = Some(m);
    }
    let out = mid.iter().zip(&m_out).map(|(u, v)| u + v).collect();
    let cache = BlockCache {
        ln1,
        h1,
        attn,
        attn_mask,
        ln2,
        h2,
        pre,
        act,
        mlp_mask,
    };
    (out, cache)
}

fn block_backward(
    dy: Vec<f64>,
    n: usize,
    block: &BlockParams,
    cache: &BlockCache,
    grad: &mut BlockParams,
    cfg: &ModelConfig,
) -> Vec<f64> {
    let d = cfg.embed_dim;
    let mut dmid = dy;
    let mut dm = dmid.clone();
    if let Some(mask) = &cache.mlp_mask {
        dm.iter_mut().zip(mask).for_each(|(g, k)| *g *= k);
    }
    let mut dact = linear_backward(&cache.act, n, &block.mlp2_w, &dm, &mut grad.mlp2_w, &mut grad.mlp2_b);
    dact.iter_mut().zip(&cache.pre).for_each(|(g, &p)| *g *= gelu_grad(p));
    let dh2 = linear_backward(&cache.h2, n, &block.mlp1_w, &dact, &mut grad.mlp1_w, &mut grad.mlp1_b);
    let dln2 = layer_norm_backward(
        &dh2,
        d,
        &cache.ln2,
        &block.norm2_scale,
        &mut grad.norm2_scale,
        &mut grad.norm2_shift,
    );
    dmid.iter_mut().zip(&dln2).for_each(|(a, b)| *a += b);

    let mut da = dmid.clone();
    if let Some(mask) = &cache.attn_mask {
        da.iter_mut().zip(mask).for_each(|(g, k)| *g *= k);
    }
    let dh1 = attention_backward(&cache.h1, n, &da, block, &cache.attn, grad, cfg);
    let dln1 = layer_norm_backward(
        &dh1,
        d,
        &cache.ln1,
        &block.norm1_scale,
        &mut grad.norm1_scale,
        &mut grad.norm1_shift,
    );
    dmid.iter_mut().zip(&dln1).for_each(|(a, b)| *a += b);
    dmid
}

/// Pre-norm block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
///
/// Dropout at `cfg.dropout_rate` follows the attention and MLP branches in
/// train mode only.
pub fn transformer_block(
    seq: &TokenSequence,
    block: &BlockParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> TokenSequence {
    let mut rng = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let (out, _) = block_forward(&seq.tokens, seq.len(), block, cfg, rng.as_mut());
    seq.with_tokens(out)
}

struct ExampleCache {
    blocks: Vec<BlockCache>,
    cls: Vec<f64>,
    ln: LnCache,
}

fn example_rng(mode: Mode, index: usize) -> Option<ChaCha8Rng> {
    match mode {
        Mode::Eval => None,
        Mode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            Some(rng)
        }
    }
}

fn example_forward(
    input: &PatchSequence,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    index: usize,
) -> Result<(Vec<f64>, ExampleCache)> {
    let d = cfg.embed_dim;
    let seq = encode_input(input, params, cfg)?;
    let n = seq.len();
    let mut rng = example_rng(mode, index);
    let mut x = seq.tokens;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (y, cache) = block_forward(&x, n, block, cfg, rng.as_mut());
        x = y;
        blocks.push(cache);
    }
    let cls = x[..d].to_vec();
    let (normed, ln) = layer_norm(&cls, d, &params.norm_scale, &params.norm_shift);
    let logits = linear(&normed, 1, &params.head_w, &params.head_b);
    let cache = ExampleCache {
        blocks,
        cls: normed,
        ln,
    };
    Ok((logits, cache))
}

fn example_backward(
    input: &PatchSequence,
    dlogits: &[f64],
    params: &ModelParams,
    cache: &ExampleCache,
    cfg: &ModelConfig,
) -> ModelParams {
    let d = cfg.embed_dim;
    let s = input.len();
    let n = s + 1;
    let mut grad = params.zeros_like();
    let dnormed = linear_backward(&cache.cls, 1, &params.head_w, dlogits, &mut grad.head_w, &mut grad.head_b);
    let dcls = layer_norm_backward(
        &dnormed,
        d,
        &cache.ln,
        &params.norm_scale,
        &mut grad.norm_scale,
        &mut grad.norm_shift,
    );
    let mut dx = vec![0.0; n * d];
    dx[..d].copy_from_slice(&dcls);
    for (i, block) in params.blocks.iter().enumerate().rev() {
        dx = block_backward(dx, n, block, &cache.blocks[i], &mut grad.blocks[i], cfg);
    }
    grad.class_token.data.copy_from_slice(&dx[..d]);
    let dtok = &dx[d..];
    linear_param_grads(&input.patches, s, dtok, &mut grad.patch_embed_w, &mut grad.patch_embed_b);
    linear_param_grads(
        &coord_features(&input.coords, cfg),
        s,
        dtok,
        &mut grad.pos_w,
        &mut grad.pos_b,
    );
    grad
}

/// Row-major `batch x num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn rows(&self) -> usize {
        self.data.len() / self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Index of the largest logit per row; ties go to the lower class.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect()
    }
}

fn check_batch(batch: &[PatchSequence]) -> Result<()> {
    let Some(first) = batch.first() else {
        return param_err("empty batch");
    };
    if let Some(other) = batch.iter().find(|e| e.len() != first.len()) {
        return param_err(format!(
            "mixed sequence lengths in one batch: {} and {}",
            first.len(),
            other.len()
        ));
    }
    Ok(())
}

/// Logits for a batch of equal-length patch sequences.
pub fn forward(batch: &[PatchSequence], params: &ModelParams, cfg: &ModelConfig, mode: Mode) -> Result<Logits> {
    check_batch(batch)?;
    let rows: Vec<Vec<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| example_forward(ex, params, cfg, mode, i).map(|(z, _)| z))
        .collect::<Result<_>>()?;
    Ok(Logits {
        num_classes: cfg.num_classes,
        data: rows.concat(),
    })
}

/// Softmax cross-entropy of one logit row and its gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    p[label] -= 1.0;
    (loss, p)
}

/// Mean cross-entropy over the batch and its gradient.
///
/// Examples run in parallel; per-example gradients are summed in batch order
/// so the result does not depend on the thread count.
pub fn loss_and_grad(
    batch: &[PatchSequence],
    labels: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<(f64, ModelParams)> {
    loss_grad_logits(batch, labels, params, cfg, mode).map(|(l, g, _)| (l, g))
}

/// [`loss_and_grad`] that also returns the logits of the pass.
pub fn loss_grad_logits(
    batch: &[PatchSequence],
    labels: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<(f64, ModelParams, Logits)> {
    check_batch(batch)?;
    if labels.len() != batch.len() {
        return param_err(format!("{} labels for {} examples", labels.len(), batch.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cfg.num_classes) {
        return param_err(format!("label {bad} outside [0, {})", cfg.num_classes));
    }
    let inv = 1.0 / batch.len() as f64;
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut total_loss = 0.0;
    let mut total = params.zeros_like();
    let mut all_logits = Vec::with_capacity(batch.len() * cfg.num_classes);
    for (c, (examples, ys)) in batch.chunks(chunk).zip(labels.chunks(chunk)).enumerate() {
        let parts: Vec<(f64, ModelParams, Vec<f64>)> = examples
            .par_iter()
            .zip(ys)
            .enumerate()
            .map(|(j, (ex, &y))| {
                let (logits, cache) = example_forward(ex, params, cfg, mode, c * chunk + j)?;
                let (loss, mut dz) = cross_entropy(&logits, y);
                dz.iter_mut().for_each(|g| *g *= inv);
                Ok((loss, example_backward(ex, &dz, params, &cache, cfg), logits))
            })
            .collect::<Result<_>>()?;
        for (loss, g, z) in parts {
            total_loss += loss;
            total.add_scaled(&g, 1.0);
            all_logits.extend(z);
        }
    }
    let logits = Logits {
        num_classes: cfg.num_classes,
        data: all_logits,
    };
    Ok((total_loss * inv, total, logits))
}

/// Mean cross-entropy without gradients.
pub fn loss(
    batch: &[PatchSequence],
    labels: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<f64> {
    if labels.len() != batch.len() {
        return param_err(format!("{} labels for {} examples", labels.len(), batch.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cfg.num_classes) {
        return param_err(format!("label {bad} outside [0, {})", cfg.num_classes));
    }
    let logits = forward(batch, params, cfg, mode)?;
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| cross_entropy(logits.row(i), y).0)
        .sum();
    Ok(sum / batch.len() as f64)
}
