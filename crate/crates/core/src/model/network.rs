//! Forward pass over the concatenated input/output sequence, cross-entropy
//! loss, and the matching hand-written reverse pass.
//!
//! Activations are laid out as `[batch * seq_len, width]` row-major matrices
//! so every projection is a single GEMM over the whole batch.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::config::ModelConfig;
use super::mask::{build_mask, AttentionMask};
use super::params::{ModelParams, Tensor};
use super::real::{matmul, matmul_nt, matmul_tn, Real};
use crate::error::{Error, Result};
use crate::instances::TrainingInstance;
use crate::vocab::{Token, TokenId};

const NORM_EPS: f64 = 1e-5;

thread_local! {
    static POS_ENC: RefCell<HashMap<(usize, usize), Vec<f64>>> = RefCell::new(HashMap::new());
}

/// Sinusoidal encoding of absolute positions `0..len`, `[len, d]` row-major.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

fn with_pos_enc<R>(len: usize, d: usize, f: impl FnOnce(&[f64]) -> R) -> R {
    POS_ENC.with(|cache| {
        let mut cache = cache.borrow_mut();
        let pe = cache
            .entry((len, d))
            .or_insert_with(|| positional_encoding(len, d));
        f(pe)
    })
}

struct NormCache<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

fn layer_norm<T: Real>(
    x: &[T],
    scale: &Tensor<T>,
    offset: &Tensor<T>,
    d: usize,
) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    let dn = T::from_usize(d).unwrap();
    let eps = T::lit(NORM_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let n = (row[c] - mean) * is;
            normalized[r * d + c] = n;
            y[r * d + c] = n * scale.data[c] + offset.data[c];
        }
    }
    (y, NormCache { normalized, inv_std })
}

/// Returns the input gradient; accumulates into `d_scale` / `d_offset`.
fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &NormCache<T>,
    scale: &Tensor<T>,
    d_scale: &mut Tensor<T>,
    d_offset: &mut Tensor<T>,
    d: usize,
) -> Vec<T> {
    let rows = dy.len() / d;
    let dn = T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dn_row = vec![T::zero(); d];
    for r in 0..rows {
        let n = &cache.normalized[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut mean_dn = T::zero();
        let mut mean_dn_n = T::zero();
        for c in 0..d {
            d_scale.data[c] += g[c] * n[c];
            d_offset.data[c] += g[c];
            dn_row[c] = g[c] * scale.data[c];
            mean_dn += dn_row[c];
            mean_dn_n += dn_row[c] * n[c];
        }
        mean_dn /= dn;
        mean_dn_n /= dn;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[r * d + c] = is * (dn_row[c] - mean_dn - n[c] * mean_dn_n);
        }
    }
    dx
}

fn add_bias<T: Real>(x: &mut [T], bias: &Tensor<T>) {
    let w = bias.len();
    for row in x.chunks_mut(w) {
        for (v, &b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(dy: &[T], d_bias: &mut Tensor<T>) {
    let w = d_bias.len();
    for row in dy.chunks(w) {
        for (g, &v) in d_bias.data.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Inverted-dropout multipliers (0 or `1/(1-rate)`), or `None` when off.
fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Vec<T>> {
    let rng = rng.as_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect(),
    )
}

struct BlockCache<T> {
    attn_norm: NormCache<T>,
    attn_in: Vec<T>,
    query: Vec<T>,
    key: Vec<T>,
    value: Vec<T>,
    /// Softmax weights, `[batch, heads, len, len]`, zero where masked.
    probs: Vec<T>,
    probs_drop: Option<Vec<T>>,
    attn_heads: Vec<T>,
    ffn_norm: NormCache<T>,
    ffn_in: Vec<T>,
    ffn_pre: Vec<T>,
    ffn_act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
}

/// Everything the reverse pass needs from a forward pass.
pub struct ForwardCache<T> {
    tokens: Vec<TokenId>,
    batch: usize,
    seq_len: usize,
    blocks: Vec<BlockCache<T>>,
    final_norm: NormCache<T>,
    final_out: Vec<T>,
}

fn check_tokens(config: &ModelConfig, tokens: &[TokenId], batch: usize) -> Result<usize> {
    if batch == 0 || tokens.len() % batch != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} tokens do not split into {batch} sequences",
            tokens.len()
        )));
    }
    let seq_len = tokens.len() / batch;
    if seq_len <= config.input_len || seq_len > config.seq_len() {
        return Err(Error::ShapeMismatch(format!(
            "sequence length {seq_len} outside {}..={}",
            config.input_len + 1,
            config.seq_len()
        )));
    }
    for seq in tokens.chunks(seq_len) {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::OutOfRangeId(bad));
        }
        if seq[config.input_len] != Token::START {
            return Err(Error::BadPrefix);
        }
    }
    Ok(seq_len)
}

#[allow(clippy::too_many_arguments)]
fn attention_forward<T: Real>(
    query: &[T],
    key: &[T],
    value: &[T],
    mask: &AttentionMask,
    batch: usize,
    n_heads: usize,
    head_dim: usize,
    probs: &mut [T],
    probs_drop: Option<&[T]>,
    out: &mut [T],
) {
    let len = mask.len();
    let d = n_heads * head_dim;
    let inv_sqrt = T::one() / T::from_usize(head_dim).unwrap().sqrt();
    let mut scores = vec![T::zero(); len];
    for b in 0..batch {
        for h in 0..n_heads {
            let col = h * head_dim;
            for i in 0..len {
                let qi = &query[(b * len + i) * d + col..][..head_dim];
                let mut max = T::neg_infinity();
                for j in 0..len {
                    if mask.allows(i, j) {
                        let kj = &key[(b * len + j) * d + col..][..head_dim];
                        let s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * inv_sqrt;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                let mut total = T::zero();
                for j in 0..len {
                    if mask.allows(i, j) {
                        scores[j] = (scores[j] - max).exp();
                        total += scores[j];
                    }
                }
                let p_row = &mut probs[((b * n_heads + h) * len + i) * len..][..len];
                let o = &mut out[(b * len + i) * d + col..][..head_dim];
                o.iter_mut().for_each(|v| *v = T::zero());
                for j in 0..len {
                    if !mask.allows(i, j) {
                        p_row[j] = T::zero();
                        continue;
                    }
                    let p = scores[j] / total;
                    p_row[j] = p;
                    let w = match probs_drop {
                        Some(m) => p * m[((b * n_heads + h) * len + i) * len + j],
                        None => p,
                    };
                    let vj = &value[(b * len + j) * d + col..][..head_dim];
                    for (o, &v) in o.iter_mut().zip(vj) {
                        *o += w * v;
                    }
                }
            }
        }
    }
}

/// Runs the model on `batch` sequences of equal length laid out back to back
/// in `tokens`, each an input block followed by an output prefix starting
/// with `\n`. Returns logits for the output positions,
/// `[batch * prefix_len, vocab]`.
///
/// Dropout is applied only when `dropout_rng` is given.
pub fn forward_batch<T: Real>(
    params: &ModelParams<T>,
    tokens: &[TokenId],
    batch: usize,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let cfg = &params.config;
    let seq_len = check_tokens(cfg, tokens, batch)?;
    let d = cfg.d_model;
    let f = cfg.d_ffn;
    let rows = batch * seq_len;
    let prefix_len = seq_len - cfg.input_len;
    let mask = build_mask(cfg.input_len, prefix_len);

    let emb_scale = T::from_usize(d).unwrap().sqrt();
    let mut x = vec![T::zero(); rows * d];
    with_pos_enc(seq_len, d, |pe| {
        for (r, &tok) in tokens.iter().enumerate() {
            let pos = r % seq_len;
            let e = &params.token_embedding.data[tok as usize * d..][..d];
            for c in 0..d {
                x[r * d + c] = e[c] * emb_scale + T::lit(pe[pos * d + c]);
            }
        }
    });

    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for bp in &params.blocks {
        let (attn_in, attn_norm) = layer_norm(&x, &bp.attn_norm_scale, &bp.attn_norm_offset, d);
        let mut query = vec![T::zero(); rows * d];
        let mut key = vec![T::zero(); rows * d];
        let mut value = vec![T::zero(); rows * d];
        matmul(&attn_in, &bp.w_query.data, &mut query, rows, d, d, false);
        matmul(&attn_in, &bp.w_key.data, &mut key, rows, d, d, false);
        matmul(&attn_in, &bp.w_value.data, &mut value, rows, d, d, false);

        let mut probs = vec![T::zero(); batch * cfg.n_heads * seq_len * seq_len];
        let probs_drop = dropout_mask(probs.len(), cfg.dropout_rate, &mut dropout_rng);
        let mut attn_heads = vec![T::zero(); rows * d];
        attention_forward(
            &query,
            &key,
            &value,
            &mask,
            batch,
            cfg.n_heads,
            cfg.head_dim(),
            &mut probs,
            probs_drop.as_deref(),
            &mut attn_heads,
        );
        matmul(&attn_heads, &bp.w_attn_out.data, &mut x, rows, d, d, true);

        let (ffn_in, ffn_norm) = layer_norm(&x, &bp.ffn_norm_scale, &bp.ffn_norm_offset, d);
        let mut ffn_pre = vec![T::zero(); rows * f];
        matmul(&ffn_in, &bp.w_ffn_in.data, &mut ffn_pre, rows, d, f, false);
        add_bias(&mut ffn_pre, &bp.b_ffn_in);
        let ffn_drop = dropout_mask(ffn_pre.len(), cfg.dropout_rate, &mut dropout_rng);
        let mut ffn_act: Vec<T> = ffn_pre.iter().map(|&u| u.max(T::zero())).collect();
        if let Some(m) = &ffn_drop {
            ffn_act.iter_mut().zip(m).for_each(|(a, &k)| *a *= k);
        }
        matmul(&ffn_act, &bp.w_ffn_out.data, &mut x, rows, f, d, true);
        add_bias(&mut x, &bp.b_ffn_out);

        blocks.push(BlockCache {
            attn_norm,
            attn_in,
            query,
            key,
            value,
            probs,
            probs_drop,
            attn_heads,
            ffn_norm,
            ffn_in,
            ffn_pre,
            ffn_act,
            ffn_drop,
        });
    }

    // Only the output positions are projected to the vocabulary.
    let mut x_out = Vec::with_capacity(batch * prefix_len * d);
    for b in 0..batch {
        let start = (b * seq_len + cfg.input_len) * d;
        x_out.extend_from_slice(&x[start..start + prefix_len * d]);
    }
    let (final_out, final_norm) =
        layer_norm(&x_out, &params.final_norm_scale, &params.final_norm_offset, d);
    let v = cfg.vocab_size;
    let mut logits = vec![T::zero(); batch * prefix_len * v];
    matmul(&final_out, &params.w_vocab.data, &mut logits, batch * prefix_len, d, v, false);

    Ok((
        logits,
        ForwardCache {
            tokens: tokens.to_vec(),
            batch,
            seq_len,
            blocks,
            final_norm,
            final_out,
        },
    ))
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the logits.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_logits: &[T],
) -> ModelParams<T> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let f = cfg.d_ffn;
    let v = cfg.vocab_size;
    let (batch, seq_len) = (cache.batch, cache.seq_len);
    let rows = batch * seq_len;
    let prefix_len = seq_len - cfg.input_len;
    let out_rows = batch * prefix_len;
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let mask = build_mask(cfg.input_len, prefix_len);
    let mut grads = params.zeros_like();

    matmul_tn(&cache.final_out, d_logits, &mut grads.w_vocab.data, d, out_rows, v, false);
    let mut d_final = vec![T::zero(); out_rows * d];
    matmul_nt(d_logits, &params.w_vocab.data, &mut d_final, out_rows, v, d, false);
    let d_x_out = layer_norm_backward(
        &d_final,
        &cache.final_norm,
        &params.final_norm_scale,
        &mut grads.final_norm_scale,
        &mut grads.final_norm_offset,
        d,
    );
    let mut dx = vec![T::zero(); rows * d];
    for b in 0..batch {
        let start = (b * seq_len + cfg.input_len) * d;
        dx[start..start + prefix_len * d]
            .copy_from_slice(&d_x_out[b * prefix_len * d..(b + 1) * prefix_len * d]);
    }

    let inv_sqrt = T::one() / T::from_usize(hd).unwrap().sqrt();
    for ((bp, bc), bg) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        // Feed-forward sublayer; `dx` is also the gradient of its output.
        bias_grad(&dx, &mut bg.b_ffn_out);
        matmul_tn(&bc.ffn_act, &dx, &mut bg.w_ffn_out.data, f, rows, d, false);
        let mut d_pre = vec![T::zero(); rows * f];
        matmul_nt(&dx, &bp.w_ffn_out.data, &mut d_pre, rows, d, f, false);
        for (i, g) in d_pre.iter_mut().enumerate() {
            if bc.ffn_pre[i] <= T::zero() {
                *g = T::zero();
            } else if let Some(m) = &bc.ffn_drop {
                *g *= m[i];
            }
        }
        bias_grad(&d_pre, &mut bg.b_ffn_in);
        matmul_tn(&bc.ffn_in, &d_pre, &mut bg.w_ffn_in.data, d, rows, f, false);
        let mut d_norm = vec![T::zero(); rows * d];
        matmul_nt(&d_pre, &bp.w_ffn_in.data, &mut d_norm, rows, f, d, false);
        let d_res = layer_norm_backward(
            &d_norm,
            &bc.ffn_norm,
            &bp.ffn_norm_scale,
            &mut bg.ffn_norm_scale,
            &mut bg.ffn_norm_offset,
            d,
        );
        dx.iter_mut().zip(&d_res).for_each(|(a, &b)| *a += b);

        // Attention sublayer.
        matmul_tn(&bc.attn_heads, &dx, &mut bg.w_attn_out.data, d, rows, d, false);
        let mut d_heads = vec![T::zero(); rows * d];
        matmul_nt(&dx, &bp.w_attn_out.data, &mut d_heads, rows, d, d, false);

        let mut d_query = vec![T::zero(); rows * d];
        let mut d_key = vec![T::zero(); rows * d];
        let mut d_value = vec![T::zero(); rows * d];
        let mut d_probs = vec![T::zero(); seq_len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * hd;
                for i in 0..seq_len {
                    let p_idx = ((b * heads + h) * seq_len + i) * seq_len;
                    let p_row = &bc.probs[p_idx..p_idx + seq_len];
                    let g_i = &d_heads[(b * seq_len + i) * d + col..][..hd];
                    let mut weighted = T::zero();
                    for j in 0..seq_len {
                        if !mask.allows(i, j) {
                            continue;
                        }
                        let keep = bc.probs_drop.as_ref().map_or(T::one(), |m| m[p_idx + j]);
                        let v_j = &bc.value[(b * seq_len + j) * d + col..][..hd];
                        let dp = g_i.iter().zip(v_j).map(|(&x, &y)| x * y).sum::<T>() * keep;
                        d_probs[j] = dp;
                        weighted += p_row[j] * dp;
                        let w = p_row[j] * keep;
                        let dv = &mut d_value[(b * seq_len + j) * d + col..][..hd];
                        for (o, &g) in dv.iter_mut().zip(g_i) {
                            *o += w * g;
                        }
                    }
                    let q_i = &bc.query[(b * seq_len + i) * d + col..][..hd];
                    for j in 0..seq_len {
                        if !mask.allows(i, j) {
                            continue;
                        }
                        let ds = p_row[j] * (d_probs[j] - weighted) * inv_sqrt;
                        let k_j = &bc.key[(b * seq_len + j) * d + col..][..hd];
                        let dq = &mut d_query[(b * seq_len + i) * d + col..][..hd];
                        for (o, &k) in dq.iter_mut().zip(k_j) {
                            *o += ds * k;
                        }
                        let dk = &mut d_key[(b * seq_len + j) * d + col..][..hd];
                        for (o, &q) in dk.iter_mut().zip(q_i) {
                            *o += ds * q;
                        }
                    }
                }
            }
        }
        matmul_tn(&bc.attn_in, &d_query, &mut bg.w_query.data, d, rows, d, false);
        matmul_tn(&bc.attn_in, &d_key, &mut bg.w_key.data, d, rows, d, false);
        matmul_tn(&bc.attn_in, &d_value, &mut bg.w_value.data, d, rows, d, false);
        let mut d_norm = vec![T::zero(); rows * d];
        matmul_nt(&d_query, &bp.w_query.data, &mut d_norm, rows, d, d, false);
        matmul_nt(&d_key, &bp.w_key.data, &mut d_norm, rows, d, d, true);
        matmul_nt(&d_value, &bp.w_value.data, &mut d_norm, rows, d, d, true);
        let d_res = layer_norm_backward(
            &d_norm,
            &bc.attn_norm,
            &bp.attn_norm_scale,
            &mut bg.attn_norm_scale,
            &mut bg.attn_norm_offset,
            d,
        );
        dx.iter_mut().zip(&d_res).for_each(|(a, &b)| *a += b);
    }

    let emb_scale = T::from_usize(d).unwrap().sqrt();
    for (r, &tok) in cache.tokens.iter().enumerate() {
        let g = &mut grads.token_embedding.data[tok as usize * d..][..d];
        for (o, &v) in g.iter_mut().zip(&dx[r * d..(r + 1) * d]) {
            *o += v * emb_scale;
        }
    }
    grads
}

/// Mean token-level cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &[T], targets: &[TokenId], vocab: usize) -> Result<(T, Vec<T>)> {
    if logits.len() != targets.len() * vocab || targets.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} targets over {vocab} symbols",
            logits.len(),
            targets.len()
        )));
    }
    let n = T::from_usize(targets.len()).unwrap();
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (row, (z, &t)) in logits.chunks(vocab).zip(targets).enumerate() {
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - z[t as usize];
        let g = &mut grad[row * vocab..(row + 1) * vocab];
        for (k, (gk, &zk)) in g.iter_mut().zip(z).enumerate() {
            let p = (zk - lse).exp();
            *gk = (p - if k == t as usize { T::one() } else { T::zero() }) / n;
        }
    }
    Ok((total / n, grad))
}

/// Loss over teacher-forced logits for the three target positions.
pub fn loss<T: Real>(logits: &[T], target_ids: &[TokenId]) -> Result<T> {
    cross_entropy(logits, target_ids, crate::vocab::VOCAB_SIZE).map(|(l, _)| l)
}

/// Teacher-forced token layout of a batch: each instance contributes its
/// input followed by `\n t1 t2`; the targets are `t1 t2 t3`.
pub fn teacher_forced(instances: &[TrainingInstance]) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut tokens = Vec::with_capacity(instances.len() * 8);
    let mut targets = Vec::with_capacity(instances.len() * 3);
    for inst in instances {
        tokens.extend_from_slice(&inst.input);
        tokens.push(Token::START);
        tokens.extend_from_slice(&inst.target[..inst.target.len() - 1]);
        targets.extend_from_slice(&inst.target);
    }
    (tokens, targets)
}

/// Mean batch loss and exact gradients. Dropout is active iff `dropout_rng`
/// is given; its masks are shared by the forward and reverse pass.
pub fn loss_and_gradients<T: Real>(
    params: &ModelParams<T>,
    instances: &[TrainingInstance],
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(T, ModelParams<T>)> {
    let (tokens, targets) = teacher_forced(instances);
    let (logits, cache) = forward_batch(params, &tokens, instances.len(), dropout_rng)?;
    let (loss, d_logits) = cross_entropy(&logits, &targets, params.config.vocab_size)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    Ok((loss, backward(params, &cache, &d_logits)))
}

/// Mean batch loss without gradients or dropout.
pub fn batch_loss<T: Real>(params: &ModelParams<T>, instances: &[TrainingInstance]) -> Result<T> {
    let (tokens, targets) = teacher_forced(instances);
    let (logits, _) = forward_batch(params, &tokens, instances.len(), None)?;
    cross_entropy(&logits, &targets, params.config.vocab_size).map(|(l, _)| l)
}

/// Logits for each position of one output prefix, `[prefix_len][vocab]`.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    input_ids: &[TokenId],
    prefix_ids: &[TokenId],
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Vec<Vec<T>>> {
    if input_ids.len() != params.config.input_len {
        return Err(Error::ShapeMismatch(format!(
            "input has {} tokens, expected {}",
            input_ids.len(),
            params.config.input_len
        )));
    }
    if prefix_ids.first() != Some(&Token::START) {
        return Err(Error::BadPrefix);
    }
    let mut tokens = input_ids.to_vec();
    tokens.extend_from_slice(prefix_ids);
    let (logits, _) = forward_batch(params, &tokens, 1, dropout_rng)?;
    Ok(logits
        .chunks(params.config.vocab_size)
        .map(<[T]>::to_vec)
        .collect())
}
