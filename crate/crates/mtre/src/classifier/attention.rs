//! Attention-based reliability head.
//!
//! One logit vector is split into `seq_chunks` equal chunks (default 1, a
//! length-1 sequence), each projected into the embedding space. Stacked
//! multi-head self-attention layers with residual connections and layer
//! normalization contextualize the sequence; average pooling and a small
//! ReLU MLP produce a scalar score. Forward and backward passes are
//! hand-written in f64.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{bce, clamp_probability, sigmoid};
use crate::dataset::TokenExample;
use crate::error::{Error, Result};
use crate::seeding;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Number of chunks the input vector is split into; the attention
    /// sequence length. 1 keeps the whole vector as a single position.
    pub seq_chunks: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            embed_dim: 512,
            num_heads: 8,
            num_layers: 3,
            seq_chunks: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerRanges {
    w_q: Range<usize>,
    b_q: Range<usize>,
    w_k: Range<usize>,
    b_k: Range<usize>,
    w_v: Range<usize>,
    b_v: Range<usize>,
    w_o: Range<usize>,
    b_o: Range<usize>,
    ln_g: Range<usize>,
    ln_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    w_in: Range<usize>,
    b_in: Range<usize>,
    layers: Vec<LayerRanges>,
    w_f1: Range<usize>,
    b_f1: Range<usize>,
    w_f2: Range<usize>,
    b_f2: Range<usize>,
    w_out: Range<usize>,
    b_out: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(chunk_len: usize, d: usize, num_layers: usize) -> Layout {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let w_in = take(d * chunk_len);
        let b_in = take(d);
        let layers = (0..num_layers)
            .map(|_| LayerRanges {
                w_q: take(d * d),
                b_q: take(d),
                w_k: take(d * d),
                b_k: take(d),
                w_v: take(d * d),
                b_v: take(d),
                w_o: take(d * d),
                b_o: take(d),
                ln_g: take(d),
                ln_b: take(d),
            })
            .collect();
        let w_f1 = take(d * d);
        let b_f1 = take(d);
        let w_f2 = take(d * d);
        let b_f2 = take(d);
        let w_out = take(d);
        let b_out = take(1);
        Layout {
            w_in,
            b_in,
            layers,
            w_f1,
            b_f1,
            w_f2,
            b_f2,
            w_out,
            b_out,
            total: next,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    input_dim: usize,
    config: AttentionConfig,
    dropout_rate: f64,
    seed: u64,
    chunk_len: usize,
    layout: Layout,
    params: Vec<f64>,
}

struct LayerCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Attention weights per head: `alpha[h][query][key]`.
    alpha: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    mask_attn: Option<Vec<Vec<f64>>>,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
}

struct Cache {
    chunks: Vec<Vec<f64>>,
    /// Sequence entering each layer; `seq[num_layers]` is the final output.
    seq: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    u1: Vec<f64>,
    a1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    u2: Vec<f64>,
    a2: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

impl AttentionHead {
    pub fn init(
        input_dim: usize,
        config: &AttentionConfig,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<AttentionHead> {
        if config.embed_dim == 0 || config.num_heads == 0 {
            return Err(Error::InvalidParam(
                "embed_dim and num_heads must be at least 1".into(),
            ));
        }
        if config.embed_dim % config.num_heads != 0 {
            return Err(Error::InvalidParam(format!(
                "embed_dim {} must be divisible by num_heads {}",
                config.embed_dim, config.num_heads
            )));
        }
        if config.seq_chunks == 0 || config.seq_chunks > input_dim {
            return Err(Error::InvalidParam(format!(
                "seq_chunks must be in [1, input_dim={input_dim}], got {}",
                config.seq_chunks
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidParam(format!(
                "dropout_rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        let chunk_len = input_dim.div_ceil(config.seq_chunks);
        let layout = Layout::new(chunk_len, config.embed_dim, config.num_layers);
        let mut params = vec![0.0; layout.total];
        let mut rng = seeding::rng_from(seed);
        let d = config.embed_dim;

        let fill = |range: Range<usize>, fan_in: usize, params: &mut [f64], rng: &mut ChaCha12Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut params[range] {
                *w = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w_in.clone(), chunk_len, &mut params, &mut rng);
        for layer in &layout.layers {
            fill(layer.w_q.clone(), d, &mut params, &mut rng);
            fill(layer.w_k.clone(), d, &mut params, &mut rng);
            fill(layer.w_v.clone(), d, &mut params, &mut rng);
            fill(layer.w_o.clone(), d, &mut params, &mut rng);
            params[layer.ln_g.clone()].fill(1.0);
        }
        fill(layout.w_f1.clone(), d, &mut params, &mut rng);
        fill(layout.w_f2.clone(), d, &mut params, &mut rng);
        fill(layout.w_out.clone(), d, &mut params, &mut rng);

        Ok(AttentionHead {
            input_dim,
            config: config.clone(),
            dropout_rate,
            seed,
            chunk_len,
            layout,
            params,
        })
    }

    pub(crate) fn from_params(
        input_dim: usize,
        config: &AttentionConfig,
        dropout_rate: f64,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<AttentionHead> {
        let mut head = AttentionHead::init(input_dim, config, dropout_rate, seed)?;
        if params.len() != head.layout.total {
            return Err(Error::DimensionMismatch {
                expected: head.layout.total,
                got: params.len(),
            });
        }
        head.params = params;
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn raw_score(&self, features: &[f32]) -> f64 {
        self.forward(features, None).0
    }

    pub(crate) fn batch_loss_grad(
        &self,
        batch: &[&TokenExample],
        mut dropout: Option<(&mut ChaCha12Rng, f64)>,
    ) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for ex in batch {
            let (z, cache) = self.forward(
                &ex.features,
                dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate)),
            );
            let p = sigmoid(z);
            total += bce(clamp_probability(p), ex.label);
            let dz = (p - f64::from(ex.label)) / n;
            self.backward(dz, &cache, &mut grad);
        }
        (total / n, grad)
    }

    fn p(&self, range: &Range<usize>) -> &[f64] {
        &self.params[range.clone()]
    }

    fn forward(&self, features: &[f32], mut dropout: Option<(&mut ChaCha12Rng, f64)>) -> (f64, Cache) {
        debug_assert_eq!(features.len(), self.input_dim);
        let d = self.config.embed_dim;
        let s_len = self.config.seq_chunks;
        let heads = self.config.num_heads;
        let head_dim = d / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        // Chunk the input, zero-padding the tail.
        let mut chunks = vec![vec![0.0f64; self.chunk_len]; s_len];
        for (i, v) in features.iter().enumerate() {
            chunks[i / self.chunk_len][i % self.chunk_len] = f64::from(*v);
        }

        let mut seq = Vec::with_capacity(self.config.num_layers + 1);
        let e0: Vec<Vec<f64>> = chunks
            .iter()
            .map(|c| affine(self.p(&self.layout.w_in), self.p(&self.layout.b_in), d, c))
            .collect();
        seq.push(e0);

        let mut layer_caches = Vec::with_capacity(self.config.num_layers);
        for ranges in &self.layout.layers {
            let input = seq.last().unwrap();
            let q: Vec<Vec<f64>> = input
                .iter()
                .map(|e| affine(self.p(&ranges.w_q), self.p(&ranges.b_q), d, e))
                .collect();
            let k: Vec<Vec<f64>> = input
                .iter()
                .map(|e| affine(self.p(&ranges.w_k), self.p(&ranges.b_k), d, e))
                .collect();
            let v: Vec<Vec<f64>> = input
                .iter()
                .map(|e| affine(self.p(&ranges.w_v), self.p(&ranges.b_v), d, e))
                .collect();

            let mut alpha = vec![vec![vec![0.0; s_len]; s_len]; heads];
            let mut ctx = vec![vec![0.0; d]; s_len];
            for h in 0..heads {
                let lo = h * head_dim;
                let hi = lo + head_dim;
                for qi in 0..s_len {
                    let scores: Vec<f64> = (0..s_len)
                        .map(|ki| dot(&q[qi][lo..hi], &k[ki][lo..hi]) * scale)
                        .collect();
                    let weights = crate::divergence::softmax(&scores);
                    for ki in 0..s_len {
                        for i in lo..hi {
                            ctx[qi][i] += weights[ki] * v[ki][i];
                        }
                    }
                    alpha[h][qi] = weights;
                }
            }

            let mut attn: Vec<Vec<f64>> = ctx
                .iter()
                .map(|c| affine(self.p(&ranges.w_o), self.p(&ranges.b_o), d, c))
                .collect();
            let mask_attn = dropout.as_mut().map(|(rng, rate)| {
                let masks: Vec<Vec<f64>> =
                    (0..s_len).map(|_| dropout_mask(rng, *rate, d)).collect();
                for (a, m) in attn.iter_mut().zip(&masks) {
                    for (x, f) in a.iter_mut().zip(m) {
                        *x *= f;
                    }
                }
                masks
            });

            let mut xhat = Vec::with_capacity(s_len);
            let mut inv_std = Vec::with_capacity(s_len);
            let mut output = Vec::with_capacity(s_len);
            let ln_g = self.p(&ranges.ln_g);
            let ln_b = self.p(&ranges.ln_b);
            for (e, a) in input.iter().zip(&attn) {
                let r: Vec<f64> = e.iter().zip(a).map(|(x, y)| x + y).collect();
                let mean = r.iter().sum::<f64>() / d as f64;
                let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                let istd = 1.0 / (var + LN_EPS).sqrt();
                let xh: Vec<f64> = r.iter().map(|x| (x - mean) * istd).collect();
                let y: Vec<f64> = xh
                    .iter()
                    .zip(ln_g.iter().zip(ln_b))
                    .map(|(x, (g, b))| g * x + b)
                    .collect();
                xhat.push(xh);
                inv_std.push(istd);
                output.push(y);
            }

            layer_caches.push(LayerCache {
                q,
                k,
                v,
                alpha,
                ctx,
                mask_attn,
                xhat,
                inv_std,
            });
            seq.push(output);
        }

        let last = seq.last().unwrap();
        let mut pooled = vec![0.0; d];
        for e in last {
            for (p, x) in pooled.iter_mut().zip(e) {
                *p += x / s_len as f64;
            }
        }

        let u1 = affine(self.p(&self.layout.w_f1), self.p(&self.layout.b_f1), d, &pooled);
        let mut a1: Vec<f64> = u1.iter().map(|x| x.max(0.0)).collect();
        let mask1 = dropout.as_mut().map(|(rng, rate)| {
            let m = dropout_mask(rng, *rate, d);
            for (x, f) in a1.iter_mut().zip(&m) {
                *x *= f;
            }
            m
        });
        let u2 = affine(self.p(&self.layout.w_f2), self.p(&self.layout.b_f2), d, &a1);
        let mut a2: Vec<f64> = u2.iter().map(|x| x.max(0.0)).collect();
        let mask2 = dropout.as_mut().map(|(rng, rate)| {
            let m = dropout_mask(rng, *rate, d);
            for (x, f) in a2.iter_mut().zip(&m) {
                *x *= f;
            }
            m
        });
        let z = dot(self.p(&self.layout.w_out), &a2) + self.p(&self.layout.b_out)[0];

        (
            z,
            Cache {
                chunks,
                seq,
                layers: layer_caches,
                pooled,
                u1,
                a1,
                mask1,
                u2,
                a2,
                mask2,
            },
        )
    }

    fn backward(&self, dz: f64, cache: &Cache, grad: &mut [f64]) {
        let d = self.config.embed_dim;
        let s_len = self.config.seq_chunks;
        let heads = self.config.num_heads;
        let head_dim = d / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        // Output layer.
        let mut d_a2 = vec![0.0; d];
        for i in 0..d {
            grad[self.layout.w_out.start + i] += dz * cache.a2[i];
            d_a2[i] = dz * self.params[self.layout.w_out.start + i];
        }
        grad[self.layout.b_out.start] += dz;

        if let Some(m) = &cache.mask2 {
            for (x, f) in d_a2.iter_mut().zip(m) {
                *x *= f;
            }
        }
        let d_u2: Vec<f64> = d_a2
            .iter()
            .zip(&cache.u2)
            .map(|(g, u)| if *u > 0.0 { *g } else { 0.0 })
            .collect();
        let mut d_a1 = vec![0.0; d];
        affine_backward(
            grad,
            &self.layout.w_f2,
            &self.layout.b_f2,
            self.p(&self.layout.w_f2),
            &d_u2,
            &cache.a1,
            &mut d_a1,
        );

        if let Some(m) = &cache.mask1 {
            for (x, f) in d_a1.iter_mut().zip(m) {
                *x *= f;
            }
        }
        let d_u1: Vec<f64> = d_a1
            .iter()
            .zip(&cache.u1)
            .map(|(g, u)| if *u > 0.0 { *g } else { 0.0 })
            .collect();
        let mut d_pool = vec![0.0; d];
        affine_backward(
            grad,
            &self.layout.w_f1,
            &self.layout.b_f1,
            self.p(&self.layout.w_f1),
            &d_u1,
            &cache.pooled,
            &mut d_pool,
        );

        // Pooling spreads the gradient uniformly over positions.
        let mut d_seq: Vec<Vec<f64>> = (0..s_len)
            .map(|_| d_pool.iter().map(|g| g / s_len as f64).collect())
            .collect();

        for (l, ranges) in self.layout.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let input = &cache.seq[l];
            let ln_g = self.p(&ranges.ln_g);

            // Layer norm.
            let mut d_res = vec![vec![0.0; d]; s_len];
            for si in 0..s_len {
                let dy = &d_seq[si];
                let xh = &lc.xhat[si];
                let mut dxhat = vec![0.0; d];
                for i in 0..d {
                    dxhat[i] = dy[i] * ln_g[i];
                    grad[ranges.ln_g.start + i] += dy[i] * xh[i];
                    grad[ranges.ln_b.start + i] += dy[i];
                }
                let m1 = dxhat.iter().sum::<f64>() / d as f64;
                let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for i in 0..d {
                    d_res[si][i] = lc.inv_std[si] * (dxhat[i] - m1 - xh[i] * m2);
                }
            }

            // Residual: gradient flows to the layer input and the attention
            // output.
            let mut d_input = d_res.clone();
            let mut d_attn = d_res;
            if let Some(masks) = &lc.mask_attn {
                for (row, m) in d_attn.iter_mut().zip(masks) {
                    for (x, f) in row.iter_mut().zip(m) {
                        *x *= f;
                    }
                }
            }

            // Output projection of the attention block.
            let mut d_ctx = vec![vec![0.0; d]; s_len];
            for si in 0..s_len {
                affine_backward(
                    grad,
                    &ranges.w_o,
                    &ranges.b_o,
                    self.p(&ranges.w_o),
                    &d_attn[si],
                    &lc.ctx[si],
                    &mut d_ctx[si],
                );
            }

            // Scaled dot-product attention.
            let mut d_q = vec![vec![0.0; d]; s_len];
            let mut d_k = vec![vec![0.0; d]; s_len];
            let mut d_v = vec![vec![0.0; d]; s_len];
            for h in 0..heads {
                let lo = h * head_dim;
                let hi = lo + head_dim;
                for qi in 0..s_len {
                    let weights = &lc.alpha[h][qi];
                    let d_alpha: Vec<f64> = (0..s_len)
                        .map(|ki| dot(&d_ctx[qi][lo..hi], &lc.v[ki][lo..hi]))
                        .collect();
                    let dot_sum: f64 = weights.iter().zip(&d_alpha).map(|(w, g)| w * g).sum();
                    for ki in 0..s_len {
                        let d_score = weights[ki] * (d_alpha[ki] - dot_sum);
                        for i in lo..hi {
                            d_q[qi][i] += d_score * lc.k[ki][i] * scale;
                            d_k[ki][i] += d_score * lc.q[qi][i] * scale;
                            d_v[ki][i] += weights[ki] * d_ctx[qi][i];
                        }
                    }
                }
            }

            for si in 0..s_len {
                affine_backward(
                    grad,
                    &ranges.w_q,
                    &ranges.b_q,
                    self.p(&ranges.w_q),
                    &d_q[si],
                    &input[si],
                    &mut d_input[si],
                );
                affine_backward(
                    grad,
                    &ranges.w_k,
                    &ranges.b_k,
                    self.p(&ranges.w_k),
                    &d_k[si],
                    &input[si],
                    &mut d_input[si],
                );
                affine_backward(
                    grad,
                    &ranges.w_v,
                    &ranges.b_v,
                    self.p(&ranges.w_v),
                    &d_v[si],
                    &input[si],
                    &mut d_input[si],
                );
            }
            d_seq = d_input;
        }

        // Input projection.
        let mut d_chunk = vec![0.0; self.chunk_len];
        for si in 0..s_len {
            d_chunk.fill(0.0);
            affine_backward(
                grad,
                &self.layout.w_in,
                &self.layout.b_in,
                self.p(&self.layout.w_in),
                &d_seq[si],
                &cache.chunks[si],
                &mut d_chunk,
            );
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y = W x + b with W row-major (rows = b.len(), cols = x.len()).
fn affine(w: &[f64], b: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        out.push(dot(&w[r * cols..(r + 1) * cols], x) + b[r]);
    }
    out
}

/// Accumulate dW += dy x^T, db += dy, dx += W^T dy, with the weight and
/// bias gradients addressed by their ranges inside the flat gradient.
fn affine_backward(
    grad: &mut [f64],
    w_range: &Range<usize>,
    b_range: &Range<usize>,
    w: &[f64],
    dy: &[f64],
    x: &[f64],
    dx: &mut [f64],
) {
    let cols = x.len();
    for (r, dyr) in dy.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let g_row = &mut grad[w_range.start + r * cols..w_range.start + (r + 1) * cols];
        for c in 0..cols {
            g_row[c] += dyr * x[c];
            dx[c] += row[c] * dyr;
        }
        grad[b_range.start + r] += dyr;
    }
}

fn dropout_mask(rng: &mut ChaCha12Rng, rate: f64, n: usize) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Head, HeadKind};

    fn toy_examples(dim: usize, n: usize, seed: u64) -> Vec<TokenExample> {
        let mut rng = seeding::rng_from(seed);
        (0..n)
            .map(|i| TokenExample {
                features: (0..dim).map(|_| rng.random_range(-1.5f32..1.5)).collect(),
                label: u8::from(i % 2 == 0),
                sentence_id: format!("s{i}"),
                position: 1,
            })
            .collect()
    }

    fn finite_difference(head: &mut Head, batch: &[TokenExample], lambda: f64) -> Vec<f64> {
        let h = 1e-5;
        let n = head.params().len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let orig = head.params()[i];
            head.params_mut()[i] = orig + h;
            let plus = head.loss(batch, lambda);
            head.params_mut()[i] = orig - h;
            let minus = head.loss(batch, lambda);
            head.params_mut()[i] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for chunks in [1usize, 2] {
            let cfg = AttentionConfig {
                embed_dim: 8,
                num_heads: 2,
                num_layers: 2,
                seq_chunks: chunks,
            };
            let mut head = Head::init(8, &HeadKind::Attention(cfg), 0.0, 21).unwrap();
            let batch = toy_examples(8, 5, 33);
            let (_, analytic) = head.loss_and_grad(&batch, 1e-3);
            let numeric = finite_difference(&mut head, &batch, 1e-3);
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-6);
                assert!(
                    ((a - n) / denom).abs() < 1e-3,
                    "analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let cfg = AttentionConfig {
            embed_dim: 4,
            num_heads: 2,
            num_layers: 1,
            seq_chunks: 1,
        };
        let a = AttentionHead::init(6, &cfg, 0.1, 5).unwrap();
        let b = AttentionHead::init(6, &cfg, 0.1, 5).unwrap();
        assert_eq!(a.params(), b.params());
        // Layer-norm gains start at one.
        let ln_g = &a.params[a.layout.layers[0].ln_g.clone()];
        assert!(ln_g.iter().all(|g| *g == 1.0));
        // Biases start at zero.
        assert!(a.params[a.layout.b_in.clone()].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn invalid_configurations_rejected() {
        let bad_heads = AttentionConfig {
            embed_dim: 6,
            num_heads: 4,
            num_layers: 1,
            seq_chunks: 1,
        };
        assert!(AttentionHead::init(8, &bad_heads, 0.0, 0).is_err());
        let bad_chunks = AttentionConfig {
            embed_dim: 4,
            num_heads: 2,
            num_layers: 1,
            seq_chunks: 9,
        };
        assert!(AttentionHead::init(8, &bad_chunks, 0.0, 0).is_err());
    }

    #[test]
    fn training_with_dropout_stays_finite() {
        let cfg = AttentionConfig {
            embed_dim: 8,
            num_heads: 2,
            num_layers: 1,
            seq_chunks: 2,
        };
        let examples = toy_examples(8, 32, 7);
        let config = crate::classifier::TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 8,
            weight_decay: 1e-4,
            dropout_rate: 0.2,
            seed: 3,
            optimizer: crate::classifier::Optimizer::AdaptiveMoment,
        };
        let trained =
            crate::classifier::train_reliability_head(&examples, &config, &HeadKind::Attention(cfg))
                .unwrap();
        assert!(trained.head.params().iter().all(|w| w.is_finite()));
        assert!(trained.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = AttentionConfig {
            embed_dim: 8,
            num_heads: 4,
            num_layers: 2,
            seq_chunks: 2,
        };
        let head = AttentionHead::init(10, &cfg, 0.5, 13).unwrap();
        let x: Vec<f32> = (0..10).map(|i| i as f32 * 0.3 - 1.0).collect();
        assert_eq!(head.raw_score(&x), head.raw_score(&x));
    }
}
