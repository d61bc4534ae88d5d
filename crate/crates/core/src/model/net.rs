//! The dual-stream classifier.
//!
//! Token, position and lexicon-sign embeddings are summed, encoded twice (full
//! attention and windowed attention), fused by gated bidirectional cross
//! attention, mean-pooled over real positions and classified by a small MLP.

use autodiff::{Tape, Tensor, Var};

use super::batch::Batch;
use super::{Bound, ModelConfig, Mode};
use crate::Result;

/// Sinusoidal position table: `sin(p / 10000^(2i/d))` in even columns and
/// the matching `cos` in odd ones.
pub fn positional_encoding(l: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[l, d], |idx| {
        let (pos, col) = (idx / d, idx % d);
        let angle = pos as f64 / 10000f64.powf((col - col % 2) as f64 / d as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// `E = token embedding + PE + lexicon-sign embedding`, shape `B × L × d`.
pub fn embed(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, batch: &Batch) -> Result<Var> {
    let shape = [batch.b, batch.l];
    let tok = tape.embedding(p.get("embed.token")?, &batch.ids, &shape)?;
    let lex = tape.embedding(p.get("embed.lexicon")?, &batch.signs, &shape)?;
    let pe = tape.constant(positional_encoding(batch.l, cfg.d_model));
    let e = tape.add(tok, lex)?;
    Ok(tape.add(e, pe)?)
}

/// Scaled dot-product attention. `q` is `B × Lq × k`, `k` and `v` are
/// `B × Lk × ·`; `allowed` has `B·Lq·Lk` entries. Returns the output and the
/// attention weights.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, allowed: &[bool], scale: f64) -> Result<(Var, Var)> {
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, scale);
    let weights = tape.masked_softmax(scores, allowed)?;
    Ok((tape.matmul(weights, v)?, weights))
}

fn multi_head_self_attention(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    x: Var,
    allowed: &[bool],
    cfg: &ModelConfig,
) -> Result<Var> {
    let q = tape.matmul(x, p.get(&format!("{prefix}.wq"))?)?;
    let k = tape.matmul(x, p.get(&format!("{prefix}.wk"))?)?;
    let v = tape.matmul(x, p.get(&format!("{prefix}.wv"))?)?;
    let dh = cfg.d_model / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice(q, h * dh, dh)?;
        let kh = tape.slice(k, h * dh, dh)?;
        let vh = tape.slice(v, h * dh, dh)?;
        heads.push(attention(tape, qh, kh, vh, allowed, scale)?.0);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat(&heads)? };
    Ok(tape.matmul(cat, p.get(&format!("{prefix}.wo"))?)?)
}

fn linear(tape: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.get(&format!("{prefix}.w"))?)?;
    Ok(tape.add(y, p.get(&format!("{prefix}.b"))?)?)
}

/// A stack of self-attention + feed-forward blocks. `stream` is `"global"` or
/// `"local"`; the mask decides which.
pub fn encode_stream(
    tape: &mut Tape,
    p: &Bound,
    stream: &str,
    e: Var,
    allowed: &[bool],
    cfg: &ModelConfig,
) -> Result<Var> {
    let mut x = e;
    for layer in 0..cfg.n_layers {
        let prefix = format!("{stream}.{layer}");
        let a = multi_head_self_attention(tape, p, &format!("{prefix}.attn"), x, allowed, cfg)?;
        x = if cfg.residual { tape.add(x, a)? } else { a };
        let h = linear(tape, p, &format!("{prefix}.ffn1"), x)?;
        let h = tape.relu(h);
        let f = linear(tape, p, &format!("{prefix}.ffn2"), h)?;
        x = if cfg.residual { tape.add(x, f)? } else { f };
    }
    Ok(x)
}

pub struct Fusion {
    pub h_fused: Var,
    /// `B × L × 1`, shared by all heads.
    pub alpha: Var,
    pub a_gl: Vec<Var>,
    pub a_lg: Vec<Var>,
    /// Per-head gated mix before the λ-weighted sum.
    pub heads: Vec<Var>,
    pub lambda: Var,
}

/// Bidirectional cross attention between the streams, blended per position
/// by `α = σ(W_α [H_g; H_l] + b_α)` and summed over heads with `λ = softmax`.
pub fn gated_cross_fusion(
    tape: &mut Tape,
    p: &Bound,
    h_g: Var,
    h_l: Var,
    allowed: &[bool],
    cfg: &ModelConfig,
) -> Result<Fusion> {
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let cat = tape.concat(&[h_g, h_l])?;
    let gate = linear(tape, p, "fusion.alpha", cat)?;
    let alpha = tape.sigmoid(gate);
    let one_minus = tape.rsub_scalar(1.0, alpha);
    let lambda = tape.softmax(p.get("fusion.lambda")?)?;

    let mut out = Fusion {
        h_fused: lambda,
        alpha,
        a_gl: Vec::new(),
        a_lg: Vec::new(),
        heads: Vec::new(),
        lambda,
    };
    let mut acc: Option<Var> = None;
    for i in 0..cfg.n_heads {
        let w = |name: &str| p.get(&format!("fusion.{i}.{name}"));
        let q = tape.matmul(h_g, w("wq")?)?;
        let k = tape.matmul(h_l, w("wk")?)?;
        let v = tape.matmul(h_l, w("wv")?)?;
        let (a_gl, _) = attention(tape, q, k, v, allowed, scale)?;
        let q = tape.matmul(h_l, w("wq2")?)?;
        let k = tape.matmul(h_g, w("wk2")?)?;
        let v = tape.matmul(h_g, w("wv2")?)?;
        let (a_lg, _) = attention(tape, q, k, v, allowed, scale)?;
        let left = tape.mul(alpha, a_gl)?;
        let right = tape.mul(one_minus, a_lg)?;
        let head = tape.add(left, right)?;
        let li = tape.slice(lambda, i, 1)?;
        let weighted = tape.mul(head, li)?;
        acc = Some(match acc {
            None => weighted,
            Some(s) => tape.add(s, weighted)?,
        });
        out.a_gl.push(a_gl);
        out.a_lg.push(a_lg);
        out.heads.push(head);
    }
    out.h_fused = acc.expect("at least one head");
    Ok(out)
}

pub struct Head {
    pub h_pool: Var,
    pub z1: Var,
    pub z2: Var,
    pub logits: Var,
    pub y: Var,
}

/// Masked mean pooling, `z₁ = ReLU(W₁h + b₁)`, `z₂ = Dropout(ReLU(W₂z₁ + b₂))`,
/// `y = softmax(W₃z₂ + b₃)`.
pub fn classify(tape: &mut Tape, p: &Bound, h_fused: Var, batch: &Batch, cfg: &ModelConfig, mode: Mode) -> Result<Head> {
    let w = tape.constant(Tensor::new(vec![batch.b, 1, batch.l], batch.pool_weights())?);
    let pooled = tape.matmul(w, h_fused)?;
    let h_pool = tape.reshape(pooled, &[batch.b, cfg.d_model])?;
    let z1 = linear(tape, p, "head.l1", h_pool)?;
    let z1 = tape.relu(z1);
    let z2 = linear(tape, p, "head.l2", z1)?;
    let z2 = tape.relu(z2);
    let z2 = tape.dropout(z2, cfg.dropout, mode.seed, mode.train)?;
    let logits = linear(tape, p, "head.l3", z2)?;
    let y = tape.softmax(logits)?;
    Ok(Head {
        h_pool,
        z1,
        z2,
        logits,
        y,
    })
}

/// Every named intermediate of one forward pass.
pub struct ForwardTrace {
    pub e: Var,
    pub h_g: Var,
    pub h_l: Var,
    pub fusion: Fusion,
    pub head: Head,
}

pub fn forward(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, batch: &Batch, mode: Mode) -> Result<ForwardTrace> {
    let e = embed(tape, p, cfg, batch)?;
    let full = batch.attention_mask(None);
    let windowed = batch.attention_mask(Some(cfg.window));
    let h_g = encode_stream(tape, p, "global", e, &full, cfg)?;
    let h_l = encode_stream(tape, p, "local", e, &windowed, cfg)?;
    let fusion = gated_cross_fusion(tape, p, h_g, h_l, &full, cfg)?;
    let head = classify(tape, p, fusion.h_fused, batch, cfg, mode)?;
    Ok(ForwardTrace {
        e,
        h_g,
        h_l,
        fusion,
        head,
    })
}

/// `(name, shape)` of every parameter.
pub(super) fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let hidden = cfg.ffn_mult * d;
    let mut out = vec![
        ("embed.token".to_string(), vec![cfg.vocab_size, d]),
        ("embed.lexicon".to_string(), vec![3, d]),
    ];
    for stream in ["global", "local"] {
        for layer in 0..cfg.n_layers {
            let pre = format!("{stream}.{layer}");
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("{pre}.attn.{w}"), vec![d, d]));
            }
            out.push((format!("{pre}.ffn1.w"), vec![d, hidden]));
            out.push((format!("{pre}.ffn1.b"), vec![hidden]));
            out.push((format!("{pre}.ffn2.w"), vec![hidden, d]));
            out.push((format!("{pre}.ffn2.b"), vec![d]));
        }
    }
    for i in 0..cfg.n_heads {
        for w in ["wq", "wk", "wv", "wq2", "wk2", "wv2"] {
            out.push((format!("fusion.{i}.{w}"), vec![d, d]));
        }
    }
    out.push(("fusion.alpha.w".to_string(), vec![2 * d, 1]));
    out.push(("fusion.alpha.b".to_string(), vec![1]));
    out.push(("fusion.lambda".to_string(), vec![cfg.n_heads]));
    out.push(("head.l1.w".to_string(), vec![d, d]));
    out.push(("head.l1.b".to_string(), vec![d]));
    out.push(("head.l2.w".to_string(), vec![d, d]));
    out.push(("head.l2.b".to_string(), vec![d]));
    out.push(("head.l3.w".to_string(), vec![d, cfg.num_classes]));
    out.push(("head.l3.b".to_string(), vec![cfg.num_classes]));
    out
}
