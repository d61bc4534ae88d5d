//! Convolutional baseline: embeddings, one filter bank per width, ReLU,
//! max-over-time pooling, concatenation and a linear layer.

use autodiff::{Tape, Var};

use super::batch::Batch;
use super::{Bound, ModelConfig, Mode};
use crate::Result;

pub struct CnnTrace {
    /// One `B × F` pooled feature block per filter width.
    pub pooled: Vec<Var>,
    pub logits: Var,
    pub y: Var,
}

/// The batch must be at least as long as the widest filter (see
/// [`ModelConfig::min_len`]).
pub fn forward(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, batch: &Batch, mode: Mode) -> Result<CnnTrace> {
    let e = tape.embedding(p.get("cnn.embed")?, &batch.ids, &[batch.b, batch.l])?;
    let mut pooled = Vec::with_capacity(cfg.cnn_widths.len());
    for &w in &cfg.cnn_widths {
        let windows = tape.unfold(e, w)?;
        let conv = tape.matmul(windows, p.get(&format!("cnn.conv{w}.w"))?)?;
        let conv = tape.add(conv, p.get(&format!("cnn.conv{w}.b"))?)?;
        let act = tape.relu(conv);
        pooled.push(tape.max(act, 1)?);
    }
    let features = if pooled.len() == 1 { pooled[0] } else { tape.concat(&pooled)? };
    let features = tape.dropout(features, cfg.dropout, mode.seed, mode.train)?;
    let logits = tape.matmul(features, p.get("cnn.out.w")?)?;
    let logits = tape.add(logits, p.get("cnn.out.b")?)?;
    let y = tape.softmax(logits)?;
    Ok(CnnTrace { pooled, logits, y })
}

pub(super) fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (cfg.d_model, cfg.cnn_filters);
    let mut out = vec![("cnn.embed".to_string(), vec![cfg.vocab_size, d])];
    for &w in &cfg.cnn_widths {
        out.push((format!("cnn.conv{w}.w"), vec![w * d, f]));
        out.push((format!("cnn.conv{w}.b"), vec![f]));
    }
    out.push(("cnn.out.w".to_string(), vec![cfg.cnn_widths.len() * f, cfg.num_classes]));
    out.push(("cnn.out.b".to_string(), vec![cfg.num_classes]));
    out
}
