//! Post-norm encoder-decoder forward pass on the autodiff tape.

use rand_chacha::ChaCha8Rng;

use super::params::{Attention, FeedForward, Norm, Weights};
use super::{Batch, ModelConfig, ModelError, Parameters};
use crate::autodiff::{AttentionShape, Graph, Var};
use crate::tensor::{log_softmax, Tensor};
use crate::tokenizer::PAD_ID;

/// Dropout applied during a training forward pass.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

struct Builder<'g, 'a, 'r> {
    graph: &'g mut Graph<'a>,
    w: Weights<Var>,
    /// Embedding tables for encoder input, decoder input and output
    /// projection; all three are the shared table outside of tests.
    tables: [Var; 3],
    cfg: &'a ModelConfig,
    dropout: Option<DropoutCtx<'r>>,
}

impl<'g, 'a, 'r> Builder<'g, 'a, 'r> {
    fn drop(&mut self, x: Var) -> Var {
        match &mut self.dropout {
            Some(ctx) => self.graph.dropout(x, ctx.rate, ctx.rng),
            None => x,
        }
    }

    fn new(graph: &'g mut Graph<'a>, w: Weights<Var>, cfg: &'a ModelConfig, dropout: Option<DropoutCtx<'r>>) -> Self {
        let t = w.token_embedding;
        Builder {
            graph,
            w,
            tables: [t; 3],
            cfg,
            dropout,
        }
    }

    fn embed(&mut self, table: Var, ids: &[u32], batch: usize, len: usize) -> Var {
        let ids_usize: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let tok = self.graph.gather(table, &ids_usize);
        let pos = self.graph.gather(self.w.positions, &positions);
        let x = self.graph.add(tok, pos);
        self.drop(x)
    }

    fn attention(&mut self, p: &Attention<Var>, query: Var, memory: Var, shape: AttentionShape) -> Var {
        let q = self.graph.linear(query, p.q_w, p.q_b);
        let k = self.graph.linear(memory, p.k_w, p.k_b);
        let v = self.graph.linear(memory, p.v_w, p.v_b);
        let a = self.graph.attention(q, k, v, shape);
        let o = self.graph.linear(a, p.o_w, p.o_b);
        self.drop(o)
    }

    fn feed_forward(&mut self, p: &FeedForward<Var>, x: Var) -> Var {
        let h = self.graph.linear(x, p.w1, p.b1);
        let h = self.graph.gelu(h);
        let o = self.graph.linear(h, p.w2, p.b2);
        self.drop(o)
    }

    fn add_norm(&mut self, residual: Var, update: Var, norm: &Norm<Var>) -> Var {
        let s = self.graph.add(residual, update);
        self.graph.layer_norm(s, norm.gain, norm.bias)
    }

    fn encoder(&mut self, src_ids: &[u32], src_mask: &[bool], batch: usize, len: usize) -> Var {
        let mut x = self.embed(self.tables[0], src_ids, batch, len);
        let shape = AttentionShape {
            batch,
            q_len: len,
            k_len: len,
            heads: self.cfg.n_heads,
            key_mask: src_mask.to_vec(),
            causal: false,
        };
        for layer in self.w.encoder.clone() {
            let a = self.attention(&layer.self_attn, x, x, shape.clone());
            x = self.add_norm(x, a, &layer.self_norm);
            let f = self.feed_forward(&layer.ffn, x);
            x = self.add_norm(x, f, &layer.ffn_norm);
        }
        if let Some(norm) = self.w.encoder_norm.clone() {
            x = self.graph.layer_norm(x, norm.gain, norm.bias);
        }
        x
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder(
        &mut self,
        enc: Var,
        src_mask: &[bool],
        src_len: usize,
        dec_ids: &[u32],
        dec_mask: &[bool],
        batch: usize,
        len: usize,
    ) -> Var {
        let mut x = self.embed(self.tables[1], dec_ids, batch, len);
        let self_shape = AttentionShape {
            batch,
            q_len: len,
            k_len: len,
            heads: self.cfg.n_heads,
            key_mask: dec_mask.to_vec(),
            causal: true,
        };
        let cross_shape = AttentionShape {
            batch,
            q_len: len,
            k_len: src_len,
            heads: self.cfg.n_heads,
            key_mask: src_mask.to_vec(),
            causal: false,
        };
        for layer in self.w.decoder.clone() {
            let a = self.attention(&layer.self_attn, x, x, self_shape.clone());
            x = self.add_norm(x, a, &layer.self_norm);
            let c = self.attention(&layer.cross_attn, x, enc, cross_shape.clone());
            x = self.add_norm(x, c, &layer.cross_norm);
            let f = self.feed_forward(&layer.ffn, x);
            x = self.add_norm(x, f, &layer.ffn_norm);
        }
        if let Some(norm) = self.w.decoder_norm.clone() {
            x = self.graph.layer_norm(x, norm.gain, norm.bias);
        }
        self.graph.tied_projection(x, self.tables[2])
    }
}

fn register<'a>(graph: &mut Graph<'a>, params: &'a Parameters) -> Weights<Var> {
    params.map(&mut |t| graph.leaf_ref(t))
}

fn check_batch(cfg: &ModelConfig, batch: &Batch) -> Result<(), ModelError> {
    let longest = batch.src_len.max(batch.tgt_len);
    if longest > cfg.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: longest,
            max: cfg.max_positions,
        });
    }
    if let Some(&bad) = batch
        .src_ids
        .iter()
        .chain(&batch.dec_input)
        .chain(&batch.targets)
        .find(|&&id| id as usize >= cfg.vocab_size)
    {
        return Err(ModelError::InvalidBatch(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Builds the full graph and returns (logits var, supervised targets).
fn build<'a>(
    graph: &mut Graph<'a>,
    params: &'a Parameters,
    cfg: &'a ModelConfig,
    batch: &Batch,
    dropout: Option<DropoutCtx<'_>>,
) -> Var {
    let w = register(graph, params);
    let mut b = Builder::new(graph, w, cfg, dropout);
    let enc = b.encoder(&batch.src_ids, &batch.src_mask, batch.size, batch.src_len);
    b.decoder(
        enc,
        &batch.src_mask,
        batch.src_len,
        &batch.dec_input,
        &batch.tgt_mask,
        batch.size,
        batch.tgt_len,
    )
}

fn supervised(batch: &Batch) -> Vec<Option<usize>> {
    batch
        .targets
        .iter()
        .map(|&t| (t != PAD_ID).then_some(t as usize))
        .collect()
}

/// Evaluation-mode logits shaped `[batch, time, vocab]`.
pub fn forward(params: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<Tensor, ModelError> {
    check_batch(cfg, batch)?;
    let mut graph = Graph::new();
    let logits = build(&mut graph, params, cfg, batch, None);
    Ok(graph
        .value(logits)
        .clone()
        .reshape(&[batch.size, batch.tgt_len, cfg.vocab_size]))
}

/// Mean cross-entropy over non-pad targets. `logits` is `[.., vocab]` with
/// one row per target.
pub fn loss(logits: &Tensor, targets: &[u32], pad_id: u32) -> Result<f64, ModelError> {
    let classes = logits.cols();
    if logits.len() != targets.len() * classes {
        return Err(ModelError::InvalidBatch(format!(
            "{} logit rows for {} targets",
            logits.len() / classes.max(1),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if t == pad_id {
            continue;
        }
        let row = &logits.data()[r * classes..(r + 1) * classes];
        total -= log_softmax(row)[t as usize];
        count += 1;
    }
    if count == 0 {
        return Err(ModelError::AllPadTarget);
    }
    Ok(total / count as f64)
}

/// Loss and exact gradients for every parameter. With `dropout` the masks
/// are drawn from its generator, so a fixed generator state reproduces them.
pub fn loss_and_gradients(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout: Option<DropoutCtx<'_>>,
) -> Result<(f64, Parameters), ModelError> {
    check_batch(cfg, batch)?;
    let mut graph = Graph::new();
    let w = register(&mut graph, params);
    let logits = {
        let mut b = Builder::new(&mut graph, w.clone(), cfg, dropout);
        let enc = b.encoder(&batch.src_ids, &batch.src_mask, batch.size, batch.src_len);
        b.decoder(
            enc,
            &batch.src_mask,
            batch.src_len,
            &batch.dec_input,
            &batch.tgt_mask,
            batch.size,
            batch.tgt_len,
        )
    };
    let loss = graph
        .cross_entropy(logits, &supervised(batch))
        .ok_or(ModelError::AllPadTarget)?;
    let value = graph.value(loss).data()[0];
    let mut adjoints = graph.backward(loss);
    let grads = w.map(&mut |&var| {
        adjoints
            .take(var)
            .unwrap_or_else(|| Tensor::zeros(graph.value(var).shape()))
    });
    Ok((value, grads))
}

/// Loss only, without building gradients.
pub fn batch_loss(params: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<f64, ModelError> {
    let logits = forward(params, cfg, batch)?;
    loss(&logits, &batch.targets, PAD_ID)
}

/// Teacher-forced argmax accuracy: (correct, supervised) counts.
pub fn token_accuracy(params: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<(usize, usize), ModelError> {
    let logits = forward(params, cfg, batch)?;
    let v = cfg.vocab_size;
    let mut correct = 0;
    let mut total = 0;
    for (r, &t) in batch.targets.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        let row = &logits.data()[r * v..(r + 1) * v];
        let best = argmax(row);
        correct += usize::from(best == t as usize);
        total += 1;
    }
    Ok((correct, total))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Encoder output for one source sequence, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub hidden: Tensor,
    pub len: usize,
}

pub fn encode_source(params: &Parameters, cfg: &ModelConfig, src: &[u32]) -> Result<EncodedSource, ModelError> {
    if src.len() > cfg.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: src.len(),
            max: cfg.max_positions,
        });
    }
    let mut graph = Graph::new();
    let w = register(&mut graph, params);
    let mut b = Builder::new(&mut graph, w, cfg, None);
    let mask = vec![true; src.len()];
    let enc = b.encoder(src, &mask, 1, src.len());
    Ok(EncodedSource {
        hidden: graph.value(enc).clone(),
        len: src.len(),
    })
}

/// Next-token log-probabilities for several equal-length decoder prefixes
/// that share one encoded source.
pub fn next_token_log_probs(
    params: &Parameters,
    cfg: &ModelConfig,
    source: &EncodedSource,
    prefixes: &[&[u32]],
) -> Result<Vec<Vec<f64>>, ModelError> {
    let Some(first) = prefixes.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if prefixes.iter().any(|p| p.len() != len) {
        return Err(ModelError::InvalidBatch("prefixes must share a length".into()));
    }
    if len > cfg.max_positions {
        return Err(ModelError::SequenceTooLong {
            len,
            max: cfg.max_positions,
        });
    }
    let n = prefixes.len();
    let mut graph = Graph::new();
    let w = register(&mut graph, params);
    let mut memory = Vec::with_capacity(n * source.hidden.len());
    for _ in 0..n {
        memory.extend_from_slice(source.hidden.data());
    }
    let enc = graph.leaf(Tensor::from_vec(&[n * source.len, cfg.d_model], memory));
    let mut b = Builder::new(&mut graph, w, cfg, None);
    let ids: Vec<u32> = prefixes.iter().flat_map(|p| p.iter().copied()).collect();
    let logits = b.decoder(
        enc,
        &vec![true; n * source.len],
        source.len,
        &ids,
        &vec![true; n * len],
        n,
        len,
    );
    let lv = graph.value(logits);
    Ok((0..n).map(|i| log_softmax(lv.row(i * len + len - 1))).collect())
}
