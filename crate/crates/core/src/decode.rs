//! Greedy and beam-search generation over any next-token scorer.
//!
//! Lengths count generated tokens after bos, eos included. Pad is never
//! generated. Ties between equal scores go to the lower token id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{encode_source, next_token_log_probs, EncodedSource, ModelConfig, ModelError, Parameters};
use crate::tokenizer::{SeqKind, TokenSequence, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid beam config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_length: usize,
    pub length_penalty: f64,
    pub min_length: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 3,
            max_length: 64,
            length_penalty: 0.0,
            min_length: 1,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::InvalidConfig("beam_size must be at least 1".into()));
        }
        if self.min_length == 0 || self.max_length < self.min_length {
            return Err(DecodeError::InvalidConfig(format!(
                "need max_length >= min_length >= 1, got {} and {}",
                self.max_length, self.min_length
            )));
        }
        if !self.length_penalty.is_finite() {
            return Err(DecodeError::InvalidConfig("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Next-token log-probabilities for a set of equal-length prefixes, all
/// conditioned on one source.
pub trait PrefixScorer {
    fn score(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError>;
}

/// Adapts a per-prefix closure.
pub struct FnScorer<F>(pub F);

impl<F: FnMut(&[u32]) -> Vec<f64>> PrefixScorer for FnScorer<F> {
    fn score(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError> {
        Ok(prefixes.iter().map(|p| (self.0)(p)).collect())
    }
}

/// The encoder-decoder with its source encoded once.
pub struct TransformerScorer<'a> {
    params: &'a Parameters,
    cfg: &'a ModelConfig,
    source: EncodedSource,
}

impl<'a> TransformerScorer<'a> {
    pub fn new(params: &'a Parameters, cfg: &'a ModelConfig, src: &[u32]) -> Result<Self, DecodeError> {
        Ok(Self {
            params,
            cfg,
            source: encode_source(params, cfg, src)?,
        })
    }
}

impl PrefixScorer for TransformerScorer<'_> {
    fn score(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>, DecodeError> {
        Ok(next_token_log_probs(self.params, self.cfg, &self.source, prefixes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Starts with bos.
    pub tokens: TokenSequence,
    /// Sum of the chosen tokens' log-probabilities.
    pub score: f64,
}

fn best_token(lp: &[f64], allow_eos: bool) -> usize {
    let mut best: Option<usize> = None;
    for (v, &x) in lp.iter().enumerate() {
        if v == PAD_ID as usize || (!allow_eos && v == EOS_ID as usize) {
            continue;
        }
        if best.is_none_or(|b| x > lp[b]) {
            best = Some(v);
        }
    }
    best.expect("vocabulary has a non-pad token")
}

/// Appends the highest-scoring token until eos or `max_length` tokens.
pub fn greedy(scorer: &mut dyn PrefixScorer, max_length: usize) -> Result<Hypothesis, DecodeError> {
    let mut tokens = vec![BOS_ID];
    let mut score = 0.0;
    for _ in 0..max_length {
        let lp = scorer.score(&[&tokens])?.pop().expect("one row per prefix");
        let v = best_token(&lp, true);
        score += lp[v];
        tokens.push(v as u32);
        if v == EOS_ID as usize {
            break;
        }
    }
    Ok(Hypothesis {
        tokens: TokenSequence::new(tokens, SeqKind::Target),
        score,
    })
}

fn normalized(score: f64, len: usize, penalty: f64) -> f64 {
    if penalty == 0.0 {
        score
    } else {
        score / (len as f64).powf(penalty)
    }
}

/// Beam search over cumulative log-probabilities. Each step ranks every
/// extension of every live hypothesis; eos extensions ranked within the
/// top `beam_size` retire to the finished pool, the best non-eos ones form
/// the next beam. Search ends when the pool holds `beam_size` hypotheses
/// and no live one can beat the pool's best, or at `max_length`, where
/// live hypotheses join the pool truncated. Returns the pool's best by
/// `score / length^length_penalty`.
pub fn beam_search(scorer: &mut dyn PrefixScorer, cfg: &BeamConfig) -> Result<Hypothesis, DecodeError> {
    cfg.validate()?;
    let k = cfg.beam_size;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![BOS_ID], 0.0)];
    let mut pool: Vec<(Vec<u32>, f64)> = Vec::new();
    for t in 1..=cfg.max_length {
        let prefixes: Vec<&[u32]> = live.iter().map(|(p, _)| p.as_slice()).collect();
        let rows = scorer.score(&prefixes)?;
        let allow_eos = t >= cfg.min_length;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, lp) in rows.iter().enumerate() {
            for (v, &x) in lp.iter().enumerate() {
                if v == PAD_ID as usize || (!allow_eos && v == EOS_ID as usize) {
                    continue;
                }
                cands.push((live[i].1 + x, v, i));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(2 * k);
        let mut next = Vec::with_capacity(k);
        for (rank, &(score, v, i)) in cands.iter().enumerate() {
            let mut tokens = live[i].0.clone();
            tokens.push(v as u32);
            if v == EOS_ID as usize {
                if rank < k {
                    pool.push((tokens, score));
                }
            } else if next.len() < k {
                next.push((tokens, score));
            }
        }
        live = next;
        if t == cfg.max_length {
            pool.append(&mut live);
            break;
        }
        if live.is_empty() {
            break;
        }
        if pool.len() >= k {
            let best_pool = pool
                .iter()
                .map(|(p, s)| normalized(*s, p.len() - 1, cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            // a live score can only fall; its best normalized value is at
            // the shortest or the longest remaining length
            let bound = live
                .iter()
                .map(|&(_, s)| {
                    normalized(s, t + 1, cfg.length_penalty).max(normalized(s, cfg.max_length, cfg.length_penalty))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if best_pool >= bound {
                break;
            }
        }
    }
    let mut best: Option<&(Vec<u32>, f64)> = None;
    for h in &pool {
        let better = best.is_none_or(|b| {
            normalized(h.1, h.0.len() - 1, cfg.length_penalty) > normalized(b.1, b.0.len() - 1, cfg.length_penalty)
        });
        if better {
            best = Some(h);
        }
    }
    let (tokens, score) = best.cloned().expect("max_length >= 1 puts something in the pool");
    Ok(Hypothesis {
        tokens: TokenSequence::new(tokens, SeqKind::Target),
        score,
    })
}

/// Decodes each source independently with the transformer.
pub fn generate(
    params: &Parameters,
    cfg: &ModelConfig,
    sources: &[Vec<u32>],
    beam: &BeamConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    sources
        .iter()
        .map(|src| {
            let mut scorer = TransformerScorer::new(params, cfg, src)?;
            beam_search(&mut scorer, beam)
        })
        .collect()
}
