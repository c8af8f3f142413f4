//! Denoising corruption: Poisson-span text infilling and sentence permutation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, purpose};
use crate::textnorm::split_sentences;
use crate::tokenizer::{SeqKind, TokenSequence, Vocabulary, BOS_ID, EOS_ID, MASK_ID};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("mask ratio must be in [0, 1), got {0}")]
    MaskRatio(f64),
    #[error("poisson lambda must be positive, got {0}")]
    Lambda(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub mask_ratio: f64,
    pub poisson_lambda: f64,
    pub permute_sentences: bool,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.30,
            poisson_lambda: 3.5,
            permute_sentences: true,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(NoiseError::MaskRatio(self.mask_ratio));
        }
        if !(self.poisson_lambda > 0.0 && self.poisson_lambda.is_finite()) {
            return Err(NoiseError::Lambda(self.poisson_lambda));
        }
        Ok(())
    }
}

/// The random decisions the noise functions need. Any [`Rng`] provides
/// them; [`ScriptedNoise`] replays fixed decisions for tracing.
pub trait NoiseSource {
    fn span_length(&mut self, lambda: f64) -> usize;
    /// Uniform index in `0..n`, `n >= 1`.
    fn index(&mut self, n: usize) -> usize;
}

impl<R: Rng> NoiseSource for R {
    fn span_length(&mut self, lambda: f64) -> usize {
        sample_span_length(lambda, self)
    }

    fn index(&mut self, n: usize) -> usize {
        self.gen_range(0..n)
    }
}

/// Replays scripted span lengths and indices in order; panics when a
/// script runs dry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNoise {
    pub lengths: std::collections::VecDeque<usize>,
    pub indices: std::collections::VecDeque<usize>,
}

impl ScriptedNoise {
    pub fn new(lengths: &[usize], indices: &[usize]) -> Self {
        Self {
            lengths: lengths.iter().copied().collect(),
            indices: indices.iter().copied().collect(),
        }
    }
}

impl NoiseSource for ScriptedNoise {
    fn span_length(&mut self, _lambda: f64) -> usize {
        self.lengths.pop_front().expect("scripted span lengths exhausted")
    }

    fn index(&mut self, n: usize) -> usize {
        let i = self.indices.pop_front().expect("scripted indices exhausted");
        assert!(i < n, "scripted index {i} out of range 0..{n}");
        i
    }
}

/// Poisson(lambda) draw by inverse transform on a single uniform.
pub fn sample_span_length<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut k = 0usize;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    // the tail guard only matters when cdf saturates below u through roundoff
    while u > cdf && k < 10_000 {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        if pmf == 0.0 && k as f64 > lambda {
            break;
        }
    }
    k
}

/// What one infilling pass did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InfillStats {
    pub content_len: usize,
    pub budget: usize,
    pub masked_tokens: usize,
    pub spans: usize,
    pub inserted_masks: usize,
}

/// Replaces Poisson-length spans with a single mask each until the masked
/// token count reaches `round(mask_ratio * n)`.
pub fn text_infill(tokens: &TokenSequence, cfg: &NoiseConfig, rng: &mut impl NoiseSource) -> TokenSequence {
    text_infill_with_stats(tokens, cfg, rng).0
}

pub fn text_infill_with_stats(
    tokens: &TokenSequence,
    cfg: &NoiseConfig,
    rng: &mut impl NoiseSource,
) -> (TokenSequence, InfillStats) {
    let has_bos = tokens.kind == SeqKind::Target && tokens.ids.first() == Some(&BOS_ID);
    let content = tokens.content();
    let n = content.len();
    let budget = (cfg.mask_ratio * n as f64).round() as usize;
    let mut stats = InfillStats {
        content_len: n,
        budget,
        ..Default::default()
    };
    if budget == 0 {
        return (tokens.clone(), stats);
    }

    let mut span_of: Vec<Option<usize>> = vec![None; n];
    let mut inserts_before = vec![0usize; n];
    while stats.masked_tokens < budget {
        let k = rng.span_length(cfg.poisson_lambda);
        let runs = unmasked_runs(&span_of);
        if runs.is_empty() {
            break;
        }
        if k == 0 {
            let free: usize = runs.iter().map(|r| r.1).sum();
            let pos = nth_free_position(&runs, rng.index(free));
            inserts_before[pos] += 1;
            stats.spans += 1;
            stats.inserted_masks += 1;
            continue;
        }
        let longest = runs.iter().map(|r| r.1).max().unwrap_or(0);
        let k = k.min(longest);
        let starts: usize = runs.iter().filter(|r| r.1 >= k).map(|r| r.1 - k + 1).sum();
        let mut pick = rng.index(starts);
        let mut start = 0;
        for &(run_start, run_len) in runs.iter().filter(|r| r.1 >= k) {
            let fits = run_len - k + 1;
            if pick < fits {
                start = run_start + pick;
                break;
            }
            pick -= fits;
        }
        for slot in &mut span_of[start..start + k] {
            *slot = Some(stats.spans);
        }
        stats.spans += 1;
        stats.masked_tokens += k;
    }

    let mut ids = Vec::with_capacity(n + 2);
    if has_bos {
        ids.push(BOS_ID);
    }
    for pos in 0..n {
        ids.extend(std::iter::repeat_n(MASK_ID, inserts_before[pos]));
        match span_of[pos] {
            Some(span) => {
                if pos == 0 || span_of[pos - 1] != Some(span) {
                    ids.push(MASK_ID);
                }
            }
            None => ids.push(content[pos]),
        }
    }
    if tokens.ids.last() == Some(&EOS_ID) {
        ids.push(EOS_ID);
    }
    (TokenSequence::new(ids, tokens.kind), stats)
}

/// (start, len) for each maximal run of unmasked positions.
fn unmasked_runs(span_of: &[Option<usize>]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < span_of.len() {
        if span_of[i].is_none() {
            let start = i;
            while i < span_of.len() && span_of[i].is_none() {
                i += 1;
            }
            runs.push((start, i - start));
        } else {
            i += 1;
        }
    }
    runs
}

fn nth_free_position(runs: &[(usize, usize)], mut nth: usize) -> usize {
    for &(start, len) in runs {
        if nth < len {
            return start + nth;
        }
        nth -= len;
    }
    unreachable!("index beyond the free positions")
}

/// Shuffles sentences with Fisher-Yates and rejoins them with single spaces.
/// Text with at most one sentence is returned unchanged.
pub fn permute_sentences(text: &str, rng: &mut impl NoiseSource) -> String {
    let mut sentences = split_sentences(text);
    if sentences.len() <= 1 {
        return text.to_string();
    }
    for i in (1..sentences.len()).rev() {
        let j = rng.index(i + 1);
        sentences.swap(i, j);
    }
    sentences.join(" ")
}

/// Builds a (corrupted source, clean target) pair.
pub fn make_pretrain_pair(
    text: &str,
    vocab: &Vocabulary,
    cfg: &NoiseConfig,
    rng: &mut impl NoiseSource,
) -> (TokenSequence, TokenSequence) {
    let target = vocab.encode(text, SeqKind::Target);
    let shuffled = if cfg.permute_sentences {
        permute_sentences(text, rng)
    } else {
        text.to_string()
    };
    let source = text_infill(&vocab.encode(&shuffled, SeqKind::Source), cfg, rng);
    (source, target)
}

/// The random stream for one example, keyed only by the seed and index.
pub fn example_rng(seed: u64, example_index: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(rng::derive_seed(seed, purpose::NOISE), example_index)
}

/// [`make_pretrain_pair`] on the example's own stream.
pub fn noised_pair(text: &str, vocab: &Vocabulary, cfg: &NoiseConfig, example_index: u64) -> NoisedPair {
    let mut rng = example_rng(cfg.seed, example_index);
    let (src, tgt) = make_pretrain_pair(text, vocab, cfg, &mut rng);
    NoisedPair {
        src_ids: src.ids,
        tgt_ids: tgt.ids,
        example_index,
    }
}

/// One line of the noised-pair dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisedPair {
    pub src_ids: Vec<u32>,
    pub tgt_ids: Vec<u32>,
    pub example_index: u64,
}

impl NoisedPair {
    pub fn source(&self) -> TokenSequence {
        TokenSequence::new(self.src_ids.clone(), SeqKind::Source)
    }

    pub fn target(&self) -> TokenSequence {
        TokenSequence::new(self.tgt_ids.clone(), SeqKind::Target)
    }
}

/// Writes pairs as JSON lines.
pub fn write_pairs_jsonl(pairs: &[NoisedPair], mut out: impl std::io::Write) -> std::io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
