use super::ModelError;
use crate::tokenizer::{BOS_ID, PAD_ID};

/// Right-padded `[size, len]` id matrices for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_ids: Vec<u32>,
    /// `true` at real tokens.
    pub src_mask: Vec<bool>,
    /// Target shifted right: starts with bos.
    pub dec_input: Vec<u32>,
    pub targets: Vec<u32>,
    pub tgt_mask: Vec<bool>,
}

impl Batch {
    /// Builds a batch from `(source, target)` pairs where each target is a
    /// full `bos .. eos` sequence.
    pub fn from_pairs<S: AsRef<[u32]>, T: AsRef<[u32]>>(pairs: &[(S, T)]) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::InvalidBatch("empty batch".into()));
        }
        let size = pairs.len();
        let src_len = pairs.iter().map(|(s, _)| s.as_ref().len()).max().unwrap_or(0);
        let tgt_len = pairs
            .iter()
            .map(|(_, t)| t.as_ref().len().saturating_sub(1))
            .max()
            .unwrap_or(0);
        if src_len == 0 {
            return Err(ModelError::InvalidBatch("empty source sequence".into()));
        }
        let mut b = Self {
            size,
            src_len,
            tgt_len,
            src_ids: vec![PAD_ID; size * src_len],
            src_mask: vec![false; size * src_len],
            dec_input: vec![PAD_ID; size * tgt_len],
            targets: vec![PAD_ID; size * tgt_len],
            tgt_mask: vec![false; size * tgt_len],
        };
        for (i, (src, tgt)) in pairs.iter().enumerate() {
            let (src, tgt) = (src.as_ref(), tgt.as_ref());
            if src.is_empty() {
                return Err(ModelError::InvalidBatch(format!("example {i} has an empty source")));
            }
            if tgt.len() < 2 || tgt[0] != BOS_ID {
                return Err(ModelError::InvalidBatch(format!(
                    "example {i} target must start with bos and have a successor"
                )));
            }
            for (j, &id) in src.iter().enumerate() {
                b.src_ids[i * src_len + j] = id;
                b.src_mask[i * src_len + j] = true;
            }
            for j in 0..tgt.len() - 1 {
                b.dec_input[i * tgt_len + j] = tgt[j];
                b.targets[i * tgt_len + j] = tgt[j + 1];
                b.tgt_mask[i * tgt_len + j] = true;
            }
        }
        Ok(b)
    }

    pub fn supervised_tokens(&self) -> usize {
        self.targets.iter().filter(|&&t| t != PAD_ID).count()
    }

    /// Positions occupied by real tokens on both sides.
    pub fn real_tokens(&self) -> usize {
        self.src_mask.iter().chain(&self.tgt_mask).filter(|&&m| m).count()
    }
}
