//! A synthetic language whose documents can be reconstructed from a noised
//! copy, for checking that denoising pretraining learns.
//!
//! Symbols are single characters from a fixed alphabet, written with
//! spaces between them. A sentence is a run of consecutive symbols that
//! ends at the first symbol `s` with `s % 4 == 3`, followed by " .". The
//! next sentence starts `1 + gap` symbols later, with `gap` uniform in
//! `0..=max_gap`. The first symbol and the sentence count are random, and
//! a document never wraps past the last symbol, so its sentences appear in
//! increasing order.

use rand::Rng;

const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticLanguage {
    pub symbols: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub max_gap: usize,
}

impl Default for SyntheticLanguage {
    fn default() -> Self {
        Self {
            symbols: 50,
            min_sentences: 5,
            max_sentences: 12,
            max_gap: 1,
        }
    }
}

impl SyntheticLanguage {
    pub fn symbol(&self, i: usize) -> char {
        ALPHABET.chars().nth(i).expect("symbol index within the alphabet")
    }

    /// Symbol runs of one document, resampled until it fits the alphabet.
    fn sentences<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        assert!(self.symbols <= ALPHABET.chars().count());
        loop {
            let k = rng.gen_range(self.min_sentences..=self.max_sentences);
            // lay out relative to 0, then shift into range
            let first_phase = rng.gen_range(0..4);
            let mut runs = Vec::with_capacity(k);
            let mut s = first_phase;
            for i in 0..k {
                if i > 0 {
                    s += 1 + rng.gen_range(0..=self.max_gap);
                }
                let mut run = vec![s];
                while s % 4 != 3 {
                    s += 1;
                    run.push(s);
                }
                runs.push(run);
            }
            let span = s + 1 - first_phase;
            if span > self.symbols {
                continue;
            }
            // shift by a multiple of 4 so sentence boundaries are kept
            let slots = (self.symbols - (first_phase + span)) / 4;
            let shift = 4 * rng.gen_range(0..=slots);
            return runs
                .into_iter()
                .map(|r| r.into_iter().map(|x| x + shift).collect())
                .collect();
        }
    }

    pub fn document<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        self.sentences(rng)
            .iter()
            .map(|run| {
                let mut words: Vec<String> = run.iter().map(|&x| self.symbol(x).to_string()).collect();
                words.push(".".into());
                words.join(" ")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn corpus(&self, n: usize, seed: u64) -> Vec<String> {
        let mut r = crate::rng::stream(seed, 0);
        (0..n).map(|_| self.document(&mut r)).collect()
    }
}
