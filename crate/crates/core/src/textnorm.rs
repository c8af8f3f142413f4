//! Arabic-aware normalization applied before scoring, and the sentence
//! segmentation used by the permutation noise.

const TATWEEL: char = '\u{0640}';
const ALEF: char = '\u{0627}';
const YAA: char = '\u{064A}';
const ALEF_MAQSURA: char = '\u{0649}';

/// Sentence terminators. A run of them closes a sentence.
pub const TERMINATORS: [char; 4] = ['.', '!', '?', '\u{061F}'];

/// Which normalization steps [`normalize_eval`] applies. All are on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormRules {
    pub remove_tatweel: bool,
    pub remove_diacritics: bool,
    pub normalize_alef: bool,
    pub normalize_yaa: bool,
    pub separate_punct: bool,
}

impl Default for NormRules {
    fn default() -> Self {
        Self {
            remove_tatweel: true,
            remove_diacritics: true,
            normalize_alef: true,
            normalize_yaa: true,
            separate_punct: true,
        }
    }
}

/// Harakat, tanween, shadda, sukun and the extended marks up to U+065F,
/// plus the dagger alif.
pub fn is_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{065F}' | '\u{0670}')
}

/// ASCII punctuation plus the Arabic comma, semicolon, question mark and
/// guillemets.
pub fn is_separable_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{060C}' | '\u{061B}' | '\u{061F}' | '«' | '»')
}

fn is_alef_variant(c: char) -> bool {
    matches!(c, '\u{0622}' | '\u{0623}' | '\u{0625}')
}

/// Normalizes a hypothesis or reference before ROUGE scoring.
///
/// The result never contains a doubled, leading or trailing space, which
/// makes the function idempotent.
pub fn normalize_eval(text: &str, rules: &NormRules) -> String {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if rules.remove_tatweel && c == TATWEEL {
            continue;
        }
        if rules.remove_diacritics && is_diacritic(c) {
            continue;
        }
        let c = if rules.normalize_alef && is_alef_variant(c) {
            ALEF
        } else if rules.normalize_yaa && c == ALEF_MAQSURA {
            YAA
        } else {
            c
        };
        if rules.separate_punct && is_separable_punct(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    collapse_whitespace(&spaced)
}

/// Collapses every whitespace run to one ASCII space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Splits on full stops and other terminators.
///
/// A sentence ends after a run of terminators that is followed by whitespace
/// or the end of input, so "3.5" or "..." never produce a split on their own.
/// Each returned sentence is whitespace-normalized. Text with no terminator
/// comes back as a single sentence; blank text yields no sentences.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        current.push(c);
        i += 1;
        if TERMINATORS.contains(&c) {
            while i < chars.len() && TERMINATORS.contains(&chars[i]) {
                current.push(chars[i]);
                i += 1;
            }
            if i == chars.len() || chars[i].is_whitespace() {
                let sentence = collapse_whitespace(&current);
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                current.clear();
            }
        }
    }
    let tail = collapse_whitespace(&current);
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}
