//! Pair-merge subword vocabulary with character coverage.
//!
//! Spaces are folded into a boundary marker (`▁`) carried by the piece that
//! follows them, so `decode` restores spacing exactly. Training starts from
//! the covered characters and repeatedly merges the most frequent adjacent
//! pair inside words. Encoding is greedy longest match.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

/// Surface strings of the specials, indexed by id.
pub const SPECIAL_SURFACES: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"];

/// Word-boundary marker standing in for a space.
pub const BOUNDARY: char = '\u{2581}';

const SPECIALS_HEADER: &str = "#specials pad=0 unk=1 bos=2 eos=3 mask=4";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("tokenizer corpus contains no characters")]
    EmptyCorpus,
    #[error("vocabulary size {requested} cannot hold {NUM_SPECIALS} specials and {covered} covered characters")]
    VocabTooSmall { requested: usize, covered: usize },
    #[error("character coverage must be in (0, 1], got {0}")]
    InvalidCoverage(f64),
    #[error("token id {id} is outside a vocabulary of {size}")]
    InvalidId { id: u32, size: usize },
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqKind {
    Source,
    Target,
}

/// Encoded text. Sources end with eos; targets are wrapped in bos/eos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub kind: SeqKind,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, kind: SeqKind) -> Self {
        Self { ids, kind }
    }

    /// Ids with the bos/eos wrapping removed.
    pub fn content(&self) -> &[u32] {
        let mut ids = &self.ids[..];
        if self.kind == SeqKind::Target && ids.first() == Some(&BOS_ID) {
            ids = &ids[1..];
        }
        if ids.last() == Some(&EOS_ID) {
            ids = &ids[..ids.len() - 1];
        }
        ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks the id range and the bos/eos wrapping for this kind.
    pub fn is_well_formed(&self, vocab_size: usize) -> bool {
        if self.ids.iter().any(|&id| id as usize >= vocab_size) {
            return false;
        }
        let ends_eos = self.ids.last() == Some(&EOS_ID);
        match self.kind {
            SeqKind::Source => ends_eos,
            SeqKind::Target => ends_eos && self.ids.len() >= 2 && self.ids[0] == BOS_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    coverage: f64,
    max_piece_chars: usize,
}

impl Vocabulary {
    fn from_pieces(pieces: Vec<String>, coverage: f64) -> Self {
        let piece_to_id = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        let max_piece_chars = pieces[NUM_SPECIALS..]
            .iter()
            .map(|p| p.chars().count())
            .max()
            .unwrap_or(1);
        Self {
            pieces,
            piece_to_id,
            coverage,
            max_piece_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Segments `text` and adds the specials required by `kind`.
    pub fn encode(&self, text: &str, kind: SeqKind) -> TokenSequence {
        let mut ids = Vec::with_capacity(text.len() / 2 + 2);
        if kind == SeqKind::Target {
            ids.push(BOS_ID);
        }
        self.encode_into(text, &mut ids);
        ids.push(EOS_ID);
        TokenSequence { ids, kind }
    }

    fn encode_into(&self, text: &str, out: &mut Vec<u32>) {
        for word in split_words(text) {
            let mut start = 0;
            while start < word.len() {
                let longest = self.max_piece_chars.min(word.len() - start);
                let mut matched = None;
                let mut candidate = String::new();
                for len in (1..=longest).rev() {
                    candidate.clear();
                    candidate.extend(&word[start..start + len]);
                    if let Some(&id) = self.piece_to_id.get(&candidate) {
                        if !Self::is_special(id) {
                            matched = Some((id, len));
                            break;
                        }
                    }
                }
                match matched {
                    Some((id, len)) => {
                        out.push(id);
                        start += len;
                    }
                    None => {
                        out.push(UNK_ID);
                        start += 1;
                    }
                }
            }
        }
    }

    /// Renders ids back to text, dropping specials when `strip_specials` is set.
    pub fn decode_ids(&self, ids: &[u32], strip_specials: bool) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(TokenizerError::InvalidId {
                id,
                size: self.len(),
            })?;
            if Self::is_special(id) {
                if !strip_specials {
                    out.push_str(piece);
                }
                continue;
            }
            out.extend(piece.chars().map(|c| if c == BOUNDARY { ' ' } else { c }));
        }
        Ok(out)
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String, TokenizerError> {
        self.decode_ids(&seq.ids, true)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(self.to_file_string().as_bytes())?;
        file.flush()?;
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        out.push_str(SPECIALS_HEADER);
        out.push('\n');
        let _ = writeln!(out, "#coverage {}", self.coverage);
        for (id, piece) in self.pieces.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", escape_piece(piece), id);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(file)
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, TokenizerError> {
        let mut lines = reader.lines();
        let format_err = |line: usize, message: &str| TokenizerError::Format {
            line,
            message: message.to_string(),
        };
        match lines.next().transpose()? {
            Some(l) if l == SPECIALS_HEADER => {}
            _ => return Err(format_err(1, "missing or unexpected #specials header")),
        }
        let coverage = match lines.next().transpose()? {
            Some(l) => l
                .strip_prefix("#coverage ")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| format_err(2, "malformed #coverage line"))?,
            None => return Err(format_err(2, "missing #coverage line")),
        };
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(format_err(2, "coverage outside (0, 1]"));
        }
        let mut pieces = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 3;
            let line = line?;
            let (piece, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| format_err(line_no, "expected <piece>\\t<id>"))?;
            let id: usize = id.parse().map_err(|_| format_err(line_no, "bad id"))?;
            if id != pieces.len() {
                return Err(format_err(line_no, "ids must be dense and ascending"));
            }
            let piece = unescape_piece(piece).ok_or_else(|| format_err(line_no, "bad escape"))?;
            if id < NUM_SPECIALS {
                if piece != SPECIAL_SURFACES[id] {
                    return Err(format_err(line_no, "special token surface mismatch"));
                }
            } else if SPECIAL_SURFACES.contains(&piece.as_str()) {
                return Err(format_err(line_no, "ordinary piece shadows a special"));
            }
            pieces.push(piece);
        }
        if pieces.len() < NUM_SPECIALS {
            return Err(format_err(pieces.len() + 3, "vocabulary is missing specials"));
        }
        let vocab = Self::from_pieces(pieces, coverage);
        if vocab.piece_to_id.len() != vocab.pieces.len() {
            return Err(format_err(0, "duplicate pieces"));
        }
        Ok(vocab)
    }
}

fn escape_piece(piece: &str) -> String {
    let mut out = String::with_capacity(piece.len());
    for c in piece.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_piece(piece: &str) -> Option<String> {
    let mut out = String::with_capacity(piece.len());
    let mut chars = piece.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(match chars.next()? {
                '\\' => '\\',
                't' => '\t',
                'n' => '\n',
                'r' => '\r',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Splits text into words; every space becomes a boundary marker that opens
/// a new word.
fn split_words(text: &str) -> Vec<Vec<char>> {
    let mut words = Vec::new();
    let mut current: Vec<char> = Vec::new();
    for c in text.chars() {
        let c = if c == ' ' { BOUNDARY } else { c };
        if c == BOUNDARY && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.push(c);
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Trains a vocabulary of at most `vocab_size` pieces.
///
/// Characters are ranked by frequency (ties by code point) and the shortest
/// prefix reaching `char_coverage` of the character mass becomes the base
/// alphabet; the boundary marker is always kept when spaces occur. Merging
/// stops early only when no adjacent pair is left to merge.
pub fn train_vocab<I, S>(corpus: I, vocab_size: usize, char_coverage: f64) -> Result<Vocabulary, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if !(char_coverage > 0.0 && char_coverage <= 1.0) {
        return Err(TokenizerError::InvalidCoverage(char_coverage));
    }
    let mut word_counts: HashMap<Vec<char>, u64> = HashMap::new();
    let mut char_counts: HashMap<char, u64> = HashMap::new();
    for line in corpus {
        for word in split_words(line.as_ref()) {
            for &c in &word {
                *char_counts.entry(c).or_default() += 1;
            }
            *word_counts.entry(word).or_default() += 1;
        }
    }
    let total: u64 = char_counts.values().sum();
    if total == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut ranked: Vec<(char, u64)> = char_counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let target_mass = char_coverage * total as f64;
    let mut covered: Vec<char> = Vec::new();
    let mut mass = 0u64;
    for &(c, count) in &ranked {
        if covered.is_empty() || (mass as f64) < target_mass {
            covered.push(c);
            mass += count;
        }
    }
    if !covered.contains(&BOUNDARY) && ranked.iter().any(|&(c, _)| c == BOUNDARY) {
        covered.push(BOUNDARY);
    }
    if vocab_size < NUM_SPECIALS + covered.len() {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            covered: covered.len(),
        });
    }

    let mut pieces: Vec<String> = SPECIAL_SURFACES.iter().map(|s| s.to_string()).collect();
    let mut piece_ids: HashMap<String, u32> = HashMap::new();
    for c in &covered {
        let s = c.to_string();
        piece_ids.insert(s.clone(), pieces.len() as u32);
        pieces.push(s);
    }

    // Words as symbol-id sequences; uncovered characters split a word since
    // they never take part in a merge.
    let mut words: Vec<(Vec<u32>, u64)> = Vec::new();
    let mut sorted_words: Vec<(Vec<char>, u64)> = word_counts.into_iter().collect();
    sorted_words.sort();
    for (word, count) in sorted_words {
        let mut run: Vec<u32> = Vec::new();
        for c in word {
            match piece_ids.get(&c.to_string()) {
                Some(&id) => run.push(id),
                None => {
                    if run.len() > 1 {
                        words.push((std::mem::take(&mut run), count));
                    }
                    run.clear();
                }
            }
        }
        if run.len() > 1 {
            words.push((run, count));
        }
    }

    let mut forbidden: std::collections::HashSet<(u32, u32)> = Default::default();
    while pieces.len() < vocab_size {
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                let key = (pair[0], pair[1]);
                if !forbidden.contains(&key) {
                    *pair_counts.entry(key).or_default() += count;
                }
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some(((left, right), _)) = best else {
            break;
        };
        let merged = format!("{}{}", pieces[left as usize], pieces[right as usize]);
        if SPECIAL_SURFACES.contains(&merged.as_str()) {
            forbidden.insert((left, right));
            continue;
        }
        let merged_id = match piece_ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                piece_ids.insert(merged.clone(), id);
                pieces.push(merged);
                id
            }
        };
        for (symbols, _) in words.iter_mut() {
            if symbols.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    out.push(merged_id);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
        }
        words.retain(|(s, _)| s.len() > 1);
    }

    Ok(Vocabulary::from_pieces(pieces, char_coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abab_vocab() -> Vocabulary {
        train_vocab(["abab", "abab"], 10, 1.0).unwrap()
    }

    #[test]
    fn merges_most_frequent_pair() {
        let v = abab_vocab();
        assert!(v.id_of("a").is_some());
        assert!(v.id_of("b").is_some());
        // "ab" occurs four times, more than any other pair
        assert_eq!(v.id_of("ab"), Some(7));
        assert!(v.len() <= 10);
        for (i, s) in SPECIAL_SURFACES.iter().enumerate() {
            assert_eq!(v.id_of(s), Some(i as u32));
        }
    }

    #[test]
    fn single_character_corpus() {
        let v = train_vocab(["x"], 6, 1.0).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.piece(5), Some("x"));
    }

    #[test]
    fn vocab_reaches_requested_size_when_pairs_remain() {
        let v = train_vocab(["the cat sat on the mat with the hat"], 30, 1.0).unwrap();
        assert_eq!(v.len(), 30);
    }

    #[test]
    fn coverage_drops_rare_character() {
        let v = train_vocab(["aaab"], 6, 0.5).unwrap();
        assert_eq!(v.id_of("b"), None);
        let seq = v.encode("aaab", SeqKind::Source);
        assert_eq!(*seq.ids.last().unwrap(), EOS_ID);
        assert_eq!(seq.ids[seq.ids.len() - 2], UNK_ID);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_vocab(Vec::<String>::new(), 10, 1.0),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(train_vocab([""], 10, 1.0), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(
            train_vocab(["abc"], 3, 1.0),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
        assert!(matches!(
            train_vocab(["abc"], 10, 0.0),
            Err(TokenizerError::InvalidCoverage(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let v = abab_vocab();
        assert_eq!(v.encode("", SeqKind::Source).ids, vec![EOS_ID]);
        assert_eq!(v.encode("", SeqKind::Target).ids, vec![BOS_ID, EOS_ID]);
        // at size 10 the second merge produces "abab" itself
        assert_eq!(v.encode("abab", SeqKind::Source).ids, vec![v.id_of("abab").unwrap(), EOS_ID]);
        let v = train_vocab(["abab", "abab"], 8, 1.0).unwrap();
        let ab = v.id_of("ab").unwrap();
        assert_eq!(v.encode("abab", SeqKind::Source).ids, vec![ab, ab, EOS_ID]);
        let seq = v.encode("abzab", SeqKind::Source);
        assert_eq!(seq.ids, vec![ab, UNK_ID, ab, EOS_ID]);
        assert!(seq.is_well_formed(v.len()));
        assert!(v.encode("ab", SeqKind::Target).is_well_formed(v.len()));
    }

    #[test]
    fn decode_examples() {
        let v = abab_vocab();
        assert_eq!(v.decode(&v.encode("abab", SeqKind::Target)).unwrap(), "abab");
        assert_eq!(v.decode_ids(&[MASK_ID], false).unwrap(), "<mask>");
        assert_eq!(v.decode_ids(&[MASK_ID], true).unwrap(), "");
        assert_eq!(v.decode_ids(&[BOS_ID, PAD_ID, EOS_ID], true).unwrap(), "");
        assert!(matches!(
            v.decode_ids(&[99], true),
            Err(TokenizerError::InvalidId { id: 99, .. })
        ));
    }

    #[test]
    fn spaces_round_trip() {
        let v = train_vocab(["ab ba  ab", " a b "], 20, 1.0).unwrap();
        for text in ["ab ba", " a", "b ", "a  b", "abba ab ba"] {
            let seq = v.encode(text, SeqKind::Source);
            assert_eq!(v.decode(&seq).unwrap(), text);
        }
    }

    #[test]
    fn merged_piece_never_shadows_special() {
        let v = train_vocab(["<s><s><s>", "<s>"], 40, 1.0).unwrap();
        for piece in &v.pieces()[NUM_SPECIALS..] {
            assert!(!SPECIAL_SURFACES.contains(&piece.as_str()));
        }
    }

    #[test]
    fn file_round_trip_with_escapes() {
        let v = train_vocab(["a\tb\\c a\tb\\c", "x y"], 30, 1.0).unwrap();
        let text = v.to_file_string();
        let loaded = Vocabulary::read_from(text.as_bytes()).unwrap();
        assert_eq!(loaded, v);
        assert_eq!(loaded.to_file_string(), text);
    }

    #[test]
    fn malformed_file_rejected() {
        assert!(Vocabulary::read_from("nope\n".as_bytes()).is_err());
        let bad_ids = "#specials pad=0 unk=1 bos=2 eos=3 mask=4\n#coverage 1\n<pad>\t0\n<unk>\t2\n";
        assert!(matches!(
            Vocabulary::read_from(bad_ids.as_bytes()),
            Err(TokenizerError::Format { line: 4, .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["مرحبا بالعالم", "العالم جميل جدا", "بالعالم مرحبا"];
        let a = train_vocab(corpus, 40, 0.9999).unwrap();
        let b = train_vocab(corpus, 40, 0.9999).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
    }

    proptest! {
        #[test]
        fn round_trip_covered_text(text in "[abc ]{0,30}") {
            let v = train_vocab(["abc cab bca", "aa bb cc"], 25, 1.0).unwrap();
            let seq = v.encode(&text, SeqKind::Source);
            prop_assert!(seq.is_well_formed(v.len()));
            prop_assert_eq!(v.decode(&seq).unwrap(), text.clone());
            prop_assert_eq!(v.encode(&text, SeqKind::Source), seq);
        }

        #[test]
        fn serialization_is_bit_exact(lines in proptest::collection::vec("[a-d\u{0627}-\u{062A} ]{1,12}", 1..6), size in 10usize..40) {
            let v = match train_vocab(&lines, size, 1.0) {
                Ok(v) => v,
                Err(TokenizerError::VocabTooSmall { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let first = v.to_file_string();
            let second = Vocabulary::read_from(first.as_bytes()).unwrap().to_file_string();
            prop_assert_eq!(first, second);
        }
    }
}
