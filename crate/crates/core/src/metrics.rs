//! ROUGE-1/2/L, novel n-gram percentages and corpus statistics.
//!
//! All metrics work on whitespace tokens. Per-example F1 values are averaged
//! over examples; rendered figures are percentages with one decimal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnorm::{normalize_eval, NormRules};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("summary has {len} tokens, fewer than n = {n}")]
    SummaryTooShort { n: usize, len: usize },
    #[error("no examples")]
    EmptyDataset,
    #[error("{hypotheses} hypotheses for {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(overlap, cand);
        let recall = ratio(overlap, reference);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeSet {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n(candidate: &[&str], reference: &[&str], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refc.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &[&str], reference: &[&str]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_all(candidate: &[&str], reference: &[&str]) -> RougeSet {
    RougeSet {
        r1: rouge_n(candidate, reference, 1),
        r2: rouge_n(candidate, reference, 2),
        rl: rouge_l(candidate, reference),
    }
}

/// Percentage of distinct summary n-grams that never occur in the document.
pub fn novel_ngram_pct(document: &[&str], summary: &[&str], n: usize) -> Result<f64, MetricsError> {
    if n == 0 || summary.len() < n {
        return Err(MetricsError::SummaryTooShort { n, len: summary.len() });
    }
    let doc: HashSet<&[&str]> = document.windows(n).collect();
    let types: HashSet<&[&str]> = summary.windows(n).collect();
    let novel = types.iter().filter(|g| !doc.contains(*g)).count();
    Ok(100.0 * novel as f64 / types.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractivenessStats {
    pub examples: usize,
    pub avg_doc_tokens: f64,
    pub avg_summary_tokens: f64,
    /// Mean per-example novel percentage for n = 1, 2, 3, over examples
    /// whose summary has at least n tokens. Missing when none does.
    pub novel_pct: BTreeMap<usize, f64>,
}

/// Whitespace-token statistics over (document, summary) pairs.
pub fn corpus_stats<I, D, S>(pairs: I) -> Result<AbstractivenessStats, MetricsError>
where
    I: IntoIterator<Item = (D, S)>,
    D: AsRef<str>,
    S: AsRef<str>,
{
    let mut examples = 0usize;
    let mut doc_tokens = 0usize;
    let mut sum_tokens = 0usize;
    let mut novel: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (doc, summary) in pairs {
        let d: Vec<&str> = doc.as_ref().split_whitespace().collect();
        let s: Vec<&str> = summary.as_ref().split_whitespace().collect();
        examples += 1;
        doc_tokens += d.len();
        sum_tokens += s.len();
        for n in 1..=3 {
            if let Ok(p) = novel_ngram_pct(&d, &s, n) {
                let e = novel.entry(n).or_insert((0.0, 0));
                e.0 += p;
                e.1 += 1;
            }
        }
    }
    if examples == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    Ok(AbstractivenessStats {
        examples,
        avg_doc_tokens: doc_tokens as f64 / examples as f64,
        avg_summary_tokens: sum_tokens as f64 / examples as f64,
        novel_pct: novel.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect(),
    })
}

/// Per-example scores and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub per_example: Vec<RougeSet>,
    pub mean: RougeSet,
}

impl RunEvaluation {
    pub fn f1(&self) -> F1Row {
        F1Row {
            r1: self.mean.r1.f1,
            r2: self.mean.r2.f1,
            rl: self.mean.rl.f1,
        }
    }
}

fn mean_score(scores: impl Iterator<Item = RougeScore>, n: usize) -> RougeScore {
    let mut acc = RougeScore::default();
    for s in scores {
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    let k = n.max(1) as f64;
    RougeScore {
        precision: acc.precision / k,
        recall: acc.recall / k,
        f1: acc.f1 / k,
    }
}

/// Normalizes both sides, splits on whitespace and scores each pair.
pub fn evaluate_run<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    rules: &NormRules,
) -> Result<RunEvaluation, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let per_example: Vec<RougeSet> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| {
            let h = normalize_eval(h.as_ref(), rules);
            let r = normalize_eval(r.as_ref(), rules);
            let ht: Vec<&str> = h.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            rouge_all(&ht, &rt)
        })
        .collect();
    let n = per_example.len();
    let mean = RougeSet {
        r1: mean_score(per_example.iter().map(|s| s.r1), n),
        r2: mean_score(per_example.iter().map(|s| s.r2), n),
        rl: mean_score(per_example.iter().map(|s| s.rl), n),
    };
    Ok(RunEvaluation { per_example, mean })
}

/// Mean F1 triple of one run, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Row {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

/// Arithmetic mean over runs.
pub fn macro_average(rows: &[F1Row]) -> Option<F1Row> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(F1Row {
        r1: rows.iter().map(|r| r.r1).sum::<f64>() / n,
        r2: rows.iter().map(|r| r.r2).sum::<f64>() / n,
        rl: rows.iter().map(|r| r.rl).sum::<f64>() / n,
    })
}

/// A fraction as a one-decimal percentage.
pub fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// `dataset,model,R1,R2,RL` with one line per run.
pub fn render_rouge_csv(rows: &[(String, String, F1Row)]) -> String {
    let mut out = String::from("dataset,model,R1,R2,RL\n");
    for (dataset, model, f) in rows {
        let _ = writeln!(out, "{dataset},{model},{},{},{}", pct(f.r1), pct(f.r2), pct(f.rl));
    }
    out
}

const STATS_ROWS: [(&str, &str); 5] = [
    ("Average #tokens", "document"),
    ("", "summary"),
    ("%novel n-grams in summary", "unigrams"),
    ("", "bigrams"),
    ("", "trigrams"),
];

fn stats_values(s: &AbstractivenessStats) -> [Option<f64>; 5] {
    [
        Some(s.avg_doc_tokens),
        Some(s.avg_summary_tokens),
        s.novel_pct.get(&1).copied(),
        s.novel_pct.get(&2).copied(),
        s.novel_pct.get(&3).copied(),
    ]
}

/// Dataset statistics laid out with datasets as columns: average document
/// and summary lengths, then novel uni/bi/trigram percentages.
pub fn render_stats_table(columns: &[(String, AbstractivenessStats)]) -> String {
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new(), String::new()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    cells.push(header);
    let values: Vec<[Option<f64>; 5]> = columns.iter().map(|(_, s)| stats_values(s)).collect();
    for (i, (group, row)) in STATS_ROWS.iter().enumerate() {
        let mut line = vec![group.to_string(), row.to_string()];
        line.extend(values.iter().map(|v| v[i].map_or("-".into(), |x| format!("{x:.1}"))));
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    }
    out
}

/// The same table as CSV: `group,row,<dataset>...`.
pub fn render_stats_csv(columns: &[(String, AbstractivenessStats)]) -> String {
    let mut out = String::from("group,row");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let values: Vec<[Option<f64>; 5]> = columns.iter().map(|(_, s)| stats_values(s)).collect();
    let groups = ["avg_tokens", "avg_tokens", "novel_pct", "novel_pct", "novel_pct"];
    for (i, (_, row)) in STATS_ROWS.iter().enumerate() {
        out.push_str(groups[i]);
        out.push(',');
        out.push_str(row);
        for v in &values {
            out.push(',');
            out.push_str(&v[i].map_or(String::new(), |x| format!("{x:.1}")));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn close(s: RougeScore, p: f64, r: f64, f: f64) {
        assert!((s.precision - p).abs() < 1e-12, "{s:?}");
        assert!((s.recall - r).abs() < 1e-12, "{s:?}");
        assert!((s.f1 - f).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn rouge_n_hand_examples() {
        let c = toks("the cat sat");
        let r = toks("the cat ate");
        close(rouge_n(&c, &r, 1), 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        close(rouge_n(&c, &r, 2), 0.5, 0.5, 0.5);
        close(rouge_n(&toks("a a a"), &toks("a"), 1), 1.0 / 3.0, 1.0, 0.5);
        close(rouge_n(&c, &c, 2), 1.0, 1.0, 1.0);
        close(rouge_n(&toks("a"), &toks("a"), 2), 0.0, 0.0, 0.0);
    }

    #[test]
    fn rouge_l_hand_examples() {
        close(rouge_l(&toks("a c b"), &toks("a b c")), 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        close(rouge_l(&toks("x y"), &toks("a b")), 0.0, 0.0, 0.0);
        close(rouge_l(&[], &toks("a b")), 0.0, 0.0, 0.0);
    }

    #[test]
    fn novel_ngram_hand_examples() {
        let d = toks("a b c d");
        let s = toks("a b x");
        assert!((novel_ngram_pct(&d, &s, 1).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(novel_ngram_pct(&d, &s, 2).unwrap(), 50.0);
        assert_eq!(novel_ngram_pct(&d, &toks("b c d"), 3).unwrap(), 0.0);
        assert_eq!(novel_ngram_pct(&d, &toks("p q"), 1).unwrap(), 100.0);
        assert_eq!(
            novel_ngram_pct(&d, &toks("a b"), 3),
            Err(MetricsError::SummaryTooShort { n: 3, len: 2 })
        );
    }

    #[test]
    fn corpus_stats_means() {
        let pairs = vec![("a b c d e f g h i j", "a z"), ("a b c d e f g h i j k l m n o p q r s t", "q r")];
        let s = corpus_stats(pairs.clone()).unwrap();
        assert_eq!(s.avg_doc_tokens, 15.0);
        assert_eq!(s.avg_summary_tokens, 2.0);
        assert_eq!(s.novel_pct[&1], 25.0);
        assert_eq!(s.novel_pct[&2], 50.0);
        assert!(!s.novel_pct.contains_key(&3));
        let single = corpus_stats(pairs[..1].to_vec()).unwrap();
        assert_eq!(single.avg_doc_tokens, 10.0);
        assert_eq!(single.novel_pct[&1], 50.0);
        let none: Vec<(&str, &str)> = Vec::new();
        assert_eq!(corpus_stats(none), Err(MetricsError::EmptyDataset));
    }

    #[test]
    fn evaluation_normalizes_before_scoring() {
        let rules = NormRules::default();
        let hyp = ["ذهـــب الوَلَدُ إلى المدرسة", ""];
        let refs = ["ذهب الولد الى المدرسة", "شيء ما"];
        let run = evaluate_run(&hyp, &refs, &rules).unwrap();
        let first = run.per_example[0];
        assert_eq!((first.r1.f1, first.r2.f1, first.rl.f1), (1.0, 1.0, 1.0));
        assert_eq!(run.per_example[1], RougeSet::default());
        assert_eq!(run.mean.r1.f1, 0.5);
        assert!(matches!(
            evaluate_run(&hyp[..1], &refs, &rules),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn macro_average_and_rendering() {
        let rows = [
            F1Row { r1: 0.400, r2: 0.2, rl: 0.3 },
            F1Row { r1: 0.448, r2: 0.2, rl: 0.3 },
        ];
        let m = macro_average(&rows).unwrap();
        assert_eq!(pct(m.r1), "42.4");
        let csv = render_rouge_csv(&[("mix".into(), "tiny".into(), m)]);
        assert_eq!(csv, "dataset,model,R1,R2,RL\nmix,tiny,42.4,20.0,30.0\n");
        assert!(macro_average(&[]).is_none());
    }

    #[test]
    fn stats_table_layout() {
        let s = corpus_stats(vec![("a b c d", "a b x")]).unwrap();
        let table = render_stats_table(&[("toy".into(), s.clone())]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[1].contains("Average #tokens") && lines[1].contains("document") && lines[1].contains("4.0"));
        assert!(lines[2].contains("summary") && lines[2].contains("3.0"));
        assert!(lines[3].contains("unigrams") && lines[3].contains("33.3"));
        assert!(lines[4].contains("bigrams") && lines[4].contains("50.0"));
        assert!(lines[5].contains("trigrams") && lines[5].contains("100.0"));
        let csv = render_stats_csv(&[("toy".into(), s)]);
        assert_eq!(
            csv,
            "group,row,toy\navg_tokens,document,4.0\navg_tokens,summary,3.0\nnovel_pct,unigrams,33.3\nnovel_pct,bigrams,50.0\nnovel_pct,trigrams,100.0\n"
        );
    }

    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        // longest subsequence of `a` (by enumerating index subsets) that is
        // also a subsequence of `b`
        let is_subseq = |s: &[u8], t: &[u8]| {
            let mut it = t.iter();
            s.iter().all(|x| it.any(|y| y == x))
        };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            if s.len() > best && is_subseq(&s, b) {
                best = s.len();
            }
        }
        best
    }

    proptest! {
        #[test]
        fn lcs_matches_enumeration(a in prop::collection::vec(0u8..3, 0..8), b in prop::collection::vec(0u8..3, 0..8)) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn r1_symmetric_and_bag_based(words in prop::collection::vec(0u8..5, 1..10), seed in any::<u64>()) {
            let a: Vec<String> = words.iter().map(|w| w.to_string()).collect();
            let mut b = a.clone();
            let mut r = crate::rng::stream(seed, 0);
            rand::seq::SliceRandom::shuffle(&mut b[..], &mut r);
            b[0] = "9".into();
            let av: Vec<&str> = a.iter().map(String::as_str).collect();
            let bv: Vec<&str> = b.iter().map(String::as_str).collect();
            let ab = rouge_n(&av, &bv, 1);
            let ba = rouge_n(&bv, &av, 1);
            prop_assert_eq!(ab.f1, ba.f1);
            prop_assert_eq!(ab.precision, ba.recall);
            let mut shuffled = av.clone();
            shuffled.reverse();
            prop_assert_eq!(rouge_n(&shuffled, &bv, 1), ab);
        }

        #[test]
        fn novelty_monotone_in_document(
            doc in prop::collection::vec(0u8..6, 0..12),
            extra in prop::collection::vec(0u8..6, 0..6),
            summary in prop::collection::vec(0u8..6, 3..8),
        ) {
            let s = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
            let (d, e, m) = (s(&doc), s(&extra), s(&summary));
            let dv: Vec<&str> = d.iter().map(String::as_str).collect();
            let mut longer = dv.clone();
            longer.extend(e.iter().map(String::as_str));
            let mv: Vec<&str> = m.iter().map(String::as_str).collect();
            for n in 1..=3 {
                prop_assert!(novel_ngram_pct(&longer, &mv, n).unwrap() <= novel_ngram_pct(&dv, &mv, n).unwrap());
            }
        }
    }
}
