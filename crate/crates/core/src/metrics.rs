//! Corpus BLEU-1..4, ROUGE-L and text normalisation.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{EafError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Lowercase, drop Unicode punctuation, split on whitespace.
    German,
    /// One token per non-space character, punctuation kept.
    Chinese,
}

impl std::str::FromStr for TextMode {
    type Err = EafError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "german" => Ok(Self::German),
            "chinese" => Ok(Self::Chinese),
            other => Err(EafError::InvalidArgument(format!(
                "unknown text mode {other:?}"
            ))),
        }
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").unwrap())
}

pub fn normalize_text(text: &str, mode: TextMode) -> Vec<String> {
    match mode {
        TextMode::German => punctuation()
            .replace_all(&text.to_lowercase(), "")
            .split_whitespace()
            .map(str::to_string)
            .collect(),
        TextMode::Chinese => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl ScoredPair {
    pub fn new(hypothesis: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(EafError::Empty("references"));
        }
        Ok(Self {
            hypothesis,
            references,
        })
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScores {
    /// `bleu[n-1]` is BLEU-n, the geometric mean of `p_1..p_n` times BP.
    pub bleu: Vec<f64>,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Corpus BLEU with reference-clipped counts and the closest-reference
/// brevity penalty (shorter reference on ties). No smoothing.
pub fn bleu_n(corpus: &[ScoredPair], max_n: usize) -> Result<BleuScores> {
    if corpus.is_empty() {
        return Err(EafError::Empty("corpus"));
    }
    if max_n == 0 {
        return Err(EafError::InvalidArgument("max_n must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for pair in corpus {
        if pair.references.is_empty() {
            return Err(EafError::Empty("references"));
        }
        let h = &pair.hypothesis;
        c += h.len();
        r += pair
            .references
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap();
        for n in 1..=max_n {
            let hyp = ngram_counts(h, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for rf in &pair.references {
                for (g, k) in ngram_counts(rf, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in hyp {
                total[n - 1] += k;
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            if total[i] == 0 {
                0.0
            } else {
                matched[i] as f64 / total[i] as f64
            }
        })
        .collect();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let bleu = (1..=max_n)
        .map(|n| {
            let p = &precisions[..n];
            if p.contains(&0.0) {
                0.0
            } else {
                bp * (p.iter().map(|x| x.ln()).sum::<f64>() / n as f64).exp()
            }
        })
        .collect();
    Ok(BleuScores {
        bleu,
        precisions,
        brevity_penalty: bp,
        hyp_len: c,
        ref_len: r,
    })
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// LCS-based precision, recall and F1; with several references the one
/// with the highest F wins.
pub fn rouge_l(pair: &ScoredPair) -> Result<RougeL> {
    if pair.references.is_empty() {
        return Err(EafError::Empty("references"));
    }
    let mut best = RougeL {
        precision: 0.0,
        recall: 0.0,
        f: 0.0,
    };
    if pair.hypothesis.is_empty() {
        return Ok(best);
    }
    for rf in &pair.references {
        if rf.is_empty() {
            return Err(EafError::Empty("reference"));
        }
        let l = lcs_length(&pair.hypothesis, rf) as f64;
        let p = l / pair.hypothesis.len() as f64;
        let r = l / rf.len() as f64;
        let f = if l == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if f > best.f {
            best = RougeL {
                precision: p,
                recall: r,
                f,
            };
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l_p: f64,
    pub rouge_l_r: f64,
    pub rouge_l_f: f64,
    pub corpus_size: usize,
}

/// Corpus BLEU-1..4 and sentence-averaged ROUGE-L.
pub fn score_corpus(corpus: &[ScoredPair]) -> Result<MetricReport> {
    let b = bleu_n(corpus, 4)?;
    let mut p = 0.0;
    let mut r = 0.0;
    let mut f = 0.0;
    for pair in corpus {
        let s = rouge_l(pair)?;
        p += s.precision;
        r += s.recall;
        f += s.f;
    }
    let n = corpus.len() as f64;
    Ok(MetricReport {
        bleu1: b.bleu[0],
        bleu2: b.bleu[1],
        bleu3: b.bleu[2],
        bleu4: b.bleu[3],
        rouge_l_p: p / n,
        rouge_l_r: r / n,
        rouge_l_f: f / n,
        corpus_size: corpus.len(),
    })
}

impl MetricReport {
    /// Scores ×100 under `B-1 B-2 B-3 B-4 R-L` headings.
    pub fn render_table(&self) -> String {
        format!(
            "{:>6} {:>6} {:>6} {:>6} {:>6}\n{:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}\n",
            "B-1",
            "B-2",
            "B-3",
            "B-4",
            "R-L",
            100.0 * self.bleu1,
            100.0 * self.bleu2,
            100.0 * self.bleu3,
            100.0 * self.bleu4,
            100.0 * self.rouge_l_f
        )
    }
}
