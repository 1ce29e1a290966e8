//! Length-normalised beam search and a plain greedy decoder.
//!
//! Each step expands every live hypothesis by every token and keeps the
//! `width` best by cumulative log-probability (ties: lexicographically lower
//! token sequence). Hypotheses ending in `<eos>` leave the beam. At the end,
//! finished hypotheses and, if `max_len` was reached, the surviving unfinished
//! ones compete on `score / length` with `<eos>` counted in the length.

use std::cmp::Ordering;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::model::TranslatorModel;
use super::prompt::Prompt;
use super::vocab::{BOS, EOS};
use crate::autograd::{Mat, Tape};
use crate::error::{EafError, Result};
use crate::params::{GradMode, ParamStore};

/// Source of next-token log-probabilities for a decoder prefix.
pub trait NextToken {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities of the token following `prefix` (without `<bos>`).
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    /// Includes the closing `<eos>` when `finished`.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub score: f64,
    /// `score / tokens.len()`
    pub normalized: f64,
    /// False when `max_len` ran out before `<eos>`.
    pub finished: bool,
}

fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn pick_best(pool: Vec<(Vec<usize>, f64, bool)>) -> Result<BeamResult> {
    pool.into_iter()
        .map(|(tokens, score, finished)| BeamResult {
            normalized: score / tokens.len() as f64,
            tokens,
            score,
            finished,
        })
        .min_by(|a, b| {
            b.normalized
                .total_cmp(&a.normalized)
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .ok_or(EafError::Empty("beam hypotheses"))
}

pub fn beam_search(model: &dyn NextToken, width: usize, max_len: usize) -> Result<BeamResult> {
    if width == 0 {
        return Err(EafError::InvalidArgument(
            "beam width must be at least 1".into(),
        ));
    }
    if max_len == 0 {
        return Err(EafError::InvalidArgument(
            "max_len must be at least 1".into(),
        ));
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut pool: Vec<(Vec<usize>, f64, bool)> = Vec::new();
    for _ in 0..max_len {
        let mut cands = Vec::with_capacity(live.len() * model.vocab_size());
        for (prefix, score) in &live {
            let lp = model.log_probs(prefix)?;
            for (tok, l) in lp.iter().enumerate() {
                let mut seq = prefix.clone();
                seq.push(tok);
                cands.push((seq, score + l));
            }
        }
        cands.sort_by(rank);
        cands.truncate(width);
        live.clear();
        for (seq, score) in cands {
            if seq.last() == Some(&EOS) {
                pool.push((seq, score, true));
            } else {
                live.push((seq, score));
            }
        }
        if live.is_empty() {
            break;
        }
    }
    pool.extend(live.into_iter().map(|(s, sc)| (s, sc, false)));
    pick_best(pool)
}

/// Arg-max decoding, lowest id on ties.
pub fn greedy_decode(model: &dyn NextToken, max_len: usize) -> Result<BeamResult> {
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_len {
        let lp = model.log_probs(&tokens)?;
        let mut best = 0;
        for (i, l) in lp.iter().enumerate() {
            if *l > lp[best] {
                best = i;
            }
        }
        score += lp[best];
        tokens.push(best);
        if best == EOS {
            break;
        }
    }
    let finished = tokens.last() == Some(&EOS);
    Ok(BeamResult {
        normalized: score / tokens.len() as f64,
        tokens,
        score,
        finished,
    })
}

/// Translator with a precomputed encoder memory.
pub struct EncodedSource<'a> {
    model: &'a TranslatorModel,
    store: &'a ParamStore,
    memory: Mat,
}

impl<'a> EncodedSource<'a> {
    pub fn new(
        model: &'a TranslatorModel,
        store: &'a ParamStore,
        soft: &Mat,
        prompt: &Prompt,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, GradMode::None);
        let s = tape.constant(soft.clone());
        let input = model.encoder_input(&mut tape, &b, s, prompt)?;
        let mem = model.encode(&mut tape, &b, input, None);
        Ok(Self {
            model,
            store,
            memory: tape.value(mem).clone(),
        })
    }
}

impl NextToken for EncodedSource<'_> {
    fn vocab_size(&self) -> usize {
        self.model.cfg.vocab_size
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, GradMode::None);
        let mem = tape.constant(self.memory.clone());
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let logits = self.model.decode(&mut tape, &b, mem, &dec_in, None)?;
        let last = tape
            .value(logits)
            .index_axis(Axis(0), dec_in.len() - 1)
            .to_owned();
        let m = last.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + last.mapv(|v| (v - m).exp()).sum().ln();
        Ok(last.mapv(|v| v - lse).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed table of log-probabilities keyed by prefix length.
    struct Table(Vec<Vec<f64>>);

    impl NextToken for Table {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }
        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            Ok(self.0[prefix.len().min(self.0.len() - 1)].clone())
        }
    }

    fn lp(p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x.ln()).collect()
    }

    #[test]
    fn width_one_is_greedy_here() {
        let t = Table(vec![lp(&[0.1, 0.1, 0.2, 0.6]), lp(&[0.1, 0.1, 0.7, 0.1])]);
        let b = beam_search(&t, 1, 5).unwrap();
        assert_eq!(b, greedy_decode(&t, 5).unwrap());
        assert_eq!(b.tokens, vec![3, EOS]);
        assert!(b.finished);
    }

    #[test]
    fn unfinished_is_flagged() {
        let t = Table(vec![lp(&[0.1, 0.1, 0.1, 0.7])]);
        let b = beam_search(&t, 2, 3).unwrap();
        assert!(!b.finished);
        assert_eq!(b.tokens, vec![3, 3, 3]);
    }

    #[test]
    fn ties_go_to_lower_ids() {
        let t = Table(vec![lp(&[0.1, 0.1, 0.2, 0.3, 0.3])]);
        let b = beam_search(&t, 4, 1).unwrap();
        assert_eq!(b.tokens, vec![3]);
    }

    #[test]
    fn rejects_zero_width() {
        let t = Table(vec![lp(&[0.5, 0.5, 0.0])]);
        assert!(beam_search(&t, 0, 3).is_err());
    }
}
