mod common;

use std::collections::HashMap;

use eaf_core::metrics::{
    bleu_n, lcs_length, normalize_text, rouge_l, score_corpus, ScoredPair, TextMode,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence(min: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(0u8..5, min..=max)
        .prop_map(|v| v.into_iter().map(|i| format!("w{i}")).collect())
}

fn pair() -> impl Strategy<Value = (Vec<String>, Vec<Vec<String>>)> {
    (
        sentence(0, 8),
        proptest::collection::vec(sentence(1, 8), 1..=3),
    )
}

fn scored(corpus: &[(Vec<String>, Vec<Vec<String>>)]) -> Vec<ScoredPair> {
    corpus
        .iter()
        .map(|(h, r)| ScoredPair::new(h.clone(), r.clone()).unwrap())
        .collect()
}

fn relabel(s: &[String], map: &HashMap<String, String>) -> Vec<String> {
    s.iter().map(|t| map[t].clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn agrees_with_brute_force(corpus in proptest::collection::vec(pair(), 1..4)) {
        let got = bleu_n(&scored(&corpus), 4).unwrap();
        for (a, b) in got.bleu.iter().zip(common::bleu(&corpus, 4)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (h, r) in &corpus {
            prop_assert_eq!(lcs_length(h, &r[0]), common::lcs_enumerate(h, &r[0]));
            let g = rouge_l(&ScoredPair::new(h.clone(), r.clone()).unwrap()).unwrap();
            let (p, rc, f) = common::rouge_l(h, r);
            prop_assert!((g.precision - p).abs() < 1e-12 && (g.recall - rc).abs() < 1e-12 && (g.f - f).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_bounded(corpus in proptest::collection::vec(pair(), 1..4)) {
        let r = score_corpus(&scored(&corpus)).unwrap();
        for v in [r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l_p, r.rouge_l_r, r.rouge_l_f] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn token_names_do_not_matter(corpus in proptest::collection::vec(pair(), 1..4), shift in 1u8..50) {
        let map: HashMap<String, String> = (0..5).map(|i| (format!("w{i}"), format!("t{}", (i + shift) % 97))).collect();
        let renamed: Vec<_> = corpus.iter().map(|(h, r)| (relabel(h, &map), r.iter().map(|x| relabel(x, &map)).collect())).collect();
        prop_assert_eq!(score_corpus(&scored(&corpus)).unwrap(), score_corpus(&scored(&renamed)).unwrap());
    }

    #[test]
    fn growing_a_correct_prefix_never_hurts(reference in sentence(2, 10), cut in 1usize..10) {
        let cut = cut.min(reference.len() - 1);
        let short = [ScoredPair::new(reference[..cut].to_vec(), vec![reference.clone()]).unwrap()];
        let long = [ScoredPair::new(reference[..cut + 1].to_vec(), vec![reference.clone()]).unwrap()];
        let (a, b) = (bleu_n(&short, 4).unwrap(), bleu_n(&long, 4).unwrap());
        for n in 0..4 {
            prop_assert!(b.bleu[n] >= a.bleu[n]);
        }
        prop_assert!(rouge_l(&long[0]).unwrap().f >= rouge_l(&short[0]).unwrap().f);
    }

    #[test]
    fn german_normalisation_is_idempotent(s in "[A-Za-zÄÖÜäöüß ,.!?„“-]{0,30}") {
        let once = normalize_text(&s, TextMode::German);
        prop_assert_eq!(normalize_text(&once.join(" "), TextMode::German), once);
    }
}

#[test]
fn identity_corpora_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let s = common::random_sentence(&mut rng, 4, 9, 6);
        let r = score_corpus(&[ScoredPair::new(s.clone(), vec![s]).unwrap()]).unwrap();
        assert_eq!((r.bleu1, r.bleu4, r.rouge_l_f), (1.0, 1.0, 1.0));
    }
}
