use eaf_core::autograd::{Mat, Tape};
use eaf_core::params::{randn, GradMode, ParamStore};
use eaf_core::translator::beam::{EncodedSource, NextToken};
use eaf_core::translator::vocab::EOS;
use eaf_core::translator::{
    beam_search, build_prompt, greedy_decode, LoraConfig, Prompt, PromptMode, PromptTemplate,
    TranslatorConfig, TranslatorModel, Vocabulary,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    store: ParamStore,
    model: TranslatorModel,
    prompt: Prompt,
    soft: Mat,
}

fn fixture(seed: u64, randomize_adapters: bool) -> Fixture {
    let vocab = Vocabulary::from_texts(["x y"]);
    let cfg = TranslatorConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        d_ff: 16,
        lora: LoraConfig {
            rank: 2,
            alpha: 4.0,
            dropout: 0.1,
        },
        ln_eps: 1e-5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = TranslatorModel::new(&mut store, &mut rng, "translator", cfg).unwrap();
    if randomize_adapters {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.name.ends_with(".lora_b"))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let shape = store.get(id).dim();
            *store.get_mut(id) = randn(&mut rng, shape, 0.5);
        }
    }
    let template = PromptTemplate {
        instruction: "[SIGN_FEATURES] x".into(),
        exemplars: vec![("x".into(), "y".into())],
    };
    let prompt = build_prompt(&template, &vocab, PromptMode::Inference).unwrap();
    let soft = randn(&mut rng, (3, 8), 1.0);
    Fixture {
        store,
        model,
        prompt,
        soft,
    }
}

fn teacher_forced(f: &Fixture, store: &ParamStore, targets: &[usize]) -> Mat {
    let mut t = Tape::new();
    let b = store.bind(&mut t, GradMode::None);
    let s = t.constant(f.soft.clone());
    let l = f
        .model
        .teacher_forced(&mut t, &b, s, &f.prompt, targets, None)
        .unwrap();
    t.value(l).clone()
}

/// Best of `[<eos>]` and every two-token continuation, by length-normalised score.
fn exhaustive_two(src: &dyn NextToken) -> (Vec<usize>, f64) {
    let first = src.log_probs(&[]).unwrap();
    let mut best = (vec![EOS], first[EOS]);
    for a in (0..first.len()).filter(|&a| a != EOS) {
        let second = src.log_probs(&[a]).unwrap();
        for (b, lp) in second.iter().enumerate() {
            let norm = (first[a] + lp) / 2.0;
            if norm > best.1 {
                best = (vec![a, b], norm);
            }
        }
    }
    best
}

#[test]
fn fresh_adapters_start_at_zero_and_base_is_frozen() {
    for seed in 0..5 {
        let f = fixture(seed, false);
        for (_, p) in f.store.iter() {
            if p.name.ends_with(".lora_b") {
                assert!(p.value.iter().all(|v| *v == 0.0), "{}", p.name);
            }
            assert_eq!(
                p.trainable,
                TranslatorModel::is_adapter(&p.name),
                "{}",
                p.name
            );
        }
    }
}

#[test]
fn width_one_equals_greedy() {
    for seed in 0..50 {
        let f = fixture(seed, true);
        let src = EncodedSource::new(&f.model, &f.store, &f.soft, &f.prompt).unwrap();
        let g = greedy_decode(&src, 5).unwrap();
        let b = beam_search(&src, 1, 5).unwrap();
        assert_eq!(b.tokens, g.tokens, "seed {seed}");
        assert_eq!(b.finished, g.finished);
        assert!((b.score - g.score).abs() < 1e-12);
    }
}

#[test]
fn full_width_two_steps_is_exhaustive() {
    for seed in 0..20 {
        let f = fixture(seed, true);
        let src = EncodedSource::new(&f.model, &f.store, &f.soft, &f.prompt).unwrap();
        let b = beam_search(&src, src.vocab_size(), 2).unwrap();
        let (tokens, norm) = exhaustive_two(&src);
        assert_eq!(b.tokens, tokens, "seed {seed}");
        assert!((b.normalized - norm).abs() < 1e-12);
    }
}

#[test]
fn wider_beams_score_at_least_greedy() {
    let mut strictly_better = 0;
    for seed in 0..50 {
        let f = fixture(seed, true);
        let src = EncodedSource::new(&f.model, &f.store, &f.soft, &f.prompt).unwrap();
        let g = greedy_decode(&src, 6).unwrap();
        let b = beam_search(&src, 5, 6).unwrap();
        assert!(
            b.normalized >= g.normalized - 1e-12,
            "seed {seed}: {} < {}",
            b.normalized,
            g.normalized
        );
        if b.normalized > g.normalized + 1e-12 {
            strictly_better += 1;
        }
    }
    assert!(strictly_better > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decoder_is_causal(seed in 0u64..500, targets in proptest::collection::vec(5usize..7, 4), k in 0usize..4, new in 5usize..7) {
        let f = fixture(seed, true);
        let mut a = targets.clone();
        a.push(EOS);
        let mut b = a.clone();
        b[k] = if new == a[k] { 11 - new } else { new };
        let la = teacher_forced(&f, &f.store, &a);
        let lb = teacher_forced(&f, &f.store, &b);
        // row i sees <bos> and targets[..i]
        for i in 0..=k {
            prop_assert_eq!(la.row(i), lb.row(i));
        }
        prop_assert!(la.row(k + 1) != lb.row(k + 1));
    }

    #[test]
    fn zero_adapters_ignore_their_down_projection(seed in 0u64..500, scale in 0.1f64..5.0) {
        let f = fixture(seed, false);
        let targets = [5, 6, EOS];
        let base = teacher_forced(&f, &f.store, &targets);
        let mut store = f.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with(".lora_a")).map(|(id, _)| id).collect();
        for id in ids {
            let shape = store.get(id).dim();
            *store.get_mut(id) = randn(&mut rng, shape, scale);
        }
        prop_assert_eq!(teacher_forced(&f, &store, &targets), base);
    }
}
