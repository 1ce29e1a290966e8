//! Optimisation loop over the trainable (adapter, fusion, projection and
//! temperature) parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{EafError, Result};
use crate::features::synth::sample_seed;
use crate::losses::{LossReport, SmoothingConfig};
use crate::optim::{clip_grad_norm, grad_norm, AdamW, AdamWConfig, WarmupCosine};
use crate::params::GradMode;
use crate::pipeline::{Sample, SignTranslator};
use crate::translator::{build_prompt, Prompt, PromptMode, PromptTemplate, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub adamw: AdamWConfig,
    pub clip_norm: Option<f64>,
    /// Weight of the alignment term.
    pub lambda: f64,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            peak_lr: 6e-4,
            warmup_fraction: 0.1,
            adamw: AdamWConfig::default(),
            clip_norm: Some(1.0),
            lambda: 1.0,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    pub schedule: WarmupCosine,
    step: usize,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &SignTranslator) -> Self {
        let schedule = WarmupCosine {
            peak: cfg.peak_lr,
            total_steps: cfg.steps,
            warmup_fraction: cfg.warmup_fraction,
        };
        Self {
            opt: AdamW::new(cfg.adamw.clone(), model.store.len()),
            schedule,
            step: 0,
            dropout_rng: ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 0xd509)),
            cfg,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    fn smoothing(&self, model: &SignTranslator) -> SmoothingConfig {
        SmoothingConfig {
            epsilon: self.cfg.label_smoothing,
            vocab_size: model.cfg.translator.vocab_size,
            ignore_index: None,
        }
    }

    /// One optimiser update; on a non-finite loss nothing changes and the
    /// step counter does not advance.
    pub fn train_step(
        &mut self,
        model: &mut SignTranslator,
        batch: &[&Sample],
        prompt: &Prompt,
    ) -> Result<LossReport> {
        let lr = self.schedule.lr(self.step);
        let smoothing = self.smoothing(model);
        let (ce, align, total, mut grads) = {
            let mut tape = Tape::new();
            let b = model.store.bind(&mut tape, GradMode::Trainable);
            let l = model.batch_losses(
                &mut tape,
                &b,
                batch,
                prompt,
                &smoothing,
                self.cfg.lambda,
                Some(&mut self.dropout_rng),
            )?;
            let total = tape.scalar_value(l.total);
            if !total.is_finite() {
                return Err(EafError::NonFiniteLoss {
                    step: self.step,
                    value: total,
                });
            }
            let g = tape.backward(l.total);
            (
                tape.scalar_value(l.ce),
                tape.scalar_value(l.align),
                total,
                b.grads(&g),
            )
        };
        let norm = match self.cfg.clip_norm {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => grad_norm(&grads),
        };
        self.opt.step(&mut model.store, &grads, lr);
        let report = LossReport {
            step: self.step,
            total,
            ce,
            align,
            lambda: self.cfg.lambda,
            align_used: self.cfg.lambda != 0.0,
            tau: model.tau(),
            lr,
            grad_norm: norm,
        };
        self.step += 1;
        Ok(report)
    }
}

/// Trains for `cfg.steps` updates over reshuffled mini-batches, rebuilding
/// the prompt with a fresh exemplar order for every batch.
pub fn fit(
    model: &mut SignTranslator,
    samples: &[Sample],
    template: &PromptTemplate,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Vec<LossReport>> {
    if samples.is_empty() {
        return Err(EafError::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(EafError::Config("batch size must be positive".into()));
    }
    model.translator.vocab_matches(vocab)?;
    let mut trainer = Trainer::new(cfg.clone(), model);
    let mut order_rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 0x5eed));
    let mut order: Vec<usize> = Vec::new();
    let mut reports = Vec::with_capacity(cfg.steps);
    while trainer.step() < cfg.steps {
        if order.len() < cfg.batch_size.min(samples.len()) {
            let mut epoch: Vec<usize> = (0..samples.len()).collect();
            epoch.shuffle(&mut order_rng);
            order.extend(epoch);
        }
        let take = cfg.batch_size.min(samples.len());
        let batch: Vec<&Sample> = order.drain(..take).map(|i| &samples[i]).collect();
        let prompt = build_prompt(
            template,
            vocab,
            PromptMode::Training {
                seed: sample_seed(cfg.seed, trainer.step() as u64),
            },
        )?;
        let r = trainer.train_step(model, &batch, &prompt)?;
        on_step(&r);
        reports.push(r);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eaf::EafConfig;
    use crate::pipeline::ModelConfig;
    use crate::translator::vocab::EOS;
    use crate::translator::{LoraConfig, TranslatorConfig};

    fn setup() -> (SignTranslator, Vec<Sample>, PromptTemplate, Vocabulary) {
        let vocab = Vocabulary::from_texts(["say a b c d"]);
        let cfg = ModelConfig {
            d_feat: 3,
            eaf: EafConfig {
                d: 4,
                d_llm: 8,
                ..EafConfig::default()
            },
            translator: TranslatorConfig {
                vocab_size: vocab.len(),
                d_model: 8,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 1,
                d_ff: 16,
                lora: LoraConfig {
                    rank: 2,
                    alpha: 4.0,
                    dropout: 0.1,
                },
                ln_eps: 1e-5,
            },
            ..ModelConfig::default()
        };
        let model = SignTranslator::new(cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = (0..3)
            .map(|i| Sample {
                spatial: crate::params::randn(&mut rng, (6, 3), 1.0),
                motion: crate::params::randn(&mut rng, (2, 3), 1.0),
                emotion: crate::params::randn(&mut rng, (3, 3), 1.0),
                target: vec![vocab.id(["a", "b", "c"][i]).unwrap(), EOS],
            })
            .collect();
        let t = PromptTemplate {
            instruction: "[SIGN_FEATURES] say".into(),
            exemplars: vec![("a".into(), "b".into()), ("c".into(), "d".into())],
        };
        (model, samples, t, vocab)
    }

    #[test]
    fn zero_lr_step_changes_nothing() {
        let (mut m, s, t, v) = setup();
        let before = m.store.clone();
        let mut tr = Trainer::new(TrainConfig::default(), &m);
        assert_eq!(tr.schedule.lr(0), 0.0);
        let p = build_prompt(&t, &v, PromptMode::Inference).unwrap();
        let batch: Vec<&Sample> = s.iter().collect();
        let r = tr.train_step(&mut m, &batch, &p).unwrap();
        assert_eq!(r.lr, 0.0);
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn base_stays_frozen_and_loss_drops() {
        let (mut m, s, t, v) = setup();
        let before = m.store.clone();
        let cfg = TrainConfig {
            steps: 100,
            batch_size: 3,
            peak_lr: 1e-2,
            ..TrainConfig::default()
        };
        let reports = fit(&mut m, &s, &t, &v, &cfg, |_| {}).unwrap();
        assert_eq!(reports.len(), 100);
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            if a.trainable {
                continue;
            }
            assert_eq!(a.value, b.value, "{}", a.name);
        }
        let moved = before
            .iter()
            .zip(m.store.iter())
            .filter(|((_, a), (_, b))| a.value != b.value)
            .count();
        assert!(moved > 0);
        let first: f64 = reports[..10].iter().map(|r| r.ce).sum::<f64>();
        let last: f64 = reports[90..].iter().map(|r| r.ce).sum::<f64>();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn fit_is_reproducible() {
        let cfg = TrainConfig {
            steps: 12,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut m, s, t, v) = setup();
            fit(&mut m, &s, &t, &v, &cfg, |_| {}).unwrap()
        };
        assert_eq!(run(), run());
    }
}
