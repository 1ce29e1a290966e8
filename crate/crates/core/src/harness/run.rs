//! Training runs, evaluation, checkpoint bundles and ablation tables.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{AblationConfig, EvalConfig, ExperimentConfig};
use super::dataset::{Dataset, Split, POLARITY_POSITION, POLARITY_WORDS};
use crate::checkpoint;
use crate::error::{io_err, json_err, EafError, Result};
use crate::losses::LossReport;
use crate::metrics::{normalize_text, score_corpus, MetricReport, ScoredPair, TextMode};
use crate::pipeline::{ModelConfig, SignTranslator};
use crate::train::fit;
use crate::translator::{build_prompt, PromptMode, PromptTemplate, Vocabulary};

pub const BUNDLE_JSON: &str = "bundle.json";
pub const BUNDLE_WEIGHTS: &str = "model.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub align: f64,
}

/// Mean step losses over consecutive groups of `steps_per_epoch` updates.
pub fn epoch_means(reports: &[LossReport], steps_per_epoch: usize) -> Vec<EpochLoss> {
    reports
        .chunks(steps_per_epoch.max(1))
        .enumerate()
        .map(|(epoch, c)| {
            let n = c.len() as f64;
            EpochLoss {
                epoch,
                total: c.iter().map(|r| r.total).sum::<f64>() / n,
                ce: c.iter().map(|r| r.ce).sum::<f64>() / n,
                align: c.iter().map(|r| r.align).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub reference: String,
    pub hypothesis: String,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub metrics: MetricReport,
    /// Share of samples whose teacher-forced logit at the polarity position
    /// prefers the gold polarity word over the other one.
    pub disambiguation_accuracy: f64,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub ablation: AblationConfig,
    pub seed: u64,
    pub epoch_losses: Vec<EpochLoss>,
    pub final_step: Option<LossReport>,
    pub eval: EvalReport,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Same report with the timing zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Scores a model on one split of the dataset.
pub fn evaluate(
    model: &SignTranslator,
    dataset: &Dataset,
    template: &PromptTemplate,
    split: Split,
    ablation: &AblationConfig,
    eval: &EvalConfig,
) -> Result<EvalReport> {
    let examples = dataset.split(split);
    if examples.is_empty() {
        return Err(EafError::Empty("evaluation split"));
    }
    let vocab = dataset.vocab();
    model.translator.vocab_matches(vocab)?;
    let prompt = build_prompt(template, vocab, PromptMode::Inference)?;
    let polarity =
        POLARITY_WORDS.map(|w| vocab.id(w).expect("polarity words are in the vocabulary"));
    let mut corpus = Vec::with_capacity(examples.len());
    let mut hypotheses = Vec::with_capacity(examples.len());
    let mut correct = 0usize;
    for ex in examples {
        let s = ex.to_sample(vocab, ablation.st, ablation.sampling)?;
        let logits = model.teacher_forced_logits(&s, &prompt)?;
        let gold = polarity[ex.label.polarity];
        let other = polarity[1 - ex.label.polarity];
        if logits[[POLARITY_POSITION, gold]] > logits[[POLARITY_POSITION, other]] {
            correct += 1;
        }
        let out = model.translate(&s, &prompt, eval.beam_width, eval.max_decode_len)?;
        let text = vocab.decode(&out.tokens);
        corpus.push(ScoredPair::new(
            normalize_text(&text, TextMode::German),
            vec![normalize_text(&ex.text, TextMode::German)],
        )?);
        hypotheses.push(Hypothesis {
            reference: ex.text.clone(),
            hypothesis: text,
            finished: out.finished,
        });
    }
    Ok(EvalReport {
        split,
        metrics: score_corpus(&corpus)?,
        disambiguation_accuracy: correct as f64 / examples.len() as f64,
        hypotheses,
    })
}

/// Trains one configuration on the training split and evaluates it on the
/// test split.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    mut on_step: impl FnMut(&LossReport),
) -> Result<(SignTranslator, RunReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let vocab = dataset.vocab();
    let mut model = SignTranslator::new(cfg.model_for(vocab.len()), cfg.seed)?;
    let ab = &cfg.ablation;
    let samples = dataset.samples(Split::Train, ab.st, ab.sampling)?;
    let train = cfg.train_for();
    let reports = fit(
        &mut model,
        &samples,
        dataset.template(),
        vocab,
        &train,
        |r| on_step(r),
    )?;
    let eval = evaluate(
        &model,
        dataset,
        dataset.template(),
        Split::Test,
        ab,
        &cfg.eval,
    )?;
    let per_epoch = samples.len().div_ceil(train.batch_size);
    let report = RunReport {
        label: ab.label(),
        config_hash: cfg.hash(),
        dataset_hash: dataset.manifest.content_hash.clone(),
        ablation: *ab,
        seed: cfg.seed,
        epoch_losses: epoch_means(&reports, per_epoch),
        final_step: reports.last().cloned(),
        eval,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// One run per grid row, all sharing `base` apart from the ablation switches.
pub fn run_ablation(
    base: &ExperimentConfig,
    grid: &[AblationConfig],
    dataset: &Dataset,
    mut on_run: impl FnMut(&RunReport),
) -> Result<Vec<RunReport>> {
    grid.iter()
        .map(|row| {
            let cfg = ExperimentConfig {
                ablation: *row,
                ..base.clone()
            };
            let (_, report) = run_experiment(&cfg, dataset, |_| {})?;
            on_run(&report);
            Ok(report)
        })
        .collect()
}

/// Plain-text table: one row per run, scores ×100.
pub fn render_ablation_table(reports: &[RunReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = format!(
        "{:<width$} {:>4} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
        "setup", "seed", "B-1", "B-2", "B-3", "B-4", "R-L", "Acc"
    );
    for r in reports {
        let m = &r.eval.metrics;
        out.push_str(&format!(
            "{:<width$} {:>4} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}\n",
            r.label,
            r.seed,
            100.0 * m.bleu1,
            100.0 * m.bleu2,
            100.0 * m.bleu3,
            100.0 * m.bleu4,
            100.0 * m.rouge_l_f,
            100.0 * r.eval.disambiguation_accuracy
        ));
    }
    out
}

/// What a saved model needs besides its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub model: ModelConfig,
    pub vocabulary: Vocabulary,
    pub template: PromptTemplate,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
    pub config_hash: String,
}

pub struct Bundle {
    pub meta: BundleMeta,
    pub model: SignTranslator,
}

pub fn save_bundle(dir: &Path, model: &SignTranslator, meta: &BundleMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    checkpoint::save(&dir.join(BUNDLE_WEIGHTS), &model.store)?;
    let path = dir.join(BUNDLE_JSON);
    let json = serde_json::to_vec_pretty(meta).map_err(json_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let path = dir.join(BUNDLE_JSON);
    let buf = fs::read(&path).map_err(io_err(&path))?;
    let meta: BundleMeta = serde_json::from_slice(&buf).map_err(json_err(&path))?;
    let mut model = SignTranslator::new(meta.model.clone(), 0)?;
    let tensors = checkpoint::load(&dir.join(BUNDLE_WEIGHTS))?;
    checkpoint::restore(&mut model.store, &tensors)?;
    model.translator.vocab_matches(&meta.vocabulary)?;
    Ok(Bundle { meta, model })
}

impl BundleMeta {
    pub fn new(cfg: &ExperimentConfig, dataset: &Dataset, model: &SignTranslator) -> Self {
        Self {
            model: model.cfg.clone(),
            vocabulary: dataset.vocab().clone(),
            template: dataset.template().clone(),
            ablation: cfg.ablation,
            eval: cfg.eval.clone(),
            config_hash: cfg.hash(),
        }
    }
}
