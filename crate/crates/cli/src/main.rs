use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eaf_core::harness::{
    evaluate, generate_dataset, load_bundle, load_dataset, render_ablation_table, run_ablation,
    run_experiment, save_bundle, table3_rows, table4_grid, BundleMeta, SEED_ENV,
};
use eaf_core::metrics::{normalize_text, score_corpus, ScoredPair, TextMode};
use eaf_core::{ExperimentConfig, SamplingStrategy, Split};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "eaf",
    version,
    about = "Emotion-aware sign translation experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature dataset to disk.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration, save a bundle and report test scores.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ablation: AblationArgs,
        #[arg(long)]
        data: PathBuf,
        /// Bundle directory for the trained weights.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the loss every this many steps (0 for silence).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Train every row of an ablation grid, once per seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Grid::Components)]
        grid: Grid,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a saved bundle on a dataset split.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// BLEU and ROUGE-L of a hypothesis file against reference files, one sentence per line.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        #[arg(long, default_value = "german")]
        mode: TextMode,
        #[arg(long)]
        json: bool,
    },
    /// Translate samples of a dataset split with a saved bundle.
    Translate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Sample indices; all samples when omitted.
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
        #[arg(long)]
        beam: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// The six component rows.
    Components,
    /// Sampling strategy by interval, full model.
    Sampling,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    steps: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => match self.preset {
                Preset::Default => ExperimentConfig::default(),
                Preset::Desk => ExperimentConfig::desk(),
            },
        };
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        cfg = cfg.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    no_emotion: bool,
    #[arg(long)]
    no_eaf: bool,
    #[arg(long)]
    no_alignment: bool,
    #[arg(long, value_enum)]
    sampling: Option<Sampling>,
    #[arg(long)]
    st: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Single,
    Max,
    Mean,
}

impl AblationArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let ab = &mut cfg.ablation;
        ab.use_emotion &= !self.no_emotion;
        ab.use_eaf &= !(self.no_eaf || self.no_emotion);
        ab.use_alignment &= !self.no_alignment;
        if let Some(s) = self.sampling {
            ab.sampling = match s {
                Sampling::Single => SamplingStrategy::SingleFrame,
                Sampling::Max => SamplingStrategy::MaxPool,
                Sampling::Mean => SamplingStrategy::MeanPool,
            };
        }
        if let Some(st) = self.st {
            ab.st = st;
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Command::Generate { cfg, out } => {
            let cfg = cfg.load()?;
            let m = generate_dataset(&cfg.data, cfg.seed, &out)?;
            println!(
                "{} train / {} test samples, {} classes, content hash {}",
                m.train.len(),
                m.test.len(),
                m.classes.len(),
                m.content_hash
            );
        }
        Command::Train {
            cfg,
            ablation,
            data,
            out,
            report,
            log_every,
        } => {
            let mut cfg = cfg.load()?;
            ablation.apply(&mut cfg);
            cfg.validate()?;
            let ds = load_dataset(&data)?;
            let (model, rep) = run_experiment(&cfg, &ds, |r| {
                if log_every > 0 && (r.step + 1) % log_every == 0 {
                    eprintln!(
                        "step {:>5}  loss {:.4}  ce {:.4}  align {:.4}  lr {:.2e}",
                        r.step + 1,
                        r.total,
                        r.ce,
                        r.align,
                        r.lr
                    );
                }
            })?;
            save_bundle(&out, &model, &BundleMeta::new(&cfg, &ds, &model))?;
            print!("{}", render_ablation_table(std::slice::from_ref(&rep)));
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
        }
        Command::Ablate {
            cfg,
            data,
            grid,
            seeds,
            report,
        } => {
            let base = cfg.load()?;
            let ds = load_dataset(&data)?;
            let rows = match grid {
                Grid::Components => table3_rows(),
                Grid::Sampling => table4_grid(),
            };
            let seeds = if seeds.is_empty() {
                vec![base.seed]
            } else {
                seeds
            };
            let mut all = Vec::new();
            for seed in seeds {
                let base = ExperimentConfig {
                    seed,
                    ..base.clone()
                };
                all.extend(run_ablation(&base, &rows, &ds, |r| {
                    eprintln!(
                        "{} seed {} done in {:.1}s",
                        r.label, r.seed, r.wall_clock_secs
                    )
                })?);
            }
            print!("{}", render_ablation_table(&all));
            if let Some(p) = report {
                write_json(&p, &all)?;
            }
        }
        Command::Evaluate {
            bundle,
            data,
            split,
            report,
        } => {
            let b = load_bundle(&bundle)?;
            let ds = load_dataset(&data)?;
            let rep = evaluate(
                &b.model,
                &ds,
                &b.meta.template,
                split,
                &b.meta.ablation,
                &b.meta.eval,
            )?;
            print!("{}", rep.metrics.render_table());
            println!(
                "polarity accuracy {:.2}",
                100.0 * rep.disambiguation_accuracy
            );
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
        }
        Command::Score {
            hyp,
            refs,
            mode,
            json,
        } => {
            let hyps = read_lines(&hyp)?;
            let refs = refs
                .iter()
                .map(|p| read_lines(p))
                .collect::<Result<Vec<_>>>()?;
            if let Some(r) = refs.iter().find(|r| r.len() != hyps.len()) {
                bail!(
                    "{} hypotheses but a reference file has {} lines",
                    hyps.len(),
                    r.len()
                );
            }
            let corpus = hyps
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let rs = refs.iter().map(|r| normalize_text(&r[i], mode)).collect();
                    ScoredPair::new(normalize_text(h, mode), rs)
                })
                .collect::<eaf_core::Result<Vec<_>>>()?;
            let m = score_corpus(&corpus)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&m)?);
            } else {
                print!("{}", m.render_table());
            }
        }
        Command::Translate {
            bundle,
            data,
            split,
            index,
            beam,
        } => {
            let b = load_bundle(&bundle)?;
            let ds = load_dataset(&data)?;
            let vocab = &b.meta.vocabulary;
            let prompt = eaf_core::translator::build_prompt(
                &b.meta.template,
                vocab,
                eaf_core::translator::PromptMode::Inference,
            )?;
            let examples = ds.split(split);
            let picked: Vec<usize> = if index.is_empty() {
                (0..examples.len()).collect()
            } else {
                index
            };
            let ab = &b.meta.ablation;
            for i in picked {
                let Some(ex) = examples.get(i) else {
                    bail!("index {i} out of range for {} samples", examples.len());
                };
                let s = ex.to_sample(vocab, ab.st, ab.sampling)?;
                let out = b.model.translate(
                    &s,
                    &prompt,
                    beam.unwrap_or(b.meta.eval.beam_width),
                    b.meta.eval.max_decode_len,
                )?;
                println!(
                    "{}",
                    json!({ "index": i, "reference": ex.text, "hypothesis": vocab.decode(&out.tokens), "finished": out.finished })
                );
            }
        }
    }
    Ok(())
}
