//! End-to-end model: per-stream projections, emotion-aware fusion, the
//! LoRA-adapted translator and the alignment temperature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::eaf::{EafConfig, EafModel, EafOutput, FusionSwitches};
use crate::error::{EafError, Result};
use crate::losses::{alignment_loss, generation_loss, total_loss, SmoothingConfig, INIT_TAU};
use crate::params::{Bound, GradMode, Linear, ParamId, ParamStore};
use crate::translator::beam::{beam_search, EncodedSource};
use crate::translator::vocab::PAD;
use crate::translator::{BeamResult, Prompt, TranslatorConfig, TranslatorModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the raw per-stream features.
    pub d_feat: usize,
    pub eaf: EafConfig,
    pub translator: TranslatorConfig,
    pub switches: FusionSwitches,
    /// Make the token embedding table trainable, so the alignment loss (and
    /// the tied output head) update it.
    pub align_grad_to_embeddings: bool,
    pub init_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: 16,
            eaf: EafConfig::default(),
            translator: TranslatorConfig::default(),
            switches: FusionSwitches::default(),
            align_grad_to_embeddings: false,
            init_tau: INIT_TAU,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eaf.d_llm != self.translator.d_model {
            return Err(EafError::Config(format!(
                "fusion output width {} differs from translator width {}",
                self.eaf.d_llm, self.translator.d_model
            )));
        }
        if self.switches.use_eaf && !self.switches.use_emotion {
            return Err(EafError::Config(
                "emotion-aware fusion requires the emotion stream".into(),
            ));
        }
        if !(self.init_tau > 0.0) || self.d_feat == 0 || self.eaf.d == 0 {
            return Err(EafError::Config(
                "temperature and widths must be positive".into(),
            ));
        }
        self.translator.validate()
    }
}

/// Projected-feature inputs and target ids for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `T × d_feat`
    pub spatial: Mat,
    /// `S × d_feat`
    pub motion: Mat,
    /// `F × d_feat`
    pub emotion: Mat,
    /// Ends with `<eos>`.
    pub target: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchLosses {
    pub ce: Var,
    pub align: Var,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct SignTranslator {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub proj: [Linear; 3],
    pub eaf: EafModel,
    pub translator: TranslatorModel,
    pub log_tau: ParamId,
}

impl SignTranslator {
    /// Deterministic initialisation from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let translator =
            TranslatorModel::new(&mut store, &mut rng, "translator", cfg.translator.clone())?;
        if cfg.align_grad_to_embeddings {
            store.set_trainable(translator.embedding, true);
        }
        let proj = ["spatial", "motion", "emotion"].map(|s| {
            Linear::new(
                &mut store,
                &mut rng,
                &format!("proj.{s}"),
                cfg.d_feat,
                cfg.eaf.d,
                true,
                true,
            )
        });
        let eaf = EafModel::new(&mut store, &mut rng, "eaf", cfg.eaf.clone());
        let log_tau = store.add("log_tau", Mat::from_elem((1, 1), cfg.init_tau.ln()), true);
        Ok(Self {
            cfg,
            store,
            proj,
            eaf,
            translator,
            log_tau,
        })
    }

    /// Parameters that training must never change.
    pub fn frozen_names(&self) -> Vec<String> {
        self.store
            .iter()
            .filter(|(_, p)| !p.trainable)
            .map(|(_, p)| p.name.clone())
            .collect()
    }

    pub fn tau(&self) -> f64 {
        self.store.get(self.log_tau)[[0, 0]].exp()
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        for (m, name) in [
            (&s.spatial, "spatial"),
            (&s.motion, "motion"),
            (&s.emotion, "emotion"),
        ] {
            if m.ncols() != self.cfg.d_feat {
                return Err(EafError::Dimension(format!(
                    "{name} features are {}-wide, model expects {}",
                    m.ncols(),
                    self.cfg.d_feat
                )));
            }
        }
        Ok(())
    }

    /// Projection and fusion, `L × d_llm`.
    pub fn fuse(&self, tape: &mut Tape, b: &Bound, s: &Sample) -> Result<EafOutput> {
        self.check_sample(s)?;
        let sw = self.cfg.switches;
        let xs = tape.constant(s.spatial.clone());
        let xm = tape.constant(s.motion.clone());
        let zs = self.proj[0].forward(tape, b, xs);
        let zm = self.proj[1].forward(tape, b, xm);
        let ze = if sw.use_emotion {
            let xe = tape.constant(s.emotion.clone());
            Some(self.proj[2].forward(tape, b, xe))
        } else {
            None
        };
        self.eaf.forward(tape, b, zs, zm, ze, sw)
    }

    /// Cross-entropy, alignment and total loss over a batch.
    pub fn batch_losses(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batch: &[&Sample],
        prompt: &Prompt,
        smoothing: &SmoothingConfig,
        lambda: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchLosses> {
        if batch.is_empty() {
            return Err(EafError::Empty("batch"));
        }
        let mut logits = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        let mut z_pool = Vec::with_capacity(batch.len());
        let mut y_pool = Vec::with_capacity(batch.len());
        for s in batch {
            let fused = self.fuse(tape, b, s)?.fused;
            logits.push(self.translator.teacher_forced(
                tape,
                b,
                fused,
                prompt,
                &s.target,
                rng.as_deref_mut(),
            )?);
            targets.extend_from_slice(&s.target);
            z_pool.push(tape.mean_rows(fused));
            y_pool.push(self.translator.target_embedding_mean(tape, b, &s.target)?);
        }
        let logits = tape.concat_rows(&logits);
        let smoothing = SmoothingConfig {
            ignore_index: Some(PAD),
            ..*smoothing
        };
        let ce = generation_loss(tape, logits, &targets, &smoothing)?;
        let z = tape.concat_rows(&z_pool);
        let y = tape.concat_rows(&y_pool);
        let align = alignment_loss(tape, z, y, b.var(self.log_tau))?;
        let total = total_loss(tape, ce, align, lambda);
        Ok(BatchLosses { ce, align, total })
    }

    /// Teacher-forced logits in evaluation mode, `U × V`.
    pub fn teacher_forced_logits(&self, s: &Sample, prompt: &Prompt) -> Result<Mat> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, GradMode::None);
        let fused = self.fuse(&mut tape, &b, s)?.fused;
        let logits = self
            .translator
            .teacher_forced(&mut tape, &b, fused, prompt, &s.target, None)?;
        Ok(tape.value(logits).clone())
    }

    /// Fused representation in evaluation mode.
    pub fn fused_values(&self, s: &Sample) -> Result<Mat> {
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, GradMode::None);
        let fused = self.fuse(&mut tape, &b, s)?.fused;
        Ok(tape.value(fused).clone())
    }

    pub fn translate(
        &self,
        s: &Sample,
        prompt: &Prompt,
        width: usize,
        max_len: usize,
    ) -> Result<BeamResult> {
        let soft = self.fused_values(s)?;
        let src = EncodedSource::new(&self.translator, &self.store, &soft, prompt)?;
        beam_search(&src, width, max_len)
    }
}
