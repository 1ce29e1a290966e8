//! Experiment configuration, the component-ablation grid and the
//! sampling-strategy sweep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eaf::{EafConfig, FusionSwitches};
use crate::error::{io_err, json_err, EafError, Result};
use crate::features::extract::SamplingStrategy;
use crate::features::synth::StreamSpec;
use crate::optim::AdamWConfig;
use crate::pipeline::ModelConfig;
use crate::train::TrainConfig;
use crate::translator::{LoraConfig, TranslatorConfig};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "EAF_SEED";

/// Component toggles for one ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub use_emotion: bool,
    pub use_eaf: bool,
    /// Multimodal alignment; off means `λ = 0`.
    pub use_alignment: bool,
    pub sampling: SamplingStrategy,
    /// Emotion sampling interval `st`.
    pub st: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            use_emotion: true,
            use_eaf: true,
            use_alignment: true,
            sampling: SamplingStrategy::SingleFrame,
            st: 8,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_eaf && !self.use_emotion {
            return Err(EafError::Config("EAF without the emotion stream".into()));
        }
        if self.st == 0 {
            return Err(EafError::Config("sampling interval must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn switches(&self) -> FusionSwitches {
        FusionSwitches {
            use_emotion: self.use_emotion,
            use_eaf: self.use_eaf,
        }
    }

    /// Short row label, e.g. `Emo+EAF+MA` or `base`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_emotion {
            parts.push("Emo");
        }
        if self.use_eaf {
            parts.push("EAF");
        }
        if self.use_alignment {
            parts.push("MA");
        }
        let mut s = if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("+")
        };
        if self.sampling != SamplingStrategy::SingleFrame || self.st != 8 {
            s.push_str(&format!(" [{:?} st={}]", self.sampling, self.st));
        }
        s
    }
}

/// The six component rows: base, Emo, Emo+EAF, MA, Emo+MA, Emo+EAF+MA.
pub fn table3_rows() -> Vec<AblationConfig> {
    [
        (false, false, false),
        (true, false, false),
        (true, true, false),
        (false, false, true),
        (true, false, true),
        (true, true, true),
    ]
    .into_iter()
    .map(|(e, f, a)| AblationConfig {
        use_emotion: e,
        use_eaf: f,
        use_alignment: a,
        ..AblationConfig::default()
    })
    .collect()
}

/// Every sampling strategy at every `st ∈ {2, 4, 8, 16}`, full model.
pub fn table4_grid() -> Vec<AblationConfig> {
    SamplingStrategy::ALL
        .into_iter()
        .flat_map(|sampling| {
            [2, 4, 8, 16].into_iter().map(move |st| AblationConfig {
                sampling,
                st,
                ..AblationConfig::default()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub stream: StreamSpec,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stream: StreamSpec::default(),
            train_per_class: 200,
            test_per_class: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub max_decode_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_decode_len: 12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// `translator.vocab_size` is replaced by the dataset vocabulary size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    /// A smaller model and shorter videos for quick CPU runs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.data.stream.frames = 48;
        c.data.train_per_class = 30;
        c.model.eaf = EafConfig {
            d: 16,
            d_llm: 32,
            ..EafConfig::default()
        };
        c.model.translator = TranslatorConfig {
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 64,
            lora: LoraConfig {
                rank: 8,
                alpha: 16.0,
                dropout: 0.1,
            },
            ..TranslatorConfig::default()
        };
        c.train = TrainConfig {
            steps: 400,
            peak_lr: 3e-3,
            ..TrainConfig::default()
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.data.stream.validate()?;
        self.ablation.validate()?;
        if self.data.train_per_class == 0 || self.data.test_per_class == 0 {
            return Err(EafError::Config(
                "each split needs at least one sample per class".into(),
            ));
        }
        if self.eval.beam_width == 0 || self.eval.max_decode_len == 0 {
            return Err(EafError::Config(
                "beam width and max decode length must be ≥ 1".into(),
            ));
        }
        if self.model.d_feat != self.data.stream.d_feat {
            return Err(EafError::Config(format!(
                "model d_feat {} differs from data d_feat {}",
                self.model.d_feat, self.data.stream.d_feat
            )));
        }
        let t: &AdamWConfig = &self.train.adamw;
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(EafError::Config("AdamW betas must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Model configuration for this run's ablation row and vocabulary.
    pub fn model_for(&self, vocab_size: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.translator.vocab_size = vocab_size;
        m.switches = self.ablation.switches();
        m
    }

    /// Training configuration with `λ` zeroed when alignment is off.
    pub fn train_for(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if !self.ablation.use_alignment {
            t.lambda = 0.0;
        }
        t
    }

    /// Replaces the seed when `value` parses as an integer.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| {
                EafError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_slice(&buf).map_err(json_err(path))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(json_err(path))?;
        fs::write(path, json).map_err(io_err(path))
    }
}
