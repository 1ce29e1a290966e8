pub mod autograd;
pub mod checkpoint;
pub mod eaf;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod train;
pub mod translator;

pub use error::{EafError, Result};

pub use eaf::{EafConfig, EafModel, FusionSwitches};
pub use features::SamplingStrategy;
pub use harness::{AblationConfig, Dataset, EvalReport, ExperimentConfig, RunReport, Split};
pub use losses::LossReport;
pub use metrics::{MetricReport, ScoredPair, TextMode};
pub use pipeline::{ModelConfig, Sample, SignTranslator};
pub use train::TrainConfig;
pub use translator::{PromptTemplate, TranslatorConfig, Vocabulary};
