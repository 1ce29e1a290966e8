//! Sequence model standing in for the language model: prompt construction,
//! LoRA-adapted encoder-decoder and beam search.

pub mod beam;
pub mod lora;
pub mod model;
pub mod prompt;
pub mod vocab;

pub use beam::{beam_search, greedy_decode, BeamResult};
pub use lora::{lora_apply, LoraAdapter, LoraConfig};
pub use model::{TranslatorConfig, TranslatorModel};
pub use prompt::{build_prompt, Prompt, PromptMode, PromptTemplate};
pub use vocab::Vocabulary;
