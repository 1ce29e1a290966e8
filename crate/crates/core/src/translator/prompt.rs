//! Instruction prompts with in-context exemplars and a feature placeholder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PLACEHOLDER, SEP};
use crate::error::{EafError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Must contain the placeholder token exactly once.
    pub instruction: String,
    /// `(source, target)` demonstration pairs.
    pub exemplars: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    /// Exemplars shuffled with the given seed.
    Training { seed: u64 },
    /// Exemplars in template order.
    Inference,
}

/// Tokenised prompt; `placeholder` indexes the token the soft prompt replaces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<usize>,
    pub placeholder: usize,
}

/// `instruction <sep> src₁ <sep> tgt₁ <sep> src₂ <sep> tgt₂ ...`
pub fn build_prompt(
    template: &PromptTemplate,
    vocab: &Vocabulary,
    mode: PromptMode,
) -> Result<Prompt> {
    if template.exemplars.is_empty() {
        return Err(EafError::Empty("prompt exemplars"));
    }
    let mut tokens = vocab.encode(&template.instruction)?;
    let found: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i] == PLACEHOLDER)
        .collect();
    if found.len() != 1 {
        return Err(EafError::Placeholder(found.len()));
    }
    let mut order: Vec<usize> = (0..template.exemplars.len()).collect();
    if let PromptMode::Training { seed } = mode {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    for i in order {
        let (src, tgt) = &template.exemplars[i];
        for part in [src, tgt] {
            let ids = vocab.encode(part)?;
            if ids.contains(&PLACEHOLDER) {
                return Err(EafError::Placeholder(found.len() + 1));
            }
            tokens.push(SEP);
            tokens.extend(ids);
        }
    }
    Ok(Prompt {
        tokens,
        placeholder: found[0],
    })
}
