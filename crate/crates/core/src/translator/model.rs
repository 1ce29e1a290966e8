//! Toy pre-norm encoder-decoder with a frozen base, LoRA on the query and
//! value projections of every attention block, and an output head tied to
//! the token embeddings.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lora::{LoraAdapter, LoraConfig};
use super::prompt::Prompt;
use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::autograd::{Mat, Tape, Var};
use crate::error::{EafError, Result};
use crate::params::{randn, Bound, Linear, Mlp, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub lora: LoraConfig,
    pub ln_eps: f64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 512,
            lora: LoraConfig::default(),
            ln_eps: 1e-5,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(EafError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 6 {
            return Err(EafError::Config(
                "vocabulary must hold the special tokens plus one word".into(),
            ));
        }
        if self.lora.rank == 0 || !(0.0..1.0).contains(&self.lora.dropout) {
            return Err(EafError::Config(
                "LoRA rank must be positive and dropout in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((len, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    q_lora: LoraAdapter,
    v_lora: LoraAdapter,
    n_heads: usize,
}

impl Attention {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslatorConfig,
    ) -> Self {
        let d = cfg.d_model;
        let lin = |store: &mut ParamStore, rng: &mut ChaCha8Rng, p: &str| {
            Linear::new(store, rng, &format!("{name}.{p}"), d, d, true, false)
        };
        let q = lin(store, rng, "q");
        let k = lin(store, rng, "k");
        let v = lin(store, rng, "v");
        let o = lin(store, rng, "o");
        Self {
            q,
            k,
            v,
            o,
            q_lora: LoraAdapter::new(store, rng, &format!("{name}.q"), d, d, cfg.lora),
            v_lora: LoraAdapter::new(store, rng, &format!("{name}.v"), d, d, cfg.lora),
            n_heads: cfg.n_heads,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x_q: Var,
        x_kv: Var,
        causal: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        let q0 = self.q.forward(tape, b, x_q);
        let q = self.q_lora.forward(tape, b, x_q, q0, rng.as_deref_mut());
        let k = self.k.forward(tape, b, x_kv);
        let v0 = self.v.forward(tape, b, x_kv);
        let v = self.v_lora.forward(tape, b, x_kv, v0, rng.as_deref_mut());
        let (lq, d) = tape.shape(q);
        let lk = tape.shape(k).0;
        let dh = d / self.n_heads;
        let mask = causal.then(|| {
            let m = Mat::from_shape_fn((lq, lk), |(i, j)| if j > i { -1e9 } else { 0.0 });
            tape.constant(m)
        });
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_nt(qh, kh);
                let mut s = tape.scale(s, 1.0 / (dh as f64).sqrt());
                if let Some(m) = mask {
                    s = tape.add(s, m);
                }
                let p = tape.softmax_rows(s);
                tape.matmul(p, vh)
            })
            .collect();
        let cat = tape.concat_cols(&heads);
        self.o.forward(tape, b, cat)
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    attn: Attention,
    ffn: Mlp,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    self_attn: Attention,
    cross_attn: Attention,
    ffn: Mlp,
}

#[derive(Clone, Debug)]
pub struct TranslatorModel {
    pub cfg: TranslatorConfig,
    /// `V × d_model`, frozen by default; also the output head.
    pub embedding: ParamId,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
}

impl TranslatorModel {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: TranslatorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let embedding = store.add(
            format!("{prefix}.embedding"),
            randn(rng, (cfg.vocab_size, d), 1.0 / (d as f64).sqrt()),
            false,
        );
        let ffn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: String| {
            Mlp::new(store, rng, &name, &[d, cfg.d_ff, d], false)
        };
        let encoder = (0..cfg.n_enc_layers)
            .map(|i| EncoderBlock {
                attn: Attention::new(store, rng, &format!("{prefix}.enc{i}.attn"), &cfg),
                ffn: ffn(store, rng, format!("{prefix}.enc{i}.ffn")),
            })
            .collect();
        let decoder = (0..cfg.n_dec_layers)
            .map(|i| DecoderBlock {
                self_attn: Attention::new(store, rng, &format!("{prefix}.dec{i}.self_attn"), &cfg),
                cross_attn: Attention::new(
                    store,
                    rng,
                    &format!("{prefix}.dec{i}.cross_attn"),
                    &cfg,
                ),
                ffn: ffn(store, rng, format!("{prefix}.dec{i}.ffn")),
            })
            .collect();
        Ok(Self {
            cfg,
            embedding,
            encoder,
            decoder,
        })
    }

    /// Names of the adapter tensors.
    pub fn is_adapter(name: &str) -> bool {
        name.ends_with(".lora_a") || name.ends_with(".lora_b")
    }

    fn embed(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Var {
        let e = tape.gather_rows(b.var(self.embedding), ids);
        tape.scale(e, (self.cfg.d_model as f64).sqrt())
    }

    fn add_positions(&self, tape: &mut Tape, x: Var) -> Var {
        let (l, d) = tape.shape(x);
        let pe = tape.constant(positional_encoding(l, d));
        tape.add(x, pe)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            Some(&id) => Err(EafError::TokenOutOfRange {
                id,
                vocab: self.cfg.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Prompt embeddings with the placeholder token replaced by the rows of `soft`.
    pub fn encoder_input(
        &self,
        tape: &mut Tape,
        b: &Bound,
        soft: Var,
        prompt: &Prompt,
    ) -> Result<Var> {
        let (l, d) = tape.shape(soft);
        if l == 0 {
            return Err(EafError::Empty("fused representation"));
        }
        if d != self.cfg.d_model {
            return Err(EafError::Dimension(format!(
                "soft prompt is {d}-wide, model is {}",
                self.cfg.d_model
            )));
        }
        if prompt.tokens.get(prompt.placeholder) != Some(&super::vocab::PLACEHOLDER) {
            return Err(EafError::Placeholder(0));
        }
        self.check_ids(&prompt.tokens)?;
        let before = &prompt.tokens[..prompt.placeholder];
        let after = &prompt.tokens[prompt.placeholder + 1..];
        let mut parts = Vec::with_capacity(3);
        if !before.is_empty() {
            parts.push(self.embed(tape, b, before));
        }
        parts.push(soft);
        if !after.is_empty() {
            parts.push(self.embed(tape, b, after));
        }
        let x = tape.concat_rows(&parts);
        Ok(self.add_positions(tape, x))
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &Bound,
        input: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let eps = self.cfg.ln_eps;
        let mut x = input;
        for blk in &self.encoder {
            let h = tape.layer_norm(x, eps);
            let a = blk.attn.forward(tape, b, h, h, false, &mut rng);
            x = tape.add(x, a);
            let h = tape.layer_norm(x, eps);
            let f = blk.ffn.forward(tape, b, h);
            x = tape.add(x, f);
        }
        tape.layer_norm(x, eps)
    }

    /// Next-token logits for every position of `dec_in`, `|dec_in| × V`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        b: &Bound,
        memory: Var,
        dec_in: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if dec_in.is_empty() {
            return Err(EafError::Empty("decoder input"));
        }
        self.check_ids(dec_in)?;
        let eps = self.cfg.ln_eps;
        let e = self.embed(tape, b, dec_in);
        let mut x = self.add_positions(tape, e);
        for blk in &self.decoder {
            let h = tape.layer_norm(x, eps);
            let a = blk.self_attn.forward(tape, b, h, h, true, &mut rng);
            x = tape.add(x, a);
            let h = tape.layer_norm(x, eps);
            let c = blk.cross_attn.forward(tape, b, h, memory, false, &mut rng);
            x = tape.add(x, c);
            let h = tape.layer_norm(x, eps);
            let f = blk.ffn.forward(tape, b, h);
            x = tape.add(x, f);
        }
        let h = tape.layer_norm(x, eps);
        Ok(tape.matmul_nt(h, b.var(self.embedding)))
    }

    /// Logits for every target position given the gold prefix, `U × V`.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        b: &Bound,
        soft: Var,
        prompt: &Prompt,
        targets: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if targets.last() != Some(&EOS) {
            return Err(EafError::InvalidArgument(
                "targets must end with <eos>".into(),
            ));
        }
        self.check_ids(targets)?;
        let input = self.encoder_input(tape, b, soft, prompt)?;
        let memory = self.encode(tape, b, input, rng.as_deref_mut());
        let mut dec_in = Vec::with_capacity(targets.len());
        dec_in.push(BOS);
        dec_in.extend_from_slice(&targets[..targets.len() - 1]);
        self.decode(tape, b, memory, &dec_in, rng)
    }

    /// Mean raw embedding of the content tokens of `targets`, `1 × d_model`.
    pub fn target_embedding_mean(
        &self,
        tape: &mut Tape,
        b: &Bound,
        targets: &[usize],
    ) -> Result<Var> {
        self.check_ids(targets)?;
        let ids: Vec<usize> = targets
            .iter()
            .copied()
            .filter(|&t| t != EOS && t != PAD)
            .collect();
        if ids.is_empty() {
            return Err(EafError::Empty("target content tokens"));
        }
        let e = tape.gather_rows(b.var(self.embedding), &ids);
        Ok(tape.mean_rows(e))
    }

    pub fn vocab_matches(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.cfg.vocab_size {
            return Err(EafError::Config(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }
}
