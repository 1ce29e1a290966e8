//! Emotion-aware fusion.
//!
//! The enhancer gates the emotion stream channel-wise, scores every step's
//! reliability and pools a single emotion anchor
//! `Σ_k q_k / (Σ_i q_i + ε) · Z'_e[k]`. The modulator conditions each stream on
//! the replicated anchor:
//!
//! ```text
//! [Δs, Δb] = MLP_param([Z_q, Z_a])
//! g        = σ(MLP_gate([Z_q, Z_a]))
//! Z_mod    = Z_q ⊙ (1 + tanh(Δs) ⊙ g) + Δb ⊙ g
//! ```
//!
//! The modulated streams are concatenated along time and passed through the
//! temporal layer: conv(k=5) → maxpool(2) → conv(k=5) → maxpool(2) → MLP
//! connector into the translator width.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{EafError, Result};
use crate::params::{Bound, GradMode, Linear, Mlp, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EafConfig {
    /// Shared stream width after projection.
    pub d: usize,
    /// Translator width.
    pub d_llm: usize,
    /// Anchor pooling stabiliser.
    pub eps: f64,
    pub kernel: usize,
    pub pool: usize,
    /// Initial bias of the modulator gate's last layer.
    pub gate_init_bias: f64,
    /// One modulator per stream instead of a single shared one.
    pub per_stream_modulator: bool,
}

impl Default for EafConfig {
    fn default() -> Self {
        Self {
            d: 32,
            d_llm: 128,
            eps: 1e-6,
            kernel: 5,
            pool: 2,
            gate_init_bias: -2.0,
            per_stream_modulator: false,
        }
    }
}

/// Output length of the temporal layer for an input of `len` steps.
pub fn temporal_output_len(len: usize) -> usize {
    len / 2 / 2
}

#[derive(Clone, Debug)]
pub struct EnhancerParams {
    /// Channel gate, `d → d`.
    pub gate: Linear,
    /// Quality predictor, `d → 1`.
    pub quality: Linear,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct ModulatorParams {
    /// `2d → 2d → 2d`, output split as `[Δs | Δb]`.
    pub param_mlp: Mlp,
    /// `2d → 2d → d`, squashed by a logistic.
    pub gate_mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct TemporalLayerParams {
    /// Convolutions as `k·d → d` maps over unfolded windows.
    pub conv1: Linear,
    pub conv2: Linear,
    /// `d → d_llm → d_llm → d_llm`
    pub connector: Mlp,
    pub kernel: usize,
    pub pool: usize,
}

/// Which parts of the fusion run; mirrors the component ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSwitches {
    pub use_emotion: bool,
    pub use_eaf: bool,
}

impl Default for FusionSwitches {
    fn default() -> Self {
        Self {
            use_emotion: true,
            use_eaf: true,
        }
    }
}

/// Emotion anchor plus the per-step scores and weights behind it.
#[derive(Clone, Copy, Debug)]
pub struct AnchorVars {
    /// `1 × d`
    pub anchor: Var,
    /// `F × 1`, in (0, 1)
    pub scores: Var,
    /// `F × 1`, `q_k / (Σq + ε)`
    pub weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct EafOutput {
    /// `L × d_llm`
    pub fused: Var,
    pub anchor: Option<AnchorVars>,
}

#[derive(Clone, Debug)]
pub struct EafModel {
    pub cfg: EafConfig,
    pub enhancer: EnhancerParams,
    pub modulators: Vec<ModulatorParams>,
    pub temporal: TemporalLayerParams,
}

impl EafModel {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: EafConfig) -> Self {
        let d = cfg.d;
        let enhancer = EnhancerParams {
            gate: Linear::new(
                store,
                rng,
                &format!("{prefix}.enhancer.gate"),
                d,
                d,
                true,
                true,
            ),
            quality: Linear::new(
                store,
                rng,
                &format!("{prefix}.enhancer.quality"),
                d,
                1,
                true,
                true,
            ),
            eps: cfg.eps,
        };
        let n_mod = if cfg.per_stream_modulator { 3 } else { 1 };
        let modulators = (0..n_mod)
            .map(|i| {
                let name = if n_mod == 1 {
                    format!("{prefix}.modulator")
                } else {
                    format!("{prefix}.modulator{i}")
                };
                let m = ModulatorParams {
                    param_mlp: Mlp::new(
                        store,
                        rng,
                        &format!("{name}.param"),
                        &[2 * d, 2 * d, 2 * d],
                        true,
                    ),
                    gate_mlp: Mlp::new(
                        store,
                        rng,
                        &format!("{name}.gate"),
                        &[2 * d, 2 * d, d],
                        true,
                    ),
                };
                let gate_bias = m.gate_mlp.last().bias.unwrap();
                store.get_mut(gate_bias).fill(cfg.gate_init_bias);
                m
            })
            .collect();
        let k = cfg.kernel;
        let temporal = TemporalLayerParams {
            conv1: Linear::new(
                store,
                rng,
                &format!("{prefix}.temporal.conv1"),
                k * d,
                d,
                true,
                true,
            ),
            conv2: Linear::new(
                store,
                rng,
                &format!("{prefix}.temporal.conv2"),
                k * d,
                d,
                true,
                true,
            ),
            connector: Mlp::new(
                store,
                rng,
                &format!("{prefix}.temporal.connector"),
                &[d, cfg.d_llm, cfg.d_llm, cfg.d_llm],
                true,
            ),
            kernel: k,
            pool: cfg.pool,
        };
        Self {
            cfg,
            enhancer,
            modulators,
            temporal,
        }
    }

    fn check_width(&self, tape: &Tape, v: Var, what: &str) -> Result<()> {
        let (l, d) = tape.shape(v);
        if d != self.cfg.d {
            return Err(EafError::Dimension(format!(
                "{what} stream is {d}-wide, expected {}",
                self.cfg.d
            )));
        }
        if l == 0 {
            return Err(EafError::Empty("stream"));
        }
        Ok(())
    }

    /// `Z'_e[k] = Z_e[k] ⊙ σ(G·Z_e[k] + b_G)`
    pub fn enhancer_gate(&self, tape: &mut Tape, b: &Bound, z_e: Var) -> Var {
        let logits = self.enhancer.gate.forward(tape, b, z_e);
        let gate = tape.sigmoid(logits);
        tape.mul(z_e, gate)
    }

    /// `q_k = σ(w·Z'_e[k] + b)`, shape `F × 1`.
    pub fn quality_scores(&self, tape: &mut Tape, b: &Bound, zp_e: Var) -> Var {
        let logits = self.enhancer.quality.forward(tape, b, zp_e);
        tape.sigmoid(logits)
    }

    /// Score-weighted pooling of the gated emotion steps.
    pub fn pool_anchor(tape: &mut Tape, zp_e: Var, scores: Var, eps: f64) -> AnchorVars {
        let total = tape.sum_all(scores);
        let denom = tape.add_scalar(total, eps);
        let weights = tape.div(scores, denom);
        let weighted = tape.mul(zp_e, weights);
        let anchor = tape.sum_rows(weighted);
        AnchorVars {
            anchor,
            scores,
            weights,
        }
    }

    /// Gated scale-and-shift of `z_q` conditioned on the replicated anchor.
    pub fn modulate(
        &self,
        tape: &mut Tape,
        b: &Bound,
        z_q: Var,
        anchor: Var,
        stream: usize,
    ) -> Var {
        let m = &self.modulators[stream.min(self.modulators.len() - 1)];
        let d = self.cfg.d;
        let len = tape.shape(z_q).0;
        let z_a = tape.repeat_rows(anchor, len);
        let joint = tape.concat_cols(&[z_q, z_a]);
        let deltas = m.param_mlp.forward(tape, b, joint);
        let d_scale = tape.slice_cols(deltas, 0, d);
        let d_bias = tape.slice_cols(deltas, d, d);
        let gate_logits = m.gate_mlp.forward(tape, b, joint);
        let g = tape.sigmoid(gate_logits);
        let t = tape.tanh(d_scale);
        let tg = tape.mul(t, g);
        let factor = tape.add_scalar(tg, 1.0);
        let scaled = tape.mul(z_q, factor);
        let shift = tape.mul(d_bias, g);
        tape.add(scaled, shift)
    }

    /// Concatenation along time in the given order.
    pub fn fuse(tape: &mut Tape, streams: &[Var]) -> Result<Var> {
        let first = streams.first().ok_or(EafError::Empty("fusion input"))?;
        let d = tape.shape(*first).1;
        for s in streams {
            let (l, w) = tape.shape(*s);
            if l == 0 {
                return Err(EafError::Empty("fusion stream"));
            }
            if w != d {
                return Err(EafError::Dimension(format!(
                    "fusion streams have widths {d} and {w}"
                )));
            }
        }
        Ok(tape.concat_rows(streams))
    }

    pub fn temporal_layer(&self, tape: &mut Tape, b: &Bound, seq: Var) -> Result<Var> {
        let len = tape.shape(seq).0;
        if len < self.temporal.pool * self.temporal.pool {
            return Err(EafError::SequenceTooShort(len));
        }
        let p = &self.temporal;
        let u1 = tape.im2col(seq, p.kernel);
        let c1 = p.conv1.forward(tape, b, u1);
        let h1 = tape.max_pool_rows(c1, p.pool);
        let u2 = tape.im2col(h1, p.kernel);
        let c2 = p.conv2.forward(tape, b, u2);
        let h2 = tape.max_pool_rows(c2, p.pool);
        Ok(p.connector.forward(tape, b, h2))
    }

    /// Full fusion of projected streams (each `· × d`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        spatial: Var,
        motion: Var,
        emotion: Option<Var>,
        switches: FusionSwitches,
    ) -> Result<EafOutput> {
        if switches.use_eaf && !switches.use_emotion {
            return Err(EafError::Config(
                "emotion-aware fusion requires the emotion stream".into(),
            ));
        }
        self.check_width(tape, spatial, "spatial")?;
        self.check_width(tape, motion, "motion")?;
        let emotion = if switches.use_emotion {
            let e = emotion.ok_or(EafError::Empty("emotion stream"))?;
            self.check_width(tape, e, "emotion")?;
            Some(e)
        } else {
            None
        };

        let (streams, anchor) = match (emotion, switches.use_eaf) {
            (Some(z_e), true) => {
                let zp_e = self.enhancer_gate(tape, b, z_e);
                let q = self.quality_scores(tape, b, zp_e);
                let anchor = Self::pool_anchor(tape, zp_e, q, self.enhancer.eps);
                let s = self.modulate(tape, b, spatial, anchor.anchor, 0);
                let m = self.modulate(tape, b, motion, anchor.anchor, 1);
                let e = self.modulate(tape, b, z_e, anchor.anchor, 2);
                (vec![s, m, e], Some(anchor))
            }
            (Some(z_e), false) => (vec![spatial, motion, z_e], None),
            (None, _) => (vec![spatial, motion], None),
        };
        let fused = Self::fuse(tape, &streams)?;
        let out = self.temporal_layer(tape, b, fused)?;
        Ok(EafOutput { fused: out, anchor })
    }

    /// Evaluates [`forward`](Self::forward) on plain matrices without gradients.
    pub fn forward_values(
        &self,
        store: &ParamStore,
        spatial: &Mat,
        motion: &Mat,
        emotion: Option<&Mat>,
        switches: FusionSwitches,
    ) -> Result<Mat> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, GradMode::None);
        let s = tape.constant(spatial.clone());
        let m = tape.constant(motion.clone());
        let e = emotion.map(|e| tape.constant(e.clone()));
        let out = self.forward(&mut tape, &b, s, m, e, switches)?;
        Ok(tape.value(out.fused).clone())
    }
}
