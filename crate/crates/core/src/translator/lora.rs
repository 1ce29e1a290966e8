//! Low-rank adapters: `y = W·x + (α/r)·B·(A·dropout(x))` with `B = 0` at init.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{EafError, Result};
use crate::params::{uniform, Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            alpha: 32.0,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoraAdapter {
    /// `r × d_in`
    pub a: ParamId,
    /// `d_out × r`
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl LoraAdapter {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        cfg: LoraConfig,
    ) -> Self {
        let a = store.add(
            format!("{name}.lora_a"),
            uniform(rng, (cfg.rank, d_in), 1.0 / (d_in as f64).sqrt()),
            true,
        );
        let b = store.add(
            format!("{name}.lora_b"),
            Mat::zeros((d_out, cfg.rank)),
            true,
        );
        Self {
            a,
            b,
            rank: cfg.rank,
            alpha: cfg.alpha,
            dropout: cfg.dropout,
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Adds the adapter's delta to `base_out`, where `x` is the layer input
    /// (rows are tokens). Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        base_out: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let x = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let (r, c) = tape.shape(x);
                let mask = Mat::from_shape_simple_fn((r, c), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mask = tape.constant(mask);
                tape.mul(x, mask)
            }
            _ => x,
        };
        let down = tape.matmul_nt(x, bound.var(self.a));
        let up = tape.matmul_nt(down, bound.var(self.b));
        let delta = tape.scale(up, self.scale());
        tape.add(base_out, delta)
    }
}

/// `base·x + (α/r)·B·(A·x)` for a single input vector.
pub fn lora_apply(base: &Mat, a: &Mat, b: &Mat, alpha: f64, x: &[f64]) -> Result<Vec<f64>> {
    let (d_out, d_in) = base.dim();
    let r = a.nrows();
    if a.ncols() != d_in || b.dim() != (d_out, r) || x.len() != d_in {
        return Err(EafError::Dimension(format!(
            "base {d_out}x{d_in}, A {:?}, B {:?}, x {}",
            a.dim(),
            b.dim(),
            x.len()
        )));
    }
    if r == 0 {
        return Err(EafError::InvalidArgument(
            "adapter rank must be positive".into(),
        ));
    }
    let x = ndarray::ArrayView1::from(x);
    let delta = b.dot(&a.dot(&x)) * (alpha / r as f64);
    Ok((base.dot(&x) + delta).to_vec())
}
