//! Training objectives: bidirectional contrastive alignment between pooled
//! sign and text representations, label-smoothed cross-entropy, and their
//! weighted sum.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{EafError, Result};

/// Initial temperature of the alignment loss.
pub const INIT_TAU: f64 = 0.07;

/// Time-axis mean, `L × d → 1 × d`.
pub fn mean_pool(tape: &mut Tape, seq: Var) -> Result<Var> {
    if tape.shape(seq).0 == 0 {
        return Err(EafError::Empty("sequence"));
    }
    Ok(tape.mean_rows(seq))
}

pub fn mean_pool_values(seq: &Mat) -> Result<Array1<f64>> {
    seq.mean_axis(ndarray::Axis(0))
        .ok_or(EafError::Empty("sequence"))
}

/// Pooled sign and text representations for one batch.
#[derive(Clone, Debug)]
pub struct AlignmentBatch {
    /// `|B| × d_llm`
    pub z_pool: Mat,
    /// `|B| × d_llm`
    pub y_pool: Mat,
    pub tau: f64,
}

fn check_rows(m: &Mat, side: &'static str) -> Result<()> {
    for (row, r) in m.rows().into_iter().enumerate() {
        if r.iter().all(|v| *v == 0.0) {
            return Err(EafError::ZeroNorm { side, row });
        }
    }
    Ok(())
}

fn row_normalize(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.mul(x, x);
    let ss = tape.sum_cols(sq);
    let norm = tape.sqrt(ss);
    tape.div(x, norm)
}

fn diag_sum(tape: &mut Tape, m: Var) -> Var {
    let n = tape.shape(m).0;
    let eye = tape.constant(Mat::eye(n));
    let d = tape.mul(m, eye);
    tape.sum_all(d)
}

/// Symmetric InfoNCE over cosine similarities scaled by `1/τ`, `τ = exp(log_tau)`.
///
/// `z` and `y` are `|B| × d`; `log_tau` is `1 × 1`.
pub fn alignment_loss(tape: &mut Tape, z: Var, y: Var, log_tau: Var) -> Result<Var> {
    let (bz, dz) = tape.shape(z);
    let (by, dy) = tape.shape(y);
    if bz != by || dz != dy {
        return Err(EafError::Dimension(format!(
            "alignment batch {bz}x{dz} vs {by}x{dy}"
        )));
    }
    if bz == 0 {
        return Err(EafError::Empty("alignment batch"));
    }
    check_rows(tape.value(z), "sign")?;
    check_rows(tape.value(y), "text")?;
    let zn = row_normalize(tape, z);
    let yn = row_normalize(tape, y);
    let tau = tape.exp(log_tau);
    let s = tape.matmul_nt(zn, yn);
    let st = tape.matmul_nt(yn, zn);
    let logits = tape.div(s, tau);
    let logits_t = tape.div(st, tau);
    let a = tape.log_softmax_rows(logits);
    let b = tape.log_softmax_rows(logits_t);
    let da = diag_sum(tape, a);
    let db = diag_sum(tape, b);
    let both = tape.add(da, db);
    Ok(tape.scale(both, -1.0 / (2.0 * bz as f64)))
}

pub fn alignment_loss_value(batch: &AlignmentBatch) -> Result<f64> {
    if !(batch.tau > 0.0) {
        return Err(EafError::InvalidArgument(format!(
            "temperature must be positive, got {}",
            batch.tau
        )));
    }
    let mut tape = Tape::new();
    let z = tape.constant(batch.z_pool.clone());
    let y = tape.constant(batch.y_pool.clone());
    let lt = tape.scalar(batch.tau.ln());
    let l = alignment_loss(&mut tape, z, y, lt)?;
    Ok(tape.scalar_value(l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub vocab_size: usize,
    /// Positions holding this id are excluded.
    pub ignore_index: Option<usize>,
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(EafError::Config(format!(
                "smoothing epsilon {} outside [0,1)",
                self.epsilon
            )));
        }
        if self.vocab_size == 0 {
            return Err(EafError::Config("vocabulary size must be positive".into()));
        }
        Ok(())
    }

    /// Entropy of the smoothed target distribution, the floor of the loss.
    pub fn target_entropy(&self) -> f64 {
        let v = self.vocab_size as f64;
        let off = self.epsilon / v;
        let on = 1.0 - self.epsilon + off;
        let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
        h(on) + (v - 1.0) * h(off)
    }
}

/// Cross-entropy against smoothed targets, averaged over non-ignored rows.
///
/// `logits` is `N × V` with one row per target position (all samples
/// stacked); `targets` has length `N`.
pub fn generation_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    cfg: &SmoothingConfig,
) -> Result<Var> {
    cfg.validate()?;
    let (n, v) = tape.shape(logits);
    if v != cfg.vocab_size {
        return Err(EafError::Dimension(format!(
            "logits have {v} columns, vocabulary has {}",
            cfg.vocab_size
        )));
    }
    if n != targets.len() {
        return Err(EafError::Dimension(format!(
            "{n} logit rows for {} targets",
            targets.len()
        )));
    }
    let mut dist = Mat::zeros((n, v));
    let mut count = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        if Some(t) == cfg.ignore_index {
            continue;
        }
        if t >= v {
            return Err(EafError::TokenOutOfRange { id: t, vocab: v });
        }
        dist.row_mut(i).fill(cfg.epsilon / v as f64);
        dist[[i, t]] += 1.0 - cfg.epsilon;
        count += 1;
    }
    if count == 0 {
        return Err(EafError::Empty("target positions"));
    }
    let lsm = tape.log_softmax_rows(logits);
    let dist = tape.constant(dist);
    let prod = tape.mul(lsm, dist);
    let total = tape.sum_all(prod);
    Ok(tape.scale(total, -1.0 / count as f64))
}

pub fn generation_loss_value(
    logits: &Mat,
    targets: &[usize],
    cfg: &SmoothingConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = generation_loss(&mut tape, l, targets, cfg)?;
    Ok(tape.scalar_value(loss))
}

/// `ce + λ·align`
pub fn total_loss(tape: &mut Tape, ce: Var, align: Var, lambda: f64) -> Var {
    let a = tape.scale(align, lambda);
    tape.add(ce, a)
}

pub fn total_loss_value(ce: f64, align: f64, lambda: f64) -> f64 {
    ce + lambda * align
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub align: f64,
    pub lambda: f64,
    /// False when `λ = 0`: the alignment term is logged but not optimised.
    pub align_used: bool,
    pub tau: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(z: Mat, y: Mat, tau: f64) -> AlignmentBatch {
        AlignmentBatch {
            z_pool: z,
            y_pool: y,
            tau,
        }
    }

    #[test]
    fn mean_pool_examples() {
        let one = ndarray::array![[1.0, -2.0]];
        assert_eq!(mean_pool_values(&one).unwrap().to_vec(), vec![1.0, -2.0]);
        let sym = ndarray::array![[1.5, 2.0], [-1.5, -2.0]];
        assert_eq!(mean_pool_values(&sym).unwrap().to_vec(), vec![0.0, 0.0]);
        assert!(mean_pool_values(&Mat::zeros((0, 2))).is_err());
        let mut t = Tape::new();
        let e = t.constant(Mat::zeros((0, 3)));
        assert!(mean_pool(&mut t, e).is_err());
    }

    #[test]
    fn identity_similarity_oracle() {
        let e = Mat::eye(4);
        let l = alignment_loss_value(&batch(e.clone(), e, 1.0)).unwrap();
        let expect = (std::f64::consts::E + 3.0).ln() - 1.0;
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.743668).abs() < 1e-6);
    }

    #[test]
    fn single_pair_is_zero() {
        let z = ndarray::array![[0.3, -1.0, 2.0]];
        let y = ndarray::array![[1.0, 1.0, 0.0]];
        assert_eq!(alignment_loss_value(&batch(z, y, 0.07)).unwrap(), 0.0);
    }

    #[test]
    fn zero_rows_are_rejected() {
        let z = ndarray::array![[1.0, 0.0], [0.0, 0.0]];
        let y = Mat::eye(2);
        assert!(matches!(
            alignment_loss_value(&batch(z.clone(), y.clone(), 1.0)),
            Err(EafError::ZeroNorm {
                side: "sign",
                row: 1
            })
        ));
        assert!(matches!(
            alignment_loss_value(&batch(y, z, 1.0)),
            Err(EafError::ZeroNorm {
                side: "text",
                row: 1
            })
        ));
    }

    #[test]
    fn loss_decreases_as_temperature_drops() {
        let e = Mat::eye(5);
        let taus = [2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.01];
        let ls: Vec<f64> = taus
            .iter()
            .map(|t| alignment_loss_value(&batch(e.clone(), e.clone(), *t)).unwrap())
            .collect();
        for w in ls.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(ls.last().unwrap().abs() < 1e-30);
    }

    #[test]
    fn generation_examples() {
        let cfg = SmoothingConfig {
            epsilon: 0.1,
            vocab_size: 4,
            ignore_index: None,
        };
        let uniform = Mat::zeros((3, 4));
        let l = generation_loss_value(&uniform, &[0, 3, 1], &cfg).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);

        let h = -(0.925f64 * 0.925f64.ln() + 3.0 * 0.025 * 0.025f64.ln());
        assert!((h - 0.3487).abs() < 1e-4);
        assert!((cfg.target_entropy() - h).abs() < 1e-15);
        let logits = ndarray::array![[0.925f64.ln(), 0.025f64.ln(), 0.025f64.ln(), 0.025f64.ln()]];
        assert!((generation_loss_value(&logits, &[0], &cfg).unwrap() - h).abs() < 1e-12);

        let hard = SmoothingConfig {
            epsilon: 0.0,
            ..cfg
        };
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let l = generation_loss_value(&ndarray::array![[margin, 0.0, 0.0, 0.0]], &[0], &hard)
                .unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn padding_is_excluded() {
        let cfg = SmoothingConfig {
            epsilon: 0.1,
            vocab_size: 3,
            ignore_index: Some(0),
        };
        let logits = ndarray::array![[1.0, 2.0, 0.5], [9.0, -3.0, 4.0]];
        let both = generation_loss_value(&logits, &[2, 0], &cfg).unwrap();
        let first =
            generation_loss_value(&logits.slice(ndarray::s![..1, ..]).to_owned(), &[2], &cfg)
                .unwrap();
        assert_eq!(both, first);
        assert!(matches!(
            generation_loss_value(&logits, &[0, 0], &cfg),
            Err(EafError::Empty(_))
        ));
        assert!(matches!(
            generation_loss_value(&logits, &[3, 1], &cfg),
            Err(EafError::TokenOutOfRange { id: 3, vocab: 3 })
        ));
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss_value(0.5, 0.25, 1.0), 0.75);
        assert_eq!(total_loss_value(0.5, 0.25, 0.0), 0.5);
        let mut t = Tape::new();
        let ce = t.scalar(0.5);
        let al = t.scalar(0.25);
        let tot = total_loss(&mut t, ce, al, 1.0);
        assert_eq!(t.scalar_value(tot), 0.75);
    }

    #[test]
    fn report_serialises_to_one_line() {
        let r = LossReport {
            step: 3,
            total: 1.0,
            ce: 0.5,
            align: 0.5,
            lambda: 1.0,
            align_used: true,
            tau: 0.07,
            lr: 1e-4,
            grad_norm: 2.0,
        };
        let line = r.to_json_line();
        assert!(!line.contains('\n'));
        assert_eq!(serde_json::from_str::<LossReport>(&line).unwrap(), r);
    }

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> Mat {
        Mat::from_shape_fn((rows, cols), |(i, j)| {
            vals[(i * cols + j) % vals.len()] + 0.01 * (i + 1) as f64
        })
    }

    proptest! {
        #[test]
        fn batch_permutation_invariant(b in 2usize..6, d in 2usize..6,
                                       vals in proptest::collection::vec(-2.0f64..2.0, 36), tau in 0.05f64..2.0) {
            let z = mat(b, d, &vals);
            let y = mat(b, d, &vals[7..]);
            let base = alignment_loss_value(&batch(z.clone(), y.clone(), tau)).unwrap();
            let perm: Vec<usize> = (0..b).rev().collect();
            let zp = z.select(ndarray::Axis(0), &perm);
            let yp = y.select(ndarray::Axis(0), &perm);
            let l = alignment_loss_value(&batch(zp, yp, tau)).unwrap();
            prop_assert!((l - base).abs() < 1e-10);
        }

        #[test]
        fn row_rescaling_invariant(b in 1usize..6, d in 2usize..6, row in 0usize..6, c in 0.01f64..100.0,
                                   vals in proptest::collection::vec(-2.0f64..2.0, 36)) {
            let z = mat(b, d, &vals);
            let y = mat(b, d, &vals[5..]);
            let base = alignment_loss_value(&batch(z.clone(), y.clone(), 0.3)).unwrap();
            let mut z2 = z.clone();
            z2.row_mut(row % b).mapv_inplace(|v| v * c);
            let mut y2 = y.clone();
            y2.row_mut((row + 1) % b).mapv_inplace(|v| v * c);
            prop_assert!((alignment_loss_value(&batch(z2, y, 0.3)).unwrap() - base).abs() < 1e-10);
            prop_assert!((alignment_loss_value(&batch(z, y2, 0.3)).unwrap() - base).abs() < 1e-10);
        }

        #[test]
        fn ce_bounded_below_by_target_entropy(v in 2usize..8, eps in 0.0f64..0.9,
                                              vals in proptest::collection::vec(-4.0f64..4.0, 40), n in 1usize..5) {
            let cfg = SmoothingConfig { epsilon: eps, vocab_size: v, ignore_index: None };
            let logits = Mat::from_shape_fn((n, v), |(i, j)| vals[(i * v + j) % 40]);
            let targets: Vec<usize> = (0..n).map(|i| (i * 3) % v).collect();
            let l = generation_loss_value(&logits, &targets, &cfg).unwrap();
            prop_assert!(l >= cfg.target_entropy() - 1e-12);
        }
    }
}
