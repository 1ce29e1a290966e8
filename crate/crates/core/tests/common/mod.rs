//! Explicit-loop reference implementations and small model builders shared
//! by the integration tests. Nothing here calls the library's numeric code.
#![allow(dead_code)]

use eaf_core::autograd::Mat;
use eaf_core::eaf::{EafConfig, ModulatorParams};
use eaf_core::params::{Linear, Mlp, ParamStore};
use eaf_core::pipeline::ModelConfig;
use eaf_core::translator::{LoraConfig, TranslatorConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight);
    let mut y = vec![0.0; l.d_out];
    for o in 0..l.d_out {
        let mut acc = 0.0;
        for i in 0..l.d_in {
            acc += w[[o, i]] * x[i];
        }
        if let Some(b) = l.bias {
            acc += store.get(b)[[0, o]];
        }
        y[o] = acc;
    }
    y
}

pub fn mlp(store: &ParamStore, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in m.layers.iter().enumerate() {
        h = linear(store, l, &h);
        if i + 1 < m.layers.len() {
            h = h.into_iter().map(gelu).collect();
        }
    }
    h
}

/// Quality-weighted anchor and the normalised weights.
pub fn pool_anchor(zp: &Mat, q: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut total = 0.0;
    for v in q {
        total += v;
    }
    let weights: Vec<f64> = q.iter().map(|v| v / (total + eps)).collect();
    let mut anchor = vec![0.0; zp.ncols()];
    for k in 0..zp.nrows() {
        for c in 0..zp.ncols() {
            anchor[c] += weights[k] * zp[[k, c]];
        }
    }
    (anchor, weights)
}

/// Row-by-row gated scale and shift.
pub fn modulate(store: &ParamStore, m: &ModulatorParams, zq: &Mat, anchor: &[f64]) -> Mat {
    let d = zq.ncols();
    let mut out = Mat::zeros(zq.dim());
    for r in 0..zq.nrows() {
        let mut joint: Vec<f64> = zq.row(r).to_vec();
        joint.extend_from_slice(anchor);
        let deltas = mlp(store, &m.param_mlp, &joint);
        let gates = mlp(store, &m.gate_mlp, &joint);
        for c in 0..d {
            let g = sigmoid(gates[c]);
            out[[r, c]] = zq[[r, c]] * (1.0 + deltas[c].tanh() * g) + deltas[d + c] * g;
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Two-sided contrastive loss written out term by term.
pub fn alignment(z: &Mat, y: &Mat, tau: f64) -> f64 {
    let n = z.nrows();
    let zr: Vec<Vec<f64>> = z.rows().into_iter().map(|r| r.to_vec()).collect();
    let yr: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sum = 0.0;
    for i in 0..n {
        let pos = (cosine(&zr[i], &yr[i]) / tau).exp();
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            row += (cosine(&zr[i], &yr[j]) / tau).exp();
            col += (cosine(&zr[j], &yr[i]) / tau).exp();
        }
        sum += (pos / row).ln() + (pos / col).ln();
    }
    -sum / (2.0 * n as f64)
}

/// Label-smoothed cross-entropy, mean over rows whose target is not `ignore`.
pub fn smoothed_ce(logits: &Mat, targets: &[usize], eps: f64, ignore: Option<usize>) -> f64 {
    let v = logits.ncols();
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        let mut z = 0.0;
        for j in 0..v {
            z += logits[[i, j]].exp();
        }
        for j in 0..v {
            let p = if j == t {
                1.0 - eps + eps / v as f64
            } else {
                eps / v as f64
            };
            sum -= p * (logits[[i, j]].exp() / z).ln();
        }
        count += 1;
    }
    sum / count as f64
}

fn windows(tokens: &[String], n: usize) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(&tokens[i..i + n]);
        i += 1;
    }
    out
}

fn occurrences(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|w| **w == g).count()
}

/// Corpus BLEU-n by listing every n-gram occurrence.
pub fn bleu(corpus: &[(Vec<String>, Vec<Vec<String>>)], max_n: usize) -> Vec<f64> {
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut c = 0;
    let mut r = 0;
    for (hyp, refs) in corpus {
        c += hyp.len();
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(hyp.len()), best.abs_diff(hyp.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
        for n in 1..=max_n {
            let hw = windows(hyp, n);
            total[n - 1] += hw.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &hw {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let mut max_ref = 0;
                for rf in refs {
                    max_ref = max_ref.max(occurrences(&windows(rf, n), g));
                }
                matched[n - 1] += occurrences(&hw, g).min(max_ref);
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    (1..=max_n)
        .map(|n| {
            let mut log_sum = 0.0;
            for k in 0..n {
                if matched[k] == 0 {
                    return 0.0;
                }
                log_sum += (matched[k] as f64 / total[k] as f64).ln();
            }
            bp * (log_sum / n as f64).exp()
        })
        .collect()
}

fn is_subsequence(sub: &[&String], seq: &[String]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|s| it.any(|t| t == *s))
}

/// LCS length by trying every subset of `a`'s positions.
pub fn lcs_enumerate(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &a[i])
            .collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

/// `(precision, recall, f)` of the first reference with the highest F.
pub fn rouge_l(hyp: &[String], refs: &[Vec<String>]) -> (f64, f64, f64) {
    let mut best = (0.0, 0.0, 0.0);
    if hyp.is_empty() {
        return best;
    }
    for rf in refs {
        let l = lcs_enumerate(hyp, rf) as f64;
        let p = l / hyp.len() as f64;
        let r = l / rf.len() as f64;
        let f = if l == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if f > best.2 {
            best = (p, r, f);
        }
    }
    best
}

pub fn random_sentence(rng: &mut ChaCha8Rng, min: usize, max: usize, vocab: usize) -> Vec<String> {
    let len = rng.gen_range(min..=max);
    (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..vocab)))
        .collect()
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<(Vec<String>, Vec<Vec<String>>)> {
    let pairs = rng.gen_range(1..=4);
    (0..pairs)
        .map(|_| {
            let hyp = random_sentence(rng, 0, 9, 4);
            let n_refs = rng.gen_range(1..=3);
            let refs = (0..n_refs).map(|_| random_sentence(rng, 1, 9, 4)).collect();
            (hyp, refs)
        })
        .collect()
}

/// Small end-to-end configuration for gradient and contract checks.
pub fn micro_config(vocab_size: usize, d_llm: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        d_feat: 4,
        eaf: EafConfig {
            d: 4,
            d_llm,
            ..EafConfig::default()
        },
        translator: TranslatorConfig {
            vocab_size,
            d_model: d_llm,
            n_heads: 2,
            n_enc_layers: layers,
            n_dec_layers: layers,
            d_ff: 2 * d_llm,
            lora: LoraConfig {
                rank: 2,
                alpha: 4.0,
                dropout: 0.1,
            },
            ln_eps: 1e-5,
        },
        ..ModelConfig::default()
    }
}
