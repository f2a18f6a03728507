//! Connectionist temporal classification: path probabilities, the
//! forward-backward loss and its gradient, and decoding.
//!
//! Class indices run over `0..K` where the last index `K - 1` is the blank.
//! With the default [`Alphabet`] that is 36 alphanumerics plus the blank at
//! index 36, but every routine here works for any `K >= 2`, which is what
//! lets the brute-force oracle run on tiny label spaces.

mod decode;
mod label;

pub use decode::{best_path, best_path_decode, edit_distance, lexicon_decode, lexicon_match, Lexicon, LexiconMatch};
pub use label::{Alphabet, LabelSequence};

use crate::error::{Error, Result};
use crate::model::DistributionSequence;
use crate::tensor::Tensor;

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSequence {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &p in path {
        if prev != Some(p) && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    LabelSequence::from_indices(out)
}

/// Product of the per-step probabilities of `path`.
pub fn path_probability(y: &DistributionSequence, path: &[usize]) -> Result<f64> {
    if path.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "path of length {} for a sequence of {} frames",
            path.len(),
            y.len()
        )));
    }
    path.iter()
        .enumerate()
        .map(|(t, &k)| {
            y.row(t).get(k).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("class {k} at step {t} outside 0..{}", y.num_classes()))
            })
        })
        .product()
}

/// Largest path count [`label_probability_bruteforce`] will enumerate.
pub const BRUTEFORCE_LIMIT: u64 = 10_000_000;

/// `p(l | y)` by summing [`path_probability`] over every path that
/// collapses to `label`. Exponential; meant as a reference for small cases.
pub fn label_probability_bruteforce(y: &DistributionSequence, label: &LabelSequence) -> Result<f64> {
    let (w, k) = (y.len(), y.num_classes());
    let count = (k as u64).checked_pow(w as u32).filter(|&c| c <= BRUTEFORCE_LIMIT);
    if count.is_none() {
        return Err(Error::InvalidArgument(format!(
            "{k}^{w} paths exceed the enumeration limit of {BRUTEFORCE_LIMIT}"
        )));
    }
    let blank = y.blank();
    let mut path = vec![0usize; w];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == *label {
            total += path.iter().enumerate().map(|(t, &c)| y.row(t)[c]).product::<f64>();
        }
        // odometer increment, last step fastest
        let mut d = w;
        loop {
            if d == 0 {
                return Ok(total);
            }
            d -= 1;
            path[d] += 1;
            if path[d] < k {
                break;
            }
            path[d] = 0;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames needed to emit `label`: one per symbol plus a
/// separating blank between equal neighbours.
pub fn required_frames(label: &LabelSequence) -> usize {
    let s = label.as_slice();
    s.len() + s.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Blank-augmented target `[b, l1, b, l2, ..., b]`.
fn augment(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &c in label {
        ext.push(c);
        ext.push(blank);
    }
    ext
}

/// Whether the transition `s - 2 -> s` is allowed in the augmented target.
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Forward variables in log space, `alpha[t * S + s]`.
fn log_alpha(logp: &[f64], frames: usize, k: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; frames * s_len];
    alpha[0] = logp[ext[0]];
    if s_len > 1 {
        alpha[1] = logp[ext[1]];
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_sum_exp(a, prev[s - 1]);
            }
            if can_skip(ext, s, blank) {
                a = log_sum_exp(a, prev[s - 2]);
            }
            cur[s] = a + logp[t * k + ext[s]];
        }
    }
    alpha
}

/// Backward variables in log space, including the emission at `t`.
fn log_beta(logp: &[f64], frames: usize, k: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = logp[(frames - 1) * k + ext[s_len - 1]];
    if s_len > 1 {
        beta[last + s_len - 2] = logp[(frames - 1) * k + ext[s_len - 2]];
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_sum_exp(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2, blank) {
                b = log_sum_exp(b, next[s + 2]);
            }
            cur[s] = b + logp[t * k + ext[s]];
        }
    }
    beta
}

fn final_log_prob(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let last = &alpha[(frames - 1) * s_len..];
    if s_len > 1 {
        log_sum_exp(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `log p(l | y)` by the forward recursion. Returns `-inf` when the label
/// cannot be emitted in `y.len()` frames.
pub fn log_label_probability(y: &DistributionSequence, label: &LabelSequence) -> f64 {
    let (frames, k) = (y.len(), y.num_classes());
    if frames == 0 || required_frames(label) > frames {
        return if frames == 0 && label.is_empty() { 0.0 } else { f64::NEG_INFINITY };
    }
    let logp: Vec<f64> = y.as_slice().iter().map(|p| p.ln()).collect();
    let ext = augment(label.as_slice(), y.blank());
    let alpha = log_alpha(&logp, frames, k, &ext, y.blank());
    final_log_prob(&alpha, frames, ext.len())
}

/// `p(l | y)` by the forward recursion.
pub fn label_probability(y: &DistributionSequence, label: &LabelSequence) -> f64 {
    log_label_probability(y, label).exp()
}

/// Loss `-log p(l | y)` of one sequence and its gradient with respect to
/// the pre-softmax scores, computed by forward-backward in log space.
///
/// `logits` holds `frames × k` unnormalized scores, blank last.
pub fn sequence_loss_and_grad(logits: &[f64], k: usize, label: &LabelSequence) -> (f64, Vec<f64>) {
    let frames = logits.len() / k;
    let blank = k - 1;
    let mut logp = logits.to_vec();
    for row in logp.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    let ext = augment(label.as_slice(), blank);
    let s_len = ext.len();
    let alpha = log_alpha(&logp, frames, k, &ext, blank);
    let beta = log_beta(&logp, frames, k, &ext, blank);
    let log_p = final_log_prob(&alpha, frames, s_len);

    let mut grad = vec![0.0; frames * k];
    let mut occupancy = vec![f64::NEG_INFINITY; k];
    for t in 0..frames {
        occupancy.fill(f64::NEG_INFINITY);
        for (s, &c) in ext.iter().enumerate() {
            let g = alpha[t * s_len + s] + beta[t * s_len + s] - logp[t * k + c];
            occupancy[c] = log_sum_exp(occupancy[c], g);
        }
        for c in 0..k {
            grad[t * k + c] = logp[t * k + c].exp() - (occupancy[c] - log_p).exp();
        }
    }
    (-log_p, grad)
}

/// Summed CTC loss over a batch of `[B, W, K]` logits.
///
/// The returned scalar is a graph node; calling `backward` on it (or on
/// anything built from it) propagates the forward-backward gradient into
/// the network producing `logits`.
pub fn ctc_loss(logits: &Tensor, targets: &[LabelSequence]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("ctc_loss expects [B,W,K] logits, got {s:?}")));
    }
    let (b, w, k) = (s[0], s[1], s[2]);
    if targets.len() != b {
        return Err(Error::InvalidArgument(format!("{} targets for a batch of {b}", targets.len())));
    }
    if k < 2 {
        return Err(Error::Shape(format!("ctc_loss needs a blank plus at least one class, got K={k}")));
    }
    for (i, l) in targets.iter().enumerate() {
        if l.is_empty() {
            return Err(Error::InvalidArgument(format!("empty target for sample {i}")));
        }
        if let Some(&c) = l.as_slice().iter().find(|&&c| c >= k - 1) {
            return Err(Error::InvalidArgument(format!(
                "target for sample {i} contains class {c}, outside 0..{}",
                k - 1
            )));
        }
        let need = required_frames(l);
        if need > w {
            return Err(Error::InfeasibleTarget {
                index: i,
                label_len: l.len(),
                required: need,
                frames: w,
            });
        }
    }
    let data = logits.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ctc_loss logits".into()));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(data.len());
    for (i, l) in targets.iter().enumerate() {
        let (loss, g) = sequence_loss_and_grad(&data[i * w * k..(i + 1) * w * k], k, l);
        total += loss;
        grad.extend(g);
    }
    drop(data);
    Ok(Tensor::scalar_with_grad(logits, total, grad))
}
