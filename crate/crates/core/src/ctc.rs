//! CTC forward algorithm and its gradient.
//!
//! Works on per-frame log-probabilities of shape [n_frames, n_classes] with
//! the blank at a caller-chosen index. The dynamic program runs in f64
//! regardless of the tape precision.

use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Blank-interleaved label sequence: [b, t0, b, t1, ..., b].
fn extend_targets(targets: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * targets.len() + 1);
    ext.push(blank);
    for &t in targets {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Minimum number of frames needed to emit `targets`: one frame per label
/// plus one separating blank per adjacent repeat.
pub fn min_frames(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

pub fn check_feasible(targets: &[usize], n_frames: usize, n_classes: usize, blank: usize) -> Result<()> {
    if let Some(&bad) = targets.iter().find(|&&t| t >= n_classes || t == blank) {
        return Err(Error::invalid(
            "ctc_loss",
            format!("target class {bad} invalid for {n_classes} classes with blank {blank}"),
        ));
    }
    let need = min_frames(targets);
    if need > n_frames {
        return Err(Error::invalid(
            "ctc_loss",
            format!(
                "target of length {} needs {need} frames but only {n_frames} are available",
                targets.len()
            ),
        ));
    }
    Ok(())
}

/// Forward pass: returns (loss, log_alpha) where loss = -log P(targets | log_probs).
/// `log_alpha` is the [n_frames, S] DP table kept for the gradient.
pub fn ctc_forward(
    log_probs: &[f64],
    n_frames: usize,
    n_classes: usize,
    targets: &[usize],
    blank: usize,
) -> Result<(f64, Vec<f64>)> {
    check_feasible(targets, n_frames, n_classes, blank)?;
    let ext = extend_targets(targets, blank);
    let s_len = ext.len();
    let y = |t: usize, k: usize| log_probs[t * n_classes + k];

    let mut alpha = vec![NEG_INF; n_frames * s_len];
    alpha[0] = y(0, ext[0]);
    if s_len > 1 {
        alpha[1] = y(0, ext[1]);
    }
    for t in 1..n_frames {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if acc == NEG_INF {
                NEG_INF
            } else {
                acc + y(t, ext[s])
            };
        }
    }
    let last = (n_frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == NEG_INF {
        return Err(Error::invalid(
            "ctc_loss",
            "no feasible alignment has nonzero probability".to_string(),
        ));
    }
    Ok((-log_p, alpha))
}

/// Gradient of the loss w.r.t. the log-probabilities, scaled by `upstream`.
///
/// Uses the alpha table from the forward pass plus a beta recursion where
/// beta_t(s) excludes the emission at frame t, so that
/// log P = LSE_s(alpha_t(s) + beta_t(s)) holds at every t.
pub fn ctc_backward(
    log_probs: &[f64],
    n_frames: usize,
    n_classes: usize,
    targets: &[usize],
    blank: usize,
    alpha: &[f64],
    upstream: f64,
    grad: &mut [f64],
) {
    let ext = extend_targets(targets, blank);
    let s_len = ext.len();
    let y = |t: usize, k: usize| log_probs[t * n_classes + k];

    let last = (n_frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    let mut beta = vec![NEG_INF; n_frames * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..n_frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1) * s_len + s] + y(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1) * s_len + s + 1] + y(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta[(t + 1) * s_len + s + 2] + y(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = acc;
        }
    }

    // dL/dy_t(k) = -sum_{s: ext[s]=k} exp(alpha_t(s) + beta_t(s) - log P)
    for t in 0..n_frames {
        for (s, &lab) in ext.iter().enumerate() {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == NEG_INF || b == NEG_INF {
                continue;
            }
            grad[t * n_classes + lab] -= upstream * (a + b - log_p).exp();
        }
    }
}
