//! Oracles and helpers shared between integration-test binaries.

#![allow(dead_code)]

use rand::SeedableRng;
use textsr::tensor::Tensor;

// ── CTC brute force ─────────────────────────────────────────────────────

/// Collapse a frame path: merge adjacent repeats, then drop blanks.
pub fn ctc_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != blank {
            out.push(p);
        }
        prev = p;
    }
    out
}

/// -ln of the total probability of all paths collapsing to `target`,
/// enumerated exhaustively.
pub fn ctc_brute_force_loss(
    probs: &[f64],
    n_frames: usize,
    n_classes: usize,
    target: &[usize],
) -> f64 {
    let mut total = 0.0f64;
    let mut path = vec![0usize; n_frames];
    for code in 0..n_classes.pow(n_frames as u32) {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % n_classes;
            c /= n_classes;
        }
        if ctc_collapse(&path, 0) == target {
            let mut p = 1.0;
            for (t, &cls) in path.iter().enumerate() {
                p *= probs[t * n_classes + cls];
            }
            total += p;
        }
    }
    -total.ln()
}

pub fn random_prob_rows(n_frames: usize, n_classes: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let logits = Tensor::<f64>::randn(vec![n_frames, n_classes], &mut rng);
    let mut probs = vec![0.0; n_frames * n_classes];
    for t in 0..n_frames {
        let row = &logits.data()[t * n_classes..(t + 1) * n_classes];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            probs[t * n_classes + j] = e;
            sum += e;
        }
        for j in 0..n_classes {
            probs[t * n_classes + j] /= sum;
        }
    }
    probs
}

/// All target sequences over classes 1..n_classes with length 1..=max_len.
pub fn all_ctc_targets(n_classes: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for base in &frontier {
            for c in 1..n_classes {
                let mut t = base.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// ── direct-formula SSIM ─────────────────────────────────────────────────

use textsr::metrics::{SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

fn window_weights() -> Vec<f64> {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut w = vec![0.0; n * n];
    let mut sum = 0.0;
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            let v = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * n + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Per-window 2-D weighted-sum SSIM, independent of the separable-filter
/// implementation in the library.
pub fn ssim_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, wd) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let w = window_weights();
    let n = SSIM_WINDOW;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut chan_total = 0.0;
    for ci in 0..c {
        let xa = &a.data()[ci * h * wd..(ci + 1) * h * wd];
        let xb = &b.data()[ci * h * wd..(ci + 1) * h * wd];
        let mut acc = 0.0;
        let mut count = 0usize;
        for oy in 0..=(h - n) {
            for ox in 0..=(wd - n) {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..n {
                    for kx in 0..n {
                        let wgt = w[ky * n + kx];
                        let pa = xa[(oy + ky) * wd + ox + kx];
                        let pb = xb[(oy + ky) * wd + ox + kx];
                        mx += wgt * pa;
                        my += wgt * pb;
                        mxx += wgt * pa * pa;
                        myy += wgt * pb * pb;
                        mxy += wgt * pa * pb;
                    }
                }
                let var_x = mxx - mx * mx;
                let var_y = myy - my * my;
                let cov = mxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
                count += 1;
            }
        }
        chan_total += acc / count as f64;
    }
    chan_total / c as f64
}

// ── CLI helpers ─────────────────────────────────────────────────────────

use std::path::Path;
use std::process::Command;

pub fn run_cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_textsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn textsr")
}

pub fn run_cli_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_cli(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}
