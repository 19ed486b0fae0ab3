//! SSIM against the direct-formula oracle, and the PSNR closed form.

mod common;

use common::ssim_direct;
use rand::SeedableRng;
use textsr::metrics::{psnr, ssim};
use textsr::tensor::Tensor;

#[test]
fn ssim_matches_direct_formula_on_100_random_pairs() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
    for case in 0..100 {
        let a = Tensor::<f64>::randn(vec![1, 16, 32], &mut rng).map(|v| (v * 0.25 + 0.5).clamp(0.0, 1.0));
        let b = Tensor::<f64>::randn(vec![1, 16, 32], &mut rng).map(|v| (v * 0.25 + 0.5).clamp(0.0, 1.0));
        let fast = ssim(&a, &b).unwrap();
        let direct = ssim_direct(&a, &b);
        assert!(
            (fast - direct).abs() < 1e-6,
            "case {case}: {fast} vs {direct}"
        );
    }
}

#[test]
fn psnr_uniform_error_case() {
    // 0.1 everywhere -> MSE 0.01 -> exactly 20 dB.
    let a = Tensor::<f64>::full(vec![1, 12, 12], 0.2);
    let b = Tensor::<f64>::full(vec![1, 12, 12], 0.3);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}
