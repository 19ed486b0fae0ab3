//! Simple parametric degradation: Gaussian blur, bicubic down/up resampling,
//! additive noise. The stand-in for real low-resolution capture.

use crate::error::Result;
use crate::rng::Prng;
use crate::tensor::{Real, Tensor};
use crate::text::bicubic_resize;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeParams {
    pub blur_sigma: f64,
    /// Spatial shrink factor before bicubic re-upsampling; 1 disables.
    pub factor: usize,
    pub noise_sigma: f64,
}

impl DegradeParams {
    pub fn identity() -> Self {
        DegradeParams {
            blur_sigma: 0.0,
            factor: 1,
            noise_sigma: 0.0,
        }
    }

    /// Randomized degradation for base-dataset generation.
    pub fn sample(rng: &mut Prng) -> Self {
        DegradeParams {
            blur_sigma: rng.gen_range(0.5..1.2),
            factor: if rng.gen::<f64>() < 0.7 { 2 } else { 4 },
            noise_sigma: rng.gen_range(0.01..0.08),
        }
    }
}

fn gaussian_blur<T: Real>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let (c, h, w) = img.chw()?;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }

    let mut out = img.clone();
    for ci in 0..c {
        let plane: Vec<f64> = img.data()[ci * h * w..(ci + 1) * h * w]
            .iter()
            .map(|v| v.to_f64())
            .collect();
        // horizontal, edge-clamped
        let mut tmp = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * plane[y * w + sx];
                }
                tmp[y * w + x] = acc;
            }
        }
        // vertical
        let dst = &mut out.data_mut()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[sy * w + x];
                }
                dst[y * w + x] = T::from_f64(acc);
            }
        }
    }
    Ok(out)
}

/// Degrades an image on its own canvas: blur, bicubic down then back up,
/// additive Gaussian noise, final clamp to [-1, 1].
pub fn synth_degrade<T: Real>(
    img: &Tensor<T>,
    params: &DegradeParams,
    rng: &mut Prng,
) -> Result<Tensor<T>> {
    let (_, h, w) = img.chw()?;
    let mut out = img.clone();
    if params.blur_sigma > 0.0 {
        out = gaussian_blur(&out, params.blur_sigma)?;
    }
    if params.factor > 1 {
        let (lh, lw) = ((h / params.factor).max(1), (w / params.factor).max(1));
        out = bicubic_resize(&bicubic_resize(&out, lh, lw)?, h, w)?;
    }
    if params.noise_sigma > 0.0 {
        let s = params.noise_sigma;
        for v in out.data_mut().iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = T::from_f64((v.to_f64() + s * n).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{psnr, to_metric_range};
    use crate::rng;

    fn test_img(seed: u64) -> Tensor<f64> {
        let mut r = rng::root(seed);
        Tensor::<f64>::randn(vec![1, 16, 64], &mut r).map(|v| (v * 0.5).clamp(-1.0, 1.0))
    }

    #[test]
    fn identity_params_are_identity() {
        let img = test_img(1);
        let out = synth_degrade(&img, &DegradeParams::identity(), &mut rng::root(2)).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degradation_strictly_reduces_psnr() {
        let img = test_img(3);
        let params = DegradeParams {
            blur_sigma: 1.0,
            factor: 2,
            noise_sigma: 0.03,
        };
        let out = synth_degrade(&img, &params, &mut rng::root(4)).unwrap();
        let p = psnr(&to_metric_range(&img), &to_metric_range(&out)).unwrap();
        assert!(p.is_finite());
        assert!(p < 40.0, "psnr={p}");
    }

    #[test]
    fn more_noise_means_lower_psnr() {
        let img = test_img(5);
        let mut prev = f64::INFINITY;
        for s in [0.02, 0.06, 0.15] {
            let params = DegradeParams {
                blur_sigma: 0.0,
                factor: 1,
                noise_sigma: s,
            };
            let out = synth_degrade(&img, &params, &mut rng::root(6)).unwrap();
            let p = psnr(&to_metric_range(&img), &to_metric_range(&out)).unwrap();
            assert!(p < prev, "sigma={s} psnr={p} prev={prev}");
            prev = p;
        }
    }

    #[test]
    fn degrade_is_seed_deterministic() {
        let img = test_img(7);
        let params = DegradeParams::sample(&mut rng::root(8));
        let a = synth_degrade(&img, &params, &mut rng::root(9)).unwrap();
        let b = synth_degrade(&img, &params, &mut rng::root(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
