//! SSIM, PSNR, and recognition-accuracy evaluation.
//!
//! Both image metrics expect pixel values in [0, 1]. PSNR of identical
//! images is reported as +infinity and excluded from aggregate means with a
//! count note rather than capped.

use crate::error::{Error, Result};
use crate::recognizer::Recognizer;
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter of an h*w plane.
fn filter_valid(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn check_pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5, K1 0.01,
/// K2 0.03), computed per channel and averaged.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let (c, h, w) = a.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ci in 0..c {
        let plane = |t: &Tensor<T>| -> Vec<f64> {
            t.data()[ci * h * w..(ci + 1) * h * w]
                .iter()
                .map(|v| v.to_f64())
                .collect()
        };
        let x = plane(a);
        let y = plane(b);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, h, w);
        let mu_y = filter_valid(&y, h, w);
        let m_xx = filter_valid(&xx, h, w);
        let m_yy = filter_valid(&yy, h, w);
        let m_xy = filter_valid(&xy, h, w);
        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - mx * mx;
            let var_y = m_yy[i] - my * my;
            let cov = m_xy[i] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            acc += num / den;
        }
        total += acc / mu_x.len() as f64;
    }
    Ok(total / c as f64)
}

/// 10*log10(1/MSE) for [0,1] images; +infinity when the images are equal.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair("psnr", a, b)?;
    let n = a.numel() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Maps a diffusion-range [-1,1] image to the [0,1] metric range.
pub fn to_metric_range<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    img.map(|v| (v + T::ONE) * half)
}

#[derive(Debug, Clone)]
pub struct SampleEval {
    pub ssim: f64,
    pub psnr_db: f64,
    pub predicted: String,
    pub label: String,
    pub correct: bool,
}

/// Aggregate evaluation over (image, reference, label) samples.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ssim: f64,
    /// Mean over finite PSNR values.
    pub psnr_db: f64,
    /// Samples whose PSNR was infinite (excluded from the mean).
    pub psnr_infinite: usize,
    pub accuracy: f64,
    /// Set when the report was computed over zero samples.
    pub empty: bool,
    pub per_sample: Vec<SampleEval>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("samples = {}\n", self.per_sample.len()));
        out.push_str(&format!("ssim = {:.6}\n", self.ssim));
        out.push_str(&format!("psnr_db = {:.6}\n", self.psnr_db));
        out.push_str(&format!("psnr_infinite = {}\n", self.psnr_infinite));
        out.push_str(&format!("accuracy = {:.6}\n", self.accuracy));
        if self.empty {
            out.push_str("warning = empty-evaluation\n");
        }
        out.push_str("# idx\tssim\tpsnr_db\tcorrect\tpredicted\tlabel\n");
        for (i, s) in self.per_sample.iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
                s.ssim, s.psnr_db, s.correct as u8, s.predicted, s.label
            ));
        }
        out
    }
}

/// Fraction of samples whose greedy decode equals the lowercased label.
/// An empty list yields accuracy 0 with the `empty` flag set in reports.
pub fn accuracy<T: Real>(model: &Recognizer<T>, samples: &[(Tensor<T>, String)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (img, label) in samples {
        if model.recognize(img)? == label.to_lowercase() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Evaluates (output, reference, label) triples: SSIM/PSNR between output
/// and reference in metric range, recognition accuracy of the outputs.
/// Images arrive in diffusion range [-1,1].
pub fn evaluate<T: Real>(
    recognizer: &Recognizer<T>,
    samples: &[(Tensor<T>, Tensor<T>, String)],
) -> Result<EvalReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut ssim_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut psnr_finite = 0usize;
    let mut correct = 0usize;
    for (out, reference, label) in samples {
        let om = to_metric_range(out);
        let rm = to_metric_range(reference);
        let s = ssim(&om, &rm)?;
        let p = psnr(&om, &rm)?;
        let predicted = recognizer.recognize(out)?;
        let ok = predicted == label.to_lowercase();
        ssim_sum += s;
        if p.is_finite() {
            psnr_sum += p;
            psnr_finite += 1;
        }
        if ok {
            correct += 1;
        }
        per_sample.push(SampleEval {
            ssim: s,
            psnr_db: p,
            predicted,
            label: label.clone(),
            correct: ok,
        });
    }
    let n = samples.len();
    Ok(EvalReport {
        ssim: if n == 0 { 0.0 } else { ssim_sum / n as f64 },
        psnr_db: if psnr_finite == 0 {
            0.0
        } else {
            psnr_sum / psnr_finite as f64
        },
        psnr_infinite: n - psnr_finite,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        empty: n == 0,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_img(seed: u64) -> Tensor<f64> {
        let mut r = rng::root(seed);
        Tensor::<f64>::randn(vec![1, 16, 64], &mut r).map(|v| (v * 0.2 + 0.5).clamp(0.0, 1.0))
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let x = rand_img(1);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let (a, b) = (rand_img(2), rand_img(3));
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_negative_for_inverted_binary_image() {
        let mut data = vec![0.0f64; 16 * 64];
        for y in 0..16 {
            for x in 0..64 {
                data[y * 64 + x] = if (x / 4 + y / 4) % 2 == 0 { 1.0 } else { 0.0 };
            }
        }
        let img = Tensor::from_vec(vec![1, 16, 64], data).unwrap();
        let inv = img.map(|v| 1.0 - v);
        assert!(ssim(&img, &inv).unwrap() < 0.0);
    }

    #[test]
    fn psnr_closed_form_and_symmetry() {
        let a = Tensor::<f64>::full(vec![1, 16, 16], 0.5);
        let b = Tensor::<f64>::full(vec![1, 16, 16], 0.6);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(p, psnr(&b, &a).unwrap());
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let a = rand_img(4);
        let mut prev = f64::INFINITY;
        for k in 1..4 {
            let b = a.map(|v| (v + 0.03 * k as f64).clamp(0.0, 1.0));
            let p = psnr(&a, &b).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn metric_shape_mismatch_is_error() {
        let a = Tensor::<f64>::zeros(vec![1, 16, 64]);
        let b = Tensor::<f64>::zeros(vec![1, 16, 32]);
        assert!(ssim(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
    }
}
