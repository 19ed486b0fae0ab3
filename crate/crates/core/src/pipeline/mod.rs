//! Paired-dataset framework: synthetic rendering and degradation,
//! word sampling, role models, recognition-based filtering, dataset
//! synthesis and augmentation.

pub mod degrade;
pub mod font;
pub mod render;
pub mod roles;
pub mod synth;
pub mod words;

pub use degrade::{synth_degrade, DegradeParams};
pub use render::{render_text_image, RenderStyle};
pub use roles::{
    run_role, train_role, LossMode, Role, RoleModel, RoleModelConfig, RoleTrainOptions,
    SampleOptions, TextMode,
};
pub use synth::{synthesize_dataset, PairingMode, SynthModels, SynthSource, SynthesisOptions};
pub use words::{sample_word, WordList};

use crate::error::{Error, Result};
use crate::recognizer::Recognizer;
use crate::rng;
use crate::tensor::{Real, Tensor};
use crate::text::Charset;

/// Shared image geometry. Low-resolution content is stored pre-upsampled on
/// this canvas, so every image in the system has one size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Canvas {
    pub fn desk() -> Self {
        Canvas {
            channels: 1,
            height: 16,
            width: 64,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

/// One LR-HR training pair with its transcription.
#[derive(Debug, Clone)]
pub struct PairedSample<T: Real> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub label: String,
}

impl<T: Real> PairedSample<T> {
    pub fn validate(&self, canvas: &Canvas, max_len: usize) -> Result<()> {
        let want = canvas.shape();
        if self.lr.shape() != want.as_slice() || self.hr.shape() != want.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "paired_sample",
                lhs: want,
                rhs: self.lr.shape().to_vec(),
            });
        }
        let k = self.label.chars().count();
        if k == 0 || k > max_len {
            return Err(Error::invalid(
                "paired_sample",
                format!("label length {k} outside 1..={max_len}"),
            ));
        }
        if !Charset::ground_truth().contains_text(&self.label) {
            return Err(Error::invalid(
                "paired_sample",
                format!("label {:?} has characters outside the 63-charset", self.label),
            ));
        }
        Ok(())
    }
}

/// Generates a desk-scale base dataset: clean renders as HR, randomized
/// parametric degradations as LR.
pub fn make_base_dataset<T: Real>(
    n: usize,
    canvas: &Canvas,
    max_len: usize,
    dict: &WordList,
    seed: u64,
) -> Result<Vec<PairedSample<T>>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, 0x_D000 + i as u64);
        let label = sample_word(&mut r, max_len, dict)?;
        let style = RenderStyle::sample(&mut r, label.chars().count(), canvas)?;
        let hr = render_text_image(&label, &style, canvas, &mut r)?;
        let params = DegradeParams::sample(&mut r);
        let lr = synth_degrade(&hr, &params, &mut r)?;
        out.push(PairedSample { lr, hr, label });
    }
    Ok(out)
}

/// Keeps samples whose HR image reads back as its label (both lowercased).
/// The pre-training filter for source datasets.
pub fn prefilter<T: Real>(
    samples: &[PairedSample<T>],
    recognizer: &Recognizer<T>,
) -> Result<Vec<PairedSample<T>>> {
    let mut kept = Vec::new();
    for s in samples {
        if recognizer.recognize(&s.hr)? == s.label.to_lowercase() {
            kept.push(s.clone());
        }
    }
    Ok(kept)
}

/// Drops synthesized pairs whose generated image does not read back as the
/// input text. Same predicate as [`prefilter`], applied after synthesis.
pub fn postfilter<T: Real>(
    pairs: &[PairedSample<T>],
    recognizer: &Recognizer<T>,
) -> Result<Vec<PairedSample<T>>> {
    prefilter(pairs, recognizer)
}

/// Applies the Super-resolver to already-high-resolution images, producing
/// the sharper higher-resolution variants.
pub fn make_herr<T: Real>(
    super_resolver: &RoleModel<T>,
    sched: &crate::diffusion::NoiseSchedule,
    hr_images: &[(Tensor<T>, String)],
    opts: &SampleOptions,
    seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(hr_images.len());
    for (i, (img, label)) in hr_images.iter().enumerate() {
        let mut r = rng::stream(seed, 0x_4E00 + i as u64);
        out.push(run_role(super_resolver, sched, label, Some(img), opts, &mut r)?);
    }
    Ok(out)
}
