//! End-to-end paired-image synthesis with recognition-based postfiltering.

use super::roles::{run_role, RoleModel, SampleOptions};
use super::words::{sample_word, WordList};
use super::{Canvas, PairedSample};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::recognizer::Recognizer;
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Which two images an emitted pair carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Degrader output with Super-resolver output (the full framework).
    LrHr,
    /// Degrader output with the source image (no Super-resolver).
    LrMr,
    /// Source image with Super-resolver output (no Degrader).
    MrHr,
}

impl PairingMode {
    pub fn name(self) -> &'static str {
        match self {
            PairingMode::LrHr => "lr_hr",
            PairingMode::LrMr => "lr_mr",
            PairingMode::MrHr => "mr_hr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr_hr" => Ok(PairingMode::LrHr),
            "lr_mr" => Ok(PairingMode::LrMr),
            "mr_hr" => Ok(PairingMode::MrHr),
            other => Err(Error::Config(format!("unknown pairing mode {other:?}"))),
        }
    }
}

/// Trained role models driving synthesis. The synthesizer is optional:
/// source images can be provided directly instead.
pub struct SynthModels<'a, T: Real> {
    pub synthesizer: Option<&'a RoleModel<T>>,
    pub super_resolver: &'a RoleModel<T>,
    pub degrader: &'a RoleModel<T>,
}

/// Where source (medium-resolution) text images come from.
pub enum SynthSource<'a, T: Real> {
    /// Sample words and synthesize images for them.
    Words { dict: &'a WordList, max_len: usize },
    /// Use existing labeled images, cycled in order.
    Provided(&'a [(Tensor<T>, String)]),
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub n: usize,
    /// Attempt budget as a multiple of n.
    pub retry_factor: usize,
    /// Failure threshold on the acceptance rate once the budget is spent.
    pub min_acceptance: f64,
    pub pairing: PairingMode,
    pub sample: SampleOptions,
    pub seed: u64,
}

impl SynthesisOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthesisOptions {
            n,
            retry_factor: 5,
            min_acceptance: 0.10,
            pairing: PairingMode::LrHr,
            sample: SampleOptions::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisStats {
    pub attempts: usize,
    pub accepted: usize,
}

impl SynthesisStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// A synthesized pair plus where its source image came from.
pub struct SynthesizedPair<T: Real> {
    pub pair: PairedSample<T>,
    /// "synthesizer" or "provided".
    pub source: &'static str,
}

/// Produces up to `n` postfilter-passing pairs. Each attempt draws or takes
/// a source image, runs the Super-resolver and Degrader on it, keeps the
/// pair when the generated image reads back as the input text, and emits
/// images chosen by the pairing mode. Fails when the budget is exhausted
/// with an acceptance rate below the minimum.
pub fn synthesize_dataset<T: Real>(
    models: &SynthModels<T>,
    source: &SynthSource<T>,
    recognizer: &Recognizer<T>,
    sched: &NoiseSchedule,
    canvas: &Canvas,
    opts: &SynthesisOptions,
) -> Result<(Vec<SynthesizedPair<T>>, SynthesisStats)> {
    if opts.n == 0 {
        return Err(Error::invalid("synthesize", "n must be >= 1".to_string()));
    }
    if let SynthSource::Provided(items) = source {
        if items.is_empty() {
            return Err(Error::invalid("synthesize", "no provided images".to_string()));
        }
    }
    if matches!(source, SynthSource::Words { .. }) && models.synthesizer.is_none() {
        return Err(Error::invalid(
            "synthesize",
            "word source requires a synthesizer model".to_string(),
        ));
    }

    let budget = opts.retry_factor.max(1) * opts.n;
    let mut accepted = Vec::new();
    let mut attempts = 0usize;
    while attempts < budget && accepted.len() < opts.n {
        let attempt = attempts;
        attempts += 1;
        let mut r = rng::stream(opts.seed, 0x_5700 + attempt as u64);
        let (mr, label, source_tag): (Tensor<T>, String, &'static str) = match source {
            SynthSource::Words { dict, max_len } => {
                let text = sample_word(&mut r, *max_len, dict)?;
                let synth = models.synthesizer.expect("checked above");
                let img = run_role(synth, sched, &text, None, &opts.sample, &mut r)?;
                (img, text, "synthesizer")
            }
            SynthSource::Provided(items) => {
                let (img, text) = &items[attempt % items.len()];
                (img.clone(), text.clone(), "provided")
            }
        };
        let hr = run_role(models.super_resolver, sched, &label, Some(&mr), &opts.sample, &mut r)?;
        let lr = run_role(models.degrader, sched, &label, Some(&mr), &opts.sample, &mut r)?;
        // Postfilter: the synthesized clean image must read back correctly.
        if recognizer.recognize(&hr)? != label.to_lowercase() {
            continue;
        }
        let (a, b) = match opts.pairing {
            PairingMode::LrHr => (lr, hr),
            PairingMode::LrMr => (lr, mr),
            PairingMode::MrHr => (mr, hr),
        };
        let pair = PairedSample {
            lr: a,
            hr: b,
            label,
        };
        pair.validate(canvas, crate::text::MAX_TEXT_LEN)?;
        accepted.push(SynthesizedPair {
            pair,
            source: source_tag,
        });
    }

    let stats = SynthesisStats {
        attempts,
        accepted: accepted.len(),
    };
    if accepted.len() < opts.n && stats.acceptance_rate() < opts.min_acceptance {
        return Err(Error::LowAcceptance {
            rate: stats.acceptance_rate(),
            min: opts.min_acceptance,
            attempts,
        });
    }
    Ok((accepted, stats))
}
