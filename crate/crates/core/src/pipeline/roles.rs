//! The three conditional-diffusion roles. A Synthesizer draws a text image
//! from text alone; a Super-resolver maps (degraded image, text) to a clean
//! image; a Degrader is the Super-resolver training with condition and
//! target swapped. All three share one model type differing only in
//! configuration.

use super::{Canvas, PairedSample};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{self, denoise_loss, NoiseSchedule, VarianceMode};
use crate::error::{Error, Result};
use crate::module::Module;
use crate::optim::{Adam, Ema};
use crate::recognizer::{ctc_loss, kl_loss, Recognizer};
use crate::rng::{self, Prng};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};
use crate::text::{mix_input, Charset, TextEncoder, TextEncoderConfig, TextPrior};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Synthesizer,
    SuperResolver,
    Degrader,
}

impl Role {
    pub fn has_image_condition(self) -> bool {
        !matches!(self, Role::Synthesizer)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Synthesizer => "synthesizer",
            Role::SuperResolver => "super_resolver",
            Role::Degrader => "degrader",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthesizer" => Ok(Role::Synthesizer),
            "super_resolver" => Ok(Role::SuperResolver),
            "degrader" => Ok(Role::Degrader),
            other => Err(Error::Config(format!("unknown role {other:?}"))),
        }
    }

    /// (condition image, target image) for one training pair.
    fn pick<'a, T: Real>(self, s: &'a PairedSample<T>) -> (Option<&'a Tensor<T>>, &'a Tensor<T>) {
        match self {
            Role::Synthesizer => (None, &s.hr),
            Role::SuperResolver => (Some(&s.lr), &s.hr),
            // Condition swapped with target.
            Role::Degrader => (Some(&s.hr), &s.lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextMode {
    /// Ground-truth text prior built from labels.
    Gt,
    /// Text prior generator (recognizer features), trained concurrently.
    Generator,
}

impl TextMode {
    pub fn name(self) -> &'static str {
        match self {
            TextMode::Gt => "gt",
            TextMode::Generator => "generator",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(TextMode::Gt),
            "generator" => Ok(TextMode::Generator),
            other => Err(Error::Config(format!("unknown text mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Kl,
    Ctc,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Kl => "kl",
            LossMode::Ctc => "ctc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(LossMode::Kl),
            "ctc" => Ok(LossMode::Ctc),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleModelConfig {
    pub role: Role,
    pub text_mode: TextMode,
    pub canvas: Canvas,
    pub max_len: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub k_b: usize,
    pub k_m: usize,
    pub attention_resolutions: Vec<usize>,
    pub d_embed: usize,
    pub n_heads: usize,
    pub encoder_blocks: usize,
    pub dropout: f64,
    /// Whether a Degrader consumes text at all.
    pub degrader_text: bool,
}

impl RoleModelConfig {
    /// Text conditioning collapses to zero cross-attention when disabled.
    pub fn effective_k(&self) -> (usize, usize) {
        if self.role == Role::Degrader && !self.degrader_text {
            (0, 0)
        } else {
            (self.k_b, self.k_m)
        }
    }

    pub fn uses_text(&self) -> bool {
        let (kb, km) = self.effective_k();
        kb + km > 0
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let (k_b, k_m) = self.effective_k();
        let cond_channels = if self.role.has_image_condition() {
            2 * self.canvas.channels
        } else {
            self.canvas.channels
        };
        DenoiserConfig {
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            k_b,
            k_m,
            attention_resolutions: self.attention_resolutions.clone(),
            d_embed: self.d_embed,
            n_heads: self.n_heads,
            in_channels: cond_channels,
            out_channels: self.canvas.channels,
            height: self.canvas.height,
            width: self.canvas.width,
        }
    }
}

/// A role-bound text-conditional diffusion model: denoiser, optional text
/// encoder, and optional text prior generator.
pub struct RoleModel<T: Real> {
    pub cfg: RoleModelConfig,
    pub denoiser: Denoiser<T>,
    pub encoder: Option<TextEncoder<T>>,
    pub generator: Option<Recognizer<T>>,
    /// Charset for ground-truth priors and label validation.
    pub prior_charset: Charset,
}

impl<T: Real> RoleModel<T> {
    /// `pretrained_generator` seeds the text prior generator and is required
    /// in generator mode.
    pub fn build(
        cfg: RoleModelConfig,
        prior_charset: Charset,
        pretrained_generator: Option<&Recognizer<T>>,
        rng: &mut Prng,
    ) -> Result<Self> {
        if cfg.role == Role::Synthesizer && cfg.text_mode == TextMode::Generator {
            return Err(Error::invalid(
                "role_model",
                "a synthesizer has no input image to run the text prior generator on".to_string(),
            ));
        }
        let denoiser = Denoiser::build(cfg.denoiser_config(), rng)?;
        let (encoder, generator) = if cfg.uses_text() {
            let (input_width, generator) = match cfg.text_mode {
                TextMode::Gt => (prior_charset.size(), None),
                TextMode::Generator => {
                    let gen = pretrained_generator.ok_or_else(|| {
                        Error::invalid(
                            "role_model",
                            "generator text mode needs a pretrained recognizer".to_string(),
                        )
                    })?;
                    if gen.config().n_frames != cfg.max_len {
                        return Err(Error::invalid(
                            "role_model",
                            format!(
                                "generator emits {} frames but max_len is {}",
                                gen.config().n_frames,
                                cfg.max_len
                            ),
                        ));
                    }
                    (gen.config().feature_width, Some(gen.clone_model()))
                }
            };
            let enc = TextEncoder::new(
                "enc",
                TextEncoderConfig {
                    input_width,
                    d_embed: cfg.d_embed,
                    n_blocks: cfg.encoder_blocks,
                    n_heads: cfg.n_heads,
                    dropout: cfg.dropout,
                    max_len: cfg.max_len,
                },
                rng,
            );
            (Some(enc), generator)
        } else {
            (None, None)
        };
        Ok(RoleModel {
            cfg,
            denoiser,
            encoder,
            generator,
            prior_charset,
        })
    }

    pub fn param_count(&self) -> usize {
        crate::module::param_count(self)
    }

    fn gt_features(&self, text: &str) -> Result<Tensor<T>> {
        let prior = TextPrior::ground_truth(text, &self.prior_charset, self.cfg.max_len)?;
        self.encoder
            .as_ref()
            .expect("uses_text implies encoder")
            .encode_tensor(prior.matrix())
    }

    /// Noise prediction for plain tensors during sampling. For generator
    /// mode the text features are recomputed from the mixed image y_t at
    /// every step.
    fn predict(
        &self,
        x_cond: &Tensor<T>,
        cond_img: Option<&Tensor<T>>,
        z_fixed: Option<&Tensor<T>>,
        t: usize,
        t_max: usize,
    ) -> Result<Tensor<T>> {
        let z = if !self.cfg.uses_text() {
            None
        } else {
            match self.cfg.text_mode {
                TextMode::Gt => z_fixed.cloned(),
                TextMode::Generator => {
                    let gen = self.generator.as_ref().expect("generator mode");
                    let x_t = slice_channels(x_cond, self.cfg.canvas.channels)?;
                    let y_t = mix_input(&x_t, cond_img.expect("image condition"), t, t_max)?;
                    let feats = gen.features_infer(&y_t)?;
                    Some(
                        self.encoder
                            .as_ref()
                            .expect("encoder present")
                            .encode_tensor(&feats)?,
                    )
                }
            }
        };
        self.denoiser.infer(x_cond, z.as_ref(), t)
    }
}

/// First `c` channels of a CHW tensor.
fn slice_channels<T: Real>(img: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let (ct, h, w) = img.chw()?;
    debug_assert!(c <= ct);
    Tensor::from_vec(vec![c, h, w], img.data()[..c * h * w].to_vec())
}

impl<T: Real> Recognizer<T> {
    /// Deep copy used to seed a text prior generator from a pretrained
    /// recognizer.
    pub fn clone_model(&self) -> Self {
        let mut copy = Recognizer::build(self.config().clone(), self.charset().clone(), &mut rng::root(0))
            .expect("config was valid");
        let mut values = Vec::new();
        self.visit_params(&mut |_, t| values.push(t.clone()));
        let mut i = 0;
        copy.visit_params_mut(&mut |_, t| {
            *t = values[i].clone();
            i += 1;
        });
        copy
    }
}

impl<T: Real> Module<T> for RoleModel<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.denoiser.visit_params(f);
        if let Some(e) = &self.encoder {
            e.visit_params(f);
        }
        if let Some(g) = &self.generator {
            g.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.denoiser.visit_params_mut(f);
        if let Some(e) = &mut self.encoder {
            e.visit_params_mut(f);
        }
        if let Some(g) = &mut self.generator {
            g.visit_params_mut(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoleTrainOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the text-prior-generator loss in generator mode.
    pub lambda: f64,
    pub loss_mode: LossMode,
    /// EMA decay; None disables weight averaging.
    pub ema_decay: Option<f64>,
}

impl Default for RoleTrainOptions {
    fn default() -> Self {
        RoleTrainOptions {
            iterations: 1500,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            lambda: 1.0,
            loss_mode: LossMode::Kl,
            ema_decay: Some(0.999),
        }
    }
}

/// Trains a role model on paired samples with the role-appropriate
/// condition/target assignment. In generator mode the recognizer is trained
/// jointly: gradients flow from the denoising loss through the text
/// features, plus `lambda` times a KL or CTC prior loss on the mixed image
/// y_t. When EMA is enabled the averaged weights are written back into the
/// model at the end (the sampling weights).
pub fn train_role<T: Real>(
    model: &mut RoleModel<T>,
    sched: &NoiseSchedule,
    data: &[PairedSample<T>],
    opts: &RoleTrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train_role", "empty dataset".to_string()));
    }
    let channels = model.cfg.canvas.channels;
    let mut adam = Adam::new(opts.lr);
    let mut ema = opts.ema_decay.map(|d| Ema::new(model, d));
    let mut data_rng = rng::stream(opts.seed, 0x7A);
    let mut noise_rng = rng::stream(opts.seed, 0x7B);
    let mut dropout_rng = rng::stream(opts.seed, 0x7C);

    for step in 1..=opts.iterations {
        let mut tape = Tape::new();
        let mut total = None;
        for _ in 0..opts.batch_size {
            let s = &data[data_rng.gen_range(0..data.len())];
            let (cond_img, target) = model.cfg.role.pick(s);
            let mut gen_feats = None;
            let mut loss = denoise_loss(&mut tape, target, cond_img, sched, &mut noise_rng, |tape, ns| {
                let z = if !model.cfg.uses_text() {
                    None
                } else {
                    let enc = model.encoder.as_ref().expect("encoder present");
                    let zv = match model.cfg.text_mode {
                        TextMode::Gt => {
                            let prior =
                                TextPrior::ground_truth(&s.label, &model.prior_charset, model.cfg.max_len)?;
                            let pv = tape.constant(prior.into_matrix());
                            enc.encode(tape, pv, Some(&mut dropout_rng))?
                        }
                        TextMode::Generator => {
                            let gen = model.generator.as_ref().expect("generator mode");
                            let x_t = slice_channels(tape.value(ns.x_cond), channels)?;
                            let y_t = mix_input(
                                &x_t,
                                cond_img.expect("generator mode has an image condition"),
                                ns.t,
                                sched.steps(),
                            )?;
                            let yv = tape.constant(y_t);
                            let feats = gen.features(tape, yv)?;
                            gen_feats = Some(feats);
                            enc.encode(tape, feats, Some(&mut dropout_rng))?
                        }
                    };
                    Some(zv)
                };
                model.denoiser.forward(tape, ns.x_cond, z, ns.t)
            })?;

            // Concurrent text-prior-generator loss.
            if let Some(feats) = gen_feats {
                let gen = model.generator.as_ref().expect("generator mode");
                let logits = gen.project(&mut tape, feats)?;
                let tp_loss = match opts.loss_mode {
                    LossMode::Kl => {
                        let teacher = gen.frame_probs_infer(&s.hr)?;
                        let student = tape.softmax(logits)?;
                        kl_loss(&mut tape, student, &teacher)?
                    }
                    LossMode::Ctc => {
                        let lp = tape.log_softmax(logits)?;
                        ctc_loss(&mut tape, lp, &s.label, gen.charset())?
                    }
                };
                let weighted = tape.scale(tp_loss, opts.lambda);
                loss = tape.add(loss, weighted)?;
            }

            total = Some(match total {
                None => loss,
                Some(acc) => tape.add(acc, loss)?,
            });
        }
        let loss = tape.scale(total.expect("batch_size >= 1"), 1.0 / opts.batch_size as f64);
        let loss_val = tape.value(loss).item()?.to_f64();
        if !loss_val.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: format!("denoising loss became {loss_val}"),
            });
        }
        let grads = tape.backward(loss)?;
        adam.step(model, &tape, &grads);
        if let Some(e) = &mut ema {
            e.update(model);
        }
        on_step(step, loss_val);
    }
    if let Some(e) = &ema {
        e.overlay(model);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub stride: usize,
    pub variance_mode: VarianceMode,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            stride: 10,
            variance_mode: VarianceMode::Posterior,
        }
    }
}

/// Generates one image with the role's condition bundle: text always, plus
/// the conditioning image for non-synthesizer roles.
pub fn run_role<T: Real>(
    model: &RoleModel<T>,
    sched: &NoiseSchedule,
    text: &str,
    img: Option<&Tensor<T>>,
    opts: &SampleOptions,
    rng: &mut Prng,
) -> Result<Tensor<T>> {
    if model.cfg.role.has_image_condition() != img.is_some() {
        return Err(Error::invalid(
            "run_role",
            format!(
                "{} {} an image condition",
                model.cfg.role.name(),
                if img.is_some() { "does not take" } else { "requires" }
            ),
        ));
    }
    let z_fixed = if model.cfg.uses_text() && model.cfg.text_mode == TextMode::Gt {
        Some(model.gt_features(text)?)
    } else {
        None
    };
    let canvas = &model.cfg.canvas;
    let shape = vec![canvas.channels, canvas.height, canvas.width];
    diffusion::sample(
        sched,
        &shape,
        img,
        opts.variance_mode,
        opts.stride,
        rng,
        |x_cond, t| model.predict(x_cond, img, z_fixed.as_ref(), t, sched.steps()),
    )
}
