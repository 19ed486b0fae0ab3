//! Toy recognition model: a conv stack that collapses the canvas to one
//! feature row per text position, a per-frame class projection, greedy CTC
//! decoding, and the CTC/KL losses used to train text prior generators.

use crate::error::{Error, Result};
use crate::module::Module;
use crate::nn::{ChannelAffine, Conv2d, Linear};
use crate::optim::Adam;
use crate::rng::{self, Prng};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::Charset;

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Width of the pre-projection feature rows fed to the text encoder.
    pub feature_width: usize,
    /// Frames emitted per image; equals the maximum text length.
    pub n_frames: usize,
}

impl RecognizerConfig {
    pub fn desk() -> Self {
        RecognizerConfig {
            in_channels: 1,
            height: 16,
            width: 64,
            feature_width: 64,
            n_frames: crate::text::MAX_TEXT_LEN,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::invalid(
                "recognizer",
                format!("canvas {}x{} must be divisible by 4", self.height, self.width),
            ));
        }
        if self.feature_width < 8 {
            return Err(Error::invalid(
                "recognizer",
                "feature_width must be at least 8".to_string(),
            ));
        }
        Ok(())
    }
}

/// Linear column-resampling matrix [n_src, n_dst], rows renormalized at the
/// clamped edges.
fn resample_matrix<T: Real>(n_src: usize, n_dst: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; n_src * n_dst];
    let scale = n_src as f64 / n_dst as f64;
    for d in 0..n_dst {
        let s = (d as f64 + 0.5) * scale - 0.5;
        let i0 = s.floor();
        let frac = s - i0;
        let lo = (i0 as isize).clamp(0, n_src as isize - 1) as usize;
        let hi = (i0 as isize + 1).clamp(0, n_src as isize - 1) as usize;
        data[lo * n_dst + d] = T::from_f64(data[lo * n_dst + d].to_f64() + (1.0 - frac));
        data[hi * n_dst + d] = T::from_f64(data[hi * n_dst + d].to_f64() + frac);
    }
    Tensor::from_vec(vec![n_src, n_dst], data).expect("sized buffer")
}

/// Block matrix [f, f*h] averaging the height rows of each feature plane.
fn height_pool_matrix<T: Real>(f: usize, h: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; f * f * h];
    let w = T::from_f64(1.0 / h as f64);
    for fi in 0..f {
        for hi in 0..h {
            data[fi * f * h + fi * h + hi] = w;
        }
    }
    Tensor::from_vec(vec![f, f * h], data).expect("sized buffer")
}

pub struct Recognizer<T: Real> {
    cfg: RecognizerConfig,
    charset: Charset,
    conv1: Conv2d<T>,
    norm1: ChannelAffine<T>,
    conv2: Conv2d<T>,
    norm2: ChannelAffine<T>,
    conv3: Conv2d<T>,
    norm3: ChannelAffine<T>,
    conv4: Conv2d<T>,
    norm4: ChannelAffine<T>,
    proj: Linear<T>,
    pool_h: Tensor<T>,
    pool_w: Tensor<T>,
}

impl<T: Real> Recognizer<T> {
    /// `charset` is the recognition alphabet (lowercase + digits + blank).
    pub fn build(cfg: RecognizerConfig, charset: Charset, rng: &mut Prng) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.feature_width;
        let (c1, c2) = (f / 4, f / 2);
        let conv1 = Conv2d::new("rec.conv1", cfg.in_channels, c1, 3, rng);
        let norm1 = ChannelAffine::new("rec.norm1", c1);
        let conv2 = Conv2d::new("rec.conv2", c1, c2, 3, rng);
        let norm2 = ChannelAffine::new("rec.norm2", c2);
        let conv3 = Conv2d::new("rec.conv3", c2, f, 3, rng);
        let norm3 = ChannelAffine::new("rec.norm3", f);
        let conv4 = Conv2d::new("rec.conv4", f, f, 3, rng);
        let norm4 = ChannelAffine::new("rec.norm4", f);
        let proj = Linear::new("rec.proj", f, charset.size(), rng);
        let pool_h = height_pool_matrix(f, cfg.height / 4);
        let pool_w = resample_matrix(cfg.width / 4, cfg.n_frames);
        Ok(Recognizer {
            cfg,
            charset,
            conv1,
            norm1,
            conv2,
            norm2,
            conv3,
            norm3,
            conv4,
            norm4,
            proj,
            pool_h,
            pool_w,
        })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.cfg
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    /// Pre-projection features, one row per frame: [n_frames, feature_width].
    pub fn features(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let (c, h, w) = tape.value(img).chw()?;
        if c != self.cfg.in_channels || h != self.cfg.height || w != self.cfg.width {
            return Err(Error::ShapeMismatch {
                op: "recognizer_features",
                lhs: vec![self.cfg.in_channels, self.cfg.height, self.cfg.width],
                rhs: tape.value(img).shape().to_vec(),
            });
        }
        let mut x = self.conv1.forward(tape, img)?;
        x = crate::nn::spatial_norm(tape, x)?;
        x = self.norm1.forward(tape, x)?;
        x = tape.silu(x);
        x = tape.downsample_avg_2x(x)?;
        x = self.conv2.forward(tape, x)?;
        x = crate::nn::spatial_norm(tape, x)?;
        x = self.norm2.forward(tape, x)?;
        x = tape.silu(x);
        x = tape.downsample_avg_2x(x)?;
        x = self.conv3.forward(tape, x)?;
        x = crate::nn::spatial_norm(tape, x)?;
        x = self.norm3.forward(tape, x)?;
        x = tape.silu(x);
        x = self.conv4.forward(tape, x)?;
        x = crate::nn::spatial_norm(tape, x)?;
        x = self.norm4.forward(tape, x)?;
        x = tape.silu(x);

        let f = self.cfg.feature_width;
        let (h4, w4) = (self.cfg.height / 4, self.cfg.width / 4);
        let flat = tape.reshape(x, vec![f * h4, w4])?;
        let ph = tape.constant(self.pool_h.clone());
        let pooled = tape.matmul(ph, flat)?; // [f, w4]
        let pw = tape.constant(self.pool_w.clone());
        let frames = tape.matmul(pooled, pw)?; // [f, n_frames]
        tape.transpose(frames) // [n_frames, f]
    }

    /// Per-frame class logits [n_frames, |A|].
    pub fn logits(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let feats = self.features(tape, img)?;
        self.proj.forward(tape, feats)
    }

    /// Class projection of already-computed feature rows.
    pub fn project(&self, tape: &mut Tape<T>, feats: Var) -> Result<Var> {
        self.proj.forward(tape, feats)
    }

    pub fn frame_probs(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let logits = self.logits(tape, img)?;
        tape.softmax(logits)
    }

    pub fn log_probs(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let logits = self.logits(tape, img)?;
        tape.log_softmax(logits)
    }

    /// [n_frames, feature_width] features on a throwaway tape.
    pub fn features_infer(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.constant(img.clone());
        let f = self.features(&mut tape, v)?;
        Ok(tape.value(f).clone())
    }

    pub fn frame_probs_infer(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.constant(img.clone());
        let p = self.frame_probs(&mut tape, v)?;
        Ok(tape.value(p).clone())
    }

    /// Greedy CTC decoding of an image.
    pub fn recognize(&self, img: &Tensor<T>) -> Result<String> {
        let probs = self.frame_probs_infer(img)?;
        Ok(decode_greedy(&probs, &self.charset))
    }
}

impl<T: Real> Module<T> for Recognizer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit_params(f);
        self.norm1.visit_params(f);
        self.conv2.visit_params(f);
        self.norm2.visit_params(f);
        self.conv3.visit_params(f);
        self.norm3.visit_params(f);
        self.conv4.visit_params(f);
        self.norm4.visit_params(f);
        self.proj.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_params_mut(f);
        self.norm1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.conv3.visit_params_mut(f);
        self.norm3.visit_params_mut(f);
        self.conv4.visit_params_mut(f);
        self.norm4.visit_params_mut(f);
        self.proj.visit_params_mut(f);
    }
}

/// Collapses frame argmaxes: adjacent repeats merge, blanks drop.
pub fn decode_greedy<T: Real>(frame_probs: &Tensor<T>, cs: &Charset) -> String {
    let (frames, classes) = frame_probs.mat().expect("frame probs matrix");
    let mut out = String::new();
    let mut prev = usize::MAX;
    for t in 0..frames {
        let row = &frame_probs.data()[t * classes..(t + 1) * classes];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        if best != prev && best != Charset::BLANK {
            out.push(cs.char_at(best).expect("non-blank class"));
        }
        prev = best;
    }
    out
}

/// CTC loss of per-frame log-probabilities against a text target. The text
/// is lowercased to the recognition alphabet.
pub fn ctc_loss<T: Real>(
    tape: &mut Tape<T>,
    log_probs: Var,
    target: &str,
    cs: &Charset,
) -> Result<Var> {
    let targets = cs.indices_of(&target.to_lowercase())?;
    tape.ctc_loss(log_probs, &targets, Charset::BLANK)
}

/// Mean over frames of KL(teacher || student). The teacher distribution is
/// a constant; gradients flow only into the student. Logs are floored at
/// 1e-8.
pub fn kl_loss<T: Real>(tape: &mut Tape<T>, student: Var, teacher: &Tensor<T>) -> Result<Var> {
    if tape.value(student).shape() != teacher.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_loss",
            lhs: tape.value(student).shape().to_vec(),
            rhs: teacher.shape().to_vec(),
        });
    }
    let (frames, _) = teacher.mat()?;
    let t = tape.constant(teacher.clone());
    let ln_t = tape.ln_clamped(t);
    let ln_s = tape.ln_clamped(student);
    let diff = tape.sub(ln_t, ln_s)?;
    let prod = tape.mul(t, diff)?;
    let total = tape.sum_all(prod);
    Ok(tape.scale(total, 1.0 / frames as f64))
}

#[derive(Debug, Clone)]
pub struct RecognizerTrainOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RecognizerTrainOptions {
    fn default() -> Self {
        RecognizerTrainOptions {
            iterations: 1200,
            batch_size: 8,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// CTC-trains the recognizer on (image, label) pairs. Labels are lowercased.
/// Calls `on_step(step, loss)` after every step; fails on divergence.
pub fn train_recognizer<T: Real>(
    model: &mut Recognizer<T>,
    data: &[(Tensor<T>, String)],
    opts: &RecognizerTrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train_recognizer", "empty dataset".to_string()));
    }
    let mut adam = Adam::new(opts.lr);
    let mut rng = rng::stream(opts.seed, 0xEC);
    for step in 1..=opts.iterations {
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        for _ in 0..opts.batch_size {
            let idx = rand::Rng::gen_range(&mut rng, 0..data.len());
            let (img, label) = &data[idx];
            let iv = tape.constant(img.clone());
            let lp = model.log_probs(&mut tape, iv)?;
            let loss = ctc_loss(&mut tape, lp, label, &model.charset)?;
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
                msg: format!("ctc loss became {loss_val}"),
            });
        }
        let grads = tape.backward(loss)?;
        adam.step(model, &tape, &grads);
        on_step(step, loss_val);
    }
    Ok(())
}

/// Fraction of samples whose greedy decode matches the lowercased label.
pub fn exact_match_rate<T: Real>(model: &Recognizer<T>, data: &[(Tensor<T>, String)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (img, label) in data {
        if model.recognize(img)? == label.to_lowercase() {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
