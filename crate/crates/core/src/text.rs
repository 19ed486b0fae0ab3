//! Conditioning inputs: character sets, ground-truth text priors, image
//! mixing and channel concatenation, bicubic resizing, and the text encoder
//! that turns priors or recognizer features into feature rows z.

use crate::error::{Error, Result};
use crate::module::Module;
use crate::nn::{self, Linear, RowAffine, SelfAttentionRow};
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const DIGITS: &str = "0123456789";
pub const LOWER: &str = "abcdefghijklmnopqrstuvwxyz";
pub const UPPER: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// Maximum text length used throughout.
pub const MAX_TEXT_LEN: usize = 26;

/// Ordered character set with the CTC blank at index 0. Printable members
/// start at index 1; the blank itself is not a printable character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    chars: Vec<char>,
}

impl Charset {
    /// Digits + lowercase (size 37 with blank); used by recognition paths.
    pub fn recognition() -> Self {
        Charset {
            chars: format!("{DIGITS}{LOWER}").chars().collect(),
        }
    }

    /// Digits + lowercase + uppercase (size 63 with blank); used for
    /// ground-truth text priors and dataset labels.
    pub fn ground_truth() -> Self {
        Charset {
            chars: format!("{DIGITS}{LOWER}{UPPER}").chars().collect(),
        }
    }

    /// Rebuilds a charset from its serialized printable members.
    pub fn from_printable(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        let mut seen = std::collections::HashSet::new();
        for &c in &chars {
            if !seen.insert(c) {
                return Err(Error::invalid(
                    "charset",
                    format!("duplicate character {c:?}"),
                ));
            }
        }
        Ok(Charset { chars })
    }

    /// Printable members in index order (the serialized form).
    pub fn printable(&self) -> String {
        self.chars.iter().collect()
    }

    /// Total size including the blank.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub const BLANK: usize = 0;

    /// Class index of a printable character (>= 1).
    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    /// Printable character of a class index, None for the blank.
    pub fn char_at(&self, idx: usize) -> Option<char> {
        if idx == 0 {
            None
        } else {
            self.chars.get(idx - 1).copied()
        }
    }

    pub fn indices_of(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(Error::UnknownChar { ch: c }))
            .collect()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        text.chars().all(|c| self.index_of(c).is_some())
    }
}

/// Per-position class-probability matrix [l, |A|]. The ground-truth variant
/// has one-hot or all-zero rows; generator variants carry softmax rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrior<T: Real> {
    matrix: Tensor<T>,
}

impl<T: Real> TextPrior<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor<T> {
        self.matrix
    }

    /// Builds the ground-truth prior for `text`: character j of k is a
    /// one-hot row at position floor(j*l/k), every other row is zero, so
    /// shorter words get their zero rows spread at equal intervals.
    pub fn ground_truth(text: &str, cs: &Charset, l: usize) -> Result<Self> {
        let indices = cs.indices_of(text)?;
        let k = indices.len();
        if k == 0 {
            return Err(Error::invalid("encode_gt_text", "empty text".to_string()));
        }
        if k > l {
            return Err(Error::TextTooLong { len: k, max: l });
        }
        let mut data = vec![T::ZERO; l * cs.size()];
        for (j, &idx) in indices.iter().enumerate() {
            let row = j * l / k;
            data[row * cs.size() + idx] = T::ONE;
        }
        Ok(TextPrior {
            matrix: Tensor::from_vec(vec![l, cs.size()], data)?,
        })
    }

    /// Rows that are one-hot, as (position, class) pairs in order.
    pub fn occupied_rows(&self) -> Vec<(usize, usize)> {
        let (l, a) = self.matrix.mat().expect("prior is a matrix");
        let mut out = Vec::new();
        for r in 0..l {
            let row = &self.matrix.data()[r * a..(r + 1) * a];
            if let Some(c) = row.iter().position(|&v| v != T::ZERO) {
                out.push((r, c));
            }
        }
        out
    }
}

/// Convenience wrapper matching the operation vocabulary.
pub fn encode_gt_text<T: Real>(text: &str, cs: &Charset, l: usize) -> Result<TextPrior<T>> {
    TextPrior::ground_truth(text, cs, l)
}

/// Text-side input of a conditional model.
#[derive(Debug, Clone)]
pub enum TextCondition<T: Real> {
    None,
    /// Ground-truth prior built from the label.
    Prior(TextPrior<T>),
    /// Pre-projection features from the text prior generator, [l, width].
    Features(Tensor<T>),
}

impl<T: Real> TextCondition<T> {
    pub fn is_none(&self) -> bool {
        matches!(self, TextCondition::None)
    }
}

/// Everything a conditional denoiser consumes besides the noised image.
/// `lr_image` lives on the model canvas (already upsampled).
#[derive(Debug, Clone)]
pub struct ConditionBundle<T: Real> {
    pub lr_image: Option<Tensor<T>>,
    pub text: TextCondition<T>,
}

impl<T: Real> ConditionBundle<T> {
    pub fn unconditional() -> Self {
        ConditionBundle {
            lr_image: None,
            text: TextCondition::None,
        }
    }
}

/// Weighted mix fed to the text prior generator:
/// y_t = (1 - (t/T)^3) x_t + (t/T)^3 x_l.
pub fn mix_input<T: Real>(
    x_t: &Tensor<T>,
    x_l: &Tensor<T>,
    t: usize,
    t_max: usize,
) -> Result<Tensor<T>> {
    if x_t.shape() != x_l.shape() {
        return Err(Error::ShapeMismatch {
            op: "mix_input",
            lhs: x_t.shape().to_vec(),
            rhs: x_l.shape().to_vec(),
        });
    }
    if t > t_max {
        return Err(Error::invalid(
            "mix_input",
            format!("t {t} outside 0..={t_max}"),
        ));
    }
    let w = (t as f64 / t_max as f64).powi(3);
    let (wl, wt) = (T::from_f64(w), T::from_f64(1.0 - w));
    let data = x_t
        .data()
        .iter()
        .zip(x_l.data())
        .map(|(&a, &b)| wt * a + wl * b)
        .collect();
    Tensor::from_vec(x_t.shape().to_vec(), data)
}

/// Channel concatenation [x_t, x_l] for LR conditioning; doubles the image
/// channel count.
pub fn concat_condition<T: Real>(x_t: &Tensor<T>, x_l: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x_t.chw()?;
    let (cl, hl, wl) = x_l.chw()?;
    if (h, w) != (hl, wl) {
        return Err(Error::ShapeMismatch {
            op: "concat_condition",
            lhs: x_t.shape().to_vec(),
            rhs: x_l.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity((c + cl) * h * w);
    data.extend_from_slice(x_t.data());
    data.extend_from_slice(x_l.data());
    Tensor::from_vec(vec![c + cl, h, w], data)
}

// ── bicubic resize ──────────────────────────────────────────────────────

/// Catmull-Rom parameter.
const BICUBIC_A: f64 = -0.5;

fn cubic_weight(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

fn resize_axis<T: Real>(src: &[T], n_src: usize, n_dst: usize, stride: usize, count: usize, dst: &mut [T]) {
    // Resizes `count` interleaved lanes (stride elements apart) from n_src to
    // n_dst samples each, center-aligned.
    let scale = n_src as f64 / n_dst as f64;
    for d in 0..n_dst {
        let sx = (d as f64 + 0.5) * scale - 0.5;
        let base = sx.floor() as isize;
        let frac = sx - base as f64;
        let mut weights = [0.0f64; 4];
        for (k, w) in weights.iter_mut().enumerate() {
            *w = cubic_weight(frac - (k as f64 - 1.0));
        }
        let wsum: f64 = weights.iter().sum();
        for lane in 0..count {
            let mut acc = 0.0f64;
            for (k, &w) in weights.iter().enumerate() {
                let i = (base + k as isize - 1).clamp(0, n_src as isize - 1) as usize;
                acc += w * src[lane + i * stride].to_f64();
            }
            dst[lane + d * stride] = T::from_f64(acc / wsum);
        }
    }
}

/// Catmull-Rom bicubic resize with edge clamping, per channel.
pub fn bicubic_resize<T: Real>(img: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.chw()?;
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid(
            "bicubic_resize",
            "target dims must be >= 1".to_string(),
        ));
    }
    let mut out = Tensor::zeros(vec![c, new_h, new_w]);
    let mut row_buf = vec![T::ZERO; new_w];
    for ci in 0..c {
        // Width pass into a temp plane, then height pass.
        let src_plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        let mut tmp = vec![T::ZERO; h * new_w];
        for y in 0..h {
            resize_axis(&src_plane[y * w..(y + 1) * w], w, new_w, 1, 1, &mut row_buf);
            tmp[y * new_w..(y + 1) * new_w].copy_from_slice(&row_buf);
        }
        let dst_plane = &mut out.data_mut()[ci * new_h * new_w..(ci + 1) * new_h * new_w];
        resize_axis(&tmp, h, new_h, new_w, new_w, dst_plane);
    }
    Ok(out)
}

// ── text encoder ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderConfig {
    /// Width of the input rows: charset size for the ground-truth path,
    /// generator feature width otherwise.
    pub input_width: usize,
    pub d_embed: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub max_len: usize,
}

struct EncoderBlock<T: Real> {
    attn: SelfAttentionRow<T>,
    ln: RowAffine<T>,
}

/// Maps an [l, input_width] prior or feature matrix to text features
/// z: [l, d_embed]. Projection, additive positional encoding, then
/// n_blocks of (self-attention, layer norm, dropout), then a final
/// projection; one feature row per character position.
pub struct TextEncoder<T: Real> {
    cfg: TextEncoderConfig,
    fc_in: Linear<T>,
    blocks: Vec<EncoderBlock<T>>,
    fc_out: Linear<T>,
    pos: Tensor<T>,
}

impl<T: Real> TextEncoder<T> {
    pub fn new(name: &str, cfg: TextEncoderConfig, rng: &mut Prng) -> Self {
        let fc_in = Linear::new(format!("{name}.fc_in"), cfg.input_width, cfg.d_embed, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|i| EncoderBlock {
                attn: SelfAttentionRow::new(&format!("{name}.block{i}.sa"), cfg.d_embed, cfg.n_heads, rng),
                ln: RowAffine::new(format!("{name}.block{i}.ln"), cfg.d_embed),
            })
            .collect();
        let fc_out = Linear::new(format!("{name}.fc_out"), cfg.d_embed, cfg.d_embed, rng);
        let pos = nn::positional_encoding(cfg.max_len, cfg.d_embed);
        TextEncoder {
            cfg,
            fc_in,
            blocks,
            fc_out,
            pos,
        }
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.cfg
    }

    /// `rng` enables dropout (training); pass None for inference.
    pub fn encode(&self, tape: &mut Tape<T>, input: Var, mut rng: Option<&mut Prng>) -> Result<Var> {
        let (rows, width) = tape.value(input).mat()?;
        if width != self.cfg.input_width || rows != self.cfg.max_len {
            return Err(Error::ShapeMismatch {
                op: "text_encode",
                lhs: vec![self.cfg.max_len, self.cfg.input_width],
                rhs: tape.value(input).shape().to_vec(),
            });
        }
        let mut h = self.fc_in.forward(tape, input)?;
        let pe = tape.constant(self.pos.clone());
        h = tape.add(h, pe)?;
        for block in &self.blocks {
            h = block.attn.forward(tape, h)?;
            h = tape.layer_norm(h)?;
            h = block.ln.forward(tape, h)?;
            h = nn::dropout(tape, h, self.cfg.dropout, rng.as_deref_mut())?;
        }
        self.fc_out.forward(tape, h)
    }

    /// Inference helper on plain tensors.
    pub fn encode_tensor(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let z = self.encode(&mut tape, v, None)?;
        Ok(tape.value(z).clone())
    }
}

impl<T: Real> Module<T> for TextEncoder<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.fc_in.visit_params(f);
        for b in &self.blocks {
            b.attn.visit_params(f);
            b.ln.visit_params(f);
        }
        self.fc_out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc_in.visit_params_mut(f);
        for b in &mut self.blocks {
            b.attn.visit_params_mut(f);
            b.ln.visit_params_mut(f);
        }
        self.fc_out.visit_params_mut(f);
    }
}
