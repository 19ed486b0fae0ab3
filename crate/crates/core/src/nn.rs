//! Layers shared by the denoiser, the text encoder, and the recognizer.
//!
//! Layers own their tensors and bind them onto a tape by name at forward
//! time, so the same layer can be reused within one step (weight sharing)
//! and enumerated for optimizers and checkpoints via [`Module`].

use crate::error::Result;
use crate::module::Module;
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use rand::Rng;

/// x[m, in] @ w[in, out] + b
pub struct Linear<T: Real> {
    name: String,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, rng: &mut Prng) -> Self {
        Linear {
            name: name.into(),
            w: Tensor::he_normal(vec![d_in, d_out], d_in, rng),
            b: Tensor::zeros(vec![d_out]),
        }
    }

    pub fn zeroed(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Linear {
            name: name.into(),
            w: Tensor::zeros(vec![d_in, d_out]),
            b: Tensor::zeros(vec![d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.w", self.name), &self.w);
        let b = tape.param(&format!("{}.b", self.name), &self.b);
        let y = tape.matmul(x, w)?;
        tape.add_rowvec(y, b)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

/// Stride-1 convolution with SAME padding for odd kernels.
pub struct Conv2d<T: Real> {
    name: String,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pad: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        ksize: usize,
        rng: &mut Prng,
    ) -> Self {
        Conv2d {
            name: name.into(),
            w: Tensor::he_normal(vec![cout, cin, ksize, ksize], cin * ksize * ksize, rng),
            b: Tensor::zeros(vec![cout]),
            pad: ksize / 2,
        }
    }

    pub fn zeroed(name: impl Into<String>, cin: usize, cout: usize, ksize: usize) -> Self {
        Conv2d {
            name: name.into(),
            w: Tensor::zeros(vec![cout, cin, ksize, ksize]),
            b: Tensor::zeros(vec![cout]),
            pad: ksize / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.w", self.name), &self.w);
        let b = tape.param(&format!("{}.b", self.name), &self.b);
        tape.conv2d(x, w, b, self.pad)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

/// Per-channel learned gain/bias, applied after a parameter-free norm.
pub struct ChannelAffine<T: Real> {
    name: String,
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ChannelAffine<T> {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        ChannelAffine {
            name: name.into(),
            gain: Tensor::full(vec![c], T::ONE),
            bias: Tensor::zeros(vec![c]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = tape.param(&format!("{}.gain", self.name), &self.gain);
        let b = tape.param(&format!("{}.bias", self.name), &self.bias);
        let y = tape.mul_chanvec(x, g)?;
        tape.add_chanvec(y, b)
    }
}

impl<T: Real> Module<T> for ChannelAffine<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.gain", self.name), &self.gain);
        f(&format!("{}.bias", self.name), &self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.gain", self.name), &mut self.gain);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Learned gain/bias over the last axis of a matrix (layer-norm affine).
pub struct RowAffine<T: Real> {
    name: String,
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> RowAffine<T> {
    pub fn new(name: impl Into<String>, n: usize) -> Self {
        RowAffine {
            name: name.into(),
            gain: Tensor::full(vec![n], T::ONE),
            bias: Tensor::zeros(vec![n]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = tape.param(&format!("{}.gain", self.name), &self.gain);
        let b = tape.param(&format!("{}.bias", self.name), &self.bias);
        let y = tape.mul_rowvec(x, g)?;
        tape.add_rowvec(y, b)
    }
}

impl<T: Real> Module<T> for RowAffine<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.gain", self.name), &self.gain);
        f(&format!("{}.bias", self.name), &self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.gain", self.name), &mut self.gain);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Normalizes each channel of a CHW image over its spatial extent.
pub fn spatial_norm<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (c, h, w) = tape.value(x).chw()?;
    let flat = tape.reshape(x, vec![c, h * w])?;
    let normed = tape.layer_norm(flat)?;
    tape.reshape(normed, vec![c, h, w])
}

/// Inverted dropout. `rng: None` disables it (inference path).
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, p: f64, rng: Option<&mut Prng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).numel();
    let mask: Vec<T> = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                T::from_f64(1.0 / keep)
            } else {
                T::ZERO
            }
        })
        .collect();
    let m = tape.constant(Tensor::from_vec(shape, mask)?);
    tape.mul(x, m)
}

/// Sinusoidal embedding of a diffusion timestep, shape [1, dim].
pub fn timestep_embedding<T: Real>(t: usize, dim: usize) -> Tensor<T> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut data = vec![T::ZERO; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        data[i] = T::from_f64(arg.sin());
        data[half + i] = T::from_f64(arg.cos());
    }
    Tensor::from_vec(vec![1, dim], data).expect("sized buffer")
}

/// Transformer positional encoding, shape [len, dim].
pub fn positional_encoding<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = (-(10000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
            let arg = pos as f64 * freq;
            data[pos * dim + 2 * i] = T::from_f64(arg.sin());
            if 2 * i + 1 < dim {
                data[pos * dim + 2 * i + 1] = T::from_f64(arg.cos());
            }
        }
    }
    Tensor::from_vec(vec![len, dim], data).expect("sized buffer")
}

/// Residual self-attention over the rows of an [l, d] matrix. Normalization
/// is left to the caller.
pub struct SelfAttentionRow<T: Real> {
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    n_heads: usize,
}

impl<T: Real> SelfAttentionRow<T> {
    pub fn new(name: &str, d: usize, n_heads: usize, rng: &mut Prng) -> Self {
        SelfAttentionRow {
            wq: Linear::new(format!("{name}.wq"), d, d, rng),
            wk: Linear::new(format!("{name}.wk"), d, d, rng),
            wv: Linear::new(format!("{name}.wv"), d, d, rng),
            wo: Linear::new(format!("{name}.wo"), d, d, rng),
            n_heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;
        let att = tape.attention(q, k, v, self.n_heads)?;
        let out = self.wo.forward(tape, att)?;
        tape.add(x, out)
    }
}

impl<T: Real> Module<T> for SelfAttentionRow<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.wq.visit_params_mut(f);
        self.wk.visit_params_mut(f);
        self.wv.visit_params_mut(f);
        self.wo.visit_params_mut(f);
    }
}

/// Residual attention over the flattened spatial grid of a CHW image.
/// With `context` dims set, keys/values come from an external [l, d_ctx]
/// matrix (cross-attention); otherwise from the image itself.
pub struct Attention2d<T: Real> {
    norm: ChannelAffine<T>,
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    n_heads: usize,
    cross: bool,
}

impl<T: Real> Attention2d<T> {
    pub fn self_attn(name: &str, c: usize, n_heads: usize, rng: &mut Prng) -> Self {
        Attention2d {
            norm: ChannelAffine::new(format!("{name}.norm"), c),
            wq: Linear::new(format!("{name}.wq"), c, c, rng),
            wk: Linear::new(format!("{name}.wk"), c, c, rng),
            wv: Linear::new(format!("{name}.wv"), c, c, rng),
            wo: Linear::new(format!("{name}.wo"), c, c, rng),
            n_heads,
            cross: false,
        }
    }

    pub fn cross_attn(name: &str, c: usize, d_ctx: usize, n_heads: usize, rng: &mut Prng) -> Self {
        Attention2d {
            norm: ChannelAffine::new(format!("{name}.norm"), c),
            wq: Linear::new(format!("{name}.wq"), c, c, rng),
            wk: Linear::new(format!("{name}.wk"), d_ctx, c, rng),
            wv: Linear::new(format!("{name}.wv"), d_ctx, c, rng),
            wo: Linear::new(format!("{name}.wo"), c, c, rng),
            n_heads,
            cross: true,
        }
    }

    pub fn is_cross(&self) -> bool {
        self.cross
    }

    /// `context` is required iff this is a cross-attention block.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, context: Option<Var>) -> Result<Var> {
        let (c, h, w) = tape.value(x).chw()?;
        let normed = spatial_norm(tape, x)?;
        let normed = self.norm.forward(tape, normed)?;
        let flat = tape.reshape(normed, vec![c, h * w])?;
        let tokens = tape.transpose(flat)?; // [hw, c]
        let q = self.wq.forward(tape, tokens)?;
        let kv_src = match (self.cross, context) {
            (true, Some(z)) => z,
            (false, _) => tokens,
            (true, None) => {
                return Err(crate::error::Error::invalid(
                    "cross_attention",
                    "text features required but absent".to_string(),
                ))
            }
        };
        let k = self.wk.forward(tape, kv_src)?;
        let v = self.wv.forward(tape, kv_src)?;
        let att = tape.attention(q, k, v, self.n_heads)?;
        let out = self.wo.forward(tape, att)?;
        let back = tape.transpose(out)?;
        let img = tape.reshape(back, vec![c, h, w])?;
        tape.add(x, img)
    }
}

impl<T: Real> Module<T> for Attention2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.norm.visit_params(f);
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.norm.visit_params_mut(f);
        self.wq.visit_params_mut(f);
        self.wk.visit_params_mut(f);
        self.wv.visit_params_mut(f);
        self.wo.visit_params_mut(f);
    }
}

/// UNet residual block with timestep scale/shift conditioning.
pub struct ResBlock<T: Real> {
    norm1: ChannelAffine<T>,
    conv1: Conv2d<T>,
    time_proj: Linear<T>,
    norm2: ChannelAffine<T>,
    conv2: Conv2d<T>,
    skip: Option<Conv2d<T>>,
    cout: usize,
}

impl<T: Real> ResBlock<T> {
    pub fn new(name: &str, cin: usize, cout: usize, t_dim: usize, rng: &mut Prng) -> Self {
        ResBlock {
            norm1: ChannelAffine::new(format!("{name}.norm1"), cin),
            conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3, rng),
            time_proj: Linear::new(format!("{name}.time"), t_dim, 2 * cout, rng),
            norm2: ChannelAffine::new(format!("{name}.norm2"), cout),
            // Zero-init so the block starts as identity (plus skip projection).
            conv2: Conv2d::zeroed(format!("{name}.conv2"), cout, cout, 3),
            skip: if cin == cout {
                None
            } else {
                Some(Conv2d::new(format!("{name}.skip"), cin, cout, 1, rng))
            },
            cout,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, t_emb: Var) -> Result<Var> {
        let mut h = spatial_norm(tape, x)?;
        h = self.norm1.forward(tape, h)?;
        h = tape.silu(h);
        h = self.conv1.forward(tape, h)?;

        // FiLM: h <- h * (1 + scale) + shift, per channel.
        let tt = self.time_proj.forward(tape, t_emb)?; // [1, 2*cout]
        let scale = tape.slice(tt, 1, 0, self.cout)?;
        let shift = tape.slice(tt, 1, self.cout, self.cout)?;
        let ones = tape.constant(Tensor::full(vec![1, self.cout], T::ONE));
        let gain = tape.add(scale, ones)?;
        h = spatial_norm(tape, h)?;
        h = self.norm2.forward(tape, h)?;
        h = tape.mul_chanvec(h, gain)?;
        h = tape.add_chanvec(h, shift)?;
        h = tape.silu(h);
        h = self.conv2.forward(tape, h)?;

        let sk = match &self.skip {
            Some(conv) => conv.forward(tape, x)?,
            None => x,
        };
        tape.add(sk, h)
    }
}

impl<T: Real> Module<T> for ResBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.norm1.visit_params(f);
        self.conv1.visit_params(f);
        self.time_proj.visit_params(f);
        self.norm2.visit_params(f);
        self.conv2.visit_params(f);
        if let Some(s) = &self.skip {
            s.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.norm1.visit_params_mut(f);
        self.conv1.visit_params_mut(f);
        self.time_proj.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        if let Some(s) = &mut self.skip {
            s.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_embedding_varies_with_t() {
        let a = timestep_embedding::<f64>(1, 16);
        let b = timestep_embedding::<f64>(2, 16);
        assert_ne!(a.data(), b.data());
        assert!(a.all_finite());
    }

    #[test]
    fn positional_encoding_breaks_row_symmetry() {
        let pe = positional_encoding::<f64>(4, 8);
        assert_ne!(&pe.data()[0..8], &pe.data()[8..16]);
    }

    #[test]
    fn dropout_disabled_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = dropout(&mut tape, x, 0.5, None).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }
}
