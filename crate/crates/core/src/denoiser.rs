//! The noise-prediction UNet. Cross-attention over text features appears
//! only where `k_b` (bottom of the UNet) and `k_m` (other attention
//! resolutions) put it; with both zero the model is a plain image denoiser
//! whose output cannot depend on text features.

use crate::error::{Error, Result};
use crate::module::Module;
use crate::nn::{self, Attention2d, ChannelAffine, Conv2d, Linear, ResBlock};
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    /// (cross, self) attention pairs at the UNet bottom.
    pub k_b: usize,
    /// (cross, self) attention pairs appended at each non-bottom attention
    /// resolution.
    pub k_m: usize,
    /// Feature-map heights that get self-attention outside the bottom.
    pub attention_resolutions: Vec<usize>,
    /// Width of the text feature rows (must match the text encoder output).
    pub d_embed: usize,
    pub n_heads: usize,
    /// Image channels fed to the model: C, or 2C with LR conditioning.
    pub in_channels: usize,
    /// Predicted-noise channels C.
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl DenoiserConfig {
    /// Desk-scale defaults for a 1x16x64 canvas without LR conditioning.
    pub fn desk() -> Self {
        DenoiserConfig {
            base_channels: 32,
            channel_multipliers: vec![1, 2, 2],
            k_b: 2,
            k_m: 0,
            attention_resolutions: vec![8],
            d_embed: 64,
            n_heads: 1,
            in_channels: 1,
            out_channels: 1,
            height: 16,
            width: 64,
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn uses_text(&self) -> bool {
        self.k_b + self.k_m > 0
    }

    fn level_height(&self, level: usize) -> usize {
        self.height >> level
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 {
            return Err(Error::invalid("denoiser", "no channel multipliers".to_string()));
        }
        let down = 1usize << (l - 1);
        if self.height % down != 0 || self.width % down != 0 {
            return Err(Error::invalid(
                "denoiser",
                format!(
                    "canvas {}x{} not divisible by 2^{} for {} levels",
                    self.height,
                    self.width,
                    l - 1,
                    l
                ),
            ));
        }
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return Err(Error::invalid(
                "denoiser",
                format!("base_channels must be even and positive, got {}", self.base_channels),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("denoiser", "channel counts must be positive".to_string()));
        }
        if self.uses_text() && self.d_embed == 0 {
            return Err(Error::invalid("denoiser", "d_embed required with cross-attention".to_string()));
        }
        if self.n_heads == 0 {
            return Err(Error::invalid("denoiser", "n_heads must be positive".to_string()));
        }
        Ok(())
    }
}

/// Self-attention optionally followed by (cross, self) pairs; the layout of
/// both the per-resolution stacks and the UNet bottom.
struct AttnStack<T: Real> {
    blocks: Vec<Attention2d<T>>,
}

impl<T: Real> AttnStack<T> {
    fn resolution_stack(name: &str, c: usize, cfg: &DenoiserConfig, rng: &mut Prng) -> Self {
        let mut blocks = vec![Attention2d::self_attn(&format!("{name}.self"), c, cfg.n_heads, rng)];
        for j in 0..cfg.k_m {
            blocks.push(Attention2d::cross_attn(
                &format!("{name}.pair{j}.cross"),
                c,
                cfg.d_embed,
                cfg.n_heads,
                rng,
            ));
            blocks.push(Attention2d::self_attn(
                &format!("{name}.pair{j}.self"),
                c,
                cfg.n_heads,
                rng,
            ));
        }
        AttnStack { blocks }
    }

    fn bottom_stack(name: &str, c: usize, cfg: &DenoiserConfig, rng: &mut Prng) -> Self {
        let mut blocks = Vec::new();
        for j in 0..cfg.k_b {
            blocks.push(Attention2d::cross_attn(
                &format!("{name}.pair{j}.cross"),
                c,
                cfg.d_embed,
                cfg.n_heads,
                rng,
            ));
            blocks.push(Attention2d::self_attn(
                &format!("{name}.pair{j}.self"),
                c,
                cfg.n_heads,
                rng,
            ));
        }
        AttnStack { blocks }
    }

    fn forward(&self, tape: &mut Tape<T>, mut x: Var, z: Option<Var>) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(tape, x, if b.is_cross() { z } else { None })?;
        }
        Ok(x)
    }
}

impl<T: Real> Module<T> for AttnStack<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for b in &self.blocks {
            b.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for b in &mut self.blocks {
            b.visit_params_mut(f);
        }
    }
}

struct Level<T: Real> {
    res: ResBlock<T>,
    attn: Option<AttnStack<T>>,
}

/// UNet noise model. Timesteps enter through a sinusoidal embedding and a
/// two-layer MLP feeding per-block scale/shift; text features enter through
/// cross-attention.
pub struct Denoiser<T: Real> {
    cfg: DenoiserConfig,
    stem: Conv2d<T>,
    time_fc1: Linear<T>,
    time_fc2: Linear<T>,
    down: Vec<Level<T>>,
    bottom_res1: ResBlock<T>,
    bottom_attn: AttnStack<T>,
    bottom_res2: ResBlock<T>,
    up: Vec<Level<T>>,
    out_norm: ChannelAffine<T>,
    out_conv: Conv2d<T>,
}

impl<T: Real> Denoiser<T> {
    pub fn build(cfg: DenoiserConfig, rng: &mut Prng) -> Result<Self> {
        cfg.validate()?;
        let t_dim = cfg.base_channels * 4;
        let stem = Conv2d::new("unet.stem", cfg.in_channels, cfg.base_channels, 3, rng);
        let time_fc1 = Linear::new("unet.time.fc1", cfg.base_channels, t_dim, rng);
        let time_fc2 = Linear::new("unet.time.fc2", t_dim, t_dim, rng);

        let chans: Vec<usize> = cfg
            .channel_multipliers
            .iter()
            .map(|m| m * cfg.base_channels)
            .collect();

        let mut down = Vec::new();
        let mut prev = cfg.base_channels;
        for (i, &c) in chans.iter().enumerate() {
            let attn = cfg
                .attention_resolutions
                .contains(&cfg.level_height(i))
                .then(|| AttnStack::resolution_stack(&format!("unet.down{i}.attn"), c, &cfg, rng));
            down.push(Level {
                res: ResBlock::new(&format!("unet.down{i}.res"), prev, c, t_dim, rng),
                attn,
            });
            prev = c;
        }

        let cb = *chans.last().expect("non-empty");
        let bottom_res1 = ResBlock::new("unet.bottom.res1", cb, cb, t_dim, rng);
        let bottom_attn = AttnStack::bottom_stack("unet.bottom", cb, &cfg, rng);
        let bottom_res2 = ResBlock::new("unet.bottom.res2", cb, cb, t_dim, rng);

        let mut up = Vec::new();
        let mut h_ch = cb;
        for i in (0..chans.len()).rev() {
            let c = chans[i];
            let attn = cfg
                .attention_resolutions
                .contains(&cfg.level_height(i))
                .then(|| AttnStack::resolution_stack(&format!("unet.up{i}.attn"), c, &cfg, rng));
            up.push(Level {
                res: ResBlock::new(&format!("unet.up{i}.res"), h_ch + c, c, t_dim, rng),
                attn,
            });
            h_ch = c;
        }

        let out_norm = ChannelAffine::new("unet.out.norm", cfg.base_channels);
        let out_conv = Conv2d::zeroed("unet.out.conv", cfg.base_channels, cfg.out_channels, 3);

        Ok(Denoiser {
            cfg,
            stem,
            time_fc1,
            time_fc2,
            down,
            bottom_res1,
            bottom_attn,
            bottom_res2,
            up,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Records the noise prediction for `x_cond` at step `t` on the tape.
    /// `z` must be present exactly when the architecture has cross-attention;
    /// a model without cross-attention ignores any supplied `z`.
    pub fn forward(&self, tape: &mut Tape<T>, x_cond: Var, z: Option<Var>, t: usize) -> Result<Var> {
        let (c, h, w) = tape.value(x_cond).chw()?;
        if c != self.cfg.in_channels || h != self.cfg.height || w != self.cfg.width {
            return Err(Error::ShapeMismatch {
                op: "denoiser_forward",
                lhs: vec![self.cfg.in_channels, self.cfg.height, self.cfg.width],
                rhs: tape.value(x_cond).shape().to_vec(),
            });
        }
        if self.cfg.uses_text() && z.is_none() {
            return Err(Error::invalid(
                "denoiser_forward",
                "model has cross-attention but no text features were given".to_string(),
            ));
        }
        let z = if self.cfg.uses_text() { z } else { None };

        let emb = tape.constant(nn::timestep_embedding(t, self.cfg.base_channels));
        let emb = self.time_fc1.forward(tape, emb)?;
        let emb = tape.silu(emb);
        let t_emb = self.time_fc2.forward(tape, emb)?;

        let mut hx = self.stem.forward(tape, x_cond)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, level) in self.down.iter().enumerate() {
            hx = level.res.forward(tape, hx, t_emb)?;
            if let Some(attn) = &level.attn {
                hx = attn.forward(tape, hx, z)?;
            }
            skips.push(hx);
            if i + 1 < self.down.len() {
                hx = tape.downsample_avg_2x(hx)?;
            }
        }

        hx = self.bottom_res1.forward(tape, hx, t_emb)?;
        hx = self.bottom_attn.forward(tape, hx, z)?;
        hx = self.bottom_res2.forward(tape, hx, t_emb)?;

        for (j, level) in self.up.iter().enumerate() {
            let i = self.down.len() - 1 - j;
            let skip = skips[i];
            hx = tape.concat(0, hx, skip)?;
            hx = level.res.forward(tape, hx, t_emb)?;
            if let Some(attn) = &level.attn {
                hx = attn.forward(tape, hx, z)?;
            }
            if i > 0 {
                hx = tape.upsample_nearest_2x(hx)?;
            }
        }

        let mut out = nn::spatial_norm(tape, hx)?;
        out = self.out_norm.forward(tape, out)?;
        out = tape.silu(out);
        self.out_conv.forward(tape, out)
    }

    /// Plain-tensor inference on a throwaway tape.
    pub fn infer(&self, x_cond: &Tensor<T>, z: Option<&Tensor<T>>, t: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x_cond.clone());
        let zv = z.map(|m| tape.constant(m.clone()));
        let out = self.forward(&mut tape, xv, zv, t)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_count(&self) -> usize {
        crate::module::param_count(self)
    }
}

impl<T: Real> Module<T> for Denoiser<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit_params(f);
        self.time_fc1.visit_params(f);
        self.time_fc2.visit_params(f);
        for l in &self.down {
            l.res.visit_params(f);
            if let Some(a) = &l.attn {
                a.visit_params(f);
            }
        }
        self.bottom_res1.visit_params(f);
        self.bottom_attn.visit_params(f);
        self.bottom_res2.visit_params(f);
        for l in &self.up {
            l.res.visit_params(f);
            if let Some(a) = &l.attn {
                a.visit_params(f);
            }
        }
        self.out_norm.visit_params(f);
        self.out_conv.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_params_mut(f);
        self.time_fc1.visit_params_mut(f);
        self.time_fc2.visit_params_mut(f);
        for l in &mut self.down {
            l.res.visit_params_mut(f);
            if let Some(a) = &mut l.attn {
                a.visit_params_mut(f);
            }
        }
        self.bottom_res1.visit_params_mut(f);
        self.bottom_attn.visit_params_mut(f);
        self.bottom_res2.visit_params_mut(f);
        for l in &mut self.up {
            l.res.visit_params_mut(f);
            if let Some(a) = &mut l.attn {
                a.visit_params_mut(f);
            }
        }
        self.out_norm.visit_params_mut(f);
        self.out_conv.visit_params_mut(f);
    }
}
