//! Synthetic text-image rendering: the desk-scale stand-in for real HR
//! scene-text photographs.

use super::font::{self, ADVANCE, GLYPH_H, GLYPH_W};
use super::Canvas;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Real, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// How a word is drawn: glyph scale, foreground/background intensity in the
/// [-1, 1] pixel range, top-left placement, and a light per-pixel texture
/// noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub scale: usize,
    pub fg: f64,
    pub bg: f64,
    pub x_offset: usize,
    pub y_offset: usize,
    pub noise_sigma: f64,
}

/// Pixel width of `len` glyphs at `scale` (no trailing spacing column).
pub fn text_width(len: usize, scale: usize) -> usize {
    scale * (ADVANCE * len - 1)
}

impl RenderStyle {
    /// High-contrast centered rendering at the largest scale that fits.
    pub fn clean(text_len: usize, canvas: &Canvas) -> Result<Self> {
        let scale = (1..=3)
            .rev()
            .find(|&s| text_width(text_len, s) <= canvas.width && GLYPH_H * s <= canvas.height)
            .ok_or_else(|| {
                Error::invalid(
                    "render_text_image",
                    format!(
                        "text of length {text_len} is {} px wide at minimum scale, canvas is {}",
                        text_width(text_len, 1),
                        canvas.width
                    ),
                )
            })?;
        Ok(RenderStyle {
            scale,
            fg: 1.0,
            bg: -1.0,
            x_offset: (canvas.width - text_width(text_len, scale)) / 2,
            y_offset: (canvas.height - GLYPH_H * scale) / 2,
            noise_sigma: 0.0,
        })
    }

    /// Random feasible style: scale, polarity, contrast, placement jitter,
    /// and texture-noise level.
    pub fn sample(rng: &mut Prng, text_len: usize, canvas: &Canvas) -> Result<Self> {
        if text_width(text_len, 1) > canvas.width || GLYPH_H > canvas.height {
            return Err(Error::invalid(
                "render_text_image",
                format!(
                    "text of length {text_len} is {} px wide at minimum scale, canvas is {}",
                    text_width(text_len, 1),
                    canvas.width
                ),
            ));
        }
        let max_scale = (1..=3)
            .rev()
            .find(|&s| text_width(text_len, s) <= canvas.width && GLYPH_H * s <= canvas.height)
            .expect("scale 1 fits");
        let scale = if max_scale > 1 && rng.gen::<f64>() < 0.5 {
            rng.gen_range(2..=max_scale)
        } else {
            1
        };
        let dark_on_light = rng.gen::<f64>() < 0.5;
        let (fg, bg) = if dark_on_light {
            (rng.gen_range(-1.0..-0.35), rng.gen_range(0.35..1.0))
        } else {
            (rng.gen_range(0.35..1.0), rng.gen_range(-1.0..-0.35))
        };
        let slack_x = canvas.width - text_width(text_len, scale);
        let slack_y = canvas.height - GLYPH_H * scale;
        Ok(RenderStyle {
            scale,
            fg,
            bg,
            x_offset: rng.gen_range(0..=slack_x),
            y_offset: rng.gen_range(0..=slack_y),
            noise_sigma: rng.gen_range(0.0..0.04),
        })
    }
}

/// Draws `text` onto a fresh canvas. Deterministic for a fixed
/// (text, style, rng seed); `rng` only feeds the style's texture noise.
pub fn render_text_image<T: Real>(
    text: &str,
    style: &RenderStyle,
    canvas: &Canvas,
    rng: &mut Prng,
) -> Result<Tensor<T>> {
    let len = text.chars().count();
    if len == 0 {
        return Err(Error::invalid("render_text_image", "empty text".to_string()));
    }
    if text_width(len, style.scale) + style.x_offset > canvas.width
        || GLYPH_H * style.scale + style.y_offset > canvas.height
    {
        return Err(Error::invalid(
            "render_text_image",
            format!(
                "text of length {len} does not fit the {}x{} canvas at scale {}",
                canvas.height, canvas.width, style.scale
            ),
        ));
    }

    let (h, w) = (canvas.height, canvas.width);
    let mut plane = vec![style.bg; h * w];
    for (i, ch) in text.chars().enumerate() {
        let g = font::glyph(ch).ok_or(Error::UnknownChar { ch })?;
        let gx = style.x_offset + i * ADVANCE * style.scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    for sy in 0..style.scale {
                        for sx in 0..style.scale {
                            let y = style.y_offset + row * style.scale + sy;
                            let x = gx + col * style.scale + sx;
                            plane[y * w + x] = style.fg;
                        }
                    }
                }
            }
        }
    }
    if style.noise_sigma > 0.0 {
        for v in plane.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + style.noise_sigma * n).clamp(-1.0, 1.0);
        }
    }

    let mut data = Vec::with_capacity(canvas.channels * h * w);
    for _ in 0..canvas.channels {
        data.extend(plane.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::from_vec(vec![canvas.channels, h, w], data)
}
