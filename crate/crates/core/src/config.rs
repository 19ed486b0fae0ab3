//! Flat key=value configuration covering every tunable. Unknown keys are
//! rejected; every key has a desk-scale default. Full-scale reference
//! values are listed in the README.

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{NoiseSchedule, VarianceMode};
use crate::error::{Error, Result};
use crate::pipeline::{Canvas, LossMode, PairingMode, Role, RoleModelConfig, TextMode};
use crate::recognizer::RecognizerConfig;
use crate::text::Charset;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // diffusion
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub variance_mode: VarianceMode,
    pub stride: usize,
    // model
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub k_b: usize,
    pub k_m: usize,
    pub d_embed: usize,
    pub n_heads: usize,
    pub attention_resolutions: Vec<usize>,
    pub encoder_blocks: usize,
    pub dropout: f64,
    // conditioning
    pub charset: CharsetChoice,
    pub max_text_len: usize,
    pub text_mode: TextMode,
    pub loss_mode: LossMode,
    pub lambda: f64,
    // training
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub ema: bool,
    pub ema_decay: f64,
    // pipeline
    pub word_max_len: usize,
    pub digit_prob: f64,
    pub retry_factor: usize,
    pub degrader_text: bool,
    pub pairing: PairingMode,
    // recognizer
    pub recognizer_feature_width: usize,
    // canvas
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub canvas_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharsetChoice {
    Recognition,
    GroundTruth,
}

impl CharsetChoice {
    pub fn name(self) -> &'static str {
        match self {
            CharsetChoice::Recognition => "recognition",
            CharsetChoice::GroundTruth => "groundtruth",
        }
    }

    pub fn charset(self) -> Charset {
        match self {
            CharsetChoice::Recognition => Charset::recognition(),
            CharsetChoice::GroundTruth => Charset::ground_truth(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "recognition" => Ok(CharsetChoice::Recognition),
            "groundtruth" => Ok(CharsetChoice::GroundTruth),
            other => Err(Error::Config(format!("unknown charset {other:?}"))),
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            diffusion_steps: 200,
            beta_start: 5e-4,
            beta_end: 0.05,
            variance_mode: VarianceMode::Posterior,
            stride: 10,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 2],
            k_b: 2,
            k_m: 0,
            d_embed: 64,
            n_heads: 1,
            attention_resolutions: vec![8],
            encoder_blocks: 2,
            dropout: 0.1,
            charset: CharsetChoice::GroundTruth,
            max_text_len: 26,
            text_mode: TextMode::Gt,
            loss_mode: LossMode::Kl,
            lambda: 1.0,
            batch_size: 4,
            lr: 1e-3,
            iterations: 1500,
            seed: 0,
            ema: true,
            ema_decay: 0.999,
            word_max_len: 13,
            digit_prob: 0.10,
            retry_factor: 5,
            degrader_text: true,
            pairing: PairingMode::LrHr,
            recognizer_feature_width: 64,
            canvas_height: 16,
            canvas_width: 64,
            canvas_channels: 1,
        }
    }
}

fn render_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad list element {p:?}")))
        })
        .collect()
}

fn render_bool(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad boolean {other:?}"))),
    }
}

impl Config {
    /// Canonical key=value rendering; the basis of the config hash and the
    /// checkpoint snapshot.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("diffusion.steps", self.diffusion_steps.to_string());
        kv("diffusion.beta_start", format!("{:e}", self.beta_start));
        kv("diffusion.beta_end", format!("{:e}", self.beta_end));
        kv("diffusion.variance_mode", self.variance_mode.name().to_string());
        kv("diffusion.stride", self.stride.to_string());
        kv("model.base_channels", self.base_channels.to_string());
        kv("model.channel_multipliers", render_list(&self.channel_multipliers));
        kv("model.k_b", self.k_b.to_string());
        kv("model.k_m", self.k_m.to_string());
        kv("model.d_embed", self.d_embed.to_string());
        kv("model.n_heads", self.n_heads.to_string());
        kv("model.attention_resolutions", render_list(&self.attention_resolutions));
        kv("model.encoder_blocks", self.encoder_blocks.to_string());
        kv("model.dropout", format!("{:e}", self.dropout));
        kv("cond.charset", self.charset.name().to_string());
        kv("cond.max_text_len", self.max_text_len.to_string());
        kv("cond.text_mode", self.text_mode.name().to_string());
        kv("cond.loss_mode", self.loss_mode.name().to_string());
        kv("cond.lambda", format!("{:e}", self.lambda));
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.lr", format!("{:e}", self.lr));
        kv("train.iterations", self.iterations.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.ema", render_bool(self.ema).to_string());
        kv("train.ema_decay", format!("{:e}", self.ema_decay));
        kv("pipeline.max_len", self.word_max_len.to_string());
        kv("pipeline.digit_prob", format!("{:e}", self.digit_prob));
        kv("pipeline.retry_factor", self.retry_factor.to_string());
        kv("pipeline.degrader_text", render_bool(self.degrader_text).to_string());
        kv("pipeline.pairing", self.pairing.name().to_string());
        kv("recognizer.feature_width", self.recognizer_feature_width.to_string());
        kv("canvas.height", self.canvas_height.to_string());
        kv("canvas.width", self.canvas_width.to_string());
        kv("canvas.channels", self.canvas_channels.to_string());
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let uint = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer {v:?} for {key}")))
        };
        let real = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {v:?} for {key}")))
        };
        match key {
            "diffusion.steps" => self.diffusion_steps = uint(value)?,
            "diffusion.beta_start" => self.beta_start = real(value)?,
            "diffusion.beta_end" => self.beta_end = real(value)?,
            "diffusion.variance_mode" => self.variance_mode = VarianceMode::parse(value)?,
            "diffusion.stride" => self.stride = uint(value)?,
            "model.base_channels" => self.base_channels = uint(value)?,
            "model.channel_multipliers" => self.channel_multipliers = parse_list(value)?,
            "model.k_b" => self.k_b = uint(value)?,
            "model.k_m" => self.k_m = uint(value)?,
            "model.d_embed" => self.d_embed = uint(value)?,
            "model.n_heads" => self.n_heads = uint(value)?,
            "model.attention_resolutions" => self.attention_resolutions = parse_list(value)?,
            "model.encoder_blocks" => self.encoder_blocks = uint(value)?,
            "model.dropout" => self.dropout = real(value)?,
            "cond.charset" => self.charset = CharsetChoice::parse(value)?,
            "cond.max_text_len" => self.max_text_len = uint(value)?,
            "cond.text_mode" => self.text_mode = TextMode::parse(value)?,
            "cond.loss_mode" => self.loss_mode = LossMode::parse(value)?,
            "cond.lambda" => self.lambda = real(value)?,
            "train.batch_size" => self.batch_size = uint(value)?,
            "train.lr" => self.lr = real(value)?,
            "train.iterations" => self.iterations = uint(value)?,
            "train.seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad seed {value:?}")))?
            }
            "train.ema" => self.ema = parse_bool(value)?,
            "train.ema_decay" => self.ema_decay = real(value)?,
            "pipeline.max_len" => self.word_max_len = uint(value)?,
            "pipeline.digit_prob" => self.digit_prob = real(value)?,
            "pipeline.retry_factor" => self.retry_factor = uint(value)?,
            "pipeline.degrader_text" => self.degrader_text = parse_bool(value)?,
            "pipeline.pairing" => self.pairing = PairingMode::parse(value)?,
            "recognizer.feature_width" => self.recognizer_feature_width = uint(value)?,
            "canvas.height" => self.canvas_height = uint(value)?,
            "canvas.width" => self.canvas_width = uint(value)?,
            "canvas.channels" => self.canvas_channels = uint(value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses key=value text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Short hash of the canonical rendering, for provenance headers.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.render().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    // ── derived objects ─────────────────────────────────────────────────

    pub fn canvas(&self) -> Canvas {
        Canvas {
            channels: self.canvas_channels,
            height: self.canvas_height,
            width: self.canvas_width,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn role_model_config(&self, role: Role) -> RoleModelConfig {
        RoleModelConfig {
            role,
            text_mode: self.text_mode,
            canvas: self.canvas(),
            max_len: self.max_text_len,
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            k_b: self.k_b,
            k_m: self.k_m,
            attention_resolutions: self.attention_resolutions.clone(),
            d_embed: self.d_embed,
            n_heads: self.n_heads,
            encoder_blocks: self.encoder_blocks,
            dropout: self.dropout,
            degrader_text: self.degrader_text,
        }
    }

    pub fn recognizer_config(&self) -> RecognizerConfig {
        RecognizerConfig {
            in_channels: self.canvas_channels,
            height: self.canvas_height,
            width: self.canvas_width,
            feature_width: self.recognizer_feature_width,
            n_frames: self.max_text_len,
        }
    }

    pub fn denoiser_config(&self, role: Role) -> DenoiserConfig {
        self.role_model_config(role).denoiser_config()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_reparse() {
        let cfg = Config::default();
        let text = cfg.render();
        let back = Config::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("nonsense.key = 3").is_err());
        assert!(Config::parse("model.k_b = not_a_number").is_err());
    }

    #[test]
    fn empty_config_is_defaults() {
        let cfg = Config::parse("# just a comment\n\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::parse("model.k_b = 9\ntrain.lr = 3e-4\npipeline.pairing = mr_hr").unwrap();
        assert_eq!(cfg.k_b, 9);
        assert_eq!(cfg.lr, 3e-4);
        assert_eq!(cfg.pairing, PairingMode::MrHr);
        assert_ne!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn derived_configs_are_consistent() {
        let cfg = Config::default();
        let rm = cfg.role_model_config(Role::SuperResolver);
        let dc = rm.denoiser_config();
        assert_eq!(dc.in_channels, 2);
        assert_eq!(dc.out_channels, 1);
        let syn = cfg.denoiser_config(Role::Synthesizer);
        assert_eq!(syn.in_channels, 1);
        assert_eq!(cfg.recognizer_config().n_frames, 26);
    }
}
