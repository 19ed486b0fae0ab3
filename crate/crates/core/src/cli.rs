//! Command-line surface. One subcommand per process; every run with a fixed
//! seed and fixed inputs produces bit-identical artifacts, and each output
//! location gets a provenance file recording the command, seed, and config
//! hash.

use crate::checkpoint::{meta_lines, split_meta, Checkpoint};
use crate::config::Config;
use crate::diffusion::NoiseSchedule;
use crate::error::Error;
use crate::gradcheck::{grad_check, perturb_params};
use crate::manifest::{
    augment, load_manifest, load_png, save_manifest, save_png, write_pair_dataset,
};
use crate::metrics;
use crate::pipeline::{
    make_base_dataset, run_role, synthesize_dataset, train_role, PairedSample, PairingMode,
    Role, RoleModel, RoleTrainOptions, SampleOptions, SynthModels, SynthSource, SynthesisOptions,
    TextMode, WordList,
};
use crate::recognizer::{train_recognizer, Recognizer, RecognizerTrainOptions};
use crate::rng;
use crate::tensor::Tensor;
use crate::text::Charset;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Training and sampling run in single precision.
type F = f32;

#[derive(Parser)]
#[command(
    name = "textsr",
    version,
    about = "Text-conditional diffusion for scene-text super-resolution and paired-dataset synthesis"
)]
pub struct Cli {
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; overrides train.seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Inline config override, repeatable (e.g. --set model.k_b=3).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a desk-scale base dataset of degraded/clean render pairs.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Maximum word length (defaults to pipeline.max_len).
        #[arg(long)]
        max_len: Option<usize>,
        /// Split tag written into the manifest.
        #[arg(long, default_value = "train")]
        split: String,
        /// Whitespace-separated word list replacing the built-in dictionary.
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// CTC-train the toy recognizer on the clean images of a manifest.
    TrainRecognizer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train a role model (synthesizer, super_resolver, degrader).
    Train {
        #[arg(long)]
        role: String,
        /// Text conditioning: gt | generator (defaults to cond.text_mode).
        #[arg(long)]
        text: Option<String>,
        /// Text-prior-generator loss: kl | ctc (defaults to cond.loss_mode).
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretrained recognizer checkpoint (required for generator mode).
        #[arg(long)]
        recognizer: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from an existing role checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Fine-tuning mode: one tenth of the configured learning rate.
        #[arg(long)]
        finetune: bool,
    },
    /// Sample a text image from a trained synthesizer.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Super-resolve one image.
    SuperResolve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Degrade one image.
    Degrade {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Synthesize a filtered paired dataset with trained role models.
    Synthesize {
        #[arg(long)]
        super_resolver: PathBuf,
        #[arg(long)]
        degrader: PathBuf,
        /// Synthesizer checkpoint; omit when --source provides images.
        #[arg(long)]
        synthesizer: Option<PathBuf>,
        /// Manifest of source text images (bypasses the synthesizer).
        #[arg(long)]
        source: Option<PathBuf>,
        /// Recognizer checkpoint for postfiltering.
        #[arg(long)]
        recognizer: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        /// lr_hr | lr_mr | mr_hr (defaults to pipeline.pairing).
        #[arg(long)]
        pairing: Option<String>,
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Combine a base manifest with synthesized samples.
    Augment {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        target_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// SSIM/PSNR/accuracy of a model (or of the stored LR images) on a
    /// paired manifest.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recognizer: PathBuf,
        /// Super-resolver checkpoint; omitted = evaluate the LR inputs.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Verify analytic gradients of a small denoiser and of the CTC loss
    /// against central finite differences.
    GradCheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn main_impl() -> Result<i32> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => Config::default(),
    };
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set wants KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    run(cli.cmd, cfg, &command_line)?;
    Ok(0)
}

fn provenance(cfg: &Config, command_line: &str, target: &Path) -> Result<()> {
    let text = format!(
        "command = {command_line}\nseed = {}\nconfig_hash = {}\n",
        cfg.seed,
        cfg.hash()
    );
    let path = if target.extension().is_some() {
        target.with_extension("provenance.txt")
    } else {
        std::fs::create_dir_all(target)?;
        target.join("provenance.txt")
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_dict(path: &Option<PathBuf>) -> Result<WordList> {
    Ok(match path {
        Some(p) => WordList::from_text(&std::fs::read_to_string(p)?),
        None => WordList::builtin(),
    })
}

fn progress(start: Instant, every: usize) -> impl FnMut(usize, f64) {
    move |step, loss| {
        if step % every == 0 || step == 1 {
            println!(
                "step={step} loss={loss:.6} elapsed={:.1}s",
                start.elapsed().as_secs_f64()
            );
        }
    }
}

// ── checkpoint plumbing ─────────────────────────────────────────────────

fn save_recognizer(model: &Recognizer<F>, cfg: &Config, path: &Path) -> Result<()> {
    let config = format!("{}{}", meta_lines("recognizer", &[]), cfg.render());
    let ckpt = Checkpoint::from_module(config, model.charset().printable(), model);
    ckpt.save(path)?;
    Ok(())
}

fn load_recognizer(path: &Path) -> Result<(Recognizer<F>, Config)> {
    let ckpt = Checkpoint::load(path)?;
    let (meta, rest) = split_meta(&ckpt.config);
    let kind = meta.iter().find(|(k, _)| k == "kind").map(|(_, v)| v.as_str());
    if kind != Some("recognizer") {
        bail!("{} is not a recognizer checkpoint", path.display());
    }
    let cfg = Config::parse(&rest)?;
    let charset = Charset::from_printable(&ckpt.charset)?;
    let mut model = Recognizer::<F>::build(cfg.recognizer_config(), charset, &mut rng::root(0))?;
    ckpt.apply(&mut model)?;
    Ok((model, cfg))
}

fn save_role_model(model: &RoleModel<F>, cfg: &Config, path: &Path) -> Result<()> {
    let config = format!(
        "{}{}",
        meta_lines("role_model", &[("role", model.cfg.role.name())]),
        cfg.render()
    );
    let ckpt = Checkpoint::from_module(config, model.prior_charset.printable(), model);
    ckpt.save(path)?;
    Ok(())
}

/// Rebuilds a role model from its checkpoint. The stored config snapshot
/// takes precedence over the ambient CLI config, with a notice.
fn load_role_model(path: &Path, ambient: &Config) -> Result<(RoleModel<F>, Config)> {
    let ckpt = Checkpoint::load(path)?;
    let (meta, rest) = split_meta(&ckpt.config);
    let kind = meta.iter().find(|(k, _)| k == "kind").map(|(_, v)| v.as_str());
    if kind != Some("role_model") {
        bail!("{} is not a role-model checkpoint", path.display());
    }
    let role = Role::parse(
        meta.iter()
            .find(|(k, _)| k == "role")
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint("missing role".to_string()))?,
    )?;
    let cfg = Config::parse(&rest)?;
    if cfg != *ambient {
        println!(
            "notice: using config snapshot from {} (hash {}) over the ambient config",
            path.display(),
            cfg.hash()
        );
    }
    let charset = Charset::from_printable(&ckpt.charset)?;
    // Generator weights live in the checkpoint; seed a placeholder.
    let placeholder = if cfg.text_mode == TextMode::Generator {
        Some(Recognizer::<F>::build(
            cfg.recognizer_config(),
            Charset::recognition(),
            &mut rng::root(0),
        )?)
    } else {
        None
    };
    let mut model = RoleModel::build(
        cfg.role_model_config(role),
        charset,
        placeholder.as_ref(),
        &mut rng::root(0),
    )?;
    ckpt.apply(&mut model)?;
    Ok((model, cfg))
}

/// Loads the pairs of a manifest; a single-image manifest is accepted for
/// synthesizer training by using each image as its own pair.
fn load_training_pairs(
    path: &Path,
    cfg: &Config,
    role: Role,
) -> Result<Vec<PairedSample<F>>> {
    let canvas = cfg.canvas();
    let manifest = load_manifest(path, &canvas, cfg.max_text_len)?;
    let paired = manifest.entries.iter().all(|e| e.paths.len() == 2);
    if paired {
        Ok(manifest.load_pairs(&canvas)?)
    } else if role == Role::Synthesizer {
        Ok(manifest
            .load_singles::<F>(&canvas)?
            .into_iter()
            .map(|(img, label)| PairedSample {
                lr: img.clone(),
                hr: img,
                label,
            })
            .collect())
    } else {
        bail!(
            "{} has single-image entries; {} training needs LR-HR pairs",
            path.display(),
            role.name()
        );
    }
}

fn sample_options(cfg: &Config, stride: Option<usize>) -> SampleOptions {
    SampleOptions {
        stride: stride.unwrap_or(cfg.stride),
        variance_mode: cfg.variance_mode,
    }
}

// ── subcommands ─────────────────────────────────────────────────────────

fn run(cmd: Cmd, mut cfg: Config, command_line: &str) -> Result<()> {
    match cmd {
        Cmd::GenData {
            n,
            out,
            max_len,
            split,
            dict,
        } => {
            let dict = load_dict(&dict)?;
            let max_len = max_len.unwrap_or(cfg.word_max_len);
            let canvas = cfg.canvas();
            let data: Vec<PairedSample<F>> =
                make_base_dataset(n, &canvas, max_len, &dict, cfg.seed)?;
            let tagged: Vec<(PairedSample<F>, String)> =
                data.into_iter().map(|p| (p, String::new())).collect();
            let manifest = write_pair_dataset(&tagged, &out, &split)?;
            save_manifest(&manifest, &out.join("manifest.tsv"))?;
            provenance(&cfg, command_line, &out)?;
            println!("wrote {} pairs to {}", manifest.len(), out.display());
        }

        Cmd::TrainRecognizer {
            data,
            out,
            iterations,
        } => {
            let canvas = cfg.canvas();
            let manifest = load_manifest(&data, &canvas, cfg.max_text_len)?;
            let samples = manifest.load_singles::<F>(&canvas)?;
            let mut model =
                Recognizer::<F>::build(cfg.recognizer_config(), Charset::recognition(), &mut rng::stream(cfg.seed, 1))?;
            let opts = RecognizerTrainOptions {
                iterations: iterations.unwrap_or(cfg.iterations),
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                seed: cfg.seed,
            };
            let start = Instant::now();
            train_recognizer(&mut model, &samples, &opts, progress(start, 100))?;
            let acc = crate::recognizer::exact_match_rate(&model, &samples)?;
            println!("train_exact_match={acc:.4}");
            save_recognizer(&model, &cfg, &out)?;
            provenance(&cfg, command_line, &out)?;
            println!("saved recognizer to {}", out.display());
        }

        Cmd::Train {
            role,
            text,
            loss,
            data,
            out,
            recognizer,
            iterations,
            init,
            finetune,
        } => {
            let role = Role::parse(&role)?;
            if let Some(t) = &text {
                cfg.text_mode = TextMode::parse(t)?;
            }
            if let Some(l) = &loss {
                cfg.loss_mode = crate::pipeline::LossMode::parse(l)?;
            }
            if let Some(it) = iterations {
                cfg.iterations = it;
            }
            let (mut model, cfg) = match &init {
                Some(ckpt_path) => {
                    let (m, snap_cfg) = load_role_model(ckpt_path, &cfg)?;
                    if m.cfg.role != role {
                        bail!("--init checkpoint is a {}, not a {}", m.cfg.role.name(), role.name());
                    }
                    let mut merged = snap_cfg;
                    // Iteration count and seed still come from this run.
                    merged.iterations = cfg.iterations;
                    merged.seed = cfg.seed;
                    (m, merged)
                }
                None => {
                    let pretrained = match (&recognizer, cfg.text_mode) {
                        (Some(p), _) => Some(load_recognizer(p)?.0),
                        (None, TextMode::Generator) => {
                            bail!("generator text mode needs --recognizer")
                        }
                        (None, TextMode::Gt) => None,
                    };
                    let model = RoleModel::build(
                        cfg.role_model_config(role),
                        cfg.charset.charset(),
                        pretrained.as_ref(),
                        &mut rng::stream(cfg.seed, 2),
                    )?;
                    (model, cfg)
                }
            };
            let pairs = load_training_pairs(&data, &cfg, role)?;
            let sched = cfg.schedule()?;
            let opts = RoleTrainOptions {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                lr: if finetune { cfg.lr * 0.1 } else { cfg.lr },
                seed: cfg.seed,
                lambda: cfg.lambda,
                loss_mode: cfg.loss_mode,
                ema_decay: cfg.ema.then_some(cfg.ema_decay),
            };
            println!(
                "training {} ({} params, {} pairs, text={}, loss={})",
                role.name(),
                model.param_count(),
                pairs.len(),
                cfg.text_mode.name(),
                cfg.loss_mode.name()
            );
            let start = Instant::now();
            train_role(&mut model, &sched, &pairs, &opts, progress(start, 100))?;
            save_role_model(&model, &cfg, &out)?;
            provenance(&cfg, command_line, &out)?;
            println!("saved {} to {}", role.name(), out.display());
        }

        Cmd::Sample {
            model,
            text,
            out,
            stride,
        } => {
            let (model, cfg) = load_role_model(&model, &cfg)?;
            if model.cfg.role != Role::Synthesizer {
                bail!("sample needs a synthesizer checkpoint, got {}", model.cfg.role.name());
            }
            let sched = cfg.schedule()?;
            let opts = sample_options(&cfg, stride);
            let img = run_role(&model, &sched, &text, None, &opts, &mut rng::stream(cfg.seed, 3))?;
            save_png(&img, &out)?;
            provenance(&cfg, command_line, &out)?;
            println!("wrote {}", out.display());
        }

        Cmd::SuperResolve {
            model,
            input,
            text,
            out,
            stride,
        } => {
            run_image_role(Role::SuperResolver, &model, &input, text.as_deref(), &out, stride, cfg, command_line)?;
        }

        Cmd::Degrade {
            model,
            input,
            text,
            out,
            stride,
        } => {
            run_image_role(Role::Degrader, &model, &input, text.as_deref(), &out, stride, cfg, command_line)?;
        }

        Cmd::Synthesize {
            super_resolver,
            degrader,
            synthesizer,
            source,
            recognizer,
            n,
            out,
            max_len,
            pairing,
            dict,
        } => {
            let (sr, cfg) = load_role_model(&super_resolver, &cfg)?;
            let (deg, _) = load_role_model(&degrader, &cfg)?;
            if sr.cfg.role != Role::SuperResolver || deg.cfg.role != Role::Degrader {
                bail!("role checkpoints passed to the wrong flags");
            }
            let synth_model = synthesizer
                .as_ref()
                .map(|p| load_role_model(p, &cfg))
                .transpose()?
                .map(|(m, _)| m);
            let (rec, _) = load_recognizer(&recognizer)?;
            let canvas = cfg.canvas();
            let sched = cfg.schedule()?;
            let dict = load_dict(&dict)?;
            let provided = source
                .as_ref()
                .map(|p| -> Result<Vec<(Tensor<F>, String)>> {
                    let m = load_manifest(p, &canvas, cfg.max_text_len)?;
                    Ok(m.load_singles(&canvas)?)
                })
                .transpose()?;
            let src = match &provided {
                Some(items) => SynthSource::Provided(items),
                None => SynthSource::Words {
                    dict: &dict,
                    max_len: max_len.unwrap_or(cfg.word_max_len),
                },
            };
            let mut opts = SynthesisOptions::new(n, cfg.seed);
            opts.retry_factor = cfg.retry_factor;
            opts.pairing = match &pairing {
                Some(p) => PairingMode::parse(p)?,
                None => cfg.pairing,
            };
            opts.sample = sample_options(&cfg, None);
            let models = SynthModels {
                synthesizer: synth_model.as_ref(),
                super_resolver: &sr,
                degrader: &deg,
            };
            let (pairs, stats) = synthesize_dataset(&models, &src, &rec, &sched, &canvas, &opts)?;
            let tagged: Vec<(PairedSample<F>, String)> = pairs
                .into_iter()
                .map(|p| (p.pair, p.source.to_string()))
                .collect();
            let manifest = write_pair_dataset(&tagged, &out, "synth")?;
            save_manifest(&manifest, &out.join("manifest.tsv"))?;
            let log = format!(
                "requested = {n}\naccepted = {}\nattempts = {}\nacceptance_rate = {:.4}\npairing = {}\n",
                stats.accepted,
                stats.attempts,
                stats.acceptance_rate(),
                opts.pairing.name()
            );
            std::fs::write(out.join("synthesis_log.txt"), &log)?;
            provenance(&cfg, command_line, &out)?;
            print!("{log}");
        }

        Cmd::Augment {
            base,
            synth,
            target_n,
            out,
        } => {
            let canvas = cfg.canvas();
            let base_m = load_manifest(&base, &canvas, cfg.max_text_len)?;
            let synth_m = load_manifest(&synth, &canvas, cfg.max_text_len)?;
            let merged = augment(&base_m, &synth_m, target_n, cfg.seed, &out)?;
            save_manifest(&merged, &out.join("manifest.tsv"))?;
            provenance(&cfg, command_line, &out)?;
            println!(
                "augmented dataset: {} entries ({} base + {} synthesized)",
                merged.len(),
                base_m.len(),
                merged.len() - base_m.len()
            );
        }

        Cmd::Evaluate {
            data,
            recognizer,
            model,
            out,
            stride,
        } => {
            let (rec, rec_cfg) = load_recognizer(&recognizer)?;
            let model = model.map(|p| load_role_model(&p, &cfg)).transpose()?;
            let cfg = model.as_ref().map(|(_, c)| c.clone()).unwrap_or(rec_cfg);
            let canvas = cfg.canvas();
            let pairs = load_manifest(&data, &canvas, cfg.max_text_len)?.load_pairs::<F>(&canvas)?;
            let sched = cfg.schedule()?;
            let opts = sample_options(&cfg, stride);
            let mut samples = Vec::with_capacity(pairs.len());
            for (i, p) in pairs.iter().enumerate() {
                let output = match &model {
                    Some((m, _)) => run_role(
                        m,
                        &sched,
                        &p.label,
                        Some(&p.lr),
                        &opts,
                        &mut rng::stream(cfg.seed, 0x_E000 + i as u64),
                    )?,
                    None => p.lr.clone(),
                };
                samples.push((output, p.hr.clone(), p.label.clone()));
            }
            let report = metrics::evaluate(&rec, &samples)?;
            let text = report.render();
            if let Some(out) = &out {
                std::fs::write(out, &text)?;
                provenance(&cfg, command_line, out)?;
            }
            print!("{text}");
        }

        Cmd::GradCheck { out } => {
            let start = Instant::now();
            let report = grad_check_report()?;
            if let Some(out) = &out {
                std::fs::write(out, &report.0)?;
                provenance(&cfg, command_line, out)?;
            }
            print!("{}", report.0);
            println!("elapsed = {:.2}s", start.elapsed().as_secs_f64());
            if !report.1 {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_image_role(
    role: Role,
    model_path: &Path,
    input: &Path,
    text: Option<&str>,
    out: &Path,
    stride: Option<usize>,
    ambient: Config,
    command_line: &str,
) -> Result<()> {
    let (model, cfg) = load_role_model(model_path, &ambient)?;
    if model.cfg.role != role {
        bail!(
            "{} needs a {} checkpoint, got {}",
            role.name(),
            role.name(),
            model.cfg.role.name()
        );
    }
    let canvas = cfg.canvas();
    let img: Tensor<F> = load_png(input, &canvas)?;
    let text = match (text, model.cfg.uses_text()) {
        (Some(t), _) => t.to_string(),
        (None, false) => String::new(),
        (None, true) => bail!("this model is text-conditional; pass --text"),
    };
    let sched = cfg.schedule()?;
    let opts = sample_options(&cfg, stride);
    let result = run_role(&model, &sched, &text, Some(&img), &opts, &mut rng::stream(cfg.seed, 4))?;
    save_png(&result, out)?;
    provenance(&cfg, command_line, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Gradient verification used by the `grad-check` subcommand: a small
/// denoiser with one cross-attention pair, and the CTC loss, both against
/// central differences in f64.
fn grad_check_report() -> Result<(String, bool)> {
    use crate::denoiser::{Denoiser, DenoiserConfig};

    let cfg = DenoiserConfig {
        base_channels: 8,
        channel_multipliers: vec![1, 2],
        k_b: 1,
        k_m: 0,
        attention_resolutions: vec![],
        d_embed: 12,
        n_heads: 1,
        in_channels: 2,
        out_channels: 1,
        height: 8,
        width: 16,
    };
    let mut model = Denoiser::<f64>::build(cfg, &mut rng::root(1))?;
    perturb_params(&mut model, 0.02, 2);
    let params = model.param_count();

    let mut r = rng::root(3);
    let x0 = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let lr_img = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let z = Tensor::<f64>::randn(vec![5, 12], &mut r);
    let eps = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let sched = NoiseSchedule::linear(8, 0.01, 0.2)?;
    let t = 5usize;
    let x_t = crate::diffusion::forward_sample(&x0, t, &eps, &sched)?;
    let x_cond = crate::text::concat_condition(&x_t, &lr_img)?;

    let denoiser_err = grad_check(
        &mut model,
        |tape, m| {
            let xv = tape.constant(x_cond.clone());
            let zv = tape.constant(z.clone());
            let ev = tape.constant(eps.clone());
            let pred = m.forward(tape, xv, Some(zv), t)?;
            tape.mse(ev, pred)
        },
        1e-5,
        32,
        4,
    )?;

    // CTC gradient through log-softmax on a random instance.
    struct LogitHolder(Tensor<f64>);
    impl crate::module::Module<f64> for LogitHolder {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
            f("logits", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
            f("logits", &mut self.0);
        }
    }
    let mut holder = LogitHolder(Tensor::<f64>::randn(vec![6, 5], &mut r));
    let ctc_err = grad_check(
        &mut holder,
        |tape, h| {
            let lv = tape.param("logits", &h.0);
            let lp = tape.log_softmax(lv)?;
            tape.ctc_loss(lp, &[1, 2, 1], 0)
        },
        1e-5,
        30,
        5,
    )?;

    let tol = 1e-3;
    let pass = denoiser_err < tol && ctc_err < tol;
    let report = format!(
        "denoiser_params = {params}\ndenoiser_max_rel_err = {denoiser_err:.3e}\n\
         ctc_max_rel_err = {ctc_err:.3e}\ntolerance = {tol:.0e}\nresult = {}\n",
        if pass { "pass" } else { "FAIL" }
    );
    Ok((report, pass))
}
