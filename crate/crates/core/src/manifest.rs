//! Dataset manifests: tab-separated UTF-8 lines of image paths and labels,
//! with `# key=value` comment headers carrying split tags. Paths are
//! relative to the manifest's directory; images are 8-bit grayscale or RGB
//! PNGs at the dataset canvas size.

use crate::error::{Error, Result};
use crate::pipeline::{Canvas, PairedSample};
use crate::tensor::{Real, Tensor};
use crate::text::Charset;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub const DEFAULT_SPLIT: &str = "train";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// One path (single-image dataset) or two (LR then HR), as written.
    pub paths: Vec<String>,
    pub label: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the relative paths resolve against.
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            dir: dir.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Loads LR-HR pairs; every entry must carry two paths.
    pub fn load_pairs<T: Real>(&self, canvas: &Canvas) -> Result<Vec<PairedSample<T>>> {
        self.entries
            .iter()
            .map(|e| {
                if e.paths.len() != 2 {
                    return Err(Error::invalid(
                        "manifest",
                        format!("entry {:?} is not an LR-HR pair", e.paths),
                    ));
                }
                Ok(PairedSample {
                    lr: load_png(&self.resolve(&e.paths[0]), canvas)?,
                    hr: load_png(&self.resolve(&e.paths[1]), canvas)?,
                    label: e.label.clone(),
                })
            })
            .collect()
    }

    /// Loads one image per entry: the single path, or the HR side of pairs.
    pub fn load_singles<T: Real>(&self, canvas: &Canvas) -> Result<Vec<(Tensor<T>, String)>> {
        self.entries
            .iter()
            .map(|e| {
                let rel = e.paths.last().expect("validated non-empty");
                Ok((load_png(&self.resolve(rel), canvas)?, e.label.clone()))
            })
            .collect()
    }
}

fn validate_label(label: &str, max_len: usize) -> std::result::Result<(), String> {
    let k = label.chars().count();
    if k == 0 {
        return Err("empty label".to_string());
    }
    if k > max_len {
        return Err(format!("label length {k} exceeds {max_len}"));
    }
    let cs = Charset::ground_truth();
    if let Some(bad) = label.chars().find(|&c| cs.index_of(c).is_none()) {
        return Err(format!("label character {bad:?} outside the 63-charset"));
    }
    Ok(())
}

/// Parses and fully validates a manifest: referenced files must exist and
/// decode to the canvas size, labels must be legal, and no path may repeat.
pub fn load_manifest(path: &Path, canvas: &Canvas, max_len: usize) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut manifest = DatasetManifest::new(dir);
    let mut split = DEFAULT_SPLIT.to_string();
    let mut seen_paths: HashSet<String> = HashSet::new();
    let err_at = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                if k.trim() == "split" {
                    split = v.trim().to_string();
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (paths, label) = match fields.as_slice() {
            [img, label] => (vec![img.to_string()], *label),
            [lr, hr, label] => (vec![lr.to_string(), hr.to_string()], *label),
            _ => {
                return Err(err_at(
                    lineno,
                    format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                ))
            }
        };
        validate_label(label, max_len).map_err(|m| err_at(lineno, m))?;
        for p in &paths {
            if !seen_paths.insert(p.clone()) {
                return Err(err_at(lineno, format!("duplicate path {p:?}")));
            }
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(err_at(lineno, format!("missing file {p:?}")));
            }
            // Validate decodability and size up front.
            load_png::<f32>(&full, canvas).map_err(|e| err_at(lineno, e.to_string()))?;
        }
        manifest.entries.push(ManifestEntry {
            paths,
            label: label.to_string(),
            split: split.clone(),
        });
    }
    Ok(manifest)
}

/// Canonical text form: a split header whenever the tag changes, then
/// tab-separated entries. `save(load(p))` writes `p`'s canonical form and
/// `load(save(m))` reproduces `m` exactly.
pub fn render_manifest(m: &DatasetManifest) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for e in &m.entries {
        if current != Some(e.split.as_str()) {
            out.push_str(&format!("# split={}\n", e.split));
            current = Some(e.split.as_str());
        }
        out.push_str(&e.paths.join("\t"));
        out.push('\t');
        out.push_str(&e.label);
        out.push('\n');
    }
    out
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, render_manifest(m))?;
    Ok(())
}

/// Combines a base manifest with synthesized samples: all of base, plus
/// `target_n - base.len()` entries drawn from `synth` without replacement.
/// Image files are copied next to the output manifest so its paths stay
/// local. Split tags are preserved.
pub fn augment(
    base: &DatasetManifest,
    synth: &DatasetManifest,
    target_n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if target_n < base.len() {
        return Err(Error::invalid(
            "augment",
            format!("target {target_n} below base size {}", base.len()),
        ));
    }
    let extra = target_n - base.len();
    if extra > synth.len() {
        return Err(Error::invalid(
            "augment",
            format!("need {extra} synthesized samples, only {} available", synth.len()),
        ));
    }
    std::fs::create_dir_all(out_dir.join("img"))?;
    let mut out = DatasetManifest::new(out_dir);

    let copy_entry = |src: &DatasetManifest, e: &ManifestEntry, tag: &str, idx: usize| -> Result<ManifestEntry> {
        let mut new_paths = Vec::with_capacity(e.paths.len());
        for (k, p) in e.paths.iter().enumerate() {
            let ext = Path::new(p)
                .extension()
                .and_then(|s| s.to_str())
                .unwrap_or("png");
            let new_rel = format!("img/{tag}{idx:05}_{k}.{ext}");
            std::fs::copy(src.resolve(p), out_dir.join(&new_rel))?;
            new_paths.push(new_rel);
        }
        Ok(ManifestEntry {
            paths: new_paths,
            label: e.label.clone(),
            split: e.split.clone(),
        })
    };

    for (i, e) in base.entries.iter().enumerate() {
        let entry = copy_entry(base, e, "base", i)?;
        out.entries.push(entry);
    }
    // Without-replacement draw, deterministic in the seed.
    let mut rng = crate::rng::stream(seed, 0xA6);
    let chosen = rand::seq::index::sample(&mut rng, synth.len(), extra);
    for (j, idx) in chosen.iter().enumerate() {
        let entry = copy_entry(synth, &synth.entries[idx], "synth", j)?;
        out.entries.push(entry);
    }
    Ok(out)
}

// ── PNG image I/O ───────────────────────────────────────────────────────

/// Maps 8-bit pixels to the diffusion range [-1, 1].
fn u8_to_real<T: Real>(v: u8) -> T {
    T::from_f64(v as f64 / 255.0 * 2.0 - 1.0)
}

fn real_to_u8<T: Real>(v: T) -> u8 {
    let x = (v.to_f64() + 1.0) / 2.0 * 255.0;
    x.round().clamp(0.0, 255.0) as u8
}

pub fn save_png<T: Real>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    match c {
        1 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| real_to_u8(v)).collect();
            let im: image::GrayImage =
                image::ImageBuffer::from_vec(w as u32, h as u32, buf).expect("sized buffer");
            im.save(path)?;
        }
        3 => {
            let mut buf = vec![0u8; h * w * 3];
            for ci in 0..3 {
                for i in 0..h * w {
                    buf[i * 3 + ci] = real_to_u8(img.data()[ci * h * w + i]);
                }
            }
            let im: image::RgbImage =
                image::ImageBuffer::from_vec(w as u32, h as u32, buf).expect("sized buffer");
            im.save(path)?;
        }
        other => {
            return Err(Error::invalid(
                "save_png",
                format!("{other} channels unsupported (1 or 3)"),
            ))
        }
    }
    Ok(())
}

pub fn load_png<T: Real>(path: &Path, canvas: &Canvas) -> Result<Tensor<T>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if h != canvas.height || w != canvas.width {
        return Err(Error::invalid(
            "load_png",
            format!(
                "{} is {h}x{w}, canvas is {}x{}",
                path.display(),
                canvas.height,
                canvas.width
            ),
        ));
    }
    let data = match canvas.channels {
        1 => img.into_luma8().into_vec().into_iter().map(u8_to_real).collect(),
        3 => {
            let rgb = img.into_rgb8().into_vec();
            let mut data = vec![T::ZERO; 3 * h * w];
            for i in 0..h * w {
                for ci in 0..3 {
                    data[ci * h * w + i] = u8_to_real(rgb[i * 3 + ci]);
                }
            }
            data
        }
        other => {
            return Err(Error::invalid(
                "load_png",
                format!("{other} channels unsupported (1 or 3)"),
            ))
        }
    };
    Tensor::from_vec(canvas.shape(), data)
}

/// Writes pair images and a manifest for synthesized or generated samples.
pub fn write_pair_dataset<T: Real>(
    pairs: &[(PairedSample<T>, String)],
    out_dir: &Path,
    split: &str,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir.join("img"))?;
    let mut manifest = DatasetManifest::new(out_dir);
    for (i, (pair, source)) in pairs.iter().enumerate() {
        let lr_rel = format!("img/{i:05}_lr.png");
        let hr_rel = format!("img/{i:05}_hr.png");
        save_png(&pair.lr, &out_dir.join(&lr_rel))?;
        save_png(&pair.hr, &out_dir.join(&hr_rel))?;
        manifest.entries.push(ManifestEntry {
            paths: vec![lr_rel, hr_rel],
            label: pair.label.clone(),
            split: if source.is_empty() {
                split.to_string()
            } else {
                format!("{split}:{source}")
            },
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn canvas() -> Canvas {
        Canvas {
            channels: 1,
            height: 16,
            width: 64,
        }
    }

    fn rand_img(seed: u64) -> Tensor<f32> {
        let mut r = rng::root(seed);
        Tensor::<f32>::randn(vec![1, 16, 64], &mut r).map(|v| v.clamp(-1.0, 1.0))
    }

    #[test]
    fn png_round_trip_is_bit_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = rand_img(1);
        let p = dir.path().join("x.png");
        save_png(&img, &p).unwrap();
        let back: Tensor<f32> = load_png(&p, &canvas()).unwrap();
        // Quantized once, a second round trip is exact.
        let p2 = dir.path().join("y.png");
        save_png(&back, &p2).unwrap();
        let back2: Tensor<f32> = load_png(&p2, &canvas()).unwrap();
        assert_eq!(back.data(), back2.data());
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "").unwrap();
        let m = load_manifest(&p, &canvas(), 26).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let c = canvas();
        save_png(&rand_img(2), &dir.path().join("a_lr.png")).unwrap();
        save_png(&rand_img(3), &dir.path().join("a_hr.png")).unwrap();
        save_png(&rand_img(4), &dir.path().join("b.png")).unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a_lr.png\ta_hr.png\thello\n# split=test\nb.png\tworld\n").unwrap();
        let m = load_manifest(&p, &c, 26).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].paths.len(), 2);
        assert_eq!(m.entries[0].split, "train");
        assert_eq!(m.entries[1].split, "test");
        // Round trip through the canonical form.
        let p2 = dir.path().join("m2.tsv");
        save_manifest(&m, &p2).unwrap();
        let m2 = load_manifest(&p2, &c, 26).unwrap();
        assert_eq!(m.entries, m2.entries);
        let bytes_a = std::fs::read(&p2).unwrap();
        save_manifest(&m2, &p2).unwrap();
        assert_eq!(bytes_a, std::fs::read(&p2).unwrap());
    }

    #[test]
    fn manifest_errors_name_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let c = canvas();
        save_png(&rand_img(5), &dir.path().join("a.png")).unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a.png\tok\nmissing.png\tok\n").unwrap();
        let err = load_manifest(&p, &c, 26).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("missing.png"), "{err}");

        std::fs::write(&p, "a.png\tbad%label\n").unwrap();
        let err = load_manifest(&p, &c, 26).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains('%'), "{err}");

        std::fs::write(&p, "a.png\tok\na.png\tok2\n").unwrap();
        let err = load_manifest(&p, &c, 26).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn wrong_size_image_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let small = Tensor::<f32>::zeros(vec![1, 8, 8]);
        save_png(&small, &dir.path().join("s.png")).unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "s.png\tok\n").unwrap();
        assert!(load_manifest(&p, &canvas(), 26).is_err());
    }

    #[test]
    fn augment_counts_and_no_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let c = canvas();
        // base: 2 pairs; synth: 4 pairs
        let mk = |name: &str, n: usize, seed: u64| -> DatasetManifest {
            let sub = dir.path().join(name);
            let pairs: Vec<(PairedSample<f32>, String)> = (0..n)
                .map(|i| {
                    (
                        PairedSample {
                            lr: rand_img(seed + 2 * i as u64),
                            hr: rand_img(seed + 2 * i as u64 + 1),
                            label: format!("w{i}"),
                        },
                        String::new(),
                    )
                })
                .collect();
            let m = write_pair_dataset(&pairs, &sub, "train").unwrap();
            save_manifest(&m, &sub.join("manifest.tsv")).unwrap();
            load_manifest(&sub.join("manifest.tsv"), &c, 26).unwrap()
        };
        let base = mk("base", 2, 100);
        let synth = mk("synth", 4, 200);

        let out = augment(&base, &synth, 5, 9, &dir.path().join("aug")).unwrap();
        assert_eq!(out.len(), 5);
        // Base preserved in order, then 3 synth entries without duplicates.
        assert_eq!(out.entries[0].label, "w0");
        assert_eq!(out.entries[1].label, "w1");
        let synth_paths: HashSet<_> = out.entries[2..].iter().map(|e| e.paths.clone()).collect();
        assert_eq!(synth_paths.len(), 3);
        // target below base size, and more than available, both fail
        assert!(augment(&base, &synth, 1, 9, &dir.path().join("a2")).is_err());
        assert!(augment(&base, &synth, 7, 9, &dir.path().join("a3")).is_err());
        // target == base size leaves base unchanged
        let same = augment(&base, &synth, 2, 9, &dir.path().join("a4")).unwrap();
        assert_eq!(same.len(), 2);
        assert!(same.entries.iter().all(|e| e.paths[0].contains("base")));
    }
}
