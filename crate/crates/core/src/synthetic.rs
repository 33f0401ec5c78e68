//! Planted-template datasets for testing and demos.
//!
//! Each template is a random texture (box-blurred uniform noise). Variants add pixel noise and a small brightness offset,
//! then clip to the 8-bit range.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{save_gray_png, sha256_hex, write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub id: String,
    pub label: String,
    pub pixels: Matrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub templates: usize,
    pub per_template: usize,
    pub rows: usize,
    pub cols: usize,
    /// Noise standard deviation as a fraction of the 255 dynamic range.
    pub noise_frac: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            templates: 3,
            per_template: 15,
            rows: 64,
            cols: 64,
            noise_frac: 0.05,
            seed: 7,
        }
    }
}

pub fn template_image<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    // Many independent degrees of freedom keep distinct templates roughly
    // equidistant from each other.
    let radius = (rows.min(cols) / 32).max(1);
    let raw = box_blur(&Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)), radius);
    let lo = raw.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    raw.map(|v| 20.0 + 215.0 * (v - lo) / span)
}

/// Mean over a `(2r+1)²` window, edges clamped.
fn box_blur(m: &Matrix<f64>, r: usize) -> Matrix<f64> {
    let (rows, cols) = m.shape();
    let pass = |src: &Matrix<f64>, horizontal: bool| {
        Matrix::from_fn(rows, cols, |i, j| {
            let mut sum = 0.0;
            for o in 0..=2 * r {
                let (ii, jj) = if horizontal {
                    (i, (j + o).saturating_sub(r).min(cols - 1))
                } else {
                    ((i + o).saturating_sub(r).min(rows - 1), j)
                };
                sum += src[(ii, jj)];
            }
            sum / (2 * r + 1) as f64
        })
    };
    pass(&pass(m, true), false)
}

fn noisy_variant<R: Rng>(template: &Matrix<f64>, noise: &Normal<f64>, rng: &mut R) -> Matrix<f64> {
    let offset = rng.random_range(-10.0..10.0);
    let data = template
        .as_slice()
        .iter()
        .map(|&v| (v + offset + noise.sample(rng)).clamp(0.0, 255.0))
        .collect();
    Matrix::from_vec(template.rows(), template.cols(), data).expect("same shape")
}

fn normal(noise_frac: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, noise_frac * 255.0).map_err(|e| Error::Config(format!("noise fraction {noise_frac}: {e}")))
}

/// `templates × per_template` images, ids `t{k}_{i:02}`, labels `t{k}`.
pub fn planted_dataset(cfg: &PlantedConfig) -> Result<Vec<SyntheticImage>> {
    if cfg.templates == 0
        || cfg.per_template == 0
        || cfg.rows < 2
        || cfg.cols < 2
        || cfg.noise_frac.is_nan()
        || cfg.noise_frac < 0.0
    {
        return Err(Error::Config(format!("degenerate synthetic configuration {cfg:?}")));
    }
    let noise = normal(cfg.noise_frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates: Vec<Matrix<f64>> = (0..cfg.templates)
        .map(|_| template_image(cfg.rows, cfg.cols, &mut rng))
        .collect();
    let mut out = Vec::with_capacity(cfg.templates * cfg.per_template);
    for (k, t) in templates.iter().enumerate() {
        for i in 0..cfg.per_template {
            out.push(SyntheticImage {
                id: format!("t{k}_{i:02}"),
                label: format!("t{k}"),
                pixels: noisy_variant(t, &noise, &mut rng),
            });
        }
    }
    Ok(out)
}

/// Two labeled classes built from two templates. The last image of each
/// class is the same 50/50 blend of both templates, so those two images sit
/// near the middle of the spectrum.
pub fn two_class_with_blend(
    per_class: usize,
    rows: usize,
    cols: usize,
    noise_frac: f64,
    seed: u64,
) -> Result<Vec<SyntheticImage>> {
    if per_class < 2 {
        return Err(Error::Config("need at least two images per class".into()));
    }
    let noise = normal(noise_frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = template_image(rows, cols, &mut rng);
    let b = template_image(rows, cols, &mut rng);
    let blend = Matrix::from_fn(rows, cols, |r, c| 0.5 * a[(r, c)] + 0.5 * b[(r, c)]);
    let mut out = Vec::new();
    for (label, t) in [("neg", &a), ("pos", &b)] {
        for i in 0..per_class - 1 {
            out.push(SyntheticImage {
                id: format!("{label}_{i:02}"),
                label: label.to_string(),
                pixels: noisy_variant(t, &noise, &mut rng),
            });
        }
        out.push(SyntheticImage {
            id: format!("{label}_blend"),
            label: label.to_string(),
            pixels: blend.clone(),
        });
    }
    Ok(out)
}

/// Writes `<id>.png` files plus a labeled `manifest.csv`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, images: &[SyntheticImage]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let file = format!("{}.png", img.id);
        let path = dir.join(&file);
        save_gray_png(&path, &img.pixels)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: img.id.clone(),
            path: PathBuf::from(file),
            label: Some(img.label.clone()),
            sha256: Some(sha256_hex(&bytes)),
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
