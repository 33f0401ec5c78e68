//! Image dataset ingestion.
//!
//! A dataset is either a directory (scanned recursively for PNG, JPEG and
//! BMP files, ids are relative paths without extension) or a CSV manifest
//! with header `id,path[,label][,sha256]`, paths relative to the manifest.
//! Records come back sorted by id.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub const DEFAULT_TARGET_SIZE: (usize, usize) = (256, 256);
const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Single luma channel.
    #[default]
    Luma,
    /// R, G and B kept as separate channels.
    Channels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// `(rows, cols)`.
    pub target_size: (usize, usize),
    pub color: ColorMode,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            target_size: DEFAULT_TARGET_SIZE,
            color: ColorMode::Luma,
        }
    }
}

/// One decoded image. Pixel values lie in `[0, 255]`; `channels` holds one
/// matrix in luma mode and three in channel mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord<T> {
    pub id: String,
    pub source_path: PathBuf,
    pub channels: Vec<Matrix<T>>,
    pub label: Option<String>,
    pub sha256: String,
}

impl<T: Real> ImageRecord<T> {
    pub fn pixels(&self) -> &Matrix<T> {
        &self.channels[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<String>,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub failures: Vec<(PathBuf, String)>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset<T> {
    pub records: Vec<ImageRecord<T>>,
    pub report: LoadReport,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a manifest CSV. Relative paths are resolved against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Input(format!("cannot read manifest {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(path_col)) = (col("id"), col("path")) else {
        return Err(Error::Input(format!(
            "manifest {} must have `id` and `path` columns",
            path.display()
        )));
    };
    let label_col = col("label");
    let sha_col = col("sha256");

    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let get = |c: Option<usize>| {
            c.and_then(|c| row.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let id = get(Some(id_col)).ok_or_else(|| Error::Input("manifest row with empty id".into()))?;
        let rel = get(Some(path_col)).ok_or_else(|| Error::Input(format!("manifest row {id} has no path")))?;
        let p = PathBuf::from(rel);
        entries.push(ManifestEntry {
            id,
            path: if p.is_absolute() { p } else { base.join(p) },
            label: get(label_col),
            sha256: get(sha_col),
        });
    }
    Ok(entries)
}

/// Writes `id,path,label,sha256` rows in the given order.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "path", "label", "sha256"])?;
    for e in entries {
        w.write_record([
            e.id.as_str(),
            &e.path.to_string_lossy(),
            e.label.as_deref().unwrap_or(""),
            e.sha256.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn scan_directory(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            {
                files.push(path);
            }
        }
    }
    Ok(files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(root).unwrap_or(&path).with_extension("");
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            ManifestEntry {
                id,
                path,
                label: None,
                sha256: None,
            }
        })
        .collect())
}

/// Lists the entries a dataset source refers to, sorted by id.
pub fn dataset_entries(source: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = if source.is_dir() {
        scan_directory(source)?
    } else if source.is_file() {
        read_manifest(source)?
    } else {
        return Err(Error::Input(format!(
            "dataset path {} does not exist",
            source.display()
        )));
    };
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Input(format!("duplicate image id {:?}", e.id)));
        }
    }
    Ok(entries)
}

/// Decodes, converts and resizes every image. Per-file failures are
/// collected into the report; a dataset with no valid image is an error.
pub fn load_dataset<T: Real>(source: &Path, options: &LoadOptions) -> Result<LoadedDataset<T>> {
    let (rows, cols) = options.target_size;
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "target size must be positive, got {rows}x{cols}"
        )));
    }
    let entries = dataset_entries(source)?;
    let results: Vec<std::result::Result<ImageRecord<T>, (PathBuf, String)>> = entries
        .par_iter()
        .map(|e| load_entry(e, options).map_err(|err| (e.path.clone(), err.to_string())))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut report = LoadReport::default();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err((path, msg)) => {
                warn!("skipping {}: {msg}", path.display());
                report.failures.push((path, msg));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset {
            failures: report.failures.len(),
        });
    }
    Ok(LoadedDataset { records, report })
}

fn load_entry<T: Real>(entry: &ManifestEntry, options: &LoadOptions) -> Result<ImageRecord<T>> {
    let bytes = fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
    let sha256 = sha256_hex(&bytes);
    if let Some(expected) = &entry.sha256 {
        if !expected.eq_ignore_ascii_case(&sha256) {
            return Err(Error::Input(format!(
                "checksum mismatch for {} (manifest {expected}, file {sha256})",
                entry.path.display()
            )));
        }
    }
    let img = image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: entry.path.clone(),
        source,
    })?;
    let channels = decode_channels(&img, options.color)
        .into_iter()
        .map(|c| resize_bilinear(&c, options.target_size.0, options.target_size.1))
        .collect();
    let source_path = entry.path.canonicalize().unwrap_or_else(|_| entry.path.clone());
    Ok(ImageRecord {
        id: entry.id.clone(),
        source_path,
        channels,
        label: entry.label.clone(),
        sha256,
    })
}

/// Grayscale sources keep their stored values exactly; color sources are
/// converted with luma weights 0.299/0.587/0.114 (or split per channel).
pub fn decode_channels<T: Real>(img: &DynamicImage, mode: ColorMode) -> Vec<Matrix<T>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let is_gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if is_gray {
        let gray: Matrix<T> = match img {
            DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
                let g = img.to_luma16();
                Matrix::from_fn(h, w, |r, c| T::lit(g.get_pixel(c as u32, r as u32)[0] as f64 / 257.0))
            }
            _ => {
                let g: GrayImage = img.to_luma8();
                Matrix::from_fn(h, w, |r, c| T::lit(g.get_pixel(c as u32, r as u32)[0] as f64))
            }
        };
        return match mode {
            ColorMode::Luma => vec![gray],
            ColorMode::Channels => vec![gray.clone(), gray.clone(), gray],
        };
    }
    let rgb = img.to_rgb32f();
    let px = |r: usize, c: usize| rgb.get_pixel(c as u32, r as u32).0.map(|v| v as f64 * 255.0);
    match mode {
        ColorMode::Luma => vec![Matrix::from_fn(h, w, |r, c| {
            let p = px(r, c);
            T::lit(LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        })],
        ColorMode::Channels => (0..3)
            .map(|ch| Matrix::from_fn(h, w, |r, c| T::lit(px(r, c)[ch])))
            .collect(),
    }
}

/// Bilinear resampling with pixel-centre alignment and clamped borders.
/// Returns the input unchanged when it already has the target shape.
pub fn resize_bilinear<T: Real>(src: &Matrix<T>, rows: usize, cols: usize) -> Matrix<T> {
    if src.shape() == (rows, cols) {
        return src.clone();
    }
    let (sr, sc) = src.shape();
    let scale_r = sr as f64 / rows as f64;
    let scale_c = sc as f64 / cols as f64;
    let coord = |i: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, x - lo as f64)
    };
    Matrix::from_fn(rows, cols, |r, c| {
        let (r0, r1, fr) = coord(r, scale_r, sr);
        let (c0, c1, fc) = coord(c, scale_c, sc);
        let fr = T::lit(fr);
        let fc = T::lit(fc);
        let one = T::one();
        let top = src[(r0, c0)] * (one - fc) + src[(r0, c1)] * fc;
        let bottom = src[(r1, c0)] * (one - fc) + src[(r1, c1)] * fc;
        top * (one - fr) + bottom * fr
    })
}

/// Rounds to 8-bit grayscale and writes a PNG.
pub fn save_gray_png<T: Real>(path: &Path, pixels: &Matrix<T>) -> Result<()> {
    let (h, w) = pixels.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        let v = pixels[(r as usize, c as usize)]
            .to_f64_lossy()
            .round()
            .clamp(0.0, 255.0);
        image::Luma([v as u8])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn directory_of_pngs_is_resized() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let img = GrayImage::from_fn(20 + i, 30, |x, y| image::Luma([((x + y) % 256) as u8]));
            img.save(dir.path().join(format!("img{i}.png"))).unwrap();
        }
        let ds: LoadedDataset<f64> = load_dataset(
            dir.path(),
            &LoadOptions {
                target_size: (64, 64),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.records.len(), 3);
        assert!(ds.records.iter().all(|r| r.pixels().shape() == (64, 64)));
        let ids: Vec<_> = ds.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["img0", "img1", "img2"]);
    }

    #[test]
    fn grayscale_at_target_size_is_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(8, 6, |x, y| image::Luma([(x * 30 + y * 7) as u8]));
        img.save(dir.path().join("g.png")).unwrap();
        let ds: LoadedDataset<f64> = load_dataset(
            dir.path(),
            &LoadOptions {
                target_size: (6, 8),
                ..Default::default()
            },
        )
        .unwrap();
        let px = ds.records[0].pixels();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(px[(y, x)], img.get_pixel(x as u32, y as u32)[0] as f64);
            }
        }
    }

    #[test]
    fn rgb_luma_matches_hand_computation() {
        let dir = tempfile::tempdir().unwrap();
        let colors = [[255u8, 0, 0], [0, 255, 0], [0, 0, 255], [10, 200, 90]];
        let img = RgbImage::from_fn(2, 2, |x, y| Rgb(colors[(y * 2 + x) as usize]));
        img.save(dir.path().join("c.png")).unwrap();
        let ds: LoadedDataset<f64> = load_dataset(
            dir.path(),
            &LoadOptions {
                target_size: (2, 2),
                ..Default::default()
            },
        )
        .unwrap();
        let px = ds.records[0].pixels();
        for (k, c) in colors.iter().enumerate() {
            let expect = 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64;
            assert!((px[(k / 2, k % 2)] - expect).abs() < 0.5);
        }
    }

    #[test]
    fn channel_mode_splits_rgb() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(1, 1, |_, _| Rgb([1, 2, 3])));
        let ch: Vec<Matrix<f64>> = decode_channels(&img, ColorMode::Channels);
        assert_eq!(ch.len(), 3);
        assert!((ch[2][(0, 0)] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn corrupt_files_are_reported_and_empty_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        match load_dataset::<f64>(dir.path(), &LoadOptions::default()) {
            Err(Error::EmptyDataset { failures }) => assert_eq!(failures, 1),
            other => panic!("{other:?}"),
        }
        GrayImage::new(4, 4).save(dir.path().join("ok.png")).unwrap();
        let ds = load_dataset::<f64>(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.report.failures.len(), 1);
    }

    #[test]
    fn empty_directory_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path(), &LoadOptions::default()),
            Err(Error::EmptyDataset { failures: 0 })
        ));
    }

    #[test]
    fn manifest_labels_and_checksums() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::new(4, 4).save(dir.path().join("a.png")).unwrap();
        GrayImage::from_pixel(4, 4, image::Luma([9]))
            .save(dir.path().join("b.png"))
            .unwrap();
        let sum_a = sha256_hex(&fs::read(dir.path().join("a.png")).unwrap());
        let manifest = dir.path().join("m.csv");
        fs::write(
            &manifest,
            format!("id,path,label,sha256\nb,b.png,sick,\na,a.png,healthy,{sum_a}\n"),
        )
        .unwrap();
        let ds = load_dataset::<f64>(
            &manifest,
            &LoadOptions {
                target_size: (4, 4),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.records[0].id, "a");
        assert_eq!(ds.records[0].label.as_deref(), Some("healthy"));
        assert_eq!(ds.records[1].label.as_deref(), Some("sick"));

        fs::write(&manifest, "id,path,sha256\na,a.png,deadbeef\n").unwrap();
        assert!(load_dataset::<f64>(&manifest, &LoadOptions::default()).is_err());
    }

    #[test]
    fn resize_keeps_range() {
        let src = Matrix::from_fn(5, 7, |r, c| if (r + c) % 2 == 0 { 0.0 } else { 255.0 });
        let out = resize_bilinear(&src, 13, 3);
        assert!(out.as_slice().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }
}
