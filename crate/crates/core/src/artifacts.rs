//! On-disk run artifacts.
//!
//! Matrices use a small little-endian binary format:
//!
//! ```text
//! offset 0   4 bytes  magic "WCM1" (the trailing digit is the format version)
//! offset 4   u64      rows
//! offset 12  u64      cols
//! offset 20  f64 × rows·cols, row-major
//! ```
//!
//! JSON artifacts carry a `format_version` field. Writes go to a temporary
//! file in the same directory and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::affinity::{Kernel, Metric};
use crate::error::{Error, Result};
use crate::feature_select::Threshold;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::spectral::{CommunityResult, CountMethod, Detection};
use crate::spectrum::SpectrumReport;
use crate::wavelet::{BasisName, Bookkeeping, DecompResult};

pub const MATRIX_MAGIC: &[u8; 3] = b"WCM";
pub const MATRIX_VERSION: u8 = b'1';
const HEADER_LEN: usize = 20;
pub const FORMAT_VERSION: u32 = 1;

/// File names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn decomposition(&self) -> PathBuf {
        self.root.join("decomposition.json")
    }
    pub fn coeffs(&self) -> PathBuf {
        self.root.join("coeffs.wcm")
    }
    pub fn feature_scores(&self) -> PathBuf {
        self.root.join("feature_scores.csv")
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.json")
    }
    pub fn distance(&self) -> PathBuf {
        self.root.join("distance.wcm")
    }
    pub fn affinity(&self) -> PathBuf {
        self.root.join("affinity.wcm")
    }
    pub fn communities(&self) -> PathBuf {
        self.root.join("communities.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn spectrum(&self) -> PathBuf {
        self.root.join("spectrum.json")
    }
    pub fn spectrum_csv(&self) -> PathBuf {
        self.root.join("spectrum.csv")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn thumbs_dir(&self) -> PathBuf {
        self.root.join("thumbs")
    }

    pub fn require(&self, path: PathBuf) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(path))
        }
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix<T: Real>(m: &Matrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(MATRIX_VERSION);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix<f64>> {
    let corrupt = |reason: String| Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || &bytes[..3] != MATRIX_MAGIC {
        return Err(corrupt("not a WCM matrix file".into()));
    }
    if bytes[3] != MATRIX_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            expected: "WCM1".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let rows = read_u64(4) as usize;
    let cols = read_u64(12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt(format!("implausible shape {rows}x{cols}")))?;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "{rows}x{cols} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn write_matrix<T: Real>(path: &Path, m: &Matrix<T>) -> Result<()> {
    atomic_write(path, &encode_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Plain CSV, optionally with a header row and leading id column.
pub fn write_matrix_csv<T: Real>(path: &Path, m: &Matrix<T>, ids: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(ids) = ids {
        let mut header = vec!["id".to_string()];
        header.extend(ids.iter().cloned());
        w.write_record(&header)?;
    }
    for (r, row) in m.row_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(row.len() + 1);
        if let Some(ids) = ids {
            rec.push(ids[r].clone());
        }
        rec.extend(row.iter().map(|v| v.to_f64_lossy().to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    atomic_write(path, &bytes)
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let wrapped = Versioned {
        format_version: FORMAT_VERSION,
        body: value,
    };
    let mut bytes = serde_json::to_vec_pretty(&wrapped)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: other.map_or_else(|| "none".to_string(), |v| v.to_string()),
                expected: FORMAT_VERSION.to_string(),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub id: usize,
    pub size: usize,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesEntry {
    pub eigengap: usize,
    pub near_zero: usize,
    pub tau_c: f64,
    pub max_k: usize,
    pub warnings: Vec<String>,
}

/// `communities.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitiesFile {
    pub n_c: usize,
    /// `eigengap`, `near_zero` or `override`.
    pub method: String,
    pub estimates: Option<EstimatesEntry>,
    pub seed: u64,
    pub eigenvalues: Vec<f64>,
    pub gaps: Vec<f64>,
    pub clusters: Vec<ClusterEntry>,
    pub permutation: Vec<usize>,
    /// Image ids in dataset order; `permutation` indexes into this.
    pub images: Vec<String>,
}

impl CommunitiesFile {
    pub fn from_detection<T: Real>(d: &Detection<T>, method: CountMethod, seed: u64) -> Self {
        let c = &d.communities;
        let method = match (&d.estimate, method) {
            (None, _) => "override",
            (Some(_), CountMethod::Eigengap) => "eigengap",
            (Some(_), CountMethod::NearZero) => "near_zero",
        };
        Self {
            n_c: c.n_c,
            method: method.to_string(),
            estimates: d.estimate.as_ref().map(|e| EstimatesEntry {
                eigengap: e.eigengap,
                near_zero: e.near_zero,
                tau_c: e.tau_c.to_f64_lossy(),
                max_k: d.max_k,
                warnings: e.warnings.clone(),
            }),
            seed,
            eigenvalues: c.eigenvalues.iter().map(|v| v.to_f64_lossy()).collect(),
            gaps: c.eigengap_profile.iter().map(|v| v.to_f64_lossy()).collect(),
            clusters: (0..c.n_c)
                .map(|id| {
                    let members: Vec<String> = c.members(id).into_iter().map(|i| c.image_ids[i].clone()).collect();
                    ClusterEntry {
                        id,
                        size: members.len(),
                        members,
                    }
                })
                .collect(),
            permutation: c.permutation.clone(),
            images: c.image_ids.clone(),
        }
    }

    pub fn to_result(&self) -> Result<CommunityResult<f64>> {
        let index: std::collections::HashMap<&str, usize> =
            self.images.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut assignments = vec![usize::MAX; self.images.len()];
        for cluster in &self.clusters {
            for m in &cluster.members {
                let &i = index
                    .get(m.as_str())
                    .ok_or_else(|| Error::Input(format!("cluster member {m} is not a known image")))?;
                assignments[i] = cluster.id;
            }
        }
        if assignments.contains(&usize::MAX) || self.clusters.len() != self.n_c {
            return Err(Error::Input(
                "communities file does not cover every image exactly once".into(),
            ));
        }
        Ok(CommunityResult {
            n_c: self.n_c,
            image_ids: self.images.clone(),
            assignments,
            permutation: self.permutation.clone(),
            eigenvalues: self.eigenvalues.clone(),
            eigengap_profile: self.gaps.clone(),
        })
    }

    pub fn cluster_of(&self, image_id: &str) -> Option<usize> {
        self.clusters
            .iter()
            .find(|c| c.members.iter().any(|m| m == image_id))
            .map(|c| c.id)
    }
}

/// `graph.json`: how the distance and affinity matrices were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub metric: Metric,
    pub kernel: Kernel,
    pub sigma: f64,
    pub knn: Option<usize>,
    pub images: Vec<String>,
}

/// `decomposition.json`: coefficient layout and the surviving columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub basis: BasisName,
    pub levels: usize,
    pub channels: usize,
    pub beta: Bookkeeping,
    pub images: Vec<String>,
    pub total_features: usize,
    pub kept_features: Vec<String>,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawDecompositionFile {
    basis: BasisName,
    channels: usize,
    beta: Bookkeeping,
    images: Vec<String>,
}

/// Persists full decompositions (one row of concatenated channel
/// coefficients per image) as `<stem>.wcm` plus `<stem>.json`.
pub fn save_decompositions<T: Real>(
    dir: &Path,
    stem: &str,
    decomps: &[Vec<DecompResult<T>>],
    image_ids: &[String],
) -> Result<()> {
    let first = decomps
        .first()
        .and_then(|d| d.first())
        .ok_or_else(|| Error::Input("no decompositions to save".into()))?;
    let channels = decomps[0].len();
    let width = first.omega.len() * channels;
    let mut data = Vec::with_capacity(width * decomps.len());
    for (d, id) in decomps.iter().zip(image_ids) {
        if d.len() != channels || d.iter().any(|c| c.beta != first.beta || c.basis != first.basis) {
            return Err(Error::HeterogeneousDataset {
                image_id: id.clone(),
                reference_id: image_ids[0].clone(),
            });
        }
        for c in d {
            data.extend_from_slice(&c.omega);
        }
    }
    write_matrix(
        &dir.join(format!("{stem}.wcm")),
        &Matrix::from_vec(decomps.len(), width, data)?,
    )?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &RawDecompositionFile {
            basis: first.basis,
            channels,
            beta: first.beta.clone(),
            images: image_ids.to_vec(),
        },
    )
}

/// Per-image channel decompositions plus the image ids, in file order.
pub type LoadedDecompositions = (Vec<Vec<DecompResult<f64>>>, Vec<String>);

pub fn load_decompositions(dir: &Path, stem: &str) -> Result<LoadedDecompositions> {
    let meta: RawDecompositionFile = read_json(&dir.join(format!("{stem}.json")))?;
    let path = dir.join(format!("{stem}.wcm"));
    let m = read_matrix(&path)?;
    let per_channel = meta.beta.total_len();
    if m.rows() != meta.images.len() || m.cols() != per_channel * meta.channels {
        return Err(Error::CorruptArtifact {
            path,
            reason: format!(
                "{}x{} matrix does not match {} images x {} channels x {per_channel} coefficients",
                m.rows(),
                m.cols(),
                meta.images.len(),
                meta.channels
            ),
        });
    }
    let decomps = m
        .row_iter()
        .map(|row| {
            row.chunks(per_channel)
                .map(|chunk| DecompResult {
                    omega: chunk.to_vec(),
                    beta: meta.beta.clone(),
                    basis: meta.basis,
                })
                .collect()
        })
        .collect();
    Ok((decomps, meta.images))
}

pub fn write_spectrum(path: &Path, report: &SpectrumReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumReport> {
    read_json(path)
}

/// `id,label,in,out,position,flags` for plotting.
pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "label", "in", "out", "position", "flags"])?;
    for p in &report.placements {
        let flags: Vec<String> = p
            .flags
            .iter()
            .map(|f| {
                serde_json::to_value(f)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            })
            .collect();
        w.write_record([
            p.id.clone(),
            p.label.clone(),
            p.in_class_sim.to_string(),
            p.out_class_sim.to_string(),
            p.position.to_string(),
            flags.join(";"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    atomic_write(path, &bytes)
}
