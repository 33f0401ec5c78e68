//! Pipeline stages and the files each one writes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use wavecomm::affinity::{AffinityMatrix, Kernel};
use wavecomm::artifacts::{
    load_decompositions, read_json, read_matrix, save_decompositions, write_json, write_matrix, write_spectrum,
    write_spectrum_csv, CommunitiesFile, DecompositionFile, GraphFile, RunLayout,
};
use wavecomm::dataset::{load_dataset, write_manifest, ColorMode, ImageRecord, LoadOptions, ManifestEntry};
use wavecomm::feature_select::assemble_multichannel;
use wavecomm::pipeline::{build_graph, decompose_all, GraphStages, PipelineConfig};
use wavecomm::spectral::{detect_communities, DetectConfig, Detection};
use wavecomm::spectrum::{build_spectrum, SpectrumReport};
use wavecomm::synthetic::{planted_dataset, two_class_with_blend, write_dataset, PlantedConfig};
use wavecomm::{DecompResult64, Error, Matrix};

use crate::{ClusterArgs, DecomposeArgs, DetectArgs, GraphArgs, SpectrumArgs, StageContext, StageError, SynthArgs};

const COEFFS_STEM: &str = "coeffs";

/// Everything needed to reproduce a run; written to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub target_size: (usize, usize),
    pub color: ColorMode,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub error: String,
}

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_images: usize,
    pub load_failures: Vec<LoadFailure>,
    pub n_features_total: Option<usize>,
    pub n_features_kept: Option<usize>,
    pub sigma: f64,
    pub n_c: usize,
    pub method: String,
    pub eigenvalues: Vec<f64>,
    pub eigengap_profile: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub spectrum_residual: f64,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images:        {}", self.n_images);
        if !self.load_failures.is_empty() {
            let _ = writeln!(s, "load failures: {}", self.load_failures.len());
        }
        if let (Some(kept), Some(total)) = (self.n_features_kept, self.n_features_total) {
            let _ = writeln!(s, "features kept: {kept} of {total}");
        }
        let _ = writeln!(s, "communities:   {} ({})", self.n_c, self.method);
        let _ = writeln!(s, "cluster sizes: {:?}", self.cluster_sizes);
        let gaps: Vec<String> = self
            .eigengap_profile
            .iter()
            .take(10)
            .map(|g| format!("{g:.4}"))
            .collect();
        let _ = write!(s, "leading gaps:  [{}]", gaps.join(", "));
        for w in &self.warnings {
            let _ = write!(s, "\nwarning: {w}");
        }
        s
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Removes artifacts derived from an earlier run's communities.
fn clear_downstream(layout: &RunLayout) -> wavecomm::Result<()> {
    for f in [layout.spectrum(), layout.spectrum_csv()] {
        if f.is_file() {
            fs::remove_file(&f).map_err(|e| io_err(&f, e))?;
        }
    }
    for d in [layout.report_dir(), layout.thumbs_dir()] {
        if d.is_dir() {
            fs::remove_dir_all(&d).map_err(|e| io_err(&d, e))?;
        }
    }
    if layout.labels().is_file() {
        warn!(
            "{} was kept but refers to cluster ids of the previous run",
            layout.labels().display()
        );
    }
    Ok(())
}

struct Loaded {
    records: Vec<ImageRecord<f64>>,
    failures: Vec<LoadFailure>,
}

fn load_into_run(dataset: &Path, options: &LoadOptions, layout: &RunLayout) -> Result<Loaded, StageError> {
    fs::create_dir_all(&layout.root)
        .map_err(|e| io_err(&layout.root, e))
        .stage("load")?;
    let loaded = load_dataset::<f64>(dataset, options).stage("load")?;
    info!(
        "loaded {} images, {} failures",
        loaded.records.len(),
        loaded.report.failures.len()
    );
    let entries: Vec<ManifestEntry> = loaded
        .records
        .iter()
        .map(|r| ManifestEntry {
            id: r.id.clone(),
            path: r.source_path.clone(),
            label: r.label.clone(),
            sha256: Some(r.sha256.clone()),
        })
        .collect();
    write_manifest(&layout.manifest(), &entries).stage("load")?;
    Ok(Loaded {
        records: loaded.records,
        failures: loaded
            .report
            .failures
            .into_iter()
            .map(|(path, error)| LoadFailure { path, error })
            .collect(),
    })
}

fn decompose_records(
    records: &[ImageRecord<f64>],
    cfg: &PipelineConfig,
    layout: &RunLayout,
) -> Result<(Vec<Vec<DecompResult64>>, Vec<String>), StageError> {
    let channels: Vec<Vec<Matrix<f64>>> = records.iter().map(|r| r.channels.clone()).collect();
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let decomps = decompose_all(&channels, cfg.basis, cfg.levels).stage("decompose")?;
    save_decompositions(&layout.root, COEFFS_STEM, &decomps, &ids).stage("decompose")?;
    Ok((decomps, ids))
}

fn graph_from_decompositions(
    decomps: &[Vec<DecompResult64>],
    ids: &[String],
    cfg: &PipelineConfig,
    layout: &RunLayout,
) -> Result<GraphStages<f64>, StageError> {
    let s = "graph";
    let coeffs = assemble_multichannel(decomps, ids).stage(s)?;
    let graph = build_graph(&coeffs, cfg).stage(s)?;
    let mut scores_csv = Vec::new();
    graph.scores.write_csv(&mut scores_csv).stage(s)?;
    wavecomm::artifacts::atomic_write(&layout.feature_scores(), &scores_csv).stage(s)?;
    let first = &decomps[0][0];
    write_json(
        &layout.decomposition(),
        &DecompositionFile {
            basis: first.basis,
            levels: first.levels(),
            channels: decomps[0].len(),
            beta: first.beta.clone(),
            images: ids.to_vec(),
            total_features: coeffs.n_features(),
            kept_features: graph.selected.feature_ids.clone(),
            threshold: cfg.threshold,
        },
    )
    .stage(s)?;
    write_matrix(&layout.distance(), &graph.distances.values).stage(s)?;
    write_matrix(&layout.affinity(), &graph.affinity.values).stage(s)?;
    write_json(
        &layout.graph(),
        &GraphFile {
            n: ids.len(),
            metric: cfg.metric,
            kernel: cfg.kernel,
            sigma: graph.affinity.sigma,
            knn: cfg.knn,
            images: ids.to_vec(),
        },
    )
    .stage(s)?;
    info!(
        "kept {} of {} features, sigma {:.6}",
        graph.selected.n_features(),
        coeffs.n_features(),
        graph.affinity.sigma
    );
    Ok(graph)
}

fn cluster_affinity(
    w: &AffinityMatrix<f64>,
    kernel: Kernel,
    ids: &[String],
    cfg: &DetectConfig,
    layout: &RunLayout,
) -> Result<(Detection<f64>, CommunitiesFile), StageError> {
    let s = "cluster";
    if kernel == Kernel::Literal {
        return Err(Error::Config(
            "the affinity was built with the literal kernel, which grows with distance; rebuild it with --kernel gaussian".into(),
        ))
        .stage(s);
    }
    let detection = detect_communities(w, ids, cfg).stage(s)?;
    let file = CommunitiesFile::from_detection(&detection, cfg.method, cfg.seed);
    write_json(&layout.communities(), &file).stage(s)?;
    Ok((detection, file))
}

fn write_summary(
    layout: &RunLayout,
    detection: &Detection<f64>,
    file: &CommunitiesFile,
    sigma: f64,
    failures: Vec<LoadFailure>,
) -> Result<Summary, StageError> {
    let features = read_json::<DecompositionFile>(&layout.decomposition()).ok();
    let c = &detection.communities;
    let summary = Summary {
        n_images: c.image_ids.len(),
        load_failures: failures,
        n_features_total: features.as_ref().map(|f| f.total_features),
        n_features_kept: features.as_ref().map(|f| f.kept_features.len()),
        sigma,
        n_c: c.n_c,
        method: file.method.clone(),
        eigenvalues: c.eigenvalues.clone(),
        eigengap_profile: c.eigengap_profile.clone(),
        cluster_sizes: c.cluster_sizes(),
        spectrum_residual: detection.spectrum_residual,
        warnings: detection
            .estimate
            .as_ref()
            .map(|e| e.warnings.clone())
            .unwrap_or_default(),
    };
    write_json(&layout.summary(), &summary).stage("cluster")?;
    Ok(summary)
}

fn validate(cfg: &PipelineConfig) -> Result<(), StageError> {
    let s = "config";
    cfg.threshold.validate().stage(s)?;
    if cfg.levels == 0 {
        return Err(Error::Config("--levels must be at least 1".into())).stage(s);
    }
    if let Some(k) = cfg.detect.n_c_override {
        if k == 0 {
            return Err(Error::Config("--n-c must be at least 1".into())).stage(s);
        }
    }
    if let Some(t) = cfg.detect.tau_c {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("--tau-c must be positive, got {t}"))).stage(s);
        }
    }
    Ok(())
}

fn update_config(layout: &RunLayout, f: impl FnOnce(&mut PipelineConfig)) -> Result<(), StageError> {
    let mut cfg: RunConfig = read_json(&layout.config()).stage("config")?;
    f(&mut cfg.pipeline);
    write_json(&layout.config(), &cfg).stage("config")
}

pub fn cmd_detect(a: &DetectArgs) -> Result<Summary, StageError> {
    let cfg = a.pipeline();
    validate(&cfg)?;
    if cfg.kernel == Kernel::Literal {
        return Err(Error::Config(
            "--kernel literal is only available in the `graph` stage; detection needs the gaussian kernel".into(),
        ))
        .stage("config");
    }
    let layout = RunLayout::new(&a.out);
    let options = a.load.options();
    let loaded = load_into_run(&a.load.dataset, &options, &layout)?;
    clear_downstream(&layout).stage("load")?;
    write_json(
        &layout.config(),
        &RunConfig {
            dataset: a.load.dataset.clone(),
            target_size: options.target_size,
            color: options.color,
            pipeline: cfg,
        },
    )
    .stage("config")?;
    let (decomps, ids) = decompose_records(&loaded.records, &cfg, &layout)?;
    let graph = graph_from_decompositions(&decomps, &ids, &cfg, &layout)?;
    let (detection, file) = cluster_affinity(&graph.affinity, cfg.kernel, &ids, &cfg.detect, &layout)?;
    write_summary(&layout, &detection, &file, graph.affinity.sigma, loaded.failures)
}

/// Returns the number of images decomposed.
pub fn cmd_decompose(a: &DecomposeArgs) -> Result<usize, StageError> {
    let cfg = PipelineConfig {
        basis: a.wavelet.basis,
        levels: a.wavelet.levels,
        ..Default::default()
    };
    validate(&cfg)?;
    let layout = RunLayout::new(&a.out);
    let options = a.load.options();
    let loaded = load_into_run(&a.load.dataset, &options, &layout)?;
    clear_downstream(&layout).stage("load")?;
    write_json(
        &layout.config(),
        &RunConfig {
            dataset: a.load.dataset.clone(),
            target_size: options.target_size,
            color: options.color,
            pipeline: cfg,
        },
    )
    .stage("config")?;
    let (decomps, _) = decompose_records(&loaded.records, &cfg, &layout)?;
    Ok(decomps.len())
}

/// Returns `(kept, total)` feature counts.
pub fn cmd_graph(a: &GraphArgs) -> Result<(usize, usize), StageError> {
    let layout = RunLayout::new(&a.run);
    let (decomps, ids) = load_decompositions(&layout.root, COEFFS_STEM).stage("graph")?;
    let mut cfg: RunConfig = read_json(&layout.config()).stage("config")?;
    cfg.pipeline.threshold = a.graph.threshold();
    cfg.pipeline.score = a.graph.score();
    cfg.pipeline.metric = a.graph.metric;
    cfg.pipeline.kernel = a.graph.kernel();
    cfg.pipeline.knn = a.graph.knn;
    validate(&cfg.pipeline)?;
    if cfg.pipeline.kernel == Kernel::Literal {
        warn!("literal kernel: affinity.wcm grows with distance and cannot be clustered");
    }
    let graph = graph_from_decompositions(&decomps, &ids, &cfg.pipeline, &layout)?;
    write_json(&layout.config(), &cfg).stage("config")?;
    Ok((graph.selected.n_features(), graph.scores.ids.len()))
}

pub fn cmd_cluster(a: &ClusterArgs) -> Result<Summary, StageError> {
    let layout = RunLayout::new(&a.run);
    let detect = a.cluster.detect_config();
    let graph: GraphFile = read_json(&layout.graph()).stage("cluster")?;
    let values = read_matrix(&layout.affinity()).stage("cluster")?;
    if values.rows() != graph.images.len() {
        return Err(Error::CorruptArtifact {
            path: layout.affinity(),
            reason: format!("{} rows for {} images in graph.json", values.rows(), graph.images.len()),
        })
        .stage("cluster");
    }
    let w = AffinityMatrix::from_matrix(values, graph.sigma).stage("cluster")?;
    let (detection, file) = cluster_affinity(&w, graph.kernel, &graph.images, &detect, &layout)?;
    if layout.config().is_file() {
        update_config(&layout, |p| p.detect = detect)?;
    }
    write_summary(&layout, &detection, &file, graph.sigma, Vec::new())
}

/// Reads `id,label` pairs from any CSV with those two columns. Rows with
/// an empty label are skipped.
pub fn read_labels(path: &Path) -> wavecomm::Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("cannot read labels {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(label_col)) = (col("id"), col("label")) else {
        return Err(Error::Input(format!(
            "{} needs `id` and `label` columns",
            path.display()
        )));
    };
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let id = row.get(id_col).unwrap_or("").trim();
        let label = row.get(label_col).unwrap_or("").trim();
        if !id.is_empty() && !label.is_empty() {
            out.push((id.to_string(), label.to_string()));
        }
    }
    Ok(out)
}

pub fn cmd_spectrum(a: &SpectrumArgs) -> Result<SpectrumReport, StageError> {
    let s = "spectrum";
    let layout = RunLayout::new(&a.run);
    let graph: GraphFile = read_json(&layout.graph()).stage(s)?;
    let w = read_matrix(&layout.affinity()).stage(s)?;
    let labels_path = a.labels.clone().unwrap_or_else(|| layout.manifest());
    let pairs = read_labels(&labels_path).stage(s)?;

    let index: HashMap<&str, usize> = graph
        .images
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut label_of: HashMap<&str, &str> = HashMap::new();
    let mut unknown = Vec::new();
    for (id, label) in &pairs {
        if index.contains_key(id.as_str()) {
            label_of.insert(id, label);
        } else {
            unknown.push(id.as_str());
        }
    }
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        let msg = format!("{} labeled id(s) are not in the run and were ignored", unknown.len());
        warn!(
            "{msg}: {}",
            unknown.iter().take(10).copied().collect::<Vec<_>>().join(", ")
        );
        warnings.push(msg);
    }
    let missing: Vec<&str> = graph
        .images
        .iter()
        .map(String::as_str)
        .filter(|id| !label_of.contains_key(id))
        .collect();
    if !missing.is_empty() {
        let msg = format!("{} image(s) have no label and were excluded", missing.len());
        warn!(
            "{msg}: {}",
            missing.iter().take(10).copied().collect::<Vec<_>>().join(", ")
        );
        warnings.push(msg);
    }

    let keep: Vec<usize> = (0..graph.images.len())
        .filter(|&i| label_of.contains_key(graph.images[i].as_str()))
        .collect();
    if keep.is_empty() {
        return Err(Error::InsufficientClass(format!(
            "no image in {} has a label",
            labels_path.display()
        )))
        .stage(s);
    }
    let sub = Matrix::from_fn(keep.len(), keep.len(), |r, c| w[(keep[r], keep[c])]);
    let ids: Vec<String> = keep.iter().map(|&i| graph.images[i].clone()).collect();
    let labels: Vec<String> = ids.iter().map(|id| label_of[id.as_str()].to_string()).collect();
    let distinct: HashSet<&String> = labels.iter().collect();
    if distinct.len() > 2 {
        warn!("{} classes present; positions are one-vs-rest", distinct.len());
    }

    let mut report = build_spectrum(&sub, &ids, &labels, &a.config()).stage(s)?;
    report.warnings.extend(warnings);
    write_spectrum(&layout.spectrum(), &report).stage(s)?;
    write_spectrum_csv(&layout.spectrum_csv(), &report).stage(s)?;
    Ok(report)
}

pub fn describe_spectrum(r: &SpectrumReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "positive class: {}", r.positive_class);
    let _ = writeln!(s, "placed images:  {}", r.placements.len());
    let _ = writeln!(s, "borderline band: |position| < {:.6}", r.band);
    let by_id: BTreeMap<&str, f64> = r.placements.iter().map(|p| (p.id.as_str(), p.position)).collect();
    for (class, ids) in &r.borderline {
        let _ = writeln!(s, "borderline [{class}]:");
        for id in ids {
            let _ = writeln!(s, "  {id}  {:+.6}", by_id.get(id.as_str()).copied().unwrap_or(f64::NAN));
        }
    }
    let _ = writeln!(
        s,
        "isolated: {}",
        if r.isolated.is_empty() {
            "none".to_string()
        } else {
            r.isolated.join(", ")
        }
    );
    let _ = writeln!(s, "extreme:  {} image(s)", r.extreme.len());
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf, StageError> {
    let s = "synth";
    let images = if a.two_class {
        two_class_with_blend(a.per_template, a.size.0, a.size.1, a.noise, a.seed).stage(s)?
    } else {
        planted_dataset(&PlantedConfig {
            templates: a.templates,
            per_template: a.per_template,
            rows: a.size.0,
            cols: a.size.1,
            noise_frac: a.noise,
            seed: a.seed,
        })
        .stage(s)?
    };
    write_dataset(&a.out, &images).stage(s)
}
