//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if a gating criterion fails.
//!
//! The replication check runs only when `WAVECOMM_COVID_DIR` and/or
//! `WAVECOMM_CRC_DIR` point at image directories; it never gates.

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecomm::affinity::{
    affinity_from_distances, graph_laplacian, pairwise_distances, AffinityMatrix, Metric, Normalization,
};
use wavecomm::feature_select::{laplacian_score, CoefficientMatrix, ScoreConfig};
use wavecomm::pipeline::{run, PipelineConfig};
use wavecomm::spectral::{eigendecompose, purity};
use wavecomm::spectrum::{build_spectrum, SpectrumConfig};
use wavecomm::synthetic::{planted_dataset, two_class_with_blend, PlantedConfig, SyntheticImage};
use wavecomm::wavelet::{basis_filters, wavedec2, waverec2, BasisName};
use wavecomm::Matrix;
use wavecomm_cli::stages::cmd_detect;
use wavecomm_cli::{Cli, Command};

type Check = fn() -> Option<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Option<Outcome> {
    Some(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn coeffs(values: Matrix<f64>) -> CoefficientMatrix<f64> {
    let (n, m) = values.shape();
    CoefficientMatrix::new(
        values,
        (0..n).map(|i| format!("img{i}")).collect(),
        (0..m).map(|j| format!("f{j}")).collect(),
    )
    .unwrap()
}

const ROUND_TRIP_BASES: [BasisName; 3] = [BasisName::Db1, BasisName::Db2, BasisName::Db3];

fn wavelet_round_trip() -> Option<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for basis in ROUND_TRIP_BASES {
        let filters = basis_filters::<f64>(basis);
        for levels in 1..=3 {
            let min_side = 1 << levels;
            for _ in 0..100 {
                let rows = rng.random_range(min_side..=64);
                let cols = rng.random_range(min_side..=64);
                let img = random_matrix(&mut rng, rows, cols, 0.0, 255.0);
                let d = wavedec2(&img, &filters, levels).unwrap();
                let back = waverec2(&d, &filters).unwrap();
                worst = worst.max(back.max_abs_diff(&img));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 30.0,
        format!("max error {worst:.3e} over 900 images, {secs:.2}s"),
    )
}

fn energy_preservation() -> Option<Outcome> {
    // Sides divisible by 2^levels, so no level needs edge replication.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for basis in ROUND_TRIP_BASES {
        let filters = basis_filters::<f64>(basis);
        for levels in 1..=3usize {
            let step = 1 << levels;
            for _ in 0..100 {
                let rows = step * rng.random_range(1..=64 / step);
                let cols = step * rng.random_range(1..=64 / step);
                let img = random_matrix(&mut rng, rows, cols, 0.0, 255.0);
                let d = wavedec2(&img, &filters, levels).unwrap();
                let ex: f64 = img.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
                let ew: f64 = d.omega.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max((ew - ex).abs() / ex);
            }
        }
    }
    outcome(worst < 1e-10, format!("max relative error {worst:.3e}"))
}

/// Double-loop Laplacian score with a dense weight matrix.
fn brute_force_scores(x: &Matrix<f64>) -> Vec<f64> {
    let (n, m) = x.shape();
    let k = 5.min(n - 1);
    let dist = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for c in 0..m {
            s += (x[(i, c)] - x[(j, c)]).powi(2);
        }
        s.sqrt()
    };
    let mut knn = vec![vec![false; n]; n];
    let mut kdists = Vec::new();
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)));
        for &j in &order[..k] {
            knn[i][j] = true;
            kdists.push(dist(i, j));
        }
    }
    kdists.sort_by(f64::total_cmp);
    let h = if kdists.len() % 2 == 1 {
        kdists[kdists.len() / 2]
    } else {
        (kdists[kdists.len() / 2 - 1] + kdists[kdists.len() / 2]) / 2.0
    };
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (knn[i][j] || knn[j][i]) {
                s[i][j] = (-dist(i, j).powi(2) / (2.0 * h * h)).exp();
            }
        }
    }
    let deg: Vec<f64> = s.iter().map(|r| r.iter().sum()).collect();
    let total: f64 = deg.iter().sum();
    (0..m)
        .map(|r| {
            let f: Vec<f64> = (0..n).map(|i| x[(i, r)]).collect();
            let mean: f64 = (0..n).map(|i| deg[i] * f[i]).sum::<f64>() / total;
            let ft: Vec<f64> = f.iter().map(|v| v - mean).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                den += ft[i] * deg[i] * ft[i];
                for j in 0..n {
                    let l = if i == j { deg[i] - s[i][j] } else { -s[i][j] };
                    num += ft[i] * l * ft[j];
                }
            }
            num / den
        })
        .collect()
}

fn laplacian_score_oracle() -> Option<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(6..=20);
        let m = rng.random_range(2..=30);
        let x = random_matrix(&mut rng, n, m, -1.0, 1.0);
        let got = laplacian_score(&coeffs(x.clone()), &ScoreConfig::default()).unwrap();
        for (a, b) in got.raw.iter().zip(brute_force_scores(&x)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst < 1e-10,
        format!("max |score - oracle| {worst:.3e} over 50 matrices"),
    )
}

fn distance_oracles() -> Option<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut worst_perm = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(3..=15);
        let m = rng.random_range(2..=40);
        let x = random_matrix(&mut rng, n, m, -3.0, 3.0);
        let c = coeffs(x.clone());
        let corr = pairwise_distances(&c, Metric::Correlation).unwrap().values;
        let cos = pairwise_distances(&c, Metric::Cosine).unwrap().values;
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (x.row(i), x.row(j));
                let mu = u.iter().sum::<f64>() / m as f64;
                let mv = v.iter().sum::<f64>() / m as f64;
                let (mut sxy, mut sxx, mut syy, mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for k in 0..m {
                    sxy += (u[k] - mu) * (v[k] - mv);
                    sxx += (u[k] - mu).powi(2);
                    syy += (v[k] - mv).powi(2);
                    dot += u[k] * v[k];
                    nu += u[k] * u[k];
                    nv += v[k] * v[k];
                }
                let (want_corr, want_cos) = if i == j {
                    (0.0, 0.0)
                } else {
                    (1.0 - sxy / (sxx * syy).sqrt(), 1.0 - dot / (nu * nv).sqrt())
                };
                worst = worst.max((corr[(i, j)] - want_corr).abs());
                worst = worst.max((cos[(i, j)] - want_cos).abs());
            }
        }

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let w = affinity_from_distances(&pairwise_distances(&c, Metric::Correlation).unwrap()).unwrap();
        let xp = Matrix::from_fn(n, m, |r, k| x[(perm[r], k)]);
        let wp = affinity_from_distances(&pairwise_distances(&coeffs(xp), Metric::Correlation).unwrap()).unwrap();
        worst_perm = worst_perm.max(wp.values.max_abs_diff(&w.values.permute_symmetric(&perm)));
    }
    outcome(
        worst < 1e-12 && worst_perm < 1e-12,
        format!("distance error {worst:.3e}, permutation error {worst_perm:.3e}"),
    )
}

fn spectral_sanity() -> Option<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut range_ok = true;
    let mut counts_ok = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let blocks: Vec<usize> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(2..=8)).collect();
        let n: usize = blocks.iter().sum();
        let mut block_of = Vec::new();
        for (b, &size) in blocks.iter().enumerate() {
            block_of.extend(std::iter::repeat_n(b, size));
        }
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if block_of[i] == block_of[j] {
                    let v = rng.random_range(0.05..1.0);
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        let l = graph_laplacian(&AffinityMatrix::from_matrix(w, 1.0).unwrap(), Normalization::Symmetric).unwrap();
        let spec = eigendecompose(&l, n).unwrap();
        for &v in &spec.eigenvalues {
            lo = lo.min(v);
            hi = hi.max(v);
            range_ok &= (-1e-10..=2.0 + 1e-10).contains(&v);
        }
        let zeros = spec.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count();
        if zeros == blocks.len() {
            counts_ok += 1;
        }
    }
    outcome(
        range_ok && counts_ok == 20,
        format!("eigenvalues in [{lo:.2e}, {hi:.6}], zero multiplicity exact on {counts_ok}/20 graphs"),
    )
}

fn images_of(imgs: &[SyntheticImage]) -> (Vec<Vec<Matrix<f64>>>, Vec<String>, Vec<String>) {
    (
        imgs.iter().map(|i| vec![i.pixels.clone()]).collect(),
        imgs.iter().map(|i| i.id.clone()).collect(),
        imgs.iter().map(|i| i.label.clone()).collect(),
    )
}

fn planted_recovery() -> Option<Outcome> {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let mut correct = 0;
    let mut impure = Vec::new();
    let mut misses = Vec::new();
    for trial in 0..20u64 {
        let k = 2 + (trial as usize % 5);
        let imgs = planted_dataset(&PlantedConfig {
            templates: k,
            per_template: 15,
            rows: 64,
            cols: 64,
            noise_frac: 0.05,
            seed: 100 + trial,
        })
        .unwrap();
        let (images, ids, labels) = images_of(&imgs);
        let out = run(&images, &ids, &cfg).unwrap();
        let est = out.detection.estimate.as_ref().expect("estimated");
        if est.eigengap == k {
            correct += 1;
            let p = purity(&out.detection.communities.assignments, &labels);
            if p < 0.95 {
                impure.push(format!("trial {trial}: purity {p:.3}"));
            }
        } else {
            misses.push(format!("trial {trial}: k={k} estimated {}", est.eigengap));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("k correct in {correct}/20, {secs:.1}s");
    for m in misses.iter().chain(&impure) {
        detail.push_str("; ");
        detail.push_str(m);
    }
    outcome(correct >= 18 && impure.is_empty() && secs < 120.0, detail)
}

fn spectrum_toy() -> Option<Outcome> {
    let mut failures = Vec::new();
    for seed in 1..=5 {
        let imgs = two_class_with_blend(15, 32, 32, 0.05, seed).unwrap();
        let (images, ids, labels) = images_of(&imgs);
        let out = run(&images, &ids, &PipelineConfig::default()).unwrap();
        let report = build_spectrum(&out.graph.affinity.values, &ids, &labels, &SpectrumConfig::default()).unwrap();
        let mut by_abs: Vec<_> = report.placements.iter().collect();
        by_abs.sort_by(|a, b| a.position.abs().total_cmp(&b.position.abs()));
        let mut two: Vec<&str> = by_abs[..2].iter().map(|p| p.id.as_str()).collect();
        two.sort();
        if two != ["neg_blend", "pos_blend"] {
            failures.push(format!("seed {seed}: {two:?}"));
        }
    }
    let detail = if failures.is_empty() {
        "duplicated pair ranked 1 and 2 by |position| on 5 datasets".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn detect_args(dataset: &Path, size: &str, out: &Path) -> wavecomm_cli::DetectArgs {
    let cli = Cli::try_parse_from([
        "wavecomm",
        "detect",
        dataset.to_str().unwrap(),
        "--size",
        size,
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    match cli.command {
        Command::Detect(a) => a,
        _ => unreachable!(),
    }
}

fn determinism() -> Option<Outcome> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic3");
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        cmd_detect(&detect_args(&data, "64x64", &out)).unwrap();
        files.push(std::fs::read(out.join("communities.json")).unwrap());
    }
    outcome(
        files[0] == files[1],
        format!(
            "communities.json {} bytes, identical: {}",
            files[0].len(),
            files[0] == files[1]
        ),
    )
}

fn replication() -> Option<Outcome> {
    let dirs: Vec<(String, String)> = ["WAVECOMM_COVID_DIR", "WAVECOMM_CRC_DIR"]
        .iter()
        .filter_map(|v| std::env::var(v).ok().map(|d| (v.to_string(), d)))
        .collect();
    if dirs.is_empty() {
        return None;
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (var, dir) in dirs {
        let start = Instant::now();
        let out = tmp.path().join(&var);
        match cmd_detect(&detect_args(Path::new(&dir), "256x256", &out)) {
            Ok(summary) => {
                let elapsed = start.elapsed();
                let gaps = &summary.eigengap_profile;
                let mut sorted = gaps.clone();
                sorted.sort_by(f64::total_cmp);
                let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
                let knee = gaps.get(summary.n_c.saturating_sub(1)).copied().unwrap_or(0.0);
                let ok = elapsed < Duration::from_secs(600) && knee >= 3.0 * median;
                pass &= ok;
                detail.push(format!(
                    "{var}: n_c={} in {:.0}s, knee gap {knee:.4} vs median {median:.4}",
                    summary.n_c,
                    elapsed.as_secs_f64()
                ));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("{var}: {e}"));
            }
        }
    }
    outcome(pass, detail.join("; "))
}

fn main() {
    let criteria: [(&str, bool, Check); 9] = [
        ("wavelet round trip", true, wavelet_round_trip),
        ("energy preservation", true, energy_preservation),
        ("laplacian score oracle", true, laplacian_score_oracle),
        ("distance/affinity oracles", true, distance_oracles),
        ("spectral sanity", true, spectral_sanity),
        ("planted community recovery", true, planted_recovery),
        ("spectrum toy oracle", true, spectrum_toy),
        ("determinism", true, determinism),
        ("replication harness", false, replication),
    ];
    let mut gating_failures = 0;
    for (name, gating, check) in criteria {
        match check() {
            Some(o) => {
                println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
                if !o.pass && gating {
                    gating_failures += 1;
                }
            }
            None => println!("SKIP {name}: set WAVECOMM_COVID_DIR or WAVECOMM_CRC_DIR to run"),
        }
    }
    if gating_failures > 0 {
        eprintln!("{gating_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
