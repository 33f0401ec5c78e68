//! Severity axis for labeled datasets.
//!
//! Every image gets `position = sign · (in_class − out_class)`, where the
//! two terms are its mean affinity to the rest of its own class and to the
//! other class(es), and `sign` is +1 for the positive class. Images that
//! look like the other class land near 0, the class borderline; images
//! with strong in-class and weak out-class similarity land far out on
//! their class's side. This is one concrete reading of an informal idea,
//! not a calibrated severity score.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub const DEFAULT_ISOLATED_QUANTILE: f64 = 0.05;
pub const DEFAULT_BORDERLINE_PERCENTILE: f64 = 0.10;
pub const EXTREME_FRACTION: f64 = 0.10;
/// Classes smaller than this are skipped by [`find_isolated`].
pub const MIN_CLASS_FOR_QUANTILE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Isolated,
    Borderline,
    Extreme,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats<T> {
    pub in_class: T,
    pub out_class: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPlacement {
    pub id: String,
    pub label: String,
    #[serde(rename = "in")]
    pub in_class_sim: f64,
    #[serde(rename = "out")]
    pub out_class_sim: f64,
    pub position: f64,
    pub flags: BTreeSet<Flag>,
}

/// Groups image indices by label, labels in sorted order.
pub fn classes(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        out.entry(l.as_str()).or_default().push(i);
    }
    out
}

/// Mean affinity of each image to its own class (self excluded) and to all
/// other classes. With more than two classes "other" is every image not in
/// the query image's class.
pub fn class_similarity_stats<T: Real>(w: &Matrix<T>, labels: &[String]) -> Result<Vec<ClassStats<T>>> {
    let n = labels.len();
    if !w.is_square() || w.rows() != n {
        return Err(Error::Input(format!(
            "{}x{} affinity matrix with {n} labels",
            w.rows(),
            w.cols()
        )));
    }
    let groups = classes(labels);
    if groups.len() < 2 {
        return Err(Error::InsufficientClass(format!(
            "need at least two classes, found {}",
            groups.len()
        )));
    }
    if let Some((name, members)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InsufficientClass(format!(
            "class {name:?} has {} member(s), need at least 2",
            members.len()
        )));
    }

    let stats = (0..n)
        .map(|i| {
            let mut in_sum = T::zero();
            let mut in_count = 0usize;
            let mut out_sum = T::zero();
            let mut out_count = 0usize;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if labels[j] == labels[i] {
                    in_sum = in_sum + w[(i, j)];
                    in_count += 1;
                } else {
                    out_sum = out_sum + w[(i, j)];
                    out_count += 1;
                }
            }
            ClassStats {
                in_class: in_sum / T::from_usize_lossy(in_count),
                out_class: out_sum / T::from_usize_lossy(out_count),
            }
        })
        .collect();
    Ok(stats)
}

pub fn spectrum_position<T: Real>(stats: &ClassStats<T>, class_sign: T) -> T {
    class_sign * (stats.in_class - stats.out_class)
}

/// Linear-interpolation quantile of sorted data (`0 ≤ q ≤ 1`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Images whose in-class similarity is strictly below the `q`-quantile of
/// their class. Classes with fewer than [`MIN_CLASS_FOR_QUANTILE`] members
/// are skipped with a warning. Indices are returned ascending.
pub fn find_isolated<T: Real>(
    stats: &[ClassStats<T>],
    labels: &[String],
    q: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("isolation quantile must be in (0, 1), got {q}")));
    }
    if stats.len() != labels.len() {
        return Err(Error::Input("stats and labels differ in length".into()));
    }
    let mut out = Vec::new();
    for (name, members) in classes(labels) {
        if members.len() < MIN_CLASS_FOR_QUANTILE {
            let msg = format!(
                "class {name:?} has {} members, too few for a {q} quantile; no isolated images reported",
                members.len()
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut values: Vec<f64> = members.iter().map(|&i| stats[i].in_class.to_f64_lossy()).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let cut = quantile_sorted(&values, q);
        out.extend(
            members
                .iter()
                .copied()
                .filter(|&i| stats[i].in_class.to_f64_lossy() < cut),
        );
    }
    out.sort_unstable();
    Ok(out)
}

/// Default borderline band: the 10th percentile of `|position|`.
pub fn default_band(placements: &[SpectrumPlacement]) -> f64 {
    let mut abs: Vec<f64> = placements.iter().map(|p| p.position.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    quantile_sorted(&abs, DEFAULT_BORDERLINE_PERCENTILE)
}

/// Images with `|position| < band`, per class, closest to the borderline
/// first (ties by index).
pub fn find_borderline(placements: &[SpectrumPlacement], band: f64) -> Result<BTreeMap<String, Vec<usize>>> {
    if !(band > 0.0) {
        return Err(Error::Config(format!("borderline band must be positive, got {band}")));
    }
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in placements.iter().enumerate() {
        if p.position.abs() < band {
            out.entry(p.label.clone()).or_default().push(i);
        }
    }
    for list in out.values_mut() {
        list.sort_by(|&a, &b| {
            placements[a]
                .position
                .abs()
                .partial_cmp(&placements[b].position.abs())
                .expect("finite")
                .then(a.cmp(&b))
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Class placed on the positive side; defaults to the last label in
    /// sorted order.
    pub positive_class: Option<String>,
    pub isolated_quantile: f64,
    /// `None` uses [`default_band`].
    pub borderline_band: Option<f64>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            positive_class: None,
            isolated_quantile: DEFAULT_ISOLATED_QUANTILE,
            borderline_band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub positive_class: String,
    pub band: f64,
    pub placements: Vec<SpectrumPlacement>,
    /// Image ids per class, closest to the borderline first.
    pub borderline: BTreeMap<String, Vec<String>>,
    pub isolated: Vec<String>,
    pub extreme: Vec<String>,
    pub warnings: Vec<String>,
}

/// Places every labeled image and computes all flags.
pub fn build_spectrum<T: Real>(
    w: &Matrix<T>,
    image_ids: &[String],
    labels: &[String],
    config: &SpectrumConfig,
) -> Result<SpectrumReport> {
    if image_ids.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} image ids for {} labels",
            image_ids.len(),
            labels.len()
        )));
    }
    let stats = class_similarity_stats(w, labels)?;
    let groups = classes(labels);
    let positive = match &config.positive_class {
        Some(p) if groups.contains_key(p.as_str()) => p.clone(),
        Some(p) => return Err(Error::Config(format!("positive class {p:?} not present in the labels"))),
        None => groups.keys().next_back().expect("two classes").to_string(),
    };

    let mut placements: Vec<SpectrumPlacement> = stats
        .iter()
        .zip(image_ids.iter().zip(labels))
        .map(|(s, (id, label))| {
            let sign = if *label == positive { T::one() } else { -T::one() };
            SpectrumPlacement {
                id: id.clone(),
                label: label.clone(),
                in_class_sim: s.in_class.to_f64_lossy(),
                out_class_sim: s.out_class.to_f64_lossy(),
                position: spectrum_position(s, sign).to_f64_lossy(),
                flags: BTreeSet::new(),
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let isolated = find_isolated(&stats, labels, config.isolated_quantile, &mut warnings)?;
    for &i in &isolated {
        placements[i].flags.insert(Flag::Isolated);
    }

    let band = config.borderline_band.unwrap_or_else(|| default_band(&placements));
    let borderline = if band > 0.0 {
        find_borderline(&placements, band)?
    } else {
        // All positions identical at zero distance: nothing is strictly inside.
        BTreeMap::new()
    };
    for list in borderline.values() {
        for &i in list {
            placements[i].flags.insert(Flag::Borderline);
        }
    }

    let mut abs: Vec<f64> = placements.iter().map(|p| p.position.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let extreme_cut = quantile_sorted(&abs, 1.0 - EXTREME_FRACTION);
    let mut extreme = Vec::new();
    for p in placements.iter_mut() {
        if p.position.abs() >= extreme_cut && !p.flags.contains(&Flag::Borderline) {
            p.flags.insert(Flag::Extreme);
            extreme.push(p.id.clone());
        }
    }

    let borderline = borderline
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|i| image_ids[i].clone()).collect()))
        .collect();
    Ok(SpectrumReport {
        positive_class: positive,
        band,
        isolated: isolated.iter().map(|&i| image_ids[i].clone()).collect(),
        placements,
        borderline,
        extreme,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(spec: &[&str]) -> Vec<String> {
        spec.iter().map(|s| s.to_string()).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("im{i:02}")).collect()
    }

    #[test]
    fn uniform_affinity_gives_equal_means() {
        let w = Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let s = class_similarity_stats(&w, &labels(&["a", "a", "b", "b"])).unwrap();
        for st in s {
            assert_eq!(st.in_class, 1.0);
            assert_eq!(st.out_class, 1.0);
            assert_eq!(spectrum_position(&st, 1.0), 0.0);
        }
    }

    #[test]
    fn block_diagonal_has_no_out_class_similarity() {
        let l = labels(&["a", "a", "a", "b", "b"]);
        let w = Matrix::from_fn(5, 5, |i, j| if i != j && l[i] == l[j] { 0.7 } else { 0.0 });
        for st in class_similarity_stats(&w, &l).unwrap() {
            assert_eq!(st.out_class, 0.0);
        }
    }

    #[test]
    fn hand_set_four_image_means() {
        let w = Matrix::from_rows(&[
            vec![0.0, 0.8, 0.2, 0.4],
            vec![0.8, 0.0, 0.6, 0.1],
            vec![0.2, 0.6, 0.0, 0.9],
            vec![0.4, 0.1, 0.9, 0.0],
        ])
        .unwrap();
        let s = class_similarity_stats(&w, &labels(&["p", "p", "n", "n"])).unwrap();
        let expected: [(f64, f64); 4] = [(0.8, 0.3), (0.8, 0.35), (0.9, 0.4), (0.9, 0.25)];
        for (st, (i, o)) in s.iter().zip(expected) {
            assert!((st.in_class - i).abs() < 1e-15);
            assert!((st.out_class - o).abs() < 1e-15);
        }
    }

    #[test]
    fn extreme_of_axis() {
        let st = ClassStats {
            in_class: 1.0,
            out_class: 0.0,
        };
        assert_eq!(spectrum_position(&st, 1.0), 1.0);
        assert_eq!(spectrum_position(&st, -1.0), -1.0);
    }

    #[test]
    fn single_class_or_singleton_rejected() {
        let w = Matrix::<f64>::zeros(3, 3);
        assert!(matches!(
            class_similarity_stats(&w, &labels(&["a", "a", "a"])),
            Err(Error::InsufficientClass(_))
        ));
        assert!(matches!(
            class_similarity_stats(&w, &labels(&["a", "a", "b"])),
            Err(Error::InsufficientClass(_))
        ));
    }

    #[test]
    fn three_classes_are_one_vs_rest() {
        let l = labels(&["a", "a", "b", "b", "c", "c"]);
        let w = Matrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { (i + j) as f64 / 10.0 });
        let s = class_similarity_stats(&w, &l).unwrap();
        // image 0: in = w01, out = mean(w02..w05)
        assert!((s[0].in_class - 0.1).abs() < 1e-15);
        assert!((s[0].out_class - (0.2 + 0.3 + 0.4 + 0.5) / 4.0).abs() < 1e-15);
    }

    fn uniform_class(n: usize) -> (Matrix<f64>, Vec<String>) {
        let l: Vec<String> = (0..2 * n)
            .map(|i| if i < n { "a".into() } else { "b".into() })
            .collect();
        let w = Matrix::from_fn(2 * n, 2 * n, |i, j| {
            if i == j {
                0.0
            } else if l[i] == l[j] {
                0.8
            } else {
                0.1
            }
        });
        (w, l)
    }

    #[test]
    fn uniform_classes_have_no_isolated_images() {
        let (w, l) = uniform_class(20);
        let s = class_similarity_stats(&w, &l).unwrap();
        assert!(find_isolated(&s, &l, 0.05, &mut Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn zero_affinity_member_is_isolated() {
        let (mut w, l) = uniform_class(20);
        for j in 0..20 {
            w[(3, j)] = 0.0;
            w[(j, 3)] = 0.0;
        }
        let s = class_similarity_stats(&w, &l).unwrap();
        assert_eq!(find_isolated(&s, &l, 0.05, &mut Vec::new()).unwrap(), vec![3]);
    }

    #[test]
    fn small_class_warns() {
        let (w, l) = uniform_class(3);
        let s = class_similarity_stats(&w, &l).unwrap();
        let mut warnings = Vec::new();
        assert!(find_isolated(&s, &l, 0.05, &mut warnings).unwrap().is_empty());
        assert_eq!(warnings.len(), 2);
    }

    fn placements(positions: &[(f64, &str)]) -> Vec<SpectrumPlacement> {
        positions
            .iter()
            .enumerate()
            .map(|(i, &(p, l))| SpectrumPlacement {
                id: format!("i{i}"),
                label: l.into(),
                in_class_sim: 0.0,
                out_class_sim: 0.0,
                position: p,
                flags: BTreeSet::new(),
            })
            .collect()
    }

    #[test]
    fn separated_classes_have_empty_borderline() {
        let p = placements(&[(0.8, "a"), (0.9, "a"), (-0.7, "b"), (-0.95, "b")]);
        assert!(find_borderline(&p, 0.69).unwrap().is_empty());
    }

    #[test]
    fn infinite_band_returns_everything_sorted() {
        let p = placements(&[(0.8, "a"), (0.1, "a"), (-0.7, "b"), (-0.05, "b")]);
        let b = find_borderline(&p, f64::INFINITY).unwrap();
        assert_eq!(b["a"], vec![1, 0]);
        assert_eq!(b["b"], vec![3, 2]);
        assert!(find_borderline(&p, 0.0).is_err());
    }

    #[test]
    fn swapping_labels_negates_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 24;
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.0..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let l: Vec<String> = (0..n)
            .map(|i| if i % 3 == 0 { "x".into() } else { "y".into() })
            .collect();
        let swapped: Vec<String> = l
            .iter()
            .map(|s| if s == "x" { "y".into() } else { "x".into() })
            .collect();
        let cfg = SpectrumConfig {
            positive_class: Some("x".into()),
            ..Default::default()
        };
        let a = build_spectrum(&w, &ids(n), &l, &cfg).unwrap();
        let b = build_spectrum(&w, &ids(n), &swapped, &cfg).unwrap();
        for (pa, pb) in a.placements.iter().zip(&b.placements) {
            assert_eq!(pa.position, -pb.position);
            assert_eq!(pa.flags, pb.flags);
        }
    }

    #[test]
    fn relabeling_images_permutes_placements() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.0..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let l: Vec<String> = (0..n).map(|i| if i < 6 { "p".into() } else { "q".into() }).collect();
        let perm = [11, 3, 5, 0, 8, 2, 7, 1, 10, 4, 9, 6];
        let pw = w.permute_symmetric(&perm);
        let pl: Vec<String> = perm.iter().map(|&p| l[p].clone()).collect();
        let pids: Vec<String> = perm.iter().map(|&p| ids(n)[p].clone()).collect();
        let cfg = SpectrumConfig::default();
        let a = build_spectrum(&w, &ids(n), &l, &cfg).unwrap();
        let b = build_spectrum(&pw, &pids, &pl, &cfg).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert!((b.placements[k].position - a.placements[p].position).abs() < 1e-12);
            assert_eq!(b.placements[k].id, a.placements[p].id);
        }
    }

    #[test]
    fn isolated_images_belong_to_their_class_and_borderline_avoids_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 40;
        let l: Vec<String> = (0..n).map(|i| if i < 20 { "a".into() } else { "b".into() }).collect();
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if l[i] == l[j] {
                    rng.random_range(0.5..1.0)
                } else {
                    rng.random_range(0.0..0.6)
                };
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let r = build_spectrum(&w, &ids(n), &l, &SpectrumConfig::default()).unwrap();
        for p in &r.placements {
            assert!(!(p.flags.contains(&Flag::Borderline) && p.flags.contains(&Flag::Extreme)));
            assert!((0.0..=1.0).contains(&p.in_class_sim));
            assert!((0.0..=1.0).contains(&p.out_class_sim));
        }
        assert!(!r.extreme.is_empty());
    }
}
