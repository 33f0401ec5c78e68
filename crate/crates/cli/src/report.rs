//! Static report assets under `RUN/report/`.
//!
//! | file | content |
//! |---|---|
//! | `similarity_raw.png`, `.csv` | affinity matrix in dataset order |
//! | `similarity_reordered.png`, `.csv` | rows and columns grouped by community |
//! | `eigenvalues.csv` | `index,eigenvalue,gap` |
//! | `blocks.json` | diagonal block ranges of the reordered matrix |
//! | `report.html` | page tying the above together |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use wavecomm::artifacts::{
    atomic_write, read_json, read_matrix, write_json, write_matrix_csv, CommunitiesFile, RunLayout,
};
use wavecomm::spectral::reorder_similarity;
use wavecomm::{Error, Matrix};

use crate::{StageContext, StageError};

/// Smallest rendered side; small matrices are scaled up by whole pixels.
const MIN_RENDER: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub cluster: usize,
    /// Half-open row range in the reordered matrix.
    pub start: usize,
    pub end: usize,
}

/// `blocks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksFile {
    pub n_blocks: usize,
    pub blocks: Vec<Block>,
    pub boundaries: Vec<usize>,
    /// `order[i]` is the dataset index shown at reordered row `i`.
    pub order: Vec<usize>,
    pub order_ids: Vec<String>,
}

// Five-stop approximation of the viridis colour map.
const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(v: f64) -> Rgb<u8> {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 } * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let c = |k: usize| (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmap scaled to the largest off-diagonal value, block boundaries
/// drawn in white when given.
pub fn render_heatmap(m: &Matrix<f64>, boundaries: &[usize]) -> RgbImage {
    let n = m.rows();
    let scale = if n == 0 { 1 } else { MIN_RENDER.div_ceil(n).max(1) };
    let mut max = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)].is_finite() {
                max = max.max(m[(i, j)]);
            }
        }
    }
    let max = if max > 0.0 { max } else { 1.0 };
    let side = (n * scale) as u32;
    let mut img = RgbImage::from_fn(side, side, |x, y| {
        let (r, c) = (y as usize / scale, x as usize / scale);
        colour(m[(r, c)] / max)
    });
    for &b in boundaries {
        let p = (b * scale) as u32;
        for t in 0..side {
            img.put_pixel(p.min(side - 1), t, Rgb([255, 255, 255]));
            img.put_pixel(t, p.min(side - 1), Rgb([255, 255, 255]));
        }
    }
    img
}

fn save_png(path: &Path, img: &RgbImage) -> wavecomm::Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    atomic_write(path, &bytes)
}

fn html(communities: &CommunitiesFile, blocks: &BlocksFile) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>wavecomm report</title>\n\
         <style>body{{font-family:sans-serif;margin:2em}}img{{image-rendering:pixelated;width:420px;margin-right:1em}}\
         table{{border-collapse:collapse}}td,th{{padding:2px 8px;border-bottom:1px solid #ddd;text-align:right}}</style>\n\
         </head><body>\n<h1>{} communities in {} images</h1>\n<p>Count method: {}.</p>\n",
        communities.n_c,
        communities.images.len(),
        communities.method
    );
    s.push_str(
        "<h2>Similarity</h2>\n<img src=\"similarity_raw.png\" alt=\"raw similarity\">\
         <img src=\"similarity_reordered.png\" alt=\"reordered similarity\">\n",
    );
    s.push_str("<h2>Communities</h2>\n<table><tr><th>id</th><th>size</th><th>rows</th></tr>\n");
    for b in &blocks.blocks {
        let _ = writeln!(
            s,
            "<tr><td>{}</td><td>{}</td><td>{}&ndash;{}</td></tr>",
            b.cluster,
            b.end - b.start,
            b.start,
            b.end - 1
        );
    }
    s.push_str("</table>\n<h2>Smallest eigenvalues</h2>\n<table><tr><th>i</th><th>&lambda;</th><th>gap</th></tr>\n");
    for (i, v) in communities.eigenvalues.iter().enumerate() {
        let gap = communities.gaps.get(i).map(|g| format!("{g:.6}")).unwrap_or_default();
        let mark = if i + 1 == communities.n_c {
            " style=\"font-weight:bold\""
        } else {
            ""
        };
        let _ = writeln!(s, "<tr{mark}><td>{}</td><td>{v:.6}</td><td>{gap}</td></tr>", i + 1);
    }
    s.push_str("</table>\n</body></html>\n");
    s
}

/// Writes every report asset and returns the report directory.
pub fn cmd_report(run: &Path) -> Result<PathBuf, StageError> {
    let s = "report";
    let layout = RunLayout::new(run);
    let w = read_matrix(&layout.affinity()).stage(s)?;
    let communities: CommunitiesFile = read_json(&layout.communities()).stage(s)?;
    let result = communities.to_result().stage(s)?;
    let reordered = reorder_similarity(&w, &result.assignments).stage(s)?;

    let dir = layout.report_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })
        .stage(s)?;

    let ids = &communities.images;
    let order_ids: Vec<String> = reordered.permutation.iter().map(|&i| ids[i].clone()).collect();
    save_png(&dir.join("similarity_raw.png"), &render_heatmap(&w, &[])).stage(s)?;
    save_png(
        &dir.join("similarity_reordered.png"),
        &render_heatmap(&reordered.matrix, &reordered.boundaries()),
    )
    .stage(s)?;
    write_matrix_csv(&dir.join("similarity_raw.csv"), &w, Some(ids)).stage(s)?;
    write_matrix_csv(
        &dir.join("similarity_reordered.csv"),
        &reordered.matrix,
        Some(&order_ids),
    )
    .stage(s)?;

    let mut eig = String::from("index,eigenvalue,gap\n");
    for (i, v) in communities.eigenvalues.iter().enumerate() {
        let gap = communities.gaps.get(i).map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(eig, "{},{v},{gap}", i + 1);
    }
    atomic_write(&dir.join("eigenvalues.csv"), eig.as_bytes()).stage(s)?;

    let label_of_block = |start: usize| result.assignments[reordered.permutation[start]];
    let blocks = BlocksFile {
        n_blocks: reordered.blocks.len(),
        blocks: reordered
            .blocks
            .iter()
            .map(|&(start, end)| Block {
                cluster: label_of_block(start),
                start,
                end,
            })
            .collect(),
        boundaries: reordered.boundaries(),
        order: reordered.permutation.clone(),
        order_ids,
    };
    write_json(&dir.join("blocks.json"), &blocks).stage(s)?;
    atomic_write(&dir.join("report.html"), html(&communities, &blocks).as_bytes()).stage(s)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_map_endpoints() {
        assert_eq!(colour(0.0), Rgb([68, 1, 84]));
        assert_eq!(colour(1.0), Rgb([253, 231, 37]));
        assert_eq!(colour(f64::NAN), Rgb([68, 1, 84]));
    }

    #[test]
    fn small_matrices_are_upscaled() {
        let m = Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.5 });
        let img = render_heatmap(&m, &[2]);
        assert_eq!(img.width(), 256);
        assert_eq!(*img.get_pixel(0, 128), Rgb([255, 255, 255]));
    }
}
