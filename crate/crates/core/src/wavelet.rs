//! Multi-level 2D discrete wavelet transform for the Daubechies family.
//!
//! Every 1D step is a periodized two-channel filter bank: the signal is
//! circularly extended, correlated with the decomposition filters and
//! downsampled by two. With orthonormal filters and an even length this is
//! an orthogonal change of basis, so the inverse is the transpose and the
//! coefficient count equals the (padded) pixel count.
//!
//! Coefficients are flattened as: level-N approximation, then for each level
//! from N down to 1 the horizontal, vertical and diagonal detail subbands,
//! each subband row-major. [`Bookkeeping`] records every subband shape and
//! every level's pre-padding input shape so the layout can be inverted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Default decomposition depth used by the pipeline.
pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisName {
    Db1,
    Db2,
    Db3,
    Db4,
    Db5,
}

impl BasisName {
    pub const ALL: [BasisName; 5] = [
        BasisName::Db1,
        BasisName::Db2,
        BasisName::Db3,
        BasisName::Db4,
        BasisName::Db5,
    ];

    /// Number of vanishing moments; the filters have `2 * order` taps.
    pub fn order(self) -> usize {
        match self {
            BasisName::Db1 => 1,
            BasisName::Db2 => 2,
            BasisName::Db3 => 3,
            BasisName::Db4 => 4,
            BasisName::Db5 => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BasisName::Db1 => "db1",
            BasisName::Db2 => "db2",
            BasisName::Db3 => "db3",
            BasisName::Db4 => "db4",
            BasisName::Db5 => "db5",
        }
    }
}

impl fmt::Display for BasisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BasisName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "db1" | "haar" => Ok(BasisName::Db1),
            "db2" => Ok(BasisName::Db2),
            "db3" => Ok(BasisName::Db3),
            "db4" => Ok(BasisName::Db4),
            "db5" => Ok(BasisName::Db5),
            other => Err(Error::Config(format!(
                "unsupported wavelet basis {other:?} (expected db1..db5)"
            ))),
        }
    }
}

// Daubechies scaling filters, normalized so the taps sum to sqrt(2).
// Printed to more digits than f64 holds; rounding happens at parse time.
#[allow(clippy::excessive_precision)]
const DB2: [f64; 4] = [
    0.48296291314453414337,
    0.83651630373780790558,
    0.22414386804201338103,
    -0.12940952255126038117,
];
#[allow(clippy::excessive_precision)]
const DB3: [f64; 6] = [
    0.332670552950082616,
    0.80689150931109257649,
    0.4598775021184915701,
    -0.1350110200102545887,
    -0.085441273882026661693,
    0.035226291885709536603,
];
#[allow(clippy::excessive_precision)]
const DB4: [f64; 8] = [
    0.23037781330889650086,
    0.71484657055291564709,
    0.63088076792985890788,
    -0.027983769416859854211,
    -0.18703481171909308408,
    0.030841381835560763627,
    0.032883011666885199735,
    -0.010597401785069032105,
];
#[allow(clippy::excessive_precision)]
const DB5: [f64; 10] = [
    0.16010239797419291448,
    0.60382926979718967054,
    0.72430852843777292773,
    0.13842814590132073151,
    -0.24229488706638203186,
    -0.032244869584638374648,
    0.077571493840045713523,
    -0.0062414902127982742742,
    -0.012580751999081999469,
    0.003335725285473771278,
];

/// Orthonormal two-channel filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis<T> {
    pub name: BasisName,
    pub lo_d: Vec<T>,
    pub hi_d: Vec<T>,
    pub lo_r: Vec<T>,
    pub hi_r: Vec<T>,
}

impl<T: Real> WaveletBasis<T> {
    pub fn new(name: BasisName) -> Self {
        basis_filters(name)
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(basis_filters(name.parse()?))
    }

    pub fn taps(&self) -> usize {
        self.lo_d.len()
    }
}

/// Builds the filter bank for a named basis.
///
/// `hi_d[k] = (-1)^k · lo_d[L-1-k]`; the reconstruction filters are the
/// time-reversed decomposition filters.
pub fn basis_filters<T: Real>(name: BasisName) -> WaveletBasis<T> {
    let lo: Vec<f64> = match name {
        BasisName::Db1 => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        BasisName::Db2 => DB2.to_vec(),
        BasisName::Db3 => DB3.to_vec(),
        BasisName::Db4 => DB4.to_vec(),
        BasisName::Db5 => DB5.to_vec(),
    };
    let len = lo.len();
    let hi: Vec<f64> = (0..len)
        .map(|k| if k % 2 == 0 { lo[len - 1 - k] } else { -lo[len - 1 - k] })
        .collect();
    let lo_d: Vec<T> = lo.iter().map(|&x| T::lit(x)).collect();
    let hi_d: Vec<T> = hi.iter().map(|&x| T::lit(x)).collect();
    let lo_r = lo_d.iter().rev().copied().collect();
    let hi_r = hi_d.iter().rev().copied().collect();
    WaveletBasis {
        name,
        lo_d,
        hi_d,
        lo_r,
        hi_r,
    }
}

/// One analysis step with circular boundary handling.
///
/// Odd-length input is first extended periodically by one sample. Each
/// output has `ceil(len / 2)` entries.
pub fn dwt_step_1d<T: Real>(signal: &[T], basis: &WaveletBasis<T>) -> Result<(Vec<T>, Vec<T>)> {
    if signal.is_empty() {
        return Err(Error::Input("cannot transform an empty signal".into()));
    }
    let half = signal.len().div_ceil(2);
    let mut approx = vec![T::zero(); half];
    let mut detail = vec![T::zero(); half];
    if signal.len() % 2 == 1 {
        let mut padded = signal.to_vec();
        padded.push(signal[0]);
        analysis(&padded, basis, &mut approx, &mut detail);
    } else {
        analysis(signal, basis, &mut approx, &mut detail);
    }
    Ok((approx, detail))
}

/// Inverse of [`dwt_step_1d`] for even-length signals.
pub fn idwt_step_1d<T: Real>(approx: &[T], detail: &[T], basis: &WaveletBasis<T>) -> Result<Vec<T>> {
    if approx.len() != detail.len() {
        return Err(Error::Input(format!(
            "approximation ({}) and detail ({}) lengths differ",
            approx.len(),
            detail.len()
        )));
    }
    if approx.is_empty() {
        return Err(Error::Input("cannot invert an empty signal".into()));
    }
    let mut out = vec![T::zero(); approx.len() * 2];
    synthesis(approx, detail, basis, &mut out);
    Ok(out)
}

fn analysis<T: Real>(x: &[T], basis: &WaveletBasis<T>, approx: &mut [T], detail: &mut [T]) {
    let n = x.len();
    for k in 0..n / 2 {
        let mut a = T::zero();
        let mut d = T::zero();
        for (j, (&lo, &hi)) in basis.lo_d.iter().zip(&basis.hi_d).enumerate() {
            let v = x[(2 * k + j) % n];
            a = a + lo * v;
            d = d + hi * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

// Transpose of `analysis`, written with the time-reversed filters:
// lo_d[j] == lo_r[L-1-j].
fn synthesis<T: Real>(approx: &[T], detail: &[T], basis: &WaveletBasis<T>, out: &mut [T]) {
    let n = out.len();
    let taps = basis.lo_r.len();
    out.iter_mut().for_each(|v| *v = T::zero());
    for k in 0..approx.len() {
        for j in 0..taps {
            let i = (2 * k + j) % n;
            out[i] = out[i] + basis.lo_r[taps - 1 - j] * approx[k] + basis.hi_r[taps - 1 - j] * detail[k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subband {
    #[serde(rename = "a")]
    Approximation,
    #[serde(rename = "h")]
    Horizontal,
    #[serde(rename = "v")]
    Vertical,
    #[serde(rename = "d")]
    Diagonal,
}

impl Subband {
    pub fn tag(self) -> char {
        match self {
            Subband::Approximation => 'a',
            Subband::Horizontal => 'h',
            Subband::Vertical => 'v',
            Subband::Diagonal => 'd',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaEntry {
    pub level: usize,
    pub subband: Subband,
    pub rows: usize,
    pub cols: usize,
}

/// Layout of a flattened decomposition.
///
/// `level_inputs[l - 1]` is the shape entering level `l` before edge
/// padding; the reconstruction crops back to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub entries: Vec<BetaEntry>,
    pub level_inputs: Vec<(usize, usize)>,
}

impl Bookkeeping {
    /// Computes the layout for an image shape without touching pixel data.
    pub fn for_shape(rows: usize, cols: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("decomposition levels must be positive".into()));
        }
        let (mut r, mut c) = (rows, cols);
        let mut level_inputs = Vec::with_capacity(levels);
        for level in 1..=levels {
            if r < 2 || c < 2 {
                return Err(Error::DecompositionDepth {
                    rows,
                    cols,
                    levels,
                    failed_at: level,
                    at_rows: r,
                    at_cols: c,
                });
            }
            level_inputs.push((r, c));
            r = r.div_ceil(2);
            c = c.div_ceil(2);
        }
        let mut entries = Vec::with_capacity(1 + 3 * levels);
        entries.push(BetaEntry {
            level: levels,
            subband: Subband::Approximation,
            rows: r,
            cols: c,
        });
        for level in (1..=levels).rev() {
            let (ir, ic) = level_inputs[level - 1];
            for subband in [Subband::Horizontal, Subband::Vertical, Subband::Diagonal] {
                entries.push(BetaEntry {
                    level,
                    subband,
                    rows: ir.div_ceil(2),
                    cols: ic.div_ceil(2),
                });
            }
        }
        Ok(Self { entries, level_inputs })
    }

    pub fn levels(&self) -> usize {
        self.level_inputs.len()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.level_inputs.first().copied().unwrap_or((0, 0))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.rows * e.cols).sum()
    }

    /// Stable per-coefficient labels, in `omega` order: `h2:3,4` is row 3,
    /// column 4 of the level-2 horizontal detail.
    pub fn feature_ids(&self) -> Vec<String> {
        let mut ids = Vec::with_capacity(self.total_len());
        for e in &self.entries {
            for r in 0..e.rows {
                for c in 0..e.cols {
                    ids.push(format!("{}{}:{},{}", e.subband.tag(), e.level, r, c));
                }
            }
        }
        ids
    }

    fn validate(&self) -> Result<()> {
        let levels = self.levels();
        if levels == 0 || self.entries.len() != 1 + 3 * levels {
            return Err(Error::CorruptDecomposition(format!(
                "{} subband entries for {levels} level(s)",
                self.entries.len()
            )));
        }
        let (r0, c0) = self.image_shape();
        let expected =
            Bookkeeping::for_shape(r0, c0, levels).map_err(|e| Error::CorruptDecomposition(e.to_string()))?;
        if &expected != self {
            return Err(Error::CorruptDecomposition(
                "subband shapes inconsistent with level input shapes".into(),
            ));
        }
        Ok(())
    }
}

/// Flattened multi-level decomposition of one single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompResult<T> {
    pub omega: Vec<T>,
    pub beta: Bookkeeping,
    pub basis: BasisName,
}

impl<T> DecompResult<T> {
    pub fn levels(&self) -> usize {
        self.beta.levels()
    }
}

/// Multi-level separable 2D decomposition.
///
/// At every level the current approximation is edge-replicated to even
/// dimensions, each row is transformed, then each column.
pub fn wavedec2<T: Real>(image: &Matrix<T>, basis: &WaveletBasis<T>, levels: usize) -> Result<DecompResult<T>> {
    let beta = Bookkeeping::for_shape(image.rows(), image.cols(), levels)?;
    if image.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("image contains non-finite pixels".into()));
    }
    let mut current = image.clone();
    let mut details: Vec<[Matrix<T>; 3]> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let padded = pad_even(&current);
        let (ll, h, v, d) = analysis_2d(&padded, basis);
        details.push([h, v, d]);
        current = ll;
    }
    let mut omega = Vec::with_capacity(beta.total_len());
    omega.extend_from_slice(current.as_slice());
    for bands in details.iter().rev() {
        for band in bands {
            omega.extend_from_slice(band.as_slice());
        }
    }
    debug_assert_eq!(omega.len(), beta.total_len());
    Ok(DecompResult {
        omega,
        beta,
        basis: basis.name,
    })
}

/// Inverse of [`wavedec2`]; returns an image of the original shape.
pub fn waverec2<T: Real>(decomp: &DecompResult<T>, basis: &WaveletBasis<T>) -> Result<Matrix<T>> {
    if decomp.basis != basis.name {
        return Err(Error::CorruptDecomposition(format!(
            "decomposed with {} but reconstructing with {}",
            decomp.basis, basis.name
        )));
    }
    decomp.beta.validate()?;
    let total = decomp.beta.total_len();
    if total != decomp.omega.len() {
        return Err(Error::CorruptDecomposition(format!(
            "bookkeeping describes {total} coefficients but omega has {}",
            decomp.omega.len()
        )));
    }

    let mut bands = Vec::with_capacity(decomp.beta.entries.len());
    let mut offset = 0;
    for e in &decomp.beta.entries {
        let len = e.rows * e.cols;
        bands.push(Matrix::from_vec(
            e.rows,
            e.cols,
            decomp.omega[offset..offset + len].to_vec(),
        )?);
        offset += len;
    }

    let mut bands = bands.into_iter();
    let mut current = bands.next().expect("validated non-empty");
    for level in (1..=decomp.levels()).rev() {
        let h = bands.next().expect("validated");
        let v = bands.next().expect("validated");
        let d = bands.next().expect("validated");
        let padded = synthesis_2d(&current, &h, &v, &d, basis);
        let (r, c) = decomp.beta.level_inputs[level - 1];
        current = crop(&padded, r, c);
    }
    Ok(current)
}

fn pad_even<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let (r, c) = m.shape();
    if r % 2 == 0 && c % 2 == 0 {
        return m.clone();
    }
    Matrix::from_fn(r + r % 2, c + c % 2, |i, j| m[(i.min(r - 1), j.min(c - 1))])
}

fn crop<T: Real>(m: &Matrix<T>, rows: usize, cols: usize) -> Matrix<T> {
    if m.shape() == (rows, cols) {
        return m.clone();
    }
    Matrix::from_fn(rows, cols, |i, j| m[(i, j)])
}

// Returns (LL, H, V, D) for an even-sized input. H is low-pass along rows
// and high-pass along columns, V the opposite.
fn analysis_2d<T: Real>(x: &Matrix<T>, basis: &WaveletBasis<T>) -> (Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>) {
    let (rows, cols) = x.shape();
    let (hr, hc) = (rows / 2, cols / 2);

    let mut lo = Matrix::zeros(rows, hc);
    let mut hi = Matrix::zeros(rows, hc);
    for r in 0..rows {
        analysis(x.row(r), basis, lo.row_mut(r), hi.row_mut(r));
    }

    let mut ll = Matrix::zeros(hr, hc);
    let mut h = Matrix::zeros(hr, hc);
    let mut v = Matrix::zeros(hr, hc);
    let mut d = Matrix::zeros(hr, hc);
    let mut column = vec![T::zero(); rows];
    let mut a = vec![T::zero(); hr];
    let mut b = vec![T::zero(); hr];
    for c in 0..hc {
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = lo[(r, c)];
        }
        analysis(&column, basis, &mut a, &mut b);
        for r in 0..hr {
            ll[(r, c)] = a[r];
            h[(r, c)] = b[r];
        }
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = hi[(r, c)];
        }
        analysis(&column, basis, &mut a, &mut b);
        for r in 0..hr {
            v[(r, c)] = a[r];
            d[(r, c)] = b[r];
        }
    }
    (ll, h, v, d)
}

fn synthesis_2d<T: Real>(
    ll: &Matrix<T>,
    h: &Matrix<T>,
    v: &Matrix<T>,
    d: &Matrix<T>,
    basis: &WaveletBasis<T>,
) -> Matrix<T> {
    let (hr, hc) = ll.shape();
    let (rows, cols) = (hr * 2, hc * 2);

    let mut lo = Matrix::zeros(rows, hc);
    let mut hi = Matrix::zeros(rows, hc);
    let mut a = vec![T::zero(); hr];
    let mut b = vec![T::zero(); hr];
    let mut column = vec![T::zero(); rows];
    for c in 0..hc {
        for r in 0..hr {
            a[r] = ll[(r, c)];
            b[r] = h[(r, c)];
        }
        synthesis(&a, &b, basis, &mut column);
        for r in 0..rows {
            lo[(r, c)] = column[r];
        }
        for r in 0..hr {
            a[r] = v[(r, c)];
            b[r] = d[(r, c)];
        }
        synthesis(&a, &b, basis, &mut column);
        for r in 0..rows {
            hi[(r, c)] = column[r];
        }
    }

    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        synthesis(lo.row(r), hi.row(r), basis, out.row_mut(r));
    }
    out
}
