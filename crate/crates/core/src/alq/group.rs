//! Multi-bit binary decomposition of one weight group.
//!
//! A group `w` of `n` weights is approximated by `B * alpha`, where `B` is an
//! `n x I` matrix of signs and `alpha` holds `I` positive coordinates. Each
//! sign column is stored packed LSB-first (`+1` is bit 1), padded to a byte,
//! which is also the on-disk layout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coordinates at or below this magnitude are dropped.
pub const ALPHA_EPS: f64 = 1e-12;
/// Largest bitwidth `optimize_bases` will enumerate (`2^I` levels).
pub const MAX_ENUM_BITS: usize = 16;
/// Gram condition number above which least squares switches to the
/// eigen-decomposition pseudo-inverse.
const GRAM_COND_LIMIT: f64 = 1e12;

/// A contiguous slice of one layer's flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGroup {
    pub values: Vec<f64>,
    pub layer_index: usize,
    pub offset: usize,
}

/// Splits `flat` into `ceil(len / n)` consecutive groups; only the last one
/// may be shorter than `n`.
pub fn partition_groups(flat: &[f64], n: usize, layer_index: usize) -> Result<Vec<WeightGroup>> {
    if n == 0 {
        return Err(Error::InvalidParam("group size must be >= 1".into()));
    }
    if flat.is_empty() {
        return Err(Error::InvalidParam("cannot partition an empty vector".into()));
    }
    Ok(flat
        .chunks(n)
        .enumerate()
        .map(|(k, chunk)| WeightGroup {
            values: chunk.to_vec(),
            layer_index,
            offset: k * n,
        })
        .collect())
}

#[inline]
pub(crate) fn column_bytes(n: usize) -> usize {
    n.div_ceil(8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGroup {
    n: usize,
    coords: Vec<f64>,
    bases: Vec<u8>,
}

impl QuantGroup {
    /// The all-zero group (`I = 0`).
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            coords: Vec::new(),
            bases: Vec::new(),
        }
    }

    /// Builds a group from coordinates and packed columns without
    /// canonicalizing. Used by the container reader.
    pub fn from_packed(n: usize, coords: Vec<f64>, bases: Vec<u8>) -> Result<Self> {
        let cb = column_bytes(n);
        if bases.len() != coords.len() * cb {
            return Err(Error::Shape(format!(
                "{} coordinates need {} base bytes, got {}",
                coords.len(),
                coords.len() * cb,
                bases.len()
            )));
        }
        if !n.is_multiple_of(8) {
            let pad_mask = !((1u8 << (n % 8)) - 1);
            if (0..coords.len()).any(|i| bases[i * cb + cb - 1] & pad_mask != 0) {
                return Err(Error::Shape("non-zero padding bits in base column".into()));
            }
        }
        Ok(Self { n, coords, bases })
    }

    /// Builds a canonical group from coordinates and sign columns
    /// (`true` = +1).
    pub fn from_columns(n: usize, coords: &[f64], columns: &[Vec<bool>]) -> Result<Self> {
        if coords.len() != columns.len() {
            return Err(Error::Shape("coordinate/column count mismatch".into()));
        }
        let mut q = Self::zero(n);
        for (c, col) in coords.iter().zip(columns) {
            if col.len() != n {
                return Err(Error::Shape(format!("column of length {} for n = {n}", col.len())));
            }
            q.push_column(*c, col.iter().copied());
        }
        q.canonicalize();
        Ok(q)
    }

    fn push_column(&mut self, coord: f64, signs: impl IntoIterator<Item = bool>) {
        let cb = column_bytes(self.n);
        let start = self.bases.len();
        self.bases.resize(start + cb, 0);
        for (j, s) in signs.into_iter().enumerate() {
            if s {
                self.bases[start + j / 8] |= 1 << (j % 8);
            }
        }
        self.coords.push(coord);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of binary bases, `I_k`.
    pub fn bitwidth(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Packed bytes of all columns, column-major.
    pub fn packed_bases(&self) -> &[u8] {
        &self.bases
    }

    pub fn column(&self, i: usize) -> &[u8] {
        let cb = column_bytes(self.n);
        &self.bases[i * cb..(i + 1) * cb]
    }

    /// Sign of column `i` at position `j`: `true` for +1.
    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> bool {
        let cb = column_bytes(self.n);
        self.bases[i * cb + j / 8] >> (j % 8) & 1 == 1
    }

    /// `B * alpha`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &a) in self.coords.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += if self.sign(i, j) { a } else { -a };
            }
        }
        out
    }

    /// `||w - B * alpha||^2`.
    pub fn sq_error(&self, w: &[f64]) -> f64 {
        self.reconstruct().iter().zip(w).map(|(r, v)| (v - r) * (v - r)).sum()
    }

    /// Removes coordinate `i` and its column. Canonical form is preserved.
    pub fn remove_coordinate(&mut self, i: usize) {
        let cb = column_bytes(self.n);
        self.coords.remove(i);
        self.bases.drain(i * cb..(i + 1) * cb);
    }

    /// Rounds every coordinate to the nearest `f32`, the stored precision.
    pub fn round_coords_to_f32(&mut self) {
        for c in &mut self.coords {
            *c = *c as f32 as f64;
        }
        self.canonicalize();
    }

    pub fn is_canonical(&self) -> bool {
        let mut c = self.clone();
        c.canonicalize();
        c == *self
    }

    /// Canonical form: every coordinate positive and above [`ALPHA_EPS`],
    /// sorted descending, no two columns equal up to sign.
    pub fn canonicalize(&mut self) {
        let cb = column_bytes(self.n);
        let pad_mask: u8 = if self.n.is_multiple_of(8) {
            0xFF
        } else {
            (1u8 << (self.n % 8)) - 1
        };
        // Orient every column so position 0 is +1, folding the sign into alpha.
        let mut merged: Vec<(Vec<u8>, f64)> = Vec::with_capacity(self.coords.len());
        for (i, &a) in self.coords.iter().enumerate() {
            let mut col = self.bases[i * cb..(i + 1) * cb].to_vec();
            let mut a = a;
            if self.n > 0 && col[0] & 1 == 0 {
                for b in col.iter_mut() {
                    *b = !*b;
                }
                col[cb - 1] &= pad_mask;
                a = -a;
            }
            match merged.iter_mut().find(|(c, _)| *c == col) {
                Some((_, acc)) => *acc += a,
                None => merged.push((col, a)),
            }
        }
        let mut cols: Vec<(Vec<u8>, f64)> = merged
            .into_iter()
            .filter(|(_, a)| a.abs() > ALPHA_EPS)
            .map(|(mut col, a)| {
                if a < 0.0 {
                    for b in col.iter_mut() {
                        *b = !*b;
                    }
                    col[cb - 1] &= pad_mask;
                }
                (col, a.abs())
            })
            .collect();
        cols.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        self.coords = cols.iter().map(|(_, a)| *a).collect();
        self.bases = cols.into_iter().flat_map(|(c, _)| c).collect();
    }
}

/// Greedy residual binarization: `beta = sign(r)` (with `sign(0) = +1`),
/// `alpha = mean(|r|)`, `r -= alpha * beta`, up to `i_max` times or until
/// `alpha <= ALPHA_EPS`.
pub fn init_decompose(w: &[f64], i_max: usize) -> QuantGroup {
    let n = w.len();
    let mut q = QuantGroup::zero(n);
    let mut r = w.to_vec();
    for _ in 0..i_max {
        let alpha = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if alpha <= ALPHA_EPS {
            break;
        }
        let signs: Vec<bool> = r.iter().map(|&v| v >= 0.0).collect();
        for (v, &s) in r.iter_mut().zip(&signs) {
            *v -= if s { alpha } else { -alpha };
        }
        q.push_column(alpha, signs);
    }
    q.canonicalize();
    q
}

/// All `2^I` achievable levels as `(level, mask)`, where bit `i` of `mask`
/// set means `+alpha_i`.
fn levels(coords: &[f64]) -> Vec<(f64, usize)> {
    (0..1usize << coords.len())
        .map(|mask| {
            let level = coords
                .iter()
                .enumerate()
                .map(|(i, &a)| if mask >> i & 1 == 1 { a } else { -a })
                .sum::<f64>();
            (level, mask)
        })
        .collect()
}

/// Whether `cand` beats `best` as the level for target `w`: smaller squared
/// error, then smaller magnitude, then positive.
#[inline]
fn better_level(w: f64, cand: f64, best: f64) -> bool {
    let (ec, eb) = ((w - cand) * (w - cand), (w - best) * (w - best));
    if ec != eb {
        return ec < eb;
    }
    if cand.abs() != best.abs() {
        return cand.abs() < best.abs();
    }
    cand > best
}

/// Nearest achievable level for `w` under the documented tie-break.
pub fn nearest_level(w: f64, coords: &[f64]) -> (f64, usize) {
    let lv = levels(coords);
    let mut best = lv[0];
    for &c in &lv[1..] {
        if better_level(w, c.0, best.0) {
            best = c;
        }
    }
    best
}

/// With coordinates fixed, gives each position the sign row whose level is
/// nearest to its weight.
pub fn optimize_bases(w: &[f64], q: &QuantGroup) -> Result<QuantGroup> {
    let bits = q.bitwidth();
    if w.len() != q.n() {
        return Err(Error::Shape(format!(
            "group of {} weights, model n = {}",
            w.len(),
            q.n()
        )));
    }
    if bits == 0 {
        return Ok(q.clone());
    }
    if bits > MAX_ENUM_BITS {
        return Err(Error::InvalidParam(format!(
            "bitwidth {bits} exceeds the enumeration bound {MAX_ENUM_BITS}"
        )));
    }
    let lv = levels(q.coords());
    let masks: Vec<usize> = w
        .iter()
        .map(|&x| {
            let mut best = lv[0];
            for &c in &lv[1..] {
                if better_level(x, c.0, best.0) {
                    best = c;
                }
            }
            best.1
        })
        .collect();
    let mut out = QuantGroup::zero(q.n());
    for (i, &a) in q.coords().iter().enumerate() {
        out.push_column(a, masks.iter().map(|m| m >> i & 1 == 1));
    }
    out.canonicalize();
    Ok(out)
}

/// Least-squares coordinates for the current bases (minimum-norm when the
/// bases are rank deficient). Keeps the input if the new fit is not better.
pub fn optimize_coords(w: &[f64], q: &QuantGroup) -> Result<QuantGroup> {
    let n = q.n();
    let bits = q.bitwidth();
    if w.len() != n {
        return Err(Error::Shape(format!("group of {} weights, model n = {n}", w.len())));
    }
    if bits == 0 {
        return Ok(q.clone());
    }
    let b = DMatrix::from_fn(n, bits, |j, i| if q.sign(i, j) { 1.0 } else { -1.0 });
    let alpha = least_squares(&b, &DVector::from_column_slice(w));
    let mut out = QuantGroup {
        n,
        coords: alpha.iter().copied().collect(),
        bases: q.bases.clone(),
    };
    out.canonicalize();
    if out.sq_error(w) <= q.sq_error(w) {
        Ok(out)
    } else {
        Ok(q.clone())
    }
}

/// `argmin ||b x - y||` through the normal equations, falling back to an
/// eigen-decomposition pseudo-inverse of the Gram matrix when it is
/// ill-conditioned.
fn least_squares(b: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let gram = b.transpose() * b;
    let rhs = b.transpose() * y;
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 && max / min <= GRAM_COND_LIMIT {
        if let Some(chol) = gram.cholesky() {
            return chol.solve(&rhs);
        }
    }
    let cutoff = max * (1.0 / GRAM_COND_LIMIT);
    let mut x = DVector::zeros(b.ncols());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(&rhs) / lambda);
        }
    }
    x
}
