use super::{bias_at_distance, BiasSpec};
use crate::{Error, Result};

/// Per-head causal bias over an `n x n` position grid.
///
/// Only the lower triangle (`j <= i`) is stored, packed row by row; entries
/// above the diagonal are the causal mask and read back as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix {
    heads: usize,
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

impl BiasMatrix {
    pub fn zeros(heads: usize, n: usize) -> Self {
        BiasMatrix {
            heads,
            n,
            data: vec![0.0; heads * tri(n)],
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Bias for head `h`, query `i`, key `j`; `None` when `j > i` (masked).
    pub fn get(&self, h: usize, i: usize, j: usize) -> Option<f64> {
        (j <= i && i < self.n).then(|| self.data[h * tri(self.n) + tri(i) + j])
    }

    /// Unmasked row `i` of head `h` (length `i + 1`).
    pub fn row(&self, h: usize, i: usize) -> &[f64] {
        let start = h * tri(self.n) + tri(i);
        &self.data[start..start + i + 1]
    }

    pub fn row_mut(&mut self, h: usize, i: usize) -> &mut [f64] {
        let start = h * tri(self.n) + tri(i);
        &mut self.data[start..start + i + 1]
    }

    /// Packed lower triangle of head `h`.
    pub fn head(&self, h: usize) -> &[f64] {
        let t = tri(self.n);
        &self.data[h * t..(h + 1) * t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Resizes to `n`, keeping the allocation when possible. Contents are unspecified.
    pub fn resize(&mut self, heads: usize, n: usize) {
        self.heads = heads;
        self.n = n;
        self.data.resize(heads * tri(n), 0.0);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// FNV-1a over the bit patterns of every stored entry.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Single-head bias matrix for `spec` over `n` positions.
pub fn build_bias_matrix(spec: &BiasSpec, n: usize) -> Result<BiasMatrix> {
    build_bias_matrix_heads(std::slice::from_ref(spec), n)
}

/// One head per spec.
pub fn build_bias_matrix_heads(specs: &[BiasSpec], n: usize) -> Result<BiasMatrix> {
    let mut m = BiasMatrix::zeros(specs.len(), n);
    build_bias_matrix_heads_into(specs, n, &mut m)?;
    Ok(m)
}

/// Writes one head per spec into `out`, reusing its allocation.
pub fn build_bias_matrix_heads_into(specs: &[BiasSpec], n: usize, out: &mut BiasMatrix) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("bias matrix needs n >= 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::EmptyInput("bias matrix needs at least one head".into()));
    }
    specs.iter().try_for_each(BiasSpec::validate)?;
    out.resize(specs.len(), n);
    let per_head = tri(n);
    for (h, spec) in specs.iter().enumerate() {
        // translation invariant: fill the last row once per distance, then
        // copy its suffixes into the shorter rows
        let head = &mut out.data[h * per_head..(h + 1) * per_head];
        let (rest, last) = head.split_at_mut(tri(n - 1));
        for (j, v) in last.iter_mut().enumerate() {
            *v = bias_at_distance(spec, n - 1 - j);
        }
        for i in 0..n - 1 {
            rest[tri(i)..tri(i) + i + 1].copy_from_slice(&last[n - 1 - i..]);
        }
    }
    Ok(())
}
