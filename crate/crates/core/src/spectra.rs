//! Eigenvalues, empirical spectral moments and semicircle reference values.

use nalgebra::DMatrix;

use crate::error::{LabError, Result};
use crate::io::fmt_f64;
use crate::linalg::symmetric_eigenvalues;

pub const HISTOGRAM_BINS: usize = 101;
/// Histogram half-width in units of `sqrt(t)`.
pub const HISTOGRAM_HALF_WIDTH: f64 = 2.5;
const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(LabError::contract("matrix is not square"));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(LabError::contract(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let sym = DMatrix::from_fn(n, n, |i, j| if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) });
    Ok(symmetric_eigenvalues(&sym))
}

/// Spectrum of `M / sqrt(n)` and its moments `m_k`, `k = 1..=kmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    n: usize,
    eigenvalues: Vec<f64>,
    moments: Vec<f64>,
}

impl SpectralSummary {
    /// Summary of already scaled eigenvalues, pooled over one or more draws
    /// of an `n x n` matrix.
    pub fn from_scaled_eigenvalues(n: usize, mut eigenvalues: Vec<f64>, kmax: usize) -> Result<Self> {
        if kmax < 2 {
            return Err(LabError::domain(format!("kmax must be >= 2, got {kmax}")));
        }
        if n == 0 || eigenvalues.is_empty() || eigenvalues.len() % n != 0 {
            return Err(LabError::domain("eigenvalue count must be a positive multiple of n"));
        }
        eigenvalues.sort_by(f64::total_cmp);
        let count = eigenvalues.len() as f64;
        let mut moments = vec![0.0; kmax];
        for &l in &eigenvalues {
            let mut p = 1.0;
            for m in moments.iter_mut() {
                p *= l;
                *m += p;
            }
        }
        moments.iter_mut().for_each(|m| *m /= count);
        Ok(Self { n, eigenvalues, moments })
    }

    /// Pools summaries of independent draws; moments become averages.
    pub fn pool(parts: &[SpectralSummary]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| LabError::domain("nothing to pool"))?;
        if parts.iter().any(|p| p.n != first.n || p.moments.len() != first.moments.len()) {
            return Err(LabError::contract("pooled summaries must share n and kmax"));
        }
        let eig = parts.iter().flat_map(|p| p.eigenvalues.iter().copied()).collect();
        Self::from_scaled_eigenvalues(first.n, eig, first.moments.len())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of matrices pooled into this summary.
    pub fn draws(&self) -> usize {
        self.eigenvalues.len() / self.n
    }

    /// Eigenvalues of `M / sqrt(n)`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn kmax(&self) -> usize {
        self.moments.len()
    }

    /// `m_k` for `1 <= k <= kmax`.
    pub fn moment(&self, k: usize) -> f64 {
        self.moments[k - 1]
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// `k,moment` rows.
    pub fn moments_csv(&self) -> String {
        let mut out = String::from("k,moment\n");
        for (k, m) in self.moments.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k + 1, fmt_f64(*m)));
        }
        out
    }

    /// Counts over 101 equal bins on `[-2.5 sqrt(t), 2.5 sqrt(t)]`; values
    /// outside are counted in the edge bins.
    pub fn histogram(&self, t: f64) -> Result<Histogram> {
        if !(t > 0.0) {
            return Err(LabError::domain(format!("t must be positive, got {t}")));
        }
        let lo = -HISTOGRAM_HALF_WIDTH * t.sqrt();
        let width = -2.0 * lo / HISTOGRAM_BINS as f64;
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &l in &self.eigenvalues {
            let b = ((l - lo) / width).floor().clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize;
            counts[b] += 1;
        }
        Ok(Histogram { lo, width, counts })
    }
}

/// Moments of `M / sqrt(n)` for one symmetric matrix.
pub fn esd_moments(m: &DMatrix<f64>, kmax: usize) -> Result<SpectralSummary> {
    let n = m.nrows();
    let scale = 1.0 / (n as f64).sqrt();
    let eig = eigenvalues(m)?.into_iter().map(|l| l * scale).collect();
    SpectralSummary::from_scaled_eigenvalues(n, eig, kmax)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    width: f64,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        (self.lo + b as f64 * self.width, self.lo + (b + 1) as f64 * self.width)
    }

    /// `bin_left,bin_right,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (l, r) = self.bin_edges(b);
            out.push_str(&format!("{},{},{}\n", fmt_f64(l), fmt_f64(r), c));
        }
        out
    }
}

/// `binom(2j, j) / (j + 1)` as a float.
pub fn catalan(j: u32) -> f64 {
    (0..j).fold(1.0, |c, i| c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64)
}

/// `k`-th moment of the semicircle law of variance `t`.
pub fn semicircle_moment(t: f64, k: u32) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        t.powi((k / 2) as i32) * catalan(k / 2)
    }
}

/// `sqrt((4t - x^2)_+) / (2 pi t)`.
pub fn semicircle_density(t: f64, x: f64) -> f64 {
    (4.0 * t - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI * t)
}

/// `max_{k <= kmax} |m_k - s_k| / max(1, s_k)` against the semicircle moments `s_k`.
pub fn moment_distance(summary: &SpectralSummary, t: f64, kmax: usize) -> Result<f64> {
    if kmax < 4 || kmax % 2 == 1 {
        return Err(LabError::domain(format!("kmax must be even and >= 4, got {kmax}")));
    }
    if kmax > summary.kmax() {
        return Err(LabError::domain(format!("summary only holds {} moments", summary.kmax())));
    }
    Ok((1..=kmax)
        .map(|k| {
            let s = semicircle_moment(t, k as u32);
            (summary.moment(k) - s).abs() / s.max(1.0)
        })
        .fold(0.0, f64::max))
}
