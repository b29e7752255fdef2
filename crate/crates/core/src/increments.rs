//! Exact correlations of normalized increments and the closed-form
//! quantities built from them: limiting variances, contraction sums,
//! convergence-rate bounds and the Rosenblatt-Wishart variance integral.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::io::{csv_row, strip_comments};
use crate::kernels::{derive_regime_params, Grid, GridCovariance, ProcessSpec, Regime};
use crate::linalg::{cholesky, min_eigenvalue};
use crate::quadrature::GaussLegendre;

/// Rows handed to one parallel task when streaming correlation rows.
const ROW_CHUNK: usize = 32;
/// Negative eigenvalues above `-PSD_TOLERANCE` are accepted as round-off.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// `floor(d x)`, guarded against products like `100 * 0.29` landing just
/// below an integer.
pub fn floor_dx(d: u64, x: f64) -> usize {
    let p = d as f64 * x;
    (p + 1e-9 * p.abs().max(1.0)).floor().max(0.0) as usize
}

/// `a_alpha(m) = (|m+1|^alpha + |m-1|^alpha - 2|m|^alpha) / 2`, the
/// correlation of unit-lag fBm increments at lag `m`.
pub fn a_alpha(alpha: f64, m: i64) -> f64 {
    let p = |k: i64| (k.unsigned_abs() as f64).powf(alpha);
    0.5 * (p(m + 1) + p(m - 1) - 2.0 * p(m))
}

/// Normalization scale applied to `sum_{k,l} delta_kl^2` by each regime.
pub fn regime_scale(regime: Regime, d: u64, alpha: f64) -> f64 {
    let df = d as f64;
    match regime {
        Regime::Central => 1.0 / df,
        Regime::Log => 1.0 / (df * df.ln()),
        Regime::Noncentral => df.powf(2.0 - 2.0 * alpha),
    }
}

/// Grid on which a regime takes its increments.
pub fn regime_grid(regime: Regime, d: u64) -> Grid {
    match regime {
        Regime::Noncentral => Grid::Fine(d),
        _ => Grid::Unit,
    }
}

pub(crate) fn expect_regime(spec: &ProcessSpec, regime: Regime) -> Result<()> {
    let actual = derive_regime_params(spec)?.regime;
    if actual != regime {
        return Err(LabError::contract(format!(
            "regime {regime} does not match alpha = {} (regime {actual})",
            spec.alpha()
        )));
    }
    Ok(())
}

/// Streams the upper part of the increment correlation matrix restricted to
/// increments `lo..=hi` (counted from 1). `map(k, row)` receives
/// `row[j] = delta_{k, k + j}` for `k + j <= hi`; results come back in row
/// order regardless of scheduling.
pub(crate) fn map_upper_rows<R, F>(spec: &ProcessSpec, grid: Grid, lo: usize, hi: usize, map: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, &[f64]) -> R + Sync,
{
    assert!(lo >= 1 && hi >= lo);
    let gc = GridCovariance::new(spec, grid, hi + 1);
    let sd: Vec<f64> = (lo..=hi)
        .map(|k| (gc.get(k + 1, k + 1) - 2.0 * gc.get(k, k + 1) + gc.get(k, k)).sqrt())
        .collect();
    let starts: Vec<usize> = (lo..=hi).step_by(ROW_CHUNK).collect();
    let chunks: Vec<Vec<R>> = starts
        .into_par_iter()
        .map(|k0| {
            let k1 = (k0 + ROW_CHUNK - 1).min(hi);
            let mut out = Vec::with_capacity(k1 - k0 + 1);
            // prev[j] = cov(t_k, t_{k+j}), next[j] = cov(t_{k+1}, t_{k+j}), j = 0..=hi+1-k.
            let mut prev: Vec<f64> = (k0..=hi + 1).map(|j| gc.get(k0, j)).collect();
            let mut next = vec![0.0; prev.len()];
            let mut row = vec![0.0; prev.len() - 1];
            for k in k0..=k1 {
                let len = hi + 2 - k;
                for (j, v) in next[..len].iter_mut().enumerate() {
                    *v = gc.get(k + 1, k + j);
                }
                let sk = sd[k - lo];
                let width = len - 1;
                for j in 0..width {
                    let inc = next[j + 1] - prev[j + 1] - next[j] + prev[j];
                    row[j] = (inc / (sk * sd[k + j - lo])).clamp(-1.0, 1.0);
                }
                row[0] = 1.0;
                out.push(map(k, &row[..width]));
                // cov(t_{k+1}, t_{k+1+j}) = next[j + 1].
                prev.clear();
                prev.extend_from_slice(&next[1..len]);
            }
            out
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// `delta_kk^2 + 2 sum_{l > k} delta_kl^2` for one upper row.
fn upper_row_square_sum(row: &[f64]) -> f64 {
    let off: f64 = row[1..].iter().map(|v| v * v).sum();
    row[0] * row[0] + 2.0 * off
}

/// `sum_{k,l <= dcols} delta_kl^2` without materializing the matrix.
pub fn delta_square_sum(spec: &ProcessSpec, dcols: usize, grid: Grid) -> Result<f64> {
    if dcols < 1 {
        return Err(LabError::domain("need at least one increment"));
    }
    Ok(map_upper_rows(spec, grid, 1, dcols, |_, row| upper_row_square_sum(row)).into_iter().sum())
}

/// Correlation matrix of the normalized increments `Y_1, ..., Y_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    spec: ProcessSpec,
    grid: Grid,
    values: DMatrix<f64>,
}

impl DeltaMatrix {
    /// Wraps raw values (e.g. a fixture) after checking the invariants.
    pub fn from_values(spec: ProcessSpec, grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n != values.ncols() || n == 0 {
            return Err(LabError::domain("correlation matrix must be square and non-empty"));
        }
        for i in 0..n {
            if values[(i, i)] != 1.0 {
                return Err(LabError::domain(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !(-1.0..=1.0).contains(&v) || v != values[(j, i)] {
                    return Err(LabError::domain(format!("entry ({i},{j}) = {v} breaks symmetry or bounds")));
                }
            }
        }
        check_psd(&values)?;
        Ok(Self { spec, grid, values })
    }

    /// Number of increments `D`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    /// Zero-based view: entry `(k-1, l-1)` holds `delta_kl`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `sum_{k,l} delta_kl^2`, accumulated row by row over the upper part.
    pub fn square_sum(&self) -> f64 {
        let n = self.dim();
        let mut row = Vec::with_capacity(n);
        let mut total = 0.0;
        for k in 0..n {
            row.clear();
            row.extend((k..n).map(|l| self.values[(k, l)]));
            total += upper_row_square_sum(&row);
        }
        total
    }

    /// CSV: header `D,grid,d`, one metadata line, then `D` rows of values.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = format!("D,grid,d\n{},{},{}\n", n, self.grid.label(), self.grid.denominator());
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| self.values[(i, j)]).collect();
            out.push_str(&csv_row(&row));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`DeltaMatrix::to_csv`].
    pub fn from_csv(spec: ProcessSpec, text: &str) -> Result<Self> {
        let mut lines = strip_comments(text);
        let bad = |m: &str| LabError::domain(format!("malformed delta CSV: {m}"));
        if lines.next().map(str::trim) != Some("D,grid,d") {
            return Err(bad("missing header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing metadata"))?.split(',').collect();
        if meta.len() != 3 {
            return Err(bad("metadata needs 3 fields"));
        }
        let n: usize = meta[0].trim().parse().map_err(|_| bad("D"))?;
        let d: u64 = meta[2].trim().parse().map_err(|_| bad("d"))?;
        let grid = match meta[1].trim() {
            "UNIT" => Grid::Unit,
            "FINE" => Grid::Fine(d),
            _ => return Err(bad("grid")),
        };
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            let line = lines.next().ok_or_else(|| bad("too few rows"))?;
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("value"))?;
            if row.len() != n {
                return Err(bad("row length"));
            }
            for (j, v) in row.into_iter().enumerate() {
                values[(i, j)] = v;
            }
        }
        Self::from_values(spec, grid, values)
    }
}

fn check_psd(values: &DMatrix<f64>) -> Result<()> {
    let n = values.nrows();
    if cholesky(n, |i, j| values[(i, j)] + if i == j { PSD_TOLERANCE } else { 0.0 }).is_err() {
        let min = min_eigenvalue(values);
        if min < -PSD_TOLERANCE {
            return Err(LabError::Numeric {
                message: "increment correlation matrix is not positive semidefinite".into(),
                min_eigenvalue: min,
            });
        }
    }
    Ok(())
}

/// Exact correlation matrix of `D` normalized increments on `grid`, computed
/// from the covariance by the four-point identity.
pub fn delta_matrix(spec: &ProcessSpec, dcols: usize, grid: Grid) -> Result<DeltaMatrix> {
    if dcols < 2 {
        return Err(LabError::domain(format!("need D >= 2, got {dcols}")));
    }
    if let Grid::Fine(0) = grid {
        return Err(LabError::domain("fine grid needs d >= 1"));
    }
    let rows = map_upper_rows(spec, grid, 1, dcols, |_, row| row.to_vec());
    let mut values = DMatrix::zeros(dcols, dcols);
    for (k, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[(k, k + j)] = v;
            values[(k + j, k)] = v;
        }
    }
    check_psd(&values)?;
    Ok(DeltaMatrix { spec: *spec, grid, values })
}

/// Exact variance of an off-diagonal entry under `regime`; diagonal entries
/// have twice this variance.
///
/// A fine grid must match `d`. The unit grid is accepted for every regime:
/// the normalized increments of a self-similar process do not depend on the
/// grid spacing.
pub fn regime_variance(delta: &DeltaMatrix, d: u64, regime: Regime) -> Result<f64> {
    if d < 2 {
        return Err(LabError::domain(format!("need d >= 2, got {d}")));
    }
    if let Grid::Fine(g) = delta.grid() {
        if g != d {
            return Err(LabError::contract(format!("delta built on FINE({g}) used with d = {d}")));
        }
    }
    expect_regime(delta.spec(), regime)?;
    Ok(regime_scale(regime, d, delta.spec().alpha()) * delta.square_sum())
}

/// [`regime_variance`] for `D = floor(d x)` computed by streaming rows, so
/// `D` may exceed what a dense matrix would allow.
pub fn regime_variance_streamed(spec: &ProcessSpec, d: u64, x: f64, regime: Regime) -> Result<f64> {
    if d < 2 || !(x > 0.0) {
        return Err(LabError::domain(format!("need d >= 2 and x > 0, got d={d}, x={x}")));
    }
    expect_regime(spec, regime)?;
    let dcols = floor_dx(d, x);
    if dcols < 1 {
        return Err(LabError::domain("floor(d x) must be at least 1"));
    }
    Ok(regime_scale(regime, d, spec.alpha()) * delta_square_sum(spec, dcols, regime_grid(regime, d))?)
}

/// Truncated evaluation of `(x/2) sum_{m in Z} a_alpha(m)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Series {
    pub value: f64,
    /// Upper bound on the omitted `|m| > truncation` terms, same scaling.
    pub tail_bound: f64,
    pub truncation: u64,
}

/// `(x/2) sum_{|m| <= M} a_alpha(m)^2` with a tail bound.
///
/// For `m >= 2`, `|a_alpha(m)| <= alpha |alpha - 1| (m - 1)^(alpha-2) / 2`, so
/// the tail beyond `M` is at most `(x/2) 2 c^2 (M-1)^(2 alpha - 3) / (3 - 2 alpha)`
/// with `c = alpha |alpha - 1| / 2`.
pub fn sigma2_series(alpha: f64, x: f64, truncation: u64) -> Result<Sigma2Series> {
    if alpha >= 1.5 {
        return Err(LabError::Divergence(format!("sum of a_alpha(m)^2 diverges for alpha = {alpha} >= 3/2")));
    }
    if !(alpha > 0.0) || truncation < 1 || !(x >= 0.0) {
        return Err(LabError::domain("need alpha > 0, x >= 0 and truncation >= 1"));
    }
    // Smallest terms first.
    let mut s = 0.0;
    for m in (1..=truncation as i64).rev() {
        s += 2.0 * a_alpha(alpha, m).powi(2);
    }
    s += a_alpha(alpha, 0).powi(2);
    let c = 0.5 * alpha * (alpha - 1.0).abs();
    let tail = if truncation >= 2 {
        2.0 * c * c * ((truncation - 1) as f64).powf(2.0 * alpha - 3.0) / (3.0 - 2.0 * alpha)
    } else {
        f64::INFINITY
    };
    Ok(Sigma2Series { value: 0.5 * x * s, tail_bound: 0.5 * x * tail, truncation })
}

/// Limit of the exact variance sequence obtained by fitting a correction term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Extrapolation {
    pub sigma2_inf: f64,
    pub correction_coef: f64,
    /// Exponent `p` of the `d^p` correction; `None` for the `1/ln d` model.
    pub correction_exponent: Option<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub regime: Regime,
    /// `(d, regime_variance(d))` pairs the fit was made on.
    pub raw: Vec<(u64, f64)>,
}

/// Extrapolates the exact variance to `d -> infinity` using
/// `v(d) = s + c d^max(2 alpha - 3, -1)` (central regime) or
/// `v(d) = s + c / ln d` (log regime).
pub fn sigma2_extrapolated(spec: &ProcessSpec, x: f64, d_list: &[u64]) -> Result<Sigma2Extrapolation> {
    if d_list.len() < 3 {
        return Err(LabError::domain("need at least 3 values of d"));
    }
    if d_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::domain("d values must be strictly increasing"));
    }
    if *d_list.last().unwrap() < 4096 {
        return Err(LabError::domain("largest d must be at least 4096"));
    }
    let regime = derive_regime_params(spec)?.regime;
    if regime == Regime::Noncentral {
        return Err(LabError::contract("no finite variance limit under this normalization; use rosenblatt_variance"));
    }
    let raw: Vec<(u64, f64)> = d_list
        .iter()
        .map(|&d| regime_variance_streamed(spec, d, x, regime).map(|v| (d, v)))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let up = values.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = values.windows(2).all(|w| w[1] <= w[0] + tol);
    if !up && !down {
        return Err(LabError::Fit(format!("variance sequence is not monotone: {raw:?}")));
    }
    let (exponent, basis): (Option<f64>, Vec<f64>) = match regime {
        Regime::Central => {
            let p = (2.0 * spec.alpha() - 3.0).max(-1.0);
            (Some(p), d_list.iter().map(|&d| (d as f64).powf(p)).collect())
        }
        _ => (None, d_list.iter().map(|&d| 1.0 / (d as f64).ln()).collect()),
    };
    let n = basis.len() as f64;
    let mb = basis.iter().sum::<f64>() / n;
    let mv = values.iter().sum::<f64>() / n;
    let sbb: f64 = basis.iter().map(|b| (b - mb).powi(2)).sum();
    let sbv: f64 = basis.iter().zip(&values).map(|(b, v)| (b - mb) * (v - mv)).sum();
    let coef = if sbb > 0.0 { sbv / sbb } else { 0.0 };
    let intercept = mv - coef * mb;
    let residual =
        (basis.iter().zip(&values).map(|(b, v)| (v - intercept - coef * b).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Sigma2Extrapolation {
        sigma2_inf: intercept,
        correction_coef: coef,
        correction_exponent: exponent,
        residual,
        regime,
        raw,
    })
}

/// Limiting off-diagonal variance in the `alpha = 3/2` regime, `9x/32`.
pub fn rho2_limit(x: f64) -> f64 {
    9.0 * x / 32.0
}

/// `sum_{k,l,m,p} delta_kl delta_mp delta_km delta_lp = tr(Delta^4)`,
/// computed as the squared Frobenius norm of `Delta^2`.
pub fn quartic_contraction(delta: &DeltaMatrix) -> f64 {
    let v = delta.values();
    let sq = v * v;
    sq.iter().map(|x| x * x).sum()
}

/// Case of the convergence-rate bound selected by `(alpha, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBranch {
    /// `alpha < 1`, `alpha + nu < 2`: `d^((2 alpha - 3) / (2 (9 - 2 alpha)))`.
    RoughShortMemory,
    /// `alpha < 1`, `alpha + nu >= 2`: `d^(-1/2)`.
    RoughLongMemory,
    /// `1 <= alpha < 5/4`: `d^(-1/2)`.
    Moderate,
    /// `alpha = 5/4`: `d^(-1/2) (ln d)^(3/2)`.
    Critical,
    /// `5/4 < alpha < 3/2`: `d^(2 alpha - 3)`.
    Upper,
    /// `alpha = 3/2`: total bound `n^(3/2) / ln d`.
    LogRegime,
    /// `3/2 < alpha < 2`: total bound `n d^((3 - 2 alpha) / 2)`.
    Noncentral,
}

/// Convergence-rate bound with the unknown constant normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub alpha: f64,
    pub nu: f64,
    pub n: u64,
    pub d: u64,
    pub r_value: f64,
    pub total_bound: f64,
    pub branch: RateBranch,
}

pub fn rate_bound(alpha: f64, nu: f64, n: u64, d: u64) -> Result<RateBound> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(LabError::domain(format!("alpha must lie in (0,2), got {alpha}")));
    }
    if n < 1 || d < 2 {
        return Err(LabError::domain(format!("need n >= 1 and d >= 2, got n={n}, d={d}")));
    }
    if alpha < 1.0 && !(nu > 1.0 && nu <= 2.0) {
        return Err(LabError::domain(format!("nu must lie in (1,2] when alpha < 1, got {nu}")));
    }
    let df = d as f64;
    let nf = n as f64;
    let ln_d = df.ln();
    let tol = crate::kernels::LOG_REGIME_TOLERANCE;
    let (branch, r) = if (alpha - 1.5).abs() <= tol {
        (RateBranch::LogRegime, 1.0 / ln_d)
    } else if alpha > 1.5 {
        (RateBranch::Noncentral, df.powf((3.0 - 2.0 * alpha) / 2.0))
    } else if alpha < 1.0 {
        if alpha + nu < 2.0 {
            (RateBranch::RoughShortMemory, df.powf((2.0 * alpha - 3.0) / (2.0 * (9.0 - 2.0 * alpha))))
        } else {
            (RateBranch::RoughLongMemory, df.powf(-0.5))
        }
    } else if (alpha - 1.25).abs() <= tol {
        (RateBranch::Critical, df.powf(-0.5) * ln_d.powf(1.5))
    } else if alpha < 1.25 {
        (RateBranch::Moderate, df.powf(-0.5))
    } else {
        (RateBranch::Upper, df.powf(2.0 * alpha - 3.0))
    };
    let total = match branch {
        RateBranch::LogRegime => nf.powf(1.5) / ln_d,
        RateBranch::Noncentral => nf * r,
        _ => nf.powf(1.5) * r + nf * df.powf(2.0 * alpha - 3.0) + nf / df,
    };
    Ok(RateBound { alpha, nu, n, d, r_value: r, total_bound: total, branch })
}

/// Variance of an off-diagonal Rosenblatt-Wishart entry at index `x`:
/// `(1 / 4 lambda^2) int_0^x int_0^x (s t)^(alpha - 2 beta) (d_st E[X_s X_t])^2 ds dt`.
///
/// The square is folded onto `s < t`. Below the diagonal the inner integral is
/// split at `s = t/2`: the far part uses panels graded toward `s = 0`, the
/// near part substitutes `t - s = (t/2) w^p` with `p = 1 / (2 alpha - 3)`,
/// which cancels the `(t - s)^(2 alpha - 4)` singularity, then grades toward
/// `w = 0`. The outer integral is graded toward `t = 0`.
pub fn rosenblatt_variance(spec: &ProcessSpec, x: f64) -> Result<f64> {
    let alpha = spec.alpha();
    if alpha <= 1.5 {
        return Err(LabError::Divergence(format!(
            "Rosenblatt variance integral diverges on the diagonal for alpha = {alpha} <= 3/2"
        )));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(LabError::domain(format!("x must be positive, got {x}")));
    }
    let gl = GaussLegendre::new(20);
    let weight_exp = alpha - 2.0 * spec.beta();
    let p = 1.0 / (2.0 * alpha - 3.0);
    let weight = |s: f64, t: f64| if weight_exp == 0.0 { 1.0 } else { (s * t).powf(weight_exp) };
    let inner = |t: f64| {
        let far = gl.integrate_graded(0.0, 0.5 * t, 60, |s| {
            let u = t - s;
            let m = mixed_regularized(spec, s, t, u) * u.powf(alpha - 2.0);
            weight(s, t) * m * m
        });
        // With u = half w^p the Jacobian times u^(2 alpha - 4) is the constant
        // p half^(2 alpha - 3).
        let half = 0.5 * t;
        let jac = p * half.powf(2.0 * alpha - 3.0);
        let near = gl.integrate_graded(0.0, 1.0, 80, |w| {
            let u = half * w.powf(p);
            let g = mixed_regularized(spec, t - u, t, u);
            weight(t - u, t) * g * g * jac
        });
        far + near
    };
    let folded = gl.integrate_graded(0.0, x, 80, inner);
    let lambda = spec.lambda();
    Ok(folded / (2.0 * lambda * lambda))
}

/// `u^(2 - alpha)` times the mixed partial at `(s, t)` with gap `u = |t - s|`,
/// which stays bounded as `u -> 0`.
fn mixed_regularized(spec: &ProcessSpec, s: f64, t: f64, u: f64) -> f64 {
    use crate::kernels::ProcessKind;
    let h = spec.hurst();
    let alpha = spec.alpha();
    match spec.kind() {
        ProcessKind::Fbm => h * (2.0 * h - 1.0),
        ProcessKind::Subfbm => h * (2.0 * h - 1.0) * (1.0 - (s + t).powf(2.0 * h - 2.0) * u.powf(2.0 - alpha)),
        ProcessKind::Bifbm => {
            let k = spec.bifractional();
            let p = 2.0 * h;
            let smooth = if k == 1.0 || s <= 0.0 {
                0.0
            } else {
                p * p * k * (k - 1.0) * (s.powf(p) + t.powf(p)).powf(k - 2.0) * (s * t).powf(p - 1.0)
            };
            spec.lambda() * (smooth * u.powf(2.0 - alpha) + alpha * (alpha - 1.0))
        }
    }
}

/// `E[(W_ij(floor(dx)) - W_ij(floor(dy)))^2]` for an off-diagonal entry:
/// the regime scale times `sum delta_kl^2` over `floor(dy) < k, l <= floor(dx)`.
pub fn increment_l2_gap(spec: &ProcessSpec, d: u64, x: f64, y: f64, regime: Regime) -> Result<f64> {
    if !(y < x) {
        return Err(LabError::domain(format!("need y < x, got y={y}, x={x}")));
    }
    if d < 2 {
        return Err(LabError::domain(format!("need d >= 2, got {d}")));
    }
    expect_regime(spec, regime)?;
    let (dy, dx) = (floor_dx(d, y), floor_dx(d, x));
    if dy < 1 {
        return Err(LabError::domain(format!("floor(d y) must be >= 1, got {dy}")));
    }
    if dx == dy {
        return Ok(0.0);
    }
    let sum: f64 = map_upper_rows(spec, regime_grid(regime, d), dy + 1, dx, |_, row| upper_row_square_sum(row))
        .into_iter()
        .sum();
    Ok(regime_scale(regime, d, spec.alpha()) * sum)
}

/// Block sums `S_ij` of `delta^2` over the partition of increments
/// `(floors[i-1], floors[i]]`, counted once per unordered block pair. The sum
/// over increments `(floors[a], floors[b]]` is `sum_{a < i <= j <= b} S_ij`.
pub(crate) fn block_square_sums(spec: &ProcessSpec, grid: Grid, floors: &[usize]) -> Vec<Vec<f64>> {
    let nb = floors.len() - 1;
    let lo = floors[0] + 1;
    let hi = *floors.last().unwrap();
    let block_of = |k: usize| floors.partition_point(|&f| f < k) - 1;
    let rows = map_upper_rows(spec, grid, lo, hi, |k, row| {
        let mut acc = vec![0.0; nb];
        for (j, v) in row.iter().enumerate() {
            let w = if j == 0 { 1.0 } else { 2.0 };
            acc[block_of(k + j)] += w * v * v;
        }
        (block_of(k), acc)
    });
    let mut s = vec![vec![0.0; nb]; nb];
    for (bi, acc) in rows {
        for (bj, v) in acc.into_iter().enumerate() {
            s[bi][bj] += v;
        }
    }
    s
}
