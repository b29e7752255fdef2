//! Covariance kernels of the supported self-similar Gaussian processes.
//!
//! Three processes are supported: fractional Brownian motion, bi-fractional
//! Brownian motion and sub-fractional Brownian motion. Each one is described
//! by a [`ProcessSpec`] which also carries the regime parameters
//! `(alpha, beta, nu, lambda)` of the scaling function
//! `phi(x) = E[X_1 X_x] = -lambda (x - 1)^alpha + psi(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::stats::{fit_power_law, least_squares};

/// Tolerance used to decide that `alpha` sits exactly on the 3/2 boundary.
pub const LOG_REGIME_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProcessKind {
    Fbm,
    Bifbm,
    Subfbm,
}

impl std::fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProcessKind::Fbm => "FBM",
            ProcessKind::Bifbm => "BIFBM",
            ProcessKind::Subfbm => "SUBFBM",
        };
        f.write_str(s)
    }
}

/// Asymptotic regime selected by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    /// `alpha < 3/2`: GOE limit under the `1/sqrt(d)` normalization.
    Central,
    /// `alpha = 3/2`: GOE limit under the `1/sqrt(d ln d)` normalization.
    Log,
    /// `3/2 < alpha < 2`: Rosenblatt-Wishart limit under `d^(1-alpha)`.
    Noncentral,
}

impl Regime {
    pub fn code(self) -> u32 {
        match self {
            Regime::Central => 0,
            Regime::Log => 1,
            Regime::Noncentral => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Regime::Central),
            1 => Some(Regime::Log),
            2 => Some(Regime::Noncentral),
            _ => None,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Central => "CENTRAL",
            Regime::Log => "LOG",
            Regime::Noncentral => "NONCENTRAL",
        };
        f.write_str(s)
    }
}

/// A member of the supported process family together with its derived
/// regime parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSpec {
    kind: ProcessKind,
    hurst: f64,
    bifractional: f64,
    alpha: f64,
    beta: f64,
    nu: f64,
    lambda: f64,
}

/// Regime parameters as returned by [`derive_regime_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub lambda: f64,
    pub regime: Regime,
}

impl ProcessSpec {
    /// Builds a spec. `bifractional` is only read for [`ProcessKind::Bifbm`].
    pub fn new(kind: ProcessKind, hurst: f64, bifractional: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(LabError::domain(format!("hurst must lie in (0,1), got {hurst}")));
        }
        let (k, alpha, beta, nu, lambda) = match kind {
            ProcessKind::Fbm => (1.0, 2.0 * hurst, hurst, 2.0 - 2.0 * hurst, 0.5),
            ProcessKind::Subfbm => (1.0, 2.0 * hurst, hurst, 2.0 - 2.0 * hurst, 0.5),
            ProcessKind::Bifbm => {
                let k = bifractional;
                if !(k > 0.0 && k <= 1.0) {
                    return Err(LabError::domain(format!("bifractional K must lie in (0,1], got {k}")));
                }
                let hk = hurst * k;
                let nu = (1.0 + 2.0 * hurst - 2.0 * hk).min(2.0 - 2.0 * hk);
                (k, 2.0 * hk, hk, nu, 2f64.powf(-k))
            }
        };
        Ok(Self { kind, hurst, bifractional: k, alpha, beta, nu, lambda })
    }

    pub fn fbm(hurst: f64) -> Result<Self> {
        Self::new(ProcessKind::Fbm, hurst, 1.0)
    }

    pub fn bifbm(hurst: f64, k: f64) -> Result<Self> {
        Self::new(ProcessKind::Bifbm, hurst, k)
    }

    pub fn subfbm(hurst: f64) -> Result<Self> {
        Self::new(ProcessKind::Subfbm, hurst, 1.0)
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// The bi-fractional index `K` (1 for the other kinds).
    pub fn bifractional(&self) -> f64 {
        self.bifractional
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `E[X_s X_t]` without argument checks. Callers guarantee `s, t >= 0`.
    #[inline]
    pub(crate) fn cov(&self, s: f64, t: f64) -> f64 {
        let p = 2.0 * self.hurst;
        match self.kind {
            ProcessKind::Fbm => 0.5 * (s.powf(p) + t.powf(p) - (t - s).abs().powf(p)),
            ProcessKind::Subfbm => {
                s.powf(p) + t.powf(p) - 0.5 * ((s + t).powf(p) + (t - s).abs().powf(p))
            }
            ProcessKind::Bifbm => {
                self.lambda * ((s.powf(p) + t.powf(p)).powf(self.bifractional) - (t - s).abs().powf(self.alpha))
            }
        }
    }

    /// Analytic `d^2/(ds dt) E[X_s X_t]` for `s != t`, without checks.
    #[inline]
    pub(crate) fn mixed(&self, s: f64, t: f64) -> f64 {
        let h = self.hurst;
        let u = (t - s).abs();
        match self.kind {
            ProcessKind::Fbm => h * (2.0 * h - 1.0) * u.powf(2.0 * h - 2.0),
            ProcessKind::Subfbm => h * (2.0 * h - 1.0) * (u.powf(2.0 * h - 2.0) - (s + t).powf(2.0 * h - 2.0)),
            ProcessKind::Bifbm => {
                let k = self.bifractional;
                let p = 2.0 * h;
                let q = self.alpha;
                let sum = s.powf(p) + t.powf(p);
                let smooth = if k == 1.0 {
                    0.0
                } else {
                    p * p * k * (k - 1.0) * sum.powf(k - 2.0) * (s * t).powf(p - 1.0)
                };
                self.lambda * (smooth + q * (q - 1.0) * u.powf(q - 2.0))
            }
        }
    }
}

/// `E[X_s X_t]` for `s, t > 0`.
pub fn covariance(spec: &ProcessSpec, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) || !s.is_finite() || !t.is_finite() {
        return Err(LabError::domain(format!("times must be positive, got s={s}, t={t}")));
    }
    Ok(spec.cov(s, t))
}

/// Analytic mixed partial derivative `d^2/(ds dt) E[X_s X_t]`.
///
/// The kernels are not differentiable across the diagonal, so `s == t` is an
/// error rather than a limit.
pub fn mixed_partial(spec: &ProcessSpec, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) || !s.is_finite() || !t.is_finite() {
        return Err(LabError::domain(format!("times must be positive, got s={s}, t={t}")));
    }
    if s == t {
        return Err(LabError::Singularity(s));
    }
    Ok(spec.mixed(s, t))
}

/// Central finite-difference estimate of the mixed partial. Testing aid for
/// [`mixed_partial`]; requires `|s - t| > 2 step`.
pub fn mixed_partial_fd(spec: &ProcessSpec, s: f64, t: f64, step: f64) -> Result<f64> {
    if (s - t).abs() <= 2.0 * step || s - step <= 0.0 || t - step <= 0.0 {
        return Err(LabError::domain("finite-difference stencil crosses the diagonal or time zero"));
    }
    let c = |a: f64, b: f64| spec.cov(a, b);
    let v = c(s + step, t + step) - c(s + step, t - step) - c(s - step, t + step) + c(s - step, t - step);
    Ok(v / (4.0 * step * step))
}

/// Regime parameters and the regime selected by `alpha`.
pub fn derive_regime_params(spec: &ProcessSpec) -> Result<RegimeParams> {
    let alpha = spec.alpha();
    let regime = regime_for_alpha(alpha)?;
    Ok(RegimeParams { alpha, beta: spec.beta(), nu: spec.nu(), lambda: spec.lambda(), regime })
}

pub fn regime_for_alpha(alpha: f64) -> Result<Regime> {
    if !(alpha > 0.0) {
        return Err(LabError::domain(format!("alpha must be positive, got {alpha}")));
    }
    if alpha >= 2.0 {
        return Err(LabError::UnsupportedRegime(alpha));
    }
    Ok(if (alpha - 1.5).abs() <= LOG_REGIME_TOLERANCE {
        Regime::Log
    } else if alpha < 1.5 {
        Regime::Central
    } else {
        Regime::Noncentral
    })
}

/// Numerical check of the decay hypotheses on `phi(x) = E[X_1 X_x]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Fitted log-log slope of `|phi'(x)|` against `x - 1`.
    pub phi1_exponent: f64,
    /// `-nu` when `alpha < 1`, else `alpha - 2`.
    pub phi1_target: f64,
    pub phi1_r2: f64,
    /// Fitted log-log slope of `|phi''(x)|` against `x - 1`.
    pub phi2_exponent: f64,
    /// `-nu - 1` when `alpha < 1`, else `alpha - 3`.
    pub phi2_target: f64,
    pub phi2_r2: f64,
    /// `lambda` recovered from the small-lag increment variance.
    pub lambda_fitted: f64,
    pub lambda_declared: f64,
}

/// Differentiates `phi` numerically on `xgrid`, fits decay exponents and
/// recovers `lambda` from `E[(X_{1+h} - X_1)^2] = 2 lambda h^alpha + ...`.
///
/// With `psi` smooth and `psi'(1) = beta psi(1)` whenever `alpha >= 1`, the
/// increment variance is `2 lambda h^alpha + c1 h + c2 h^2 + ...` with
/// `c1 = 0` for `alpha >= 1`; `lambda` is the intercept of a regression of
/// `V(h) / (2 h^alpha)` on the correction powers.
pub fn hypothesis_diagnostics(spec: &ProcessSpec, xgrid: &[f64]) -> Result<HypothesisReport> {
    if xgrid.len() < 8 {
        return Err(LabError::Fit(format!("need at least 8 grid points, got {}", xgrid.len())));
    }
    if xgrid.iter().any(|&x| !(x >= 2.0) || !x.is_finite()) {
        return Err(LabError::Fit("grid points must be finite and >= 2".into()));
    }
    let lo = xgrid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xgrid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi / lo < 10.0 {
        return Err(LabError::Fit("grid must span at least a decade".into()));
    }
    let mut grid = xgrid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let phi = |x: f64| spec.cov(1.0, x);
    let mut d1 = Vec::with_capacity(grid.len());
    let mut d2 = Vec::with_capacity(grid.len());
    for &x in &grid {
        // Five-point stencils, step relative to the distance from the kink at x = 1.
        let h = 1e-2 * (x - 1.0);
        let (fm2, fm1, f0, fp1, fp2) = (phi(x - 2.0 * h), phi(x - h), phi(x), phi(x + h), phi(x + 2.0 * h));
        let first = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
        let second = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h);
        d1.push((x - 1.0, first.abs()));
        d2.push((x - 1.0, second.abs()));
    }
    if d1.iter().chain(d2.iter()).any(|&(_, v)| !(v > 0.0)) {
        return Err(LabError::Fit("derivative vanishes on the grid; decay exponent undefined".into()));
    }
    let fit1 = fit_power_law(&d1)?;
    let fit2 = fit_power_law(&d2)?;

    let alpha = spec.alpha();
    let (phi1_target, phi2_target) = if alpha < 1.0 {
        (-spec.nu(), -spec.nu() - 1.0)
    } else {
        (alpha - 2.0, alpha - 3.0)
    };

    Ok(HypothesisReport {
        phi1_exponent: fit1.slope,
        phi1_target,
        phi1_r2: fit1.r2,
        phi2_exponent: fit2.slope,
        phi2_target,
        phi2_r2: fit2.r2,
        lambda_fitted: fit_lambda(spec),
        lambda_declared: spec.lambda(),
    })
}

fn fit_lambda(spec: &ProcessSpec) -> f64 {
    let alpha = spec.alpha();
    let beta = spec.beta();
    let phi1 = spec.cov(1.0, 1.0);
    let use_linear = alpha < 1.0 - 1e-6;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..25 {
        let h = 10f64.powf(-2.0 - 0.125 * i as f64);
        let v = ((1.0 + h).powf(2.0 * beta) + 1.0) * phi1 - 2.0 * spec.cov(1.0, 1.0 + h);
        let mut row = vec![1.0];
        if use_linear {
            row.push(h.powf(1.0 - alpha));
        }
        row.push(h.powf(2.0 - alpha));
        rows.push(row);
        rhs.push(v / (2.0 * h.powf(alpha)));
    }
    match least_squares(&rows, &rhs) {
        Some(coef) => coef[0],
        None => f64::NAN,
    }
}

/// Time grid on which increments are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "d", rename_all = "UPPERCASE")]
pub enum Grid {
    /// Times `1, 2, ..., D + 1`.
    Unit,
    /// Times `1/d, 2/d, ..., (D + 1)/d`.
    Fine(u64),
}

impl Grid {
    /// Time of the `i`-th grid point, `i` counted from 1.
    pub fn time(&self, i: usize) -> f64 {
        match *self {
            Grid::Unit => i as f64,
            Grid::Fine(d) => i as f64 / d as f64,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Grid::Unit => "UNIT",
            Grid::Fine(_) => "FINE",
        }
    }

    /// Spacing denominator, 1 for the unit grid.
    pub fn denominator(&self) -> u64 {
        match *self {
            Grid::Unit => 1,
            Grid::Fine(d) => d,
        }
    }
}

/// Covariance of `X` over the grid points `t_1, ..., t_npoints`.
///
/// On the unit grid every power of an integer time is looked up in a table,
/// producing bit-identical values to [`covariance`] at a fraction of the cost.
pub(crate) struct GridCovariance {
    spec: ProcessSpec,
    grid: Grid,
    /// `m^(2H)` for `m = 0..=2 npoints` (unit grid only).
    pow_h: Vec<f64>,
    /// `m^alpha` for bi-fBm (unit grid only).
    pow_alpha: Vec<f64>,
}

impl GridCovariance {
    pub fn new(spec: &ProcessSpec, grid: Grid, npoints: usize) -> Self {
        let (pow_h, pow_alpha) = match grid {
            Grid::Unit => {
                let p = 2.0 * spec.hurst();
                let table = |e: f64| (0..=2 * npoints).map(|m| (m as f64).powf(e)).collect::<Vec<_>>();
                let ph = table(p);
                let pa = if spec.kind() == ProcessKind::Bifbm { table(spec.alpha()) } else { Vec::new() };
                (ph, pa)
            }
            Grid::Fine(_) => (Vec::new(), Vec::new()),
        };
        Self { spec: *spec, grid, pow_h, pow_alpha }
    }

    /// Covariance between grid points `i` and `j`, counted from 1.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.grid {
            Grid::Fine(_) => self.spec.cov(self.grid.time(i), self.grid.time(j)),
            Grid::Unit => {
                let ph = &self.pow_h;
                let diff = i.abs_diff(j);
                match self.spec.kind {
                    ProcessKind::Fbm => 0.5 * (ph[i] + ph[j] - ph[diff]),
                    ProcessKind::Subfbm => ph[i] + ph[j] - 0.5 * (ph[i + j] + ph[diff]),
                    ProcessKind::Bifbm => {
                        self.spec.lambda * ((ph[i] + ph[j]).powf(self.spec.bifractional) - self.pow_alpha[diff])
                    }
                }
            }
        }
    }
}
