//! Distribution distances, moment estimators and power-law rate fits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::io::fmt_f64;

/// Least-squares fit of `log value = intercept + slope * log d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl RateFit {
    /// CSV with header `d,value,slope,intercept,r2`, one row per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,value,slope,intercept,r2\n");
        for &(d, v) in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(d),
                fmt_f64(v),
                fmt_f64(self.slope),
                fmt_f64(self.intercept),
                fmt_f64(self.r2)
            ));
        }
        out
    }
}

pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(LabError::Fit(format!("need at least 3 points, got {}", pairs.len())));
    }
    for w in pairs.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(LabError::domain("abscissae must be strictly increasing"));
        }
    }
    if let Some(&(d, v)) = pairs.iter().find(|&&(d, v)| !(d > 0.0) || !(v > 0.0) || !v.is_finite()) {
        return Err(LabError::domain(format!("power-law fit needs positive finite values, got ({d}, {v})")));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * f64::EPSILON * n { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(RateFit { pairs: pairs.to_vec(), slope, intercept, r2 })
}

/// Ordinary least squares through SVD. Rows are regressors, `None` when the
/// design is rank deficient.
pub(crate) fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let p = rows.first()?.len();
    if m < p {
        return None;
    }
    let a = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-13 {
        return None;
    }
    svd.solve(&b, 0.0).ok().map(|x| x.iter().copied().collect())
}

/// Order-statistics estimate of the 1-Wasserstein distance between two
/// samples. Samples of different sizes are both read off their empirical
/// quantile functions on a common grid of `max(N_a, N_b)` plotting positions.
pub fn wasserstein1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(LabError::domain("empty sample"));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    let m = sa.len().max(sb.len());
    let total: f64 = (0..m)
        .map(|i| (empirical_quantile(&sa, i, m) - empirical_quantile(&sb, i, m)).abs())
        .sum();
    Ok(total / m as f64)
}

/// Value of the sorted sample's quantile function at `(i + 1/2) / m`.
fn empirical_quantile(sorted: &[f64], i: usize, m: usize) -> f64 {
    if sorted.len() == m {
        return sorted[i];
    }
    let n = sorted.len();
    let u = (i as f64 + 0.5) / m as f64;
    let idx = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// W1 distance between a sample and `N(mean, var)`, coupling the order
/// statistics with the Gaussian quantiles at `(i - 1/2) / N`.
pub fn w1_to_gaussian(sample: &[f64], mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(LabError::domain(format!("variance must be positive, got {var}")));
    }
    if sample.is_empty() {
        return Err(LabError::domain("empty sample"));
    }
    let s = sorted(sample);
    let n = s.len();
    let sd = var.sqrt();
    let total: f64 = s
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - (mean + sd * normal_quantile((i as f64 + 0.5) / n as f64))).abs())
        .sum();
    Ok(total / n as f64)
}

/// Standard normal quantile function (Wichura, AS 241, PPND16); relative
/// accuracy about 1e-16 over the open unit interval.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387132872796366608, 133.14166789178437745, 1971.5909503065514427, 13731.693765509461125,
        45921.953931549871457, 67265.770927008700853, 33430.575583588128105, 2509.0809287301226727,
    ];
    const B: [f64; 8] = [
        1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
        21213.794301586595867, 39307.89580009271061, 28729.085735721942674, 5226.495278852545925,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055, 3.64784832476320460504,
        1.27045825245236838258, 0.24178072517745061177, 0.0227238449892691845833, 7.7454501427834140764e-4,
    ];
    const D: [f64; 8] = [
        1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
        0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4, 1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358, 0.29656057182850489123,
        0.026532189526576123093, 0.0012426609473880784386, 2.71155556874348757815e-5, 2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
        7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7, 2.04426310338993978564e-15,
    ];
    fn horner(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * r + k)
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let r0 = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r0.ln()).sqrt();
    let val = if r <= 5.0 {
        horner(&C, r - 1.6) / horner(&D, r - 1.6)
    } else {
        horner(&E, r - 5.0) / horner(&F, r - 5.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cumulants {
    pub mean: f64,
    /// Unbiased (N - 1) variance.
    pub variance: f64,
    /// `m3 / m2^(3/2)` with sample central moments.
    pub skewness: f64,
    /// `m4 / m2^2 - 3` with sample central moments.
    pub excess_kurtosis: f64,
}

pub fn cumulants(sample: &[f64]) -> Result<Cumulants> {
    let n = sample.len();
    if n < 8 {
        return Err(LabError::domain(format!("need at least 8 observations, got {n}")));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let c = x - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    let variance = m2 / (nf - 1.0);
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 > 0.0) {
        return Err(LabError::domain("zero variance: skewness and kurtosis are undefined"));
    }
    Ok(Cumulants { mean, variance, skewness: m3 / m2.powf(1.5), excess_kurtosis: m4 / (m2 * m2) - 3.0 })
}

/// Percentile bootstrap confidence interval for the excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KurtosisInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

pub fn bootstrap_kurtosis_ci(sample: &[f64], resamples: usize, level: f64, seed: u64) -> Result<KurtosisInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LabError::domain(format!("confidence level must lie in (0,1), got {level}")));
    }
    if resamples < 10 {
        return Err(LabError::domain("need at least 10 bootstrap resamples"));
    }
    let estimate = cumulants(sample)?.excess_kurtosis;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = sample.len();
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = sample[rng.random_range(0..n)];
        }
        if let Ok(c) = cumulants(&buf) {
            stats.push(c.excess_kurtosis);
        }
    }
    if stats.len() < resamples / 2 {
        return Err(LabError::domain("bootstrap resamples degenerate"));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let idx = ((q * stats.len() as f64).floor() as usize).min(stats.len() - 1);
        stats[idx]
    };
    Ok(KurtosisInterval { estimate, lower: pick(tail), upper: pick(1.0 - tail), level, resamples })
}

/// Sample Pearson correlation; zero when either side has no spread.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wasserstein_translation() {
        let c = -0.37;
        let w = wasserstein1_empirical(&[0.0, 1.0], &[c, 1.0 + c]).unwrap();
        assert!((w - c.abs()).abs() < 1e-15);
        assert_eq!(wasserstein1_empirical(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(wasserstein1_empirical(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes_use_common_quantile_grid() {
        // {0,1} on a 4-point grid is {0,0,1,1}.
        let w = wasserstein1_empirical(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn quantile_known_values() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-14);
        assert!((normal_quantile(0.025) + 1.959963984540054).abs() < 1e-14);
        assert!((normal_quantile(1e-10) + 6.361340902404056).abs() < 1e-12);
        assert!((normal_quantile(0.8413447460685429) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn exact_quantiles_are_at_zero_distance() {
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|i| normal_quantile((i as f64 + 0.5) / n as f64)).collect();
        assert!(w1_to_gaussian(&s, 0.0, 1.0).unwrap() < 1e-3);
    }

    #[test]
    fn point_mass_against_standard_normal() {
        // E|Z| = sqrt(2/pi).
        let w = w1_to_gaussian(&vec![0.0; 10_000], 0.0, 1.0).unwrap();
        assert!((w - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
        assert!(w1_to_gaussian(&[0.0; 200], 0.0, 0.0).is_err());
    }

    #[test]
    fn two_point_law_cumulants() {
        let s: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = cumulants(&s).unwrap();
        assert!(c.mean.abs() < 1e-15);
        assert!((c.excess_kurtosis + 2.0).abs() < 1e-12);
        assert!(cumulants(&[1.0; 20]).is_err());
        assert!(cumulants(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn power_law_exact_and_constant() {
        let pairs: Vec<(f64, f64)> = [1e2, 1e3, 1e4].iter().map(|&d: &f64| (d, d.powf(-0.5))).collect();
        let f = fit_power_law(&pairs).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let c = fit_power_law(&[(1.0, 2.0), (2.0, 2.0), (5.0, 2.0)]).unwrap();
        assert!(c.slope.abs() < 1e-15);
        assert!(fit_power_law(&[(1.0, 2.0), (2.0, 0.0), (5.0, 2.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 2.0), (2.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(2.0, 2.0), (1.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn rate_fit_csv_header() {
        let f = fit_power_law(&[(1.0, 1.0), (2.0, 0.5), (4.0, 0.25)]).unwrap();
        let csv = f.to_csv();
        assert!(csv.starts_with("d,value,slope,intercept,r2\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
