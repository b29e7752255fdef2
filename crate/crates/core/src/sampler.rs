//! Exact Gaussian path sampling, the increment matrix `Y` and the three
//! regime-normalized Wishart matrices, plus GOE reference draws.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::increments::floor_dx;
use crate::io::fmt_f64;
use crate::kernels::{derive_regime_params, regime_for_alpha, Grid, GridCovariance, ProcessSpec, Regime};
use crate::linalg::{cholesky, dot, min_eigenvalue, PackedLower};

/// Relative jitter of the first retry; later retries grow it tenfold.
const JITTER_START: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;
/// Standard normal vectors pushed through the factor in one pass.
const BATCH_VECTORS: usize = 64;

/// Deterministic RNG for replication `r`: the ChaCha20 stream `r` of the key
/// derived from `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Cholesky factor of the covariance of `(X_{t_1}, ..., X_{t_{D+1}})`.
#[derive(Debug, Clone)]
pub struct PathFactor {
    spec: ProcessSpec,
    grid: Grid,
    factor: PackedLower,
    jitter: f64,
    inc_sd: Vec<f64>,
}

impl PathFactor {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Number of increments `D`; the factor has dimension `D + 1`.
    pub fn increments(&self) -> usize {
        self.inc_sd.len()
    }

    pub fn factor(&self) -> &PackedLower {
        &self.factor
    }

    /// Absolute diagonal jitter added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Exact standard deviations of the `D` increments.
    pub fn increment_sd(&self) -> &[f64] {
        &self.inc_sd
    }
}

pub fn path_factor(spec: &ProcessSpec, dcols: usize, grid: Grid) -> Result<PathFactor> {
    if dcols < 2 {
        return Err(LabError::domain(format!("need D >= 2, got {dcols}")));
    }
    if let Grid::Fine(0) = grid {
        return Err(LabError::domain("fine grid needs d >= 1"));
    }
    let dim = dcols + 1;
    let gc = GridCovariance::new(spec, grid, dim);
    let max_diag = (1..=dim).map(|i| gc.get(i, i)).fold(0.0, f64::max);
    let inc_sd = (1..=dcols)
        .map(|k| (gc.get(k + 1, k + 1) - 2.0 * gc.get(k, k + 1) + gc.get(k, k)).sqrt())
        .collect();
    let mut jitter = 0.0;
    for attempt in 0..=JITTER_RETRIES {
        if attempt > 0 {
            jitter = JITTER_START * 10f64.powi(attempt as i32 - 1) * max_diag;
        }
        let j = jitter;
        if let Ok(factor) = cholesky(dim, |a, b| gc.get(a + 1, b + 1) + if a == b { j } else { 0.0 }) {
            return Ok(PathFactor { spec: *spec, grid, factor, jitter, inc_sd });
        }
    }
    let cov = DMatrix::from_fn(dim, dim, |a, b| gc.get(a + 1, b + 1));
    Err(LabError::Numeric {
        message: format!("grid covariance of dimension {dim} is not positive definite after jitter {jitter:e}"),
        min_eigenvalue: min_eigenvalue(&cov),
    })
}

/// Row-major `n x D` matrix of normalized increments.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSample {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl IncrementSample {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LabError::domain("data length does not match shape"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn draw_normals<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Turns paths into normalized increments.
fn paths_to_increments(factor: &PathFactor, paths: &[Vec<f64>]) -> IncrementSample {
    let cols = factor.increments();
    let mut data = Vec::with_capacity(paths.len() * cols);
    for p in paths {
        data.extend(p.windows(2).zip(&factor.inc_sd).map(|(w, sd)| (w[1] - w[0]) / sd));
    }
    IncrementSample { rows: paths.len(), cols, data }
}

/// Draws `n` independent rows of normalized increments.
pub fn sample_rows<R: Rng + ?Sized>(factor: &PathFactor, n: usize, rng: &mut R) -> IncrementSample {
    let dim = factor.increments() + 1;
    let zs: Vec<Vec<f64>> = (0..n).map(|_| draw_normals(rng, dim)).collect();
    let mut paths = vec![vec![0.0; dim]; n];
    factor.factor.mul_vecs(&zs, &mut paths);
    paths_to_increments(factor, &paths)
}

/// Runs `f(r, Y_r)` for replications `0..replications`, where `Y_r` has `n`
/// rows drawn from [`replication_rng`]`(seed, r)`. Replications are batched
/// so the factor is streamed once per batch; results are returned in
/// replication order and do not depend on batching or thread count.
pub fn map_replications<T, F>(factor: &PathFactor, n: usize, seed: u64, replications: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &IncrementSample) -> T + Sync,
{
    let dim = factor.increments() + 1;
    let per_batch = (BATCH_VECTORS / n.max(1)).max(1);
    let starts: Vec<usize> = (0..replications).step_by(per_batch).collect();
    let batches: Vec<Vec<T>> = starts
        .into_par_iter()
        .map(|r0| {
            let r1 = (r0 + per_batch).min(replications);
            let mut zs = Vec::with_capacity((r1 - r0) * n);
            for r in r0..r1 {
                let mut rng = replication_rng(seed, r as u64);
                zs.extend((0..n).map(|_| draw_normals(&mut rng, dim)));
            }
            let mut paths = vec![vec![0.0; dim]; zs.len()];
            factor.factor.mul_vecs(&zs, &mut paths);
            (r0..r1)
                .map(|r| {
                    let start = (r - r0) * n;
                    f(r, &paths_to_increments(factor, &paths[start..start + n]))
                })
                .collect()
        })
        .collect();
    batches.into_iter().flatten().collect()
}

/// Symmetric `n x n` matrix with its regime and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartSample {
    n: usize,
    data: Vec<f64>,
    regime: Regime,
    seed: u64,
    replication: u64,
}

const MAGIC: &[u8; 4] = b"WSH1";

impl WishartSample {
    /// Builds a sample from the upper triangle of `entry`, mirroring it.
    pub fn from_upper(n: usize, regime: Regime, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = entry(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data, regime, seed: 0, replication: 0 }
    }

    pub fn with_provenance(mut self, seed: u64, replication: u64) -> Self {
        self.seed = seed;
        self.replication = replication;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Row-major entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replication(&self) -> u64 {
        self.replication
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Upper triangle as `i,j,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,value\n");
        for i in 0..self.n {
            for j in i..self.n {
                out.push_str(&format!("{i},{j},{}\n", fmt_f64(self.get(i, j))));
            }
        }
        out
    }

    /// `WSH1` magic, `n` and regime code as little-endian `u32`, four
    /// reserved zero bytes, then `n^2` little-endian `f64` in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.regime.code().to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| LabError::domain(format!("malformed WSH1 dump: {m}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let n = word(4) as usize;
        let regime = Regime::from_code(word(8)).ok_or_else(|| bad("regime code"))?;
        if bytes.len() != 16 + 8 * n * n {
            return Err(bad("length"));
        }
        let data: Vec<f64> =
            bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(bad("matrix is not symmetric"));
                }
            }
        }
        Ok(Self { n, data, regime, seed: 0, replication: 0 })
    }
}

/// Factor `c` in `W_ij = c sum_k (Y_ik Y_jk - 1_{i=j})`.
pub fn wishart_scale(regime: Regime, d: u64, alpha: f64) -> f64 {
    let df = d as f64;
    match regime {
        Regime::Central => 1.0 / df.sqrt(),
        Regime::Log => 1.0 / (df * df.ln()).sqrt(),
        Regime::Noncentral => df.powf(1.0 - alpha),
    }
}

/// Regime-normalized recentred Wishart matrix of the rows of `y`.
pub fn assemble_wishart(y: &IncrementSample, d: u64, regime: Regime, alpha: f64) -> Result<WishartSample> {
    assemble_wishart_prefix(y, y.cols(), d, regime, alpha)
}

/// [`assemble_wishart`] restricted to the first `cols` columns of `y`.
pub fn assemble_wishart_prefix(
    y: &IncrementSample,
    cols: usize,
    d: u64,
    regime: Regime,
    alpha: f64,
) -> Result<WishartSample> {
    if d < 2 {
        return Err(LabError::domain(format!("need d >= 2, got {d}")));
    }
    if cols > y.cols() {
        return Err(LabError::domain(format!("prefix of {cols} columns exceeds {}", y.cols())));
    }
    let expected = regime_for_alpha(alpha)?;
    if expected != regime {
        return Err(LabError::contract(format!("regime {regime} does not match alpha = {alpha} ({expected})")));
    }
    let c = wishart_scale(regime, d, alpha);
    let dcols = cols as f64;
    Ok(WishartSample::from_upper(y.rows(), regime, |i, j| {
        let s = dot(&y.row(i)[..cols], &y.row(j)[..cols]);
        c * if i == j { s - dcols } else { s }
    }))
}

/// GOE matrix: off-diagonal `N(0, sigma2)`, diagonal `N(0, 2 sigma2)`.
/// Entries are drawn row by row over the upper triangle.
pub fn sample_goe<R: Rng + ?Sized>(n: usize, sigma2: f64, rng: &mut R) -> Result<WishartSample> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(LabError::domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let sd = sigma2.sqrt();
    let mut upper = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let z: f64 = rng.sample(StandardNormal);
            upper.push(if i == j { z * sd * std::f64::consts::SQRT_2 } else { z * sd });
        }
    }
    let mut it = upper.into_iter();
    Ok(WishartSample::from_upper(n, Regime::Central, |_, _| it.next().unwrap()))
}

/// Parameters of a Monte Carlo Wishart ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub d: u64,
    pub x: f64,
    pub regime: Regime,
    pub seed: u64,
    pub replications: usize,
    /// Sample non-central ensembles on the `1/d` grid instead of the unit grid.
    #[serde(default)]
    pub force_fine: bool,
}

impl EnsembleConfig {
    /// Number of increments `floor(d x)`.
    pub fn increments(&self) -> usize {
        floor_dx(self.d, self.x)
    }

    pub fn grid(&self) -> Grid {
        if self.regime == Regime::Noncentral && self.force_fine {
            Grid::Fine(self.d)
        } else {
            Grid::Unit
        }
    }

    pub fn validate(&self, spec: &ProcessSpec) -> Result<()> {
        let mut errs = Vec::new();
        if self.n < 1 {
            errs.push("n must be >= 1".to_string());
        }
        if self.d < 2 {
            errs.push("d must be >= 2".to_string());
        }
        if !(self.x > 0.0) || !self.x.is_finite() {
            errs.push("x must be positive".to_string());
        } else if self.increments() < 2 {
            errs.push("floor(d x) must be >= 2".to_string());
        }
        if self.replications < 1 {
            errs.push("replications must be >= 1".to_string());
        }
        match derive_regime_params(spec) {
            Ok(p) if p.regime != self.regime => {
                errs.push(format!("regime {} does not match alpha = {} ({})", self.regime, p.alpha, p.regime))
            }
            Ok(_) => {}
            Err(e) => errs.push(e.to_string()),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(errs))
        }
    }
}

/// Samples the ensemble with a freshly computed factor.
pub fn sample_ensemble(spec: &ProcessSpec, config: &EnsembleConfig) -> Result<Vec<WishartSample>> {
    config.validate(spec)?;
    let factor = path_factor(spec, config.increments(), config.grid())?;
    sample_ensemble_with(&factor, config)
}

/// Samples the ensemble reusing `factor`, which must match the config.
pub fn sample_ensemble_with(factor: &PathFactor, config: &EnsembleConfig) -> Result<Vec<WishartSample>> {
    config.validate(factor.spec())?;
    if factor.increments() != config.increments() || factor.grid() != config.grid() {
        return Err(LabError::contract("path factor does not match the ensemble configuration"));
    }
    let alpha = factor.spec().alpha();
    map_replications(factor, config.n, config.seed, config.replications, |r, y| {
        assemble_wishart(y, config.d, config.regime, alpha).map(|w| w.with_provenance(config.seed, r as u64))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(pf: &PathFactor) -> DMatrix<f64> {
        let n = pf.increments() + 1;
        let l = DMatrix::from_fn(n, n, |i, j| pf.factor().get(i, j));
        &l * l.transpose()
    }

    #[test]
    fn brownian_factor_reproduces_min() {
        let bm = ProcessSpec::fbm(0.5).unwrap();
        let pf = path_factor(&bm, 3, Grid::Unit).unwrap();
        let c = reconstruct(&pf);
        for i in 0..4 {
            for j in 0..4 {
                assert!((c[(i, j)] - (i.min(j) + 1) as f64).abs() < 1e-12);
            }
        }
        assert_eq!(pf.jitter(), 0.0);
        assert!(pf.increment_sd().iter().all(|&s| (s - 1.0).abs() < 1e-15));
    }

    #[test]
    fn reconstruction_residual() {
        for spec in [ProcessSpec::bifbm(0.4, 0.6).unwrap(), ProcessSpec::subfbm(0.8).unwrap()] {
            let pf = path_factor(&spec, 60, Grid::Fine(40)).unwrap();
            let c = reconstruct(&pf);
            let gc = GridCovariance::new(&spec, Grid::Fine(40), 61);
            for i in 0..61 {
                for j in 0..61 {
                    assert!((c[(i, j)] - gc.get(i + 1, j + 1)).abs() < 1e-8 * 3.0);
                }
            }
        }
    }

    #[test]
    fn empty_rows_consume_nothing() {
        let bm = ProcessSpec::fbm(0.5).unwrap();
        let pf = path_factor(&bm, 4, Grid::Unit).unwrap();
        let mut a = replication_rng(1, 0);
        let b = a.clone();
        let y = sample_rows(&pf, 0, &mut a);
        assert_eq!(y.rows(), 0);
        assert_eq!(a, b);
    }

    #[test]
    fn all_ones_example() {
        let y = IncrementSample::from_rows(2, 4, vec![1.0; 8]).unwrap();
        let w = assemble_wishart(&y, 4, Regime::Central, 1.0).unwrap();
        assert_eq!(w.get(0, 1), 2.0);
        assert_eq!(w.get(1, 0), 2.0);
        assert_eq!(w.get(0, 0), 0.0);
        assert!(matches!(assemble_wishart(&y, 4, Regime::Log, 1.0), Err(LabError::Contract(_))));
    }

    #[test]
    fn binary_round_trip() {
        let w = WishartSample::from_upper(3, Regime::Noncentral, |i, j| (i * 10 + j) as f64 - 0.25);
        let bytes = w.to_bytes();
        assert_eq!(&bytes[..4], b"WSH1");
        assert_eq!(bytes.len(), 16 + 72);
        assert_eq!(WishartSample::from_bytes(&bytes).unwrap(), w);
        assert!(WishartSample::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn goe_single_entry_and_determinism() {
        let a = sample_goe(1, 1.0, &mut replication_rng(5, 0)).unwrap();
        let z: f64 = replication_rng(5, 0).sample(StandardNormal);
        assert_eq!(a.get(0, 0), z * std::f64::consts::SQRT_2);
        let b = sample_goe(6, 0.5, &mut replication_rng(9, 2)).unwrap();
        let c = sample_goe(6, 0.5, &mut replication_rng(9, 2)).unwrap();
        assert_eq!(b, c);
        assert!(sample_goe(2, 0.0, &mut replication_rng(0, 0)).is_err());
    }

    #[test]
    fn single_replication_matches_direct_assembly() {
        let s = ProcessSpec::fbm(0.6).unwrap();
        let cfg = EnsembleConfig {
            n: 3,
            d: 50,
            x: 1.0,
            regime: Regime::Central,
            seed: 11,
            replications: 1,
            force_fine: false,
        };
        let ens = sample_ensemble(&s, &cfg).unwrap();
        let pf = path_factor(&s, 50, Grid::Unit).unwrap();
        let y = sample_rows(&pf, 3, &mut replication_rng(11, 0));
        let w = assemble_wishart(&y, 50, Regime::Central, s.alpha()).unwrap().with_provenance(11, 0);
        assert_eq!(ens[0], w);
    }

    #[test]
    fn batching_does_not_change_results() {
        let s = ProcessSpec::subfbm(0.7).unwrap();
        let pf = path_factor(&s, 30, Grid::Unit).unwrap();
        let batched = map_replications(&pf, 2, 3, 70, |_, y| y.clone());
        for (r, y) in batched.iter().enumerate() {
            let direct = sample_rows(&pf, 2, &mut replication_rng(3, r as u64));
            assert_eq!(&direct, y);
        }
    }

    #[test]
    fn config_errors_are_aggregated() {
        let s = ProcessSpec::fbm(0.6).unwrap();
        let cfg = EnsembleConfig {
            n: 0,
            d: 1,
            x: 1.0,
            regime: Regime::Log,
            seed: 0,
            replications: 0,
            force_fine: false,
        };
        match cfg.validate(&s) {
            Err(LabError::Config(e)) => assert_eq!(e.len(), 5),
            other => panic!("{other:?}"),
        }
    }
}
