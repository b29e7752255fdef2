//! Matrix-valued trajectories `x -> W(floor(dx))` and the exact L2 modulus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::increments::{block_square_sums, expect_regime, floor_dx, regime_grid, regime_scale};
use crate::io::fmt_f64;
use crate::kernels::{Grid, ProcessSpec, Regime};
use crate::sampler::{assemble_wishart_prefix, map_replications, path_factor, sample_rows, PathFactor, WishartSample};

/// Wishart matrices along an index grid, all built from one `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    xgrid: Vec<f64>,
    samples: Vec<WishartSample>,
    regime: Regime,
}

impl Trajectory {
    pub fn xgrid(&self) -> &[f64] {
        &self.xgrid
    }

    pub fn samples(&self) -> &[WishartSample] {
        &self.samples
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Long format `x,i,j,value` over the upper triangle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,i,j,value\n");
        for (x, w) in self.xgrid.iter().zip(&self.samples) {
            for i in 0..w.n() {
                for j in i..w.n() {
                    out.push_str(&format!("{},{i},{j},{}\n", fmt_f64(*x), fmt_f64(w.get(i, j))));
                }
            }
        }
        out
    }
}

fn check_xgrid(d: u64, xgrid: &[f64], bounds: (f64, f64)) -> Result<()> {
    let (a, b) = bounds;
    if !(a > 0.0 && a <= b && b.is_finite()) {
        return Err(LabError::domain(format!("need 0 < a <= b, got [{a}, {b}]")));
    }
    if xgrid.is_empty() {
        return Err(LabError::domain("x grid is empty"));
    }
    if xgrid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::domain("x grid must be strictly increasing"));
    }
    if xgrid.iter().any(|&x| !(x >= a && x <= b)) {
        return Err(LabError::domain(format!("x grid leaves [{a}, {b}]")));
    }
    if d < 2 {
        return Err(LabError::domain(format!("need d >= 2, got {d}")));
    }
    if floor_dx(d, xgrid[0]) < 2 {
        return Err(LabError::domain("floor(d min x) must be >= 2"));
    }
    Ok(())
}

/// Trajectory from one draw of `Y` on a factor with `floor(d max x)` increments.
pub fn sample_trajectory_with<R: Rng + ?Sized>(
    factor: &PathFactor,
    n: usize,
    d: u64,
    xgrid: &[f64],
    bounds: (f64, f64),
    regime: Regime,
    rng: &mut R,
) -> Result<Trajectory> {
    check_xgrid(d, xgrid, bounds)?;
    expect_regime(factor.spec(), regime)?;
    let top = floor_dx(d, *xgrid.last().unwrap());
    if factor.increments() != top {
        return Err(LabError::contract(format!(
            "factor has {} increments, grid needs {top}",
            factor.increments()
        )));
    }
    let y = sample_rows(factor, n, rng);
    build_trajectory(factor, &y, d, xgrid, regime)
}

fn build_trajectory(
    factor: &PathFactor,
    y: &crate::sampler::IncrementSample,
    d: u64,
    xgrid: &[f64],
    regime: Regime,
) -> Result<Trajectory> {
    let alpha = factor.spec().alpha();
    let samples = xgrid
        .iter()
        .map(|&x| assemble_wishart_prefix(y, floor_dx(d, x), d, regime, alpha))
        .collect::<Result<_>>()?;
    Ok(Trajectory { xgrid: xgrid.to_vec(), samples, regime })
}

/// Trajectory on the unit grid; the factor is computed for this call.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &ProcessSpec,
    n: usize,
    d: u64,
    xgrid: &[f64],
    bounds: (f64, f64),
    regime: Regime,
    rng: &mut R,
) -> Result<Trajectory> {
    check_xgrid(d, xgrid, bounds)?;
    let factor = path_factor(spec, floor_dx(d, *xgrid.last().unwrap()), Grid::Unit)?;
    sample_trajectory_with(&factor, n, d, xgrid, bounds, regime, rng)
}

/// Trajectories for replications `0..replications`, replication `r` drawn
/// from stream `(seed, r)`.
pub fn sample_trajectories(
    factor: &PathFactor,
    n: usize,
    d: u64,
    xgrid: &[f64],
    bounds: (f64, f64),
    regime: Regime,
    seed: u64,
    replications: usize,
) -> Result<Vec<Trajectory>> {
    check_xgrid(d, xgrid, bounds)?;
    expect_regime(factor.spec(), regime)?;
    map_replications(factor, n, seed, replications, |_, y| build_trajectory(factor, y, d, xgrid, regime))
        .into_iter()
        .collect()
}

/// One row of the modulus table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub y: f64,
    pub x: f64,
    pub gap: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusTable {
    pub d: u64,
    pub regime: Regime,
    pub rows: Vec<ModulusRow>,
}

impl ModulusTable {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// `y,x,gap,ratio` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,x,gap,ratio\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", fmt_f64(r.y), fmt_f64(r.x), fmt_f64(r.gap), fmt_f64(r.ratio)));
        }
        out
    }
}

/// Exact `E[(W_12(floor(dx)) - W_12(floor(dy)))^2]` and its ratio to
/// `x - y` for every pair `y < x` of the grid.
pub fn l2_modulus_table(spec: &ProcessSpec, d: u64, xgrid: &[f64], regime: Regime) -> Result<ModulusTable> {
    if xgrid.len() < 2 {
        return Err(LabError::domain("need at least 2 grid points"));
    }
    if xgrid.windows(2).any(|w| w[1] <= w[0]) || !(xgrid[0] > 0.0) {
        return Err(LabError::domain("x grid must be positive and strictly increasing"));
    }
    if d < 2 {
        return Err(LabError::domain(format!("need d >= 2, got {d}")));
    }
    expect_regime(spec, regime)?;
    let floors: Vec<usize> = xgrid.iter().map(|&x| floor_dx(d, x)).collect();
    if floors[0] < 1 {
        return Err(LabError::domain("floor(d min x) must be >= 1"));
    }
    let scale = regime_scale(regime, d, spec.alpha());
    let blocks = if floors[0] == *floors.last().unwrap() {
        vec![vec![0.0; floors.len() - 1]; floors.len() - 1]
    } else {
        block_square_sums(spec, regime_grid(regime, d), &floors)
    };
    let mut rows = Vec::new();
    for a in 0..xgrid.len() {
        for b in a + 1..xgrid.len() {
            let mut sum = 0.0;
            for i in a..b {
                for j in i..b {
                    sum += blocks[i][j];
                }
            }
            let gap = scale * sum;
            rows.push(ModulusRow { y: xgrid[a], x: xgrid[b], gap, ratio: gap / (xgrid[b] - xgrid[a]) });
        }
    }
    Ok(ModulusTable { d, regime, rows })
}
