//! Subcommand implementations. Each writes its artifacts into an output
//! directory; every CSV starts with a provenance comment line and every JSON
//! document with a `provenance` object.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Task};
use crate::error::{LabError, Result};
use crate::functional::{l2_modulus_table, sample_trajectories};
use crate::increments::{
    a_alpha, delta_matrix, floor_dx, quartic_contraction, rate_bound, regime_grid, regime_variance_streamed,
    rho2_limit, rosenblatt_variance, sigma2_extrapolated, sigma2_series,
};
use crate::io::{fmt_f64, provenance_line};
use crate::kernels::{derive_regime_params, hypothesis_diagnostics, Grid, ProcessSpec, Regime};
use crate::sampler::{path_factor, sample_ensemble_with, EnsembleConfig, PathFactor, WishartSample};
use crate::spectra::{esd_moments, moment_distance, semicircle_moment, SpectralSummary};
use crate::stats::{bootstrap_kurtosis_ci, correlation, cumulants, fit_power_law, w1_to_gaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Theory,
    Sample,
    CltCheck,
    Esd,
    Rates,
    Rosenblatt,
    Functional,
}

impl Subcommand {
    pub fn task(self) -> Task {
        match self {
            Subcommand::Theory => Task::Theory,
            Subcommand::Sample => Task::Sample,
            Subcommand::CltCheck => Task::CltCheck,
            Subcommand::Esd => Task::Esd,
            Subcommand::Rates => Task::Rates,
            Subcommand::Rosenblatt => Task::Rosenblatt,
            Subcommand::Functional => Task::Functional,
        }
    }
}

/// Collects artifacts for one run.
struct Artifacts {
    dir: PathBuf,
    header: String,
    provenance: Value,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let p = config.provenance();
        Ok(Self {
            dir: dir.to_path_buf(),
            header: provenance_line(&p.config_hash, p.seed),
            provenance: serde_json::to_value(p).unwrap(),
            written: Vec::new(),
        })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("{}{body}", self.header);
        self.write_bytes(name, text.as_bytes())
    }

    fn json(&mut self, name: &str, body: Value) -> Result<()> {
        let mut out = serde_json::Map::new();
        out.insert("provenance".into(), self.provenance.clone());
        if let Value::Object(map) = body {
            out.extend(map);
        }
        let text = serde_json::to_string_pretty(&Value::Object(out)).unwrap() + "\n";
        self.write_bytes(name, text.as_bytes())
    }
}

fn error_value(e: &LabError) -> Value {
    json!({ "error": e.to_string() })
}

fn or_error<T: serde::Serialize>(r: Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap(),
        Err(e) => error_value(&e),
    }
}

/// Validates `config` for `cmd`, runs it and returns the written files.
pub fn run(cmd: Subcommand, config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    config.validate(cmd.task())?;
    let spec = config.spec()?;
    let mut art = Artifacts::new(out, config)?;
    art.write_bytes("resolved_config.json", config.resolved_json().as_bytes())?;
    match cmd {
        Subcommand::Theory => theory(config, &spec, &mut art)?,
        Subcommand::Sample => sample(config, &spec, &mut art)?,
        Subcommand::CltCheck => clt_check(config, &spec, &mut art)?,
        Subcommand::Esd => esd(config, &spec, &mut art)?,
        Subcommand::Rates => rates(config, &spec, &mut art)?,
        Subcommand::Rosenblatt => rosenblatt(config, &spec, &mut art)?,
        Subcommand::Functional => functional(config, &spec, &mut art)?,
    }
    Ok(art.written)
}

fn process_value(spec: &ProcessSpec) -> Result<Value> {
    Ok(json!({
        "kind": spec.kind(),
        "hurst": spec.hurst(),
        "k": spec.bifractional(),
        "regime_params": derive_regime_params(spec)?,
    }))
}

fn theory(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let g = &config.geometry;
    let params = derive_regime_params(spec)?;
    let regime = params.regime;
    let dcols = floor_dx(g.d, g.x);
    let rv = regime_variance_streamed(spec, g.d, g.x, regime)?;
    let table: Vec<Value> = (0..=config.theory.a_table as i64)
        .map(|m| json!({ "m": m, "value": a_alpha(params.alpha, m) }))
        .collect();
    let contraction = if dcols <= config.theory.delta_max {
        let dm = delta_matrix(spec, dcols, regime_grid(regime, g.d))?;
        art.csv("delta.csv", &dm.to_csv())?;
        json!(quartic_contraction(&dm))
    } else {
        json!({ "skipped": format!("D = {dcols} exceeds theory.delta_max") })
    };
    let extrapolated = if g.d_list.is_empty() {
        Value::Null
    } else {
        or_error(sigma2_extrapolated(spec, g.x, &g.d_list))
    };
    let report = json!({
        "process": process_value(spec)?,
        "d": g.d,
        "x": g.x,
        "n": g.n,
        "increments": dcols,
        "grid": grid_value(regime_grid(regime, g.d)),
        "a_alpha": table,
        "regime_variance": rv,
        "diagonal_variance": 2.0 * rv,
        "sigma2_series": or_error(sigma2_series(params.alpha, g.x, config.theory.series_truncation)),
        "sigma2_extrapolated": extrapolated,
        "rho2_limit": if regime == Regime::Log { json!(rho2_limit(g.x)) } else { Value::Null },
        "quartic_contraction": contraction,
        "rate_bound": or_error(rate_bound(params.alpha, params.nu, g.n as u64, g.d)),
        "rosenblatt_variance": if regime == Regime::Noncentral {
            or_error(rosenblatt_variance(spec, g.x))
        } else {
            Value::Null
        },
        "hypothesis_diagnostics": or_error(hypothesis_diagnostics(spec, &config.theory.diagnostics_xgrid)),
    });
    art.json("theory.json", report)
}

fn ensemble_config(config: &ExperimentConfig, regime: Regime, d: u64) -> EnsembleConfig {
    EnsembleConfig {
        n: config.geometry.n,
        d,
        x: config.geometry.x,
        regime,
        seed: config.run.seed,
        replications: config.run.replications,
        force_fine: config.run.force_fine,
    }
}

fn run_ensemble(spec: &ProcessSpec, ec: &EnsembleConfig) -> Result<(PathFactor, Vec<WishartSample>)> {
    let factor = path_factor(spec, ec.increments(), ec.grid())?;
    let ens = sample_ensemble_with(&factor, ec)?;
    Ok((factor, ens))
}

fn grid_value(grid: Grid) -> Value {
    json!({ "type": grid.label(), "d": grid.denominator() })
}

fn entry(ens: &[WishartSample], i: usize, j: usize) -> Vec<f64> {
    ens.iter().map(|w| w.get(i, j)).collect()
}

fn sample(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let regime = config.regime()?;
    let ec = ensemble_config(config, regime, config.geometry.d);
    let (factor, ens) = run_ensemble(spec, &ec)?;
    let mut csv = String::from("replication,i,j,value\n");
    let mut bin = Vec::new();
    for w in &ens {
        for i in 0..w.n() {
            for j in i..w.n() {
                csv.push_str(&format!("{},{i},{j},{}\n", w.replication(), fmt_f64(w.get(i, j))));
            }
        }
        bin.extend_from_slice(&w.to_bytes());
    }
    art.csv("ensemble.csv", &csv)?;
    art.write_bytes("ensemble.wsh", &bin)?;
    art.json(
        "sample.json",
        json!({
            "process": process_value(spec)?,
            "ensemble": ec,
            "increments": ec.increments(),
            "grid": grid_value(ec.grid()),
            "jitter": factor.jitter(),
            "regime_variance": regime_variance_streamed(spec, ec.d, ec.x, regime)?,
            "binary": "ensemble.wsh holds one WSH1 record per replication, in order",
        }),
    )
}

fn clt_check(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let regime = config.regime()?;
    let ec = ensemble_config(config, regime, config.geometry.d);
    let (_, ens) = run_ensemble(spec, &ec)?;
    let rv = regime_variance_streamed(spec, ec.d, ec.x, regime)?;
    let n = ec.n;
    let mut w1_csv = String::from("i,j,reference_variance,sample_variance,skewness,excess_kurtosis,w1\n");
    let mut series = Vec::new();
    let (mut max_off, mut max_diag) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in i..n {
            let s = entry(&ens, i, j);
            let reference = if i == j { 2.0 * rv } else { rv };
            let w1 = w1_to_gaussian(&s, 0.0, reference)?;
            let c = cumulants(&s)?;
            if i == j {
                max_diag = max_diag.max(w1);
            } else {
                max_off = max_off.max(w1);
            }
            w1_csv.push_str(&format!(
                "{i},{j},{},{},{},{},{}\n",
                fmt_f64(reference),
                fmt_f64(c.variance),
                fmt_f64(c.skewness),
                fmt_f64(c.excess_kurtosis),
                fmt_f64(w1)
            ));
            series.push(((i, j), s));
        }
    }
    let mut cross_csv = String::from("i,j,k,l,correlation\n");
    let mut max_corr = 0.0f64;
    for a in 0..series.len() {
        for b in a + 1..series.len() {
            let r = correlation(&series[a].1, &series[b].1);
            max_corr = max_corr.max(r.abs());
            let ((i, j), (k, l)) = (series[a].0, series[b].0);
            cross_csv.push_str(&format!("{i},{j},{k},{l},{}\n", fmt_f64(r)));
        }
    }
    art.csv("clt_w1.csv", &w1_csv)?;
    art.csv("clt_cross.csv", &cross_csv)?;
    art.json(
        "clt.json",
        json!({
            "process": process_value(spec)?,
            "ensemble": ec,
            "regime_variance": rv,
            "max_w1_offdiagonal": if n > 1 { json!(max_off) } else { Value::Null },
            "max_w1_diagonal": max_diag,
            "max_abs_cross_correlation": if series.len() > 1 { json!(max_corr) } else { Value::Null },
        }),
    )
}

fn esd(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let regime = config.regime()?;
    let ec = ensemble_config(config, regime, config.geometry.d);
    let (_, ens) = run_ensemble(spec, &ec)?;
    let kmax = config.esd.kmax;
    let parts = ens.iter().map(|w| esd_moments(&w.to_dmatrix(), kmax)).collect::<Result<Vec<_>>>()?;
    let pooled = SpectralSummary::pool(&parts)?;
    let t = regime_variance_streamed(spec, ec.d, ec.x, regime)?;
    art.csv("esd_moments.csv", &pooled.moments_csv())?;
    art.csv("esd_histogram.csv", &pooled.histogram(t)?.to_csv())?;
    let reference: Vec<f64> = (1..=kmax).map(|k| semicircle_moment(t, k as u32)).collect();
    art.json(
        "esd.json",
        json!({
            "process": process_value(spec)?,
            "ensemble": ec,
            "semicircle_t": t,
            "moments": pooled.moments(),
            "semicircle_moments": reference,
            "moment_distance": moment_distance(&pooled, t, kmax)?,
        }),
    )
}

fn rates(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let g = &config.geometry;
    let regime = config.regime()?;
    let (limit, exact): (f64, Vec<(u64, f64)>) = if regime == Regime::Noncentral {
        let raw = g
            .d_list
            .iter()
            .map(|&d| regime_variance_streamed(spec, d, g.x, regime).map(|v| (d, v)))
            .collect::<Result<_>>()?;
        (rosenblatt_variance(spec, g.x)?, raw)
    } else {
        let ex = sigma2_extrapolated(spec, g.x, &g.d_list)?;
        (ex.sigma2_inf, ex.raw)
    };
    let gap_pairs: Vec<(f64, f64)> = exact.iter().map(|&(d, v)| (d as f64, (v - limit).abs())).collect();
    let gap_fit = fit_power_law(&gap_pairs)?;
    art.csv("rates_variance_gap.csv", &gap_fit.to_csv())?;

    let mc_ds: Vec<u64> = g.d_list.iter().copied().filter(|&d| d <= config.rates.mc_max_d).collect();
    let mut w1_pairs = Vec::new();
    for &d in &mc_ds {
        let ec = ensemble_config(config, regime, d);
        let (_, ens) = run_ensemble(spec, &ec)?;
        let v = regime_variance_streamed(spec, d, g.x, regime)?;
        let w1 = w1_to_gaussian(&entry(&ens, 0, 1), 0.0, v)?;
        w1_pairs.push((d as f64, w1));
    }
    let w1_fit = if w1_pairs.len() >= 3 {
        let fit = fit_power_law(&w1_pairs)?;
        art.csv("rates_w1.csv", &fit.to_csv())?;
        serde_json::to_value(fit).unwrap()
    } else {
        let mut csv = String::from("d,value\n");
        for (d, w) in &w1_pairs {
            csv.push_str(&format!("{},{}\n", fmt_f64(*d), fmt_f64(*w)));
        }
        art.csv("rates_w1.csv", &csv)?;
        json!({ "skipped": "fewer than 3 values of d within rates.mc_max_d" })
    };
    let params = derive_regime_params(spec)?;
    let bounds = g
        .d_list
        .iter()
        .map(|&d| rate_bound(params.alpha, params.nu, g.n as u64, d))
        .collect::<Result<Vec<_>>>()?;
    art.json(
        "rates.json",
        json!({
            "process": process_value(spec)?,
            "limit_variance": limit,
            "variance_gap_fit": gap_fit,
            "w1_fit": w1_fit,
            "rate_bounds": bounds,
        }),
    )
}

fn rosenblatt(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let ec = ensemble_config(config, Regime::Noncentral, config.geometry.d);
    let (_, ens) = run_ensemble(spec, &ec)?;
    let limit = rosenblatt_variance(spec, ec.x)?;
    let exact = regime_variance_streamed(spec, ec.d, ec.x, Regime::Noncentral)?;
    let rb = &config.rosenblatt;
    let mut csv = String::from("i,j,mean,variance,skewness,excess_kurtosis,kurtosis_lower,kurtosis_upper\n");
    let mut entries = Vec::new();
    for i in 0..ec.n {
        for j in i..ec.n {
            let s = entry(&ens, i, j);
            let c = cumulants(&s)?;
            let seed = config.run.seed ^ ((i * ec.n + j) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let ci = bootstrap_kurtosis_ci(&s, rb.bootstrap_resamples, rb.level, seed)?;
            csv.push_str(&format!(
                "{i},{j},{},{},{},{},{},{}\n",
                fmt_f64(c.mean),
                fmt_f64(c.variance),
                fmt_f64(c.skewness),
                fmt_f64(c.excess_kurtosis),
                fmt_f64(ci.lower),
                fmt_f64(ci.upper)
            ));
            let target = if i == j { 2.0 * limit } else { limit };
            entries.push(json!({
                "i": i,
                "j": j,
                "variance": c.variance,
                "limit_variance": target,
                "relative_deviation": c.variance / target - 1.0,
                "kurtosis_interval": ci,
            }));
        }
    }
    art.csv("rosenblatt_cumulants.csv", &csv)?;
    art.json(
        "rosenblatt.json",
        json!({
            "process": process_value(spec)?,
            "ensemble": ec,
            "rosenblatt_variance": limit,
            "exact_offdiagonal_variance": exact,
            "entries": entries,
        }),
    )
}

fn functional(config: &ExperimentConfig, spec: &ProcessSpec, art: &mut Artifacts) -> Result<()> {
    let g = &config.geometry;
    let regime = config.regime()?;
    let bounds = config.interval();
    let top = floor_dx(g.d, *g.xgrid.last().unwrap());
    let factor = path_factor(spec, top, Grid::Unit)?;
    let first = sample_trajectories(&factor, g.n, g.d, &g.xgrid, bounds, regime, config.run.seed, 1)?;
    art.csv("trajectory.csv", &first[0].to_csv())?;
    let table = l2_modulus_table(spec, g.d, &g.xgrid, regime)?;
    art.csv("modulus.csv", &table.to_csv())?;
    let mut report = json!({
        "process": process_value(spec)?,
        "d": g.d,
        "xgrid": g.xgrid,
        "interval": [bounds.0, bounds.1],
        "max_ratio": table.max_ratio(),
    });
    let reps = config.functional.mc_replications;
    if reps >= 2 && g.n >= 2 {
        let trajs = sample_trajectories(&factor, g.n, g.d, &g.xgrid, bounds, regime, config.run.seed, reps)?;
        let mut csv = String::from("y,x,exact_l2,mc_l2,mc_l4\n");
        for a in 0..g.xgrid.len() - 1 {
            let diffs: Vec<f64> =
                trajs.iter().map(|t| t.samples()[a + 1].get(0, 1) - t.samples()[a].get(0, 1)).collect();
            let m2 = diffs.iter().map(|v| v * v).sum::<f64>() / reps as f64;
            let m4 = diffs.iter().map(|v| v.powi(4)).sum::<f64>() / reps as f64;
            let exact = table
                .rows
                .iter()
                .find(|r| r.y == g.xgrid[a] && r.x == g.xgrid[a + 1])
                .map(|r| r.gap)
                .unwrap_or(f64::NAN);
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(g.xgrid[a]),
                fmt_f64(g.xgrid[a + 1]),
                fmt_f64(exact),
                fmt_f64(m2),
                fmt_f64(m4)
            ));
        }
        art.csv("modulus_mc.csv", &csv)?;
        report["mc_replications"] = json!(reps);
    }
    art.json("functional.json", report)
}
