use std::process::Command;

use wishart_lab::increments::{delta_matrix, regime_variance_streamed, rosenblatt_variance};
use wishart_lab::sampler::{path_factor, replication_rng, sample_rows};
use wishart_lab::stats::correlation;
use wishart_lab::{Grid, ProcessSpec, Regime};

/// Semi-closed form of the sub-fBm Rosenblatt variance. With `u = t - s`,
/// `v = t + s`, the squared mixed partial `c^2 (u^(a-2) - v^(a-2))^2` splits
/// into two power terms integrated exactly and one cross term reduced to a
/// smooth one-dimensional integral.
fn subfbm_rosenblatt_oracle(h: f64, x: f64) -> f64 {
    let a = 2.0 * h;
    let c = h * (2.0 * h - 1.0);
    let e = 2.0 * a - 2.0;
    let xe = x.powf(e);
    let near = xe * (1.0 / (2.0 * a - 3.0) - 1.0 / e);
    let far = (((2.0 * x).powf(e) - xe) / e - xe / e) / (2.0 * (2.0 * a - 3.0));
    // int_0^x u^(a-2) (2x - u)^(a-1) du with w = u^(a-1), Simpson's rule.
    let wmax = x.powf(a - 1.0);
    let steps = 20_000;
    let hw = wmax / steps as f64;
    let f = |w: f64| (2.0 * x - w.powf(1.0 / (a - 1.0))).powf(a - 1.0) / (a - 1.0);
    let simpson: f64 = (0..=steps)
        .map(|i| {
            let wt = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            wt * f(i as f64 * hw)
        })
        .sum::<f64>()
        * hw
        / 3.0;
    let cross = (simpson - xe / e) / (2.0 * (a - 1.0));
    let folded = c * c * (near - 2.0 * cross + far);
    // lambda = 1/2, so 1 / (2 lambda^2) = 2.
    2.0 * folded
}

#[test]
fn subfbm_rosenblatt_matches_semi_closed_form() {
    for &(h, x) in &[(0.8, 1.0), (0.9, 1.0), (0.9, 1.7), (0.95, 0.6)] {
        let got = rosenblatt_variance(&ProcessSpec::subfbm(h).unwrap(), x).unwrap();
        let expect = subfbm_rosenblatt_oracle(h, x);
        assert!((got - expect).abs() <= 1e-6 * expect, "H={h} x={x}: {got} vs {expect}");
    }
}

#[test]
fn subfbm_rosenblatt_reference_value() {
    let got = rosenblatt_variance(&ProcessSpec::subfbm(0.9).unwrap(), 1.0).unwrap();
    assert!((got - 0.147035).abs() < 5e-6, "{got}");
}

#[test]
fn bifbm_with_unit_k_is_fbm() {
    for &h in &[0.8, 0.9] {
        let a = rosenblatt_variance(&ProcessSpec::bifbm(h, 1.0).unwrap(), 1.0).unwrap();
        let b = rosenblatt_variance(&ProcessSpec::fbm(h).unwrap(), 1.0).unwrap();
        assert!((a - b).abs() <= 1e-10 * b);
    }
}

#[test]
fn rosenblatt_is_approached_by_finite_d_variance() {
    let spec = ProcessSpec::bifbm(0.95, 0.9).unwrap();
    let limit = rosenblatt_variance(&spec, 1.0).unwrap();
    let gaps: Vec<f64> = [256u64, 1024, 4096]
        .iter()
        .map(|&d| (regime_variance_streamed(&spec, d, 1.0, Regime::Noncentral).unwrap() / limit - 1.0).abs())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn sampled_increments_have_delta_correlations() {
    let spec = ProcessSpec::subfbm(0.7).unwrap();
    let dcols = 6;
    let factor = path_factor(&spec, dcols, Grid::Unit).unwrap();
    let y = sample_rows(&factor, 20_000, &mut replication_rng(11, 0));
    let delta = delta_matrix(&spec, dcols, Grid::Unit).unwrap();
    let column = |k: usize| (0..y.rows()).map(|r| y.row(r)[k]).collect::<Vec<_>>();
    for k in 0..dcols {
        for l in k + 1..dcols {
            let r = correlation(&column(k), &column(l));
            assert!((r - delta.values()[(k, l)]).abs() < 0.04, "({k},{l}): {r} vs {}", delta.values()[(k, l)]);
        }
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wishart-lab")).args(args).output().unwrap()
}

#[test]
fn cli_reports_config_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[process]\nkind = \"FBM\"\nhurst = 1.4\n[geometry]\nn = 0\n[run]\nseed = 1\n").unwrap();
    let out = cli(&["theory", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["details"].as_array().unwrap().len() >= 2);
}

#[test]
fn cli_artifacts_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"process":{"kind":"SUBFBM","hurst":0.6},"geometry":{"n":2,"d":64},"run":{"seed":5,"replications":16}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = cli(&["sample", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sample.json")).unwrap()).unwrap();
    let first = summary.as_object().unwrap().keys().next().unwrap().clone();
    assert_eq!(first, "provenance");
    assert_eq!(summary["provenance"]["seed"], 9);
    let hash = summary["provenance"]["config_hash"].as_str().unwrap().to_string();
    let csv = std::fs::read_to_string(out_dir.join("ensemble.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash={hash} seed=9"));
    let dump = std::fs::read(out_dir.join("ensemble.wsh")).unwrap();
    assert_eq!(dump.len(), 16 * (16 + 8 * 4));
}
