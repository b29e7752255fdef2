//! Experiment configuration: parsing (JSON or TOML), validation with
//! aggregated errors, and the content hash used for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::increments::floor_dx;
use crate::kernels::{derive_regime_params, ProcessKind, ProcessSpec, Regime};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessBlock {
    pub kind: ProcessKind,
    pub hurst: f64,
    /// Bifractional index `K`; ignored unless `kind = "BIFBM"`.
    #[serde(default = "one")]
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryBlock {
    pub n: usize,
    pub d: u64,
    pub d_list: Vec<u64>,
    pub x: f64,
    pub xgrid: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self { n: 3, d: 1000, d_list: Vec::new(), x: 1.0, xgrid: Vec::new(), a: None, b: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Sample non-central ensembles on the `1/d` grid.
    #[serde(default)]
    pub force_fine: bool,
    /// Worker threads; does not affect results and is not hashed.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Output directory; not hashed.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<String>,
}

fn default_replications() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryBlock {
    /// Largest `D` for which the correlation matrix is written and contracted.
    pub delta_max: usize,
    /// Lags `0..=a_table` of the `a_alpha` table.
    pub a_table: usize,
    pub series_truncation: u64,
    /// Grid for the hypothesis diagnostics.
    pub diagnostics_xgrid: Vec<f64>,
}

impl Default for TheoryBlock {
    fn default() -> Self {
        Self {
            delta_max: 512,
            a_table: 10,
            series_truncation: 100_000,
            diagnostics_xgrid: (0..16).map(|i| 2.0 * 100f64.powf(i as f64 / 15.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsdBlock {
    pub kmax: usize,
}

impl Default for EsdBlock {
    fn default() -> Self {
        Self { kmax: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesBlock {
    /// Monte Carlo W1 decay is computed only for `d <= mc_max_d`.
    pub mc_max_d: u64,
}

impl Default for RatesBlock {
    fn default() -> Self {
        Self { mc_max_d: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosenblattBlock {
    pub bootstrap_resamples: usize,
    pub level: f64,
}

impl Default for RosenblattBlock {
    fn default() -> Self {
        Self { bootstrap_resamples: 1000, level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionalBlock {
    /// Replications for the Monte Carlo L2/L4 estimates of adjacent
    /// increments; 0 disables them.
    pub mc_replications: usize,
}

impl Default for FunctionalBlock {
    fn default() -> Self {
        Self { mc_replications: 0 }
    }
}

/// Provenance block written into emitted JSON; ignored when parsed back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: ProcessBlock,
    #[serde(default)]
    pub geometry: GeometryBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub theory: TheoryBlock,
    #[serde(default)]
    pub esd: EsdBlock,
    #[serde(default)]
    pub rates: RatesBlock,
    #[serde(default)]
    pub rosenblatt: RosenblattBlock,
    #[serde(default)]
    pub functional: FunctionalBlock,
    #[serde(default, skip_serializing)]
    provenance: Option<Provenance>,
}

/// Which subcommand a config is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Theory,
    Sample,
    CltCheck,
    Esd,
    Rates,
    Rosenblatt,
    Functional,
}

impl ExperimentConfig {
    /// Parses JSON or TOML, chosen by extension (`.json`, `.toml`) or by
    /// trying JSON first.
    pub fn parse(text: &str, path_hint: Option<&Path>) -> Result<Self> {
        let ext = path_hint.and_then(|p| p.extension()).and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let json = || serde_json::from_str::<Self>(text).map_err(|e| format!("JSON: {e}"));
        let toml = || toml::from_str::<Self>(text).map_err(|e| format!("TOML: {}", e.message()));
        let parsed = match ext.as_deref() {
            Some("json") => json(),
            Some("toml") => toml(),
            _ => json().or_else(|a| toml().map_err(|b| format!("{a}; {b}"))),
        };
        parsed.map_err(|e| LabError::Config(vec![e]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::parse(&text, Some(path))
    }

    pub fn spec(&self) -> Result<ProcessSpec> {
        ProcessSpec::new(self.process.kind, self.process.hurst, self.process.k)
    }

    pub fn regime(&self) -> Result<Regime> {
        Ok(derive_regime_params(&self.spec()?)?.regime)
    }

    /// Canonical JSON of the result-affecting fields.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical_json`], lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash(), seed: self.run.seed }
    }

    /// Pretty JSON with a leading provenance block; parses back to `self`.
    pub fn resolved_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let mut out = serde_json::Map::new();
        out.insert("provenance".into(), serde_json::to_value(self.provenance()).unwrap());
        if let serde_json::Value::Object(map) = &mut value {
            out.extend(std::mem::take(map));
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(out)).unwrap() + "\n"
    }

    /// Interval `[a, b]` for functional runs, defaulting to the grid's range.
    pub fn interval(&self) -> (f64, f64) {
        let g = &self.geometry.xgrid;
        let a = self.geometry.a.unwrap_or_else(|| g.first().copied().unwrap_or(f64::NAN));
        let b = self.geometry.b.unwrap_or_else(|| g.last().copied().unwrap_or(f64::NAN));
        (a, b)
    }

    /// Checks every precondition `task` relies on and reports all problems at once.
    pub fn validate(&self, task: Task) -> Result<()> {
        let mut errs = Vec::new();
        let g = &self.geometry;
        let spec = match self.spec() {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("process: {e}"));
                None
            }
        };
        let regime = spec.and_then(|s| derive_regime_params(&s).ok()).map(|p| p.regime);
        if spec.is_some() && regime.is_none() {
            errs.push("process: alpha must be < 2".into());
        }
        if g.n < 1 {
            errs.push("geometry.n must be >= 1".into());
        }
        if g.d < 2 {
            errs.push("geometry.d must be >= 2".into());
        }
        if !(g.x > 0.0) || !g.x.is_finite() {
            errs.push("geometry.x must be positive".into());
        } else if g.d >= 2 && floor_dx(g.d, g.x) < 2 {
            errs.push("floor(d x) must be >= 2".into());
        }
        if self.run.replications < 1 {
            errs.push("run.replications must be >= 1".into());
        }
        if self.run.threads == Some(0) {
            errs.push("run.threads must be >= 1".into());
        }
        let d_list_ok = |errs: &mut Vec<String>, need_large: bool| {
            if g.d_list.len() < 3 {
                errs.push("geometry.d_list needs at least 3 values".into());
            } else if g.d_list.windows(2).any(|w| w[1] <= w[0]) || g.d_list[0] < 2 {
                errs.push("geometry.d_list must be strictly increasing and >= 2".into());
            } else if need_large && *g.d_list.last().unwrap() < 4096 {
                errs.push("geometry.d_list must reach at least 4096".into());
            }
        };
        match task {
            Task::Theory => {
                if self.theory.series_truncation < 2 {
                    errs.push("theory.series_truncation must be >= 2".into());
                }
                if !g.d_list.is_empty() {
                    d_list_ok(&mut errs, true);
                }
            }
            Task::Sample => {}
            Task::CltCheck => {
                if self.run.replications < 8 {
                    errs.push("clt-check needs run.replications >= 8".into());
                }
            }
            Task::Esd => {
                if self.esd.kmax < 4 || self.esd.kmax % 2 == 1 {
                    errs.push("esd.kmax must be even and >= 4".into());
                }
            }
            Task::Rates => {
                d_list_ok(&mut errs, regime != Some(Regime::Noncentral));
                if g.n < 2 {
                    errs.push("rates needs geometry.n >= 2 for off-diagonal entries".into());
                }
                if g.x > 0.0 && g.d_list.iter().any(|&d| floor_dx(d, g.x) < 2) {
                    errs.push("floor(d x) must be >= 2 for every d in d_list".into());
                }
            }
            Task::Rosenblatt => {
                if regime.is_some() && regime != Some(Regime::Noncentral) {
                    errs.push("rosenblatt needs a process with 3/2 < alpha < 2".into());
                }
                if self.run.replications < 8 {
                    errs.push("rosenblatt needs run.replications >= 8".into());
                }
                if self.rosenblatt.bootstrap_resamples < 10 {
                    errs.push("rosenblatt.bootstrap_resamples must be >= 10".into());
                }
                if !(self.rosenblatt.level > 0.0 && self.rosenblatt.level < 1.0) {
                    errs.push("rosenblatt.level must lie in (0, 1)".into());
                }
            }
            Task::Functional => {
                let (a, b) = self.interval();
                if g.xgrid.len() < 2 {
                    errs.push("geometry.xgrid needs at least 2 points".into());
                } else if g.xgrid.windows(2).any(|w| w[1] <= w[0]) {
                    errs.push("geometry.xgrid must be strictly increasing".into());
                } else {
                    if !(a > 0.0 && a <= b) {
                        errs.push("need 0 < a <= b".into());
                    }
                    if g.xgrid.iter().any(|&x| !(x >= a && x <= b)) {
                        errs.push("geometry.xgrid must lie in [a, b]".into());
                    }
                    if g.d >= 2 && floor_dx(g.d, g.xgrid[0]) < 2 {
                        errs.push("floor(d min xgrid) must be >= 2".into());
                    }
                }
                if self.functional.mc_replications == 1 {
                    errs.push("functional.mc_replications must be 0 or >= 2".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
[process]
kind = "BIFBM"
hurst = 0.6
k = 0.8

[geometry]
n = 4
d = 128
xgrid = [0.5, 1.0]

[run]
seed = 17
threads = 2
"#;

    #[test]
    fn toml_and_json_agree() {
        let t = ExperimentConfig::parse(TOML, Some(Path::new("c.toml"))).unwrap();
        assert_eq!(t.geometry.n, 4);
        assert_eq!(t.run.replications, 100);
        assert_eq!(t.run.threads, Some(2));
        let j = ExperimentConfig::parse(&t.resolved_json(), None).unwrap();
        assert_eq!(j.canonical_json(), t.canonical_json());
        assert_eq!(j.hash(), t.hash());
        assert_eq!(j.run.threads, None);
        assert_eq!(ExperimentConfig::parse(&j.resolved_json(), None).unwrap(), j);
    }

    #[test]
    fn threads_do_not_change_hash() {
        let a = ExperimentConfig::parse(TOML, Some(Path::new("c.toml"))).unwrap();
        let mut b = a.clone();
        b.run.threads = Some(7);
        b.run.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 18;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn seed_is_mandatory() {
        let text = "[process]\nkind = \"FBM\"\nhurst = 0.5\n[run]\nreplications = 3\n";
        assert!(matches!(ExperimentConfig::parse(text, None), Err(LabError::Config(_))));
    }

    #[test]
    fn errors_are_aggregated() {
        let text = r#"{"process": {"kind": "FBM", "hurst": 1.5},
            "geometry": {"n": 0, "d": 1},
            "run": {"seed": 1, "replications": 0}}"#;
        let c = ExperimentConfig::parse(text, None).unwrap();
        match c.validate(Task::Functional) {
            Err(LabError::Config(errs)) => assert!(errs.len() >= 5, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"process": {"kind": "FBM", "hurst": 0.5, "colour": 1}, "run": {"seed": 1}}"#;
        assert!(ExperimentConfig::parse(text, None).is_err());
    }
}
