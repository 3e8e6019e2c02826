//! Run configuration: a JSON document merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use brar_exact::exact_tests::{SearchOptions, TestKind};
use brar_exact::group_sequential::{BlockRule, ErrorRule, PniwdScope};
use brar_exact::oc::{EmptyArm, DEFAULT_PHI};
use brar_exact::policy::Clip;
use brar_exact::sweep::{OcSpec, TestSpec};
use brar_exact::{BetaPrior, DesignSpec, StatisticKind};

/// Environment variable naming the policy cache directory.
pub const CACHE_ENV: &str = "BRAR_CACHE_DIR";

/// Trial sizes above this need `--large`.
pub const DESK_LIMIT: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    /// Burn-in lengths; `None` picks a per-command default.
    pub burn_ins: Option<Vec<usize>>,
    /// `[α_C, β_C, α_D, β_D]`.
    pub prior: [f64; 4],
    pub clip: Option<[f64; 2]>,
    pub stat: String,
    /// Tests, metrics and effects; `None` picks a per-command default.
    pub tests: Option<Vec<String>>,
    pub metrics: Option<Vec<String>>,
    pub deltas: Option<Vec<f64>>,
    pub phi: f64,
    pub alpha: f64,
    pub significant_digits: Option<u32>,
    /// Totals `S` reported by `critvals`.
    pub totals: Vec<usize>,
    pub grid_step: f64,
    pub priors: Vec<[f64; 2]>,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub large: bool,
    pub mc: McConfig,
    pub arrest: ArrestConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub replications: usize,
    pub seed: u64,
    pub checks: usize,
    pub max_n: usize,
    pub z_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ArrestConfig {
    pub burn_ins: Vec<usize>,
    pub ost: f64,
    pub theta_null: f64,
    pub alternatives: Vec<[f64; 2]>,
    pub block_rule: String,
    pub pniwd_scope: String,
    pub error_rule: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 20,
            burn_ins: None,
            prior: [1.0; 4],
            clip: None,
            stat: "ppcs".into(),
            tests: None,
            metrics: None,
            deltas: None,
            phi: DEFAULT_PHI,
            alpha: 0.05,
            significant_digits: SearchOptions::default().significant_digits,
            totals: vec![],
            grid_step: 0.05,
            priors: vec![[1.0, 1.0], [0.01, 0.01], [0.5, 0.5], [1.4, 0.6], [0.6, 1.4]],
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            workers: None,
            large: false,
            mc: McConfig::default(),
            arrest: ArrestConfig::default(),
        }
    }
}

impl Default for McConfig {
    fn default() -> Self {
        Self { replications: 100_000, seed: 20_240_601, checks: 20, max_n: 40, z_bound: 3.5 }
    }
}

impl Default for ArrestConfig {
    fn default() -> Self {
        Self {
            burn_ins: brar_exact::group_sequential::ARREST_BURN_INS.to_vec(),
            ost: 0.986,
            theta_null: 0.12,
            alternatives: vec![[0.12, 0.37]],
            block_rule: "deterministic".into(),
            pniwd_scope: "full".into(),
            error_rule: "efficacy".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::Error::new(ConfigError(format!("config {}: {e}", path.display()))))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// Hash of the settings that affect report contents; output location,
    /// cache location and worker count are left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            for k in ["out_dir", "cache_dir", "workers", "large"] {
                m.remove(k);
            }
        }
        hex16(v.to_string().as_bytes())
    }

    /// Hash of the fields that determine the design, not the report.
    pub fn design_hash(&self) -> String {
        let key = serde_json::json!({ "n": self.n, "prior": self.prior, "clip": self.clip, "stat": self.stat });
        hex16(key.to_string().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return config_err("n: trial size must be positive");
        }
        if self.n > DESK_LIMIT && !self.large {
            return config_err(format!(
                "n: trial size {} is above the desk-scale limit {DESK_LIMIT}; pass --large (ī = 240 needs about 3 minutes per coefficient pass and several GB)",
                self.n
            ));
        }
        if let Some(b) = &self.burn_ins {
            if b.is_empty() {
                return config_err("burn_ins: empty burn-in list");
            }
            if let Some(&x) = b.iter().find(|&&x| 2 * x > self.n) {
                return config_err(format!("burn_ins: {x} exceeds n/2"));
            }
        }
        self.statistic()?;
        self.prior()?;
        self.clip()?;
        for t in self.tests.iter().flatten() {
            parse_test(t, self.statistic()?)?;
        }
        for m in self.metrics.iter().flatten() {
            parse_metric(m, self.phi)?;
        }
        if let Some(&d) = self.deltas.iter().flatten().find(|d| !(-1.0..=1.0).contains(*d)) {
            return config_err(format!("deltas: {d} outside [-1, 1]"));
        }
        for (field, empty) in [
            ("tests", self.tests.as_ref().is_some_and(Vec::is_empty)),
            ("metrics", self.metrics.as_ref().is_some_and(Vec::is_empty)),
            ("deltas", self.deltas.as_ref().is_some_and(Vec::is_empty)),
        ] {
            if empty {
                return config_err(format!("{field}: empty list"));
            }
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return config_err("phi: must lie in [0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return config_err("alpha: must lie in (0, 1)");
        }
        if let Some(&s) = self.totals.iter().find(|&&s| s > self.n) {
            return config_err(format!("totals: {s} exceeds n"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return config_err("grid_step: must lie in (0, 0.5]");
        }
        if self.workers == Some(0) {
            return config_err("workers: must be positive");
        }
        if self.mc.replications == 0 {
            return config_err("mc.replications: must be positive");
        }
        if self.arrest.burn_ins.is_empty() {
            return config_err("arrest.burn_ins: empty burn-in list");
        }
        if !(self.arrest.ost > 0.5) {
            return config_err("arrest.ost: must exceed 0.5");
        }
        self.block_rule()?;
        self.pniwd_scope()?;
        self.error_rule()?;
        Ok(())
    }

    pub fn statistic(&self) -> Result<StatisticKind> {
        match self.stat.as_str() {
            "ppcs" => Ok(StatisticKind::Ppcs),
            "wald" => Ok(StatisticKind::Wald),
            s => config_err(format!("stat: unknown statistic {s:?} (ppcs, wald)")),
        }
    }

    pub fn prior(&self) -> Result<BetaPrior> {
        let [a, b, c, d] = self.prior;
        BetaPrior::new(a, b, c, d).map_err(|e| ConfigError(format!("prior: {e}")).into())
    }

    pub fn clip(&self) -> Result<Option<Clip>> {
        self.clip
            .map(|[lo, hi]| Clip::new(lo, hi).map_err(|e| ConfigError(format!("clip: {e}")).into()))
            .transpose()
    }

    pub fn design(&self, prior: BetaPrior) -> Result<DesignSpec> {
        let mut d = DesignSpec::new(self.n, 0)
            .map_err(|e| ConfigError(format!("n: {e}")))?
            .with_prior(prior)
            .with_clip(self.clip()?)
            .with_statistic(self.statistic()?);
        d.alpha_upper = self.alpha / 2.0;
        d.alpha_lower = self.alpha / 2.0;
        Ok(d)
    }

    pub fn search(&self) -> SearchOptions {
        SearchOptions { significant_digits: self.significant_digits, ..SearchOptions::default() }
    }

    pub fn test_specs(&self, default: &[&str]) -> Result<Vec<TestSpec>> {
        let stat = self.statistic()?;
        match &self.tests {
            Some(t) => t.iter().map(|t| parse_test(t, stat)).collect(),
            None => default.iter().map(|t| parse_test(t, stat)).collect(),
        }
    }

    pub fn delta_list(&self, default: &[f64]) -> Vec<f64> {
        self.deltas.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn oc_specs(&self, default: &[&str]) -> Result<Vec<OcSpec>> {
        let names: Vec<String> = match &self.metrics {
            Some(m) => m.clone(),
            None => default.iter().map(|s| s.to_string()).collect(),
        };
        let mut v: Vec<OcSpec> = Vec::new();
        for m in &names {
            let k = parse_metric(m, self.phi)?;
            if !v.contains(&k) {
                v.push(k);
            }
        }
        Ok(v)
    }

    /// Configured burn-ins, or the eleven proportions `0, 0.1, …, 1` when
    /// they are whole numbers, or every `b`.
    pub fn burn_ins_or_proportions(&self) -> Vec<usize> {
        self.burn_ins.clone().unwrap_or_else(|| {
            if self.n % 20 == 0 {
                (0..=10).map(|k| k * self.n / 20).collect()
            } else {
                (0..=self.n / 2).collect()
            }
        })
    }

    /// Configured burn-ins or `0, ī/10, ī/4, 2ī/5, ī/2` (rounded down).
    /// CX-S totals for `critvals`; defaults to ī/5 and 4ī/5.
    pub fn totals_or_default(&self) -> Vec<usize> {
        if self.totals.is_empty() {
            let mut t = vec![self.n / 5, 4 * self.n / 5];
            t.dedup();
            t
        } else {
            self.totals.clone()
        }
    }

    pub fn burn_ins_or_panel(&self) -> Vec<usize> {
        self.burn_ins.clone().unwrap_or_else(|| {
            let mut v = vec![0, self.n / 10, self.n / 4, 2 * self.n / 5, self.n / 2];
            v.dedup();
            v
        })
    }

    pub fn block_rule(&self) -> Result<BlockRule> {
        match self.arrest.block_rule.as_str() {
            "deterministic" => Ok(BlockRule::Deterministic),
            "binomial" => Ok(BlockRule::Binomial),
            s => config_err(format!("arrest.block_rule: unknown rule {s:?} (deterministic, binomial)")),
        }
    }

    pub fn pniwd_scope(&self) -> Result<PniwdScope> {
        match self.arrest.pniwd_scope.as_str() {
            "full" => Ok(PniwdScope::Full),
            "realized" => Ok(PniwdScope::Realized),
            s => config_err(format!("arrest.pniwd_scope: unknown scope {s:?} (full, realized)")),
        }
    }

    pub fn error_rule(&self) -> Result<ErrorRule> {
        match self.arrest.error_rule.as_str() {
            "efficacy" => Ok(ErrorRule::Efficacy),
            "any-stop" => Ok(ErrorRule::AnyStop),
            s => config_err(format!("arrest.error_rule: unknown rule {s:?} (efficacy, any-stop)")),
        }
    }

    pub fn resolved_cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
    }
}

fn parse_test(name: &str, stat: StatisticKind) -> Result<TestSpec> {
    Ok(match name {
        "calibrated" => TestSpec::calibrated(stat),
        "ux" => TestSpec::ux(stat),
        "cxs" => TestSpec::cxs(stat),
        "asymptotic" | "wald-asymptotic" => TestSpec::asymptotic_wald(),
        s => return config_err(format!("tests: unknown test {s:?} (calibrated, ux, cxs, asymptotic)")),
    })
}

fn parse_metric(name: &str, phi: f64) -> Result<OcSpec> {
    Ok(match name {
        "rejection" | "max-rejection" | "avg-rejection" | "power" => OcSpec::RejectionRate,
        "epasa" => OcSpec::Epasa,
        "piwd" => OcSpec::Piwd { phi },
        "bias" => OcSpec::Bias(EmptyArm::Adjusted),
        "bias-zero" => OcSpec::Bias(EmptyArm::Zero),
        s => return config_err(format!("metrics: unknown metric {s:?} (rejection, max-rejection, epasa, piwd, bias, bias-zero)")),
    })
}

pub fn test_name(t: &TestSpec) -> String {
    match t.kind {
        TestKind::Asymptotic { .. } => "asymptotic".into(),
        k => k.name().into(),
    }
}

fn hex16(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A rejected configuration; maps to exit status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    bail!(ConfigError(msg.into()))
}
