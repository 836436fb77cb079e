//! Scenario files: TOML with one table per scenario and an optional
//! `[defaults]` table whose keys apply to every scenario that omits them.
//!
//! ```toml
//! [defaults]
//! n = 1000
//! replications = 500
//! seed = 7
//!
//! [m1_linear_block]
//! model = 1
//! randomizer = "stratified_block"
//! adjuster = "ols"
//!
//! [m7_rf_ss]
//! model = 7
//! adjuster = "random_forest"
//! crossfit = 5
//! params = { trees = 100 }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::adjust::{AdjusterKind, AdjusterSpec};
use crate::error::{Error, Result};
use crate::randomize::{RandomizerConfig, RandomizerKind};
use crate::sim::{EstimatorSpec, ScenarioConfig, TRUTH_DRAWS};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    model: u8,
    adjuster: String,
    n: Option<usize>,
    p: Option<usize>,
    pi: Option<f64>,
    randomizer: Option<String>,
    block_size: Option<usize>,
    coin_prob: Option<f64>,
    weights: Option<Vec<f64>>,
    stratum_specific: Option<bool>,
    crossfit: Option<usize>,
    replications: Option<usize>,
    level: Option<f64>,
    seed: Option<u64>,
    truth_draws: Option<usize>,
    params: Option<BTreeMap<String, toml::Value>>,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn build(name: &str, s: Section) -> Result<ScenarioConfig> {
    let ctx = |e: Error| Error::config(format!("scenario [{name}]: {e}"));
    let kind = RandomizerKind::parse(s.randomizer.as_deref().unwrap_or("stratified_block")).map_err(ctx)?;
    let mut randomizer = RandomizerConfig::new(kind, s.pi.unwrap_or(0.5));
    if let Some(b) = s.block_size {
        randomizer.block_size = b;
    }
    if let Some(c) = s.coin_prob {
        randomizer.coin_prob = c;
    }
    if let Some(w) = s.weights {
        randomizer.weights = w;
    }
    let mut adjuster = AdjusterSpec::new(AdjusterKind::parse(&s.adjuster).map_err(ctx)?)
        .stratum_specific(s.stratum_specific.unwrap_or(false));
    for (k, v) in s.params.unwrap_or_default() {
        adjuster.params.set(&k, &value_text(&v)).map_err(ctx)?;
    }
    let mut estimator = EstimatorSpec::new(adjuster);
    estimator.crossfit = s.crossfit.filter(|&m| m > 0);
    let mut cfg = ScenarioConfig::new(s.model, randomizer, estimator.adjuster.clone());
    cfg.estimator = estimator;
    cfg.name = name.to_string();
    cfg.n = s.n.unwrap_or(cfg.n);
    cfg.p = s.p;
    cfg.replications = s.replications.unwrap_or(cfg.replications);
    cfg.level = s.level.unwrap_or(cfg.level);
    cfg.seed = s.seed.unwrap_or(cfg.seed);
    cfg.truth_draws = s.truth_draws.unwrap_or(TRUTH_DRAWS);
    cfg.validate().map_err(ctx)?;
    Ok(cfg)
}

/// Parses scenario text; scenarios are returned in file order.
pub fn parse_config(text: &str) -> Result<Vec<ScenarioConfig>> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(format!("config: {e}")))?;
    let defaults = match doc.get("defaults") {
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(Error::config("config: [defaults] must be a table")),
        None => toml::Table::new(),
    };
    let mut out = Vec::new();
    for (name, value) in &doc {
        if name == "defaults" {
            continue;
        }
        let toml::Value::Table(table) = value else {
            return Err(Error::config(format!("config: top-level key '{name}' is not a [section]")));
        };
        let mut merged = defaults.clone();
        for (k, v) in table {
            merged.insert(k.clone(), v.clone());
        }
        let section: Section = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("scenario [{name}]: {e}")))?;
        out.push(build(name, section)?);
    }
    if out.is_empty() {
        return Err(Error::config("config defines no scenarios"));
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Vec<ScenarioConfig>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_config(&text)
}
