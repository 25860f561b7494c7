use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use misnn::{ImputeConfig, Method};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Options read by the `benchmark` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub reps: usize,
    pub level: f64,
    pub methods: Vec<Method>,
    /// Record wall-clock imputation time. Switch off for byte-identical reruns.
    pub timing: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            reps: 100,
            level: 0.95,
            methods: vec![Method::Misnn, Method::Mean, Method::Durr, Method::Iurr],
            timing: true,
        }
    }
}

/// Everything a run can be configured with. Every field is optional in the
/// JSON document; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub impute: ImputeConfig,
    pub benchmark: BenchmarkOptions,
    /// Cell text that marks a missing value in CSV files.
    pub missing_token: String,
}

impl RunConfig {
    /// Defaults, then the optional JSON file, then `key=value` overrides with
    /// dotted keys such as `impute.net.hidden_widths=[50,50]`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            // check the file on its own so unknown keys are reported against it
            serde_json::from_value::<RunConfig>(file.clone()).with_context(|| format!("in {}", path.display()))?;
            merge(&mut doc, file);
        }
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.impute.validate()?;
        let b = &self.benchmark;
        if !(b.level > 0.0 && b.level < 1.0) {
            bail!("benchmark.level must be in (0, 1)");
        }
        if b.methods.is_empty() {
            bail!("benchmark.methods is empty");
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got '{item}'"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("--set has an empty key in '{item}'");
    }
    // JSON literals parse as such; anything else is taken as a string
    let value = serde_json::from_str::<Value>(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| anyhow!("'{}' is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        slot = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
