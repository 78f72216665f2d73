//! Engine configuration from defaults, an optional file and `--set` flags,
//! applied in that order.

use std::path::Path;

use anyhow::{bail, Context, Result};
use chainsight_core::analysis::EngineConfig;

/// Parses a config file: a JSON object (partial objects keep defaults) or
/// `key=value` lines with `#` comments.
pub fn parse_config(text: &str) -> Result<EngineConfig> {
    if text.trim_start().starts_with('{') {
        let config: EngineConfig =
            serde_json::from_str(text).context("config file is not valid JSON")?;
        config.validate().map_err(anyhow::Error::msg)?;
        return Ok(config);
    }
    let mut config = EngineConfig::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        apply(&mut config, line).with_context(|| format!("config line {}", i + 1))?;
    }
    Ok(config)
}

fn apply(config: &mut EngineConfig, assignment: &str) -> Result<()> {
    let Some((key, value)) = assignment.split_once('=') else {
        bail!("expected key=value, got `{assignment}`");
    };
    config
        .set(key.trim(), value.trim())
        .map_err(anyhow::Error::msg)
}

pub fn load(file: Option<&Path>, sets: &[String]) -> Result<EngineConfig> {
    let mut config = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => EngineConfig::default(),
    };
    for s in sets {
        apply(&mut config, s).with_context(|| format!("--set {s}"))?;
    }
    Ok(config)
}
