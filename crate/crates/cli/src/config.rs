//! TOML run configuration with `--override key=value` patching.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hygo_core::{ProblemSpec, RunConfig, StageSpec};
use serde::{Deserialize, Serialize};

/// Keys that live at the top level; any other override key is taken
/// relative to `[run]`.
const TOP_LEVEL: [&str; 6] = ["label", "problem", "run", "stages", "kfold", "output"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub kfold: KfoldSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_label() -> String {
    "run".into()
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            label: default_label(),
            problem: None,
            run: RunConfig::default(),
            stages: Vec::new(),
            kfold: KfoldSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfoldSection {
    pub runs: usize,
    /// Run `i` uses seed `base_seed + i`.
    pub base_seed: u64,
}

impl Default for KfoldSection {
    fn default() -> Self {
        Self { runs: 20, base_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ConfigFile {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        // Parsing the text directly keeps line numbers in error messages.
        let mut config: ConfigFile = toml::from_str(text)?;
        if !overrides.is_empty() {
            let mut table: toml::Table = toml::from_str(text)?;
            for item in overrides {
                apply_override(&mut table, item)?;
            }
            config = table.try_into().context("configuration invalid after applying overrides")?;
        }
        if config.run.problem.is_some() {
            bail!("`run.problem` is not accepted; declare the problem in the top-level [problem] table");
        }
        if !config.run.stages.is_empty() {
            bail!("`run.stages` is not accepted; declare stages as top-level [[stages]] tables");
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Driver configuration with the problem and stages folded in.
    pub fn effective_run(&self) -> Result<RunConfig> {
        let Some(problem) = &self.problem else {
            bail!("missing key `problem`");
        };
        Ok(RunConfig {
            problem: Some(problem.clone()),
            stages: self.stages.clone(),
            ..self.run.clone()
        })
    }
}

/// Sets `key` (dotted path) to `value`, parsed as a TOML value when possible
/// and as a bare string otherwise.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .with_context(|| format!("override `{item}` is not of the form key=value"))?;
    let mut path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is empty or malformed");
    }
    if !TOP_LEVEL.contains(&path[0]) {
        path.insert(0, "run");
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("path is non-empty");
    let mut node = table;
    for part in parents {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{part}` is not a table"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
