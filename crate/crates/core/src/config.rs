//! Experiment configuration: a TOML document with strict keys and explicit defaults.
//!
//! ```toml
//! mode = "single"            # single | paired | sweep
//! seed = 7                   # optional, overrides trace.generate.seed
//!
//! [trace]                    # exactly one of `file` or `[trace.generate]`
//! file = "trace.txt"
//! format = "auto"            # auto | text | binary
//!
//! [output]
//! path = "report.json"       # optional, stdout when absent
//! format = "json"            # csv | json | human
//!
//! [hierarchy]                # every cache, media and prefetcher parameter
//! prefetch_system = "hmc"
//!
//! [[sweep]]                  # sweep mode: one entry per swept parameter
//! key = "hierarchy.prefetch.hmc.next_line.depth"
//! values = [0, 2]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyConfig;
use crate::report::ReportFormat;
use crate::trace::{decode_binary, generate, MemoryAccess, TextTraceReader, TraceGenSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    /// Binary for `.bin` files, text otherwise.
    #[default]
    Auto,
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub format: TraceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<TraceGenSpec>,
}

impl TraceSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            file: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn generated(spec: TraceGenSpec) -> Self {
        Self {
            generate: Some(spec),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.file, &self.generate) {
            (Some(_), None) => Ok(()),
            (None, Some(spec)) => spec.validate(),
            (Some(_), Some(_)) => Err(Error::Config(
                "trace: give either `file` or `[trace.generate]`, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "trace: one of `file` or `[trace.generate]` is required".into(),
            )),
        }
    }

    pub fn load(&self) -> Result<Vec<MemoryAccess>> {
        self.validate()?;
        if let Some(spec) = &self.generate {
            return generate(spec);
        }
        let path = self.file.as_deref().expect("validated");
        read_trace_file(path, self.format)
    }
}

pub fn read_trace_file(path: &Path, format: TraceFormat) -> Result<Vec<MemoryAccess>> {
    let binary = match format {
        TraceFormat::Binary => true,
        TraceFormat::Text => false,
        TraceFormat::Auto => path.extension().is_some_and(|e| e == "bin"),
    };
    if binary {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_binary(&bytes)
    } else {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        TextTraceReader::new(std::io::BufReader::new(file)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Single,
    Paired,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    /// Dotted path into this configuration, e.g. `hierarchy.prefetch.l1.stride.depth`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub trace: TraceSource,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub hierarchy: HierarchyConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepParam>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Single,
            seed: None,
            trace: TraceSource::generated(TraceGenSpec::default()),
            output: OutputConfig::default(),
            hierarchy: HierarchyConfig::default(),
            sweep: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text` on top of the defaults: omitted keys keep their default value and
    /// unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base =
            toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        // A trace given by file replaces the default generator instead of merging with it.
        if let Some(toml::Value::Table(t)) = user.get("trace") {
            if t.contains_key("file") {
                base.remove("trace");
            }
        }
        merge(&mut base, user);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the top-level seed to the generator spec.
    pub fn resolved(mut self) -> Self {
        if let (Some(seed), Some(spec)) = (self.seed, self.trace.generate.as_mut()) {
            spec.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.trace.validate()?;
        self.hierarchy.validate()?;
        if self.mode == RunMode::Sweep {
            if self.sweep.is_empty() {
                return Err(Error::Config(
                    "sweep mode needs at least one [[sweep]] entry".into(),
                ));
            }
            for p in &self.sweep {
                if p.values.is_empty() {
                    return Err(Error::Config(format!("sweep {}: empty value list", p.key)));
                }
                // Catches typos in keys before any run starts.
                self.with_override(&p.key, &p.values[0])?;
            }
        }
        Ok(())
    }

    /// A copy with the value at dotted `key` replaced. Unknown keys are rejected.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let unknown = || Error::Config(format!("unknown config key `{key}`"));
        let (parents, last) = match key.rsplit_once('.') {
            Some((p, l)) => (Some(p), l),
            None => (None, key),
        };
        let mut node = &mut tree;
        for part in parents.into_iter().flat_map(|p| p.split('.')) {
            node = node.get_mut(part).ok_or_else(unknown)?;
        }
        let table = node.as_table_mut().ok_or_else(unknown)?;
        if !table.contains_key(last) {
            return Err(unknown());
        }
        table.insert(last.to_string(), value.clone());
        let mut cfg: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        cfg.sweep.clear();
        Ok(cfg)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
