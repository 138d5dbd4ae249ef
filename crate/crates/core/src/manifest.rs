//! Run manifests: a dataset, a list of models, the prior and run settings.
//!
//! Relative paths inside a manifest resolve against the manifest's own
//! directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::hypothesis::{ModelDefinition, ModelSpec};
use crate::mc::{PriorSpec, RunSettings};
use crate::table::StratifiedTable;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// A bundled fixture by name, or a CSV/JSON table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Fixture(String),
    File { path: PathBuf },
}

/// A model spec file, or a definition written inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    File {
        path: PathBuf,
    },
    Inline(ModelDefinition),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "e" | "ln" => Ok(LogBase::E),
            "10" => Ok(LogBase::Ten),
            other => Err(Error::spec(format!("log base '{other}' must be 'e' or '10'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LogBase::E => "e",
            LogBase::Ten => "10",
        }
    }

    /// Convert a natural log to this base.
    pub fn convert(self, ln_value: f64) -> f64 {
        match self {
            LogBase::E => ln_value,
            LogBase::Ten => ln_value / std::f64::consts::LN_10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Symmetric Dirichlet prior `D(kappa * 1)` in every stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub concentration: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { concentration: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub dataset: DatasetRef,
    pub models: Vec<ModelRef>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub settings: RunSettings,
    #[serde(default)]
    pub log_base: LogBase,
    /// Every model is also compared with this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
    /// Prior concentrations for a sensitivity sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concentrations: Vec<f64>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A manifest with its dataset loaded and its models built.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub manifest: RunManifest,
    pub dataset_name: String,
    pub table: StratifiedTable,
    pub definitions: Vec<ModelDefinition>,
    pub models: Vec<ModelSpec>,
}

impl Loaded {
    pub fn prior(&self, kappa: f64) -> PriorSpec {
        PriorSpec::symmetric(kappa, self.table.cells_per_stratum(), self.table.num_strata())
    }

    pub fn model(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Read a table from a `.json` file or, otherwise, a CSV file.
pub fn load_table(path: &Path) -> Result<StratifiedTable> {
    let text = read(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        StratifiedTable::from_json_str(&text)
    } else {
        StratifiedTable::from_csv_str(&text)
    };
    parsed.map_err(|e| Error::spec(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<ModelDefinition> {
    ModelDefinition::from_json_str(&read(path)?).map_err(|e| Error::spec(format!("{}: {e}", path.display())))
}

impl RunManifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::spec(format!(
                "manifest schema_version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialise")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&read(path)?).map_err(|e| Error::spec(format!("{}: {e}", path.display())))
    }

    /// Load the dataset and build every model; `base` anchors relative paths.
    pub fn load(self, base: &Path) -> Result<Loaded> {
        let (dataset_name, table) = match &self.dataset {
            DatasetRef::Fixture(name) => (name.clone(), fixtures::by_name(name)?),
            DatasetRef::File { path } => {
                let full = resolve(base, path);
                (path.display().to_string(), load_table(&full)?)
            }
        };
        if self.models.is_empty() {
            return Err(Error::spec("manifest lists no models"));
        }
        let mut definitions = Vec::with_capacity(self.models.len());
        for m in &self.models {
            definitions.push(match m {
                ModelRef::Inline(def) => def.clone(),
                ModelRef::File { path } => load_model(&resolve(base, path))?,
            });
        }
        let mut seen = BTreeSet::new();
        for d in &definitions {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::spec(format!("model name '{}' appears twice", d.name)));
            }
        }
        let models = definitions
            .iter()
            .map(|d| d.build(table.dims(), table.num_strata()))
            .collect::<Result<Vec<_>>>()?;
        let known = |name: &str| -> Result<()> {
            if seen.contains(name) {
                Ok(())
            } else {
                Err(Error::spec(format!("unknown model '{name}' in manifest")))
            }
        };
        if let Some(r) = &self.reference {
            known(r)?;
        }
        for c in &self.comparisons {
            known(&c.model)?;
            known(&c.reference)?;
        }
        if let Some(bad) = self.concentrations.iter().find(|&&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::domain(format!("concentration {bad} must be positive")));
        }
        if !(self.prior.concentration > 0.0) || !self.prior.concentration.is_finite() {
            return Err(Error::domain(format!(
                "prior concentration {} must be positive",
                self.prior.concentration
            )));
        }
        self.settings.validate()?;
        Ok(Loaded {
            manifest: self,
            dataset_name,
            table,
            definitions,
            models,
        })
    }
}

/// Load a manifest file, resolving paths against its directory.
pub fn load(path: &Path) -> Result<Loaded> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    RunManifest::from_file(path)?.load(&base)
}
