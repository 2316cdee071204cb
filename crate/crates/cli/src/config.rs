//! Optional TOML configuration. Command-line flags override it; built-in
//! defaults fill whatever neither sets.

use std::path::Path;

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub data: DataSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rank: Option<usize>,
    pub max_cycles: Option<usize>,
    pub admm_iters: Option<usize>,
    pub admm_tol: Option<f64>,
    pub rho: Option<RhoValue>,
    pub outer_tol: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub order: Option<usize>,
    pub alpha: Option<f64>,
    pub delimiter: Option<char>,
}

/// `rho = "auto"` or a positive number (either bare or quoted).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RhoValue {
    Number(f64),
    Text(String),
}

impl RhoValue {
    pub fn to_setting(&self) -> String {
        match self {
            RhoValue::Number(x) => x.to_string(),
            RhoValue::Text(s) => s.clone(),
        }
    }
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}
