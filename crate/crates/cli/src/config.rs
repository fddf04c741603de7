use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fail::{CliResult, Failure};

pub const CONFIG_VERSION: u32 = 1;

/// Settings shared by every subcommand. Loaded from JSON, then overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub training_dir: Option<PathBuf>,
    pub predictions_dir: Option<PathBuf>,
    pub ground_truth_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub delta_d_mm: f64,
    #[serde(with = "labelmerge::plan::threshold")]
    pub delta_v: f64,
    pub pins: Vec<u32>,
    pub background: u32,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            training_dir: None,
            predictions_dir: None,
            ground_truth_dir: None,
            output_dir: PathBuf::from("labelmerge_out"),
            delta_d_mm: 10.0,
            delta_v: 3.5,
            pins: Vec::new(),
            background: 0,
            threads: 0,
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::input("config", format!("cannot read config: {e}")).at(path))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::input("config", format!("invalid config: {e}")).at(path))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Failure::input(
                "config",
                format!(
                    "config version {} is not supported (expected {CONFIG_VERSION})",
                    cfg.version
                ),
            )
            .at(path));
        }
        Ok(cfg)
    }

    pub fn support_dir(&self) -> PathBuf {
        self.output_dir.join("support")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.output_dir.join("merge_plan.json")
    }

    pub fn influence_dir(&self) -> PathBuf {
        self.output_dir.join("influence")
    }

    pub fn require<'a>(&self, dir: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
        dir.as_deref()
            .ok_or_else(|| Failure::input("config", format!("no {what} directory given in config or flags")))
    }
}
