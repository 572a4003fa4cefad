//! `covslice.toml` loading and flag merging.
//!
//! Values given on the command line win over the config file, which wins
//! over built-in defaults.

use covslice::refine::RefineConfig;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const DEFAULT_CONFIG: &str = "covslice.toml";

/// The file layout. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub refine: RefineSection,
    /// Model label to client spec, e.g. `a = "mock:a.json"`.
    #[serde(default)]
    pub llm: BTreeMap<String, String>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub context_budget: Option<usize>,
    pub points_per_iter: Option<usize>,
    pub repair_attempts: Option<usize>,
    pub waiver_quorum: Option<usize>,
    pub target_score: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub backend: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub budget: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    /// Reads `explicit` if given, else `covslice.toml` in the working
    /// directory when it exists, else the empty config.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(DEFAULT_CONFIG);
                if !p.is_file() {
                    return Ok(Self::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        log::debug!("config from {}", path.display());
        Self::parse(&text, &path)
    }
}

/// Knobs that can come from flags, the file, or defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineFlags {
    pub context_budget: Option<usize>,
    pub points_per_iter: Option<usize>,
    pub repair_attempts: Option<usize>,
    pub waiver_quorum: Option<usize>,
    pub target_score: Option<f64>,
    pub max_iters: Option<usize>,
}

/// Fully resolved settings for a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub refine: RefineConfig,
    pub llms: Vec<(String, String)>,
    pub sim: Option<String>,
}

impl PipelineConfig {
    pub fn resolve(
        file: &ConfigFile,
        flags: &RefineFlags,
        llm_flags: &[(String, String)],
        sim_flag: Option<&str>,
    ) -> Result<Self, CliError> {
        let d = RefineConfig::default();
        let f = &file.refine;
        let refine = RefineConfig {
            context_budget: flags
                .context_budget
                .or(f.context_budget)
                .unwrap_or(d.context_budget),
            points_per_iter: flags
                .points_per_iter
                .or(f.points_per_iter)
                .unwrap_or(d.points_per_iter),
            repair_attempts: flags
                .repair_attempts
                .or(f.repair_attempts)
                .unwrap_or(d.repair_attempts),
            waiver_quorum: flags
                .waiver_quorum
                .or(f.waiver_quorum)
                .unwrap_or(d.waiver_quorum),
            target_score: flags
                .target_score
                .or(f.target_score)
                .unwrap_or(d.target_score),
            max_iters: flags.max_iters.or(f.max_iters).unwrap_or(d.max_iters),
        };
        refine.validate()?;
        // Flags replace the file's model list as a whole.
        let llms = if llm_flags.is_empty() {
            file.llm
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        } else {
            llm_flags.to_vec()
        };
        let sim = sim_flag
            .map(str::to_string)
            .or_else(|| file.sim.backend.clone());
        Ok(Self { refine, llms, sim })
    }
}
