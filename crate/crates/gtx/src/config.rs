//! Per-command TOML configs. Every table rejects unknown keys, and the top
//! level `seed` is the root of all randomness in a run: dataset and hill
//! generators take it directly and training runs use `seed + i`.

use std::path::Path;

use gtx_core::manifold::ConvergenceConfig;
use gtx_core::model::ModelConfig;
use gtx_core::terrain::TerrainConfig;
use gtx_core::train::{SyntheticConfig, TrainConfig, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};

/// Spectral check of the kernel Laplacian alongside the curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub enabled: bool,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub bandwidth_scale: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_grid: vec![256, 512, 1024, 2048],
            seeds: 8,
            bandwidth_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceFile {
    pub seed: u64,
    pub convergence: ConvergenceConfig,
    pub spectrum: SpectrumSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub train_fractions: Vec<f64>,
    pub test_fractions: Vec<f64>,
    pub seeds: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            train_fractions: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            test_fractions: vec![0.25, 0.5, 1.0],
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridFile {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub alpha: f64,
    pub variants: Vec<Variant>,
    pub baseline: Variant,
    pub seeds: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            variants: Variant::ALL.to_vec(),
            baseline: Variant::NoPe,
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFile {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainFile {
    pub seed: u64,
    /// Training runs per stride.
    pub seeds: usize,
    /// Write a checkpoint per `(stride, seed)`.
    pub checkpoints: bool,
    /// Elevation grid in the DEM text format, relative to the working
    /// directory. Without it the procedural hill in `terrain.hill` is used.
    pub dem: Option<String>,
    pub terrain: TerrainConfig,
}

impl Default for TerrainFile {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            checkpoints: true,
            dem: None,
            terrain: TerrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    /// Evaluation points per check, drawn from `seed + i`.
    pub points: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { points: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckFile {
    pub seed: u64,
    pub gradcheck: GradcheckSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestSection {
    /// Random graphs per randomized invariant.
    pub trials: usize,
}

impl Default for SelftestSection {
    fn default() -> Self {
        Self { trials: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestFile {
    pub seed: u64,
    pub selftest: SelftestSection,
}

/// A command config: parsed from text, then resolved against the root
/// seed so that the echo is complete.
pub trait CommandConfig: Serialize + DeserializeOwned + Default {
    fn root_seed(&mut self) -> &mut u64;

    /// Copies the root seed into nested generators and checks values.
    fn resolve(&mut self) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// Copies `root` into a nested seed, which may only have been left at
/// its default or set to the same value.
fn pin_seed(nested: &mut u64, root: u64, key: &str) -> std::result::Result<(), String> {
    if *nested != 0 && *nested != root {
        return Err(format!("{key} = {nested} conflicts with the root seed {root}; set only the top-level `seed`"));
    }
    *nested = root;
    Ok(())
}

fn positive(n: usize, key: &str) -> std::result::Result<(), String> {
    if n == 0 {
        return Err(format!("{key} must be positive"));
    }
    Ok(())
}

impl CommandConfig for ConvergenceFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        self.convergence.validate().map_err(|e| e.to_string())?;
        if self.spectrum.enabled {
            positive(self.spectrum.seeds, "spectrum.seeds")?;
            if self.spectrum.n_grid.is_empty() {
                return Err("spectrum.n_grid must not be empty".into());
            }
        }
        Ok(())
    }
}

impl CommandConfig for GridFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        pin_seed(&mut self.data.seed, self.seed, "data.seed")?;
        positive(self.grid.seeds, "grid.seeds")?;
        for (key, fr) in [("grid.train_fractions", &self.grid.train_fractions), ("grid.test_fractions", &self.grid.test_fractions)] {
            if fr.is_empty() || fr.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                return Err(format!("{key} must be nonempty with entries in (0, 1]"));
            }
        }
        self.data.validate().map_err(|e| e.to_string())?;
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }
}

impl CommandConfig for AblationFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        pin_seed(&mut self.data.seed, self.seed, "data.seed")?;
        positive(self.ablation.seeds, "ablation.seeds")?;
        if self.ablation.variants.is_empty() {
            return Err("ablation.variants must not be empty".into());
        }
        if !self.ablation.variants.contains(&self.ablation.baseline) {
            return Err(format!("ablation.baseline `{}` is not among the variants", self.ablation.baseline.key()));
        }
        if !(self.ablation.alpha > 0.0 && self.ablation.alpha <= 1.0) {
            return Err("ablation.alpha must lie in (0, 1]".into());
        }
        self.data.validate().map_err(|e| e.to_string())?;
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }
}

impl CommandConfig for TerrainFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        pin_seed(&mut self.terrain.hill.seed, self.seed, "terrain.hill.seed")?;
        positive(self.seeds, "seeds")?;
        if self.terrain.strides.is_empty() || self.terrain.strides.contains(&0) {
            return Err("terrain.strides must be nonempty and positive".into());
        }
        self.terrain.model.validate().map_err(|e| e.to_string())?;
        self.terrain.train.validate().map_err(|e| e.to_string())
    }
}

impl CommandConfig for GradcheckFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        positive(self.gradcheck.points, "gradcheck.points")
    }
}

impl CommandConfig for SelftestFile {
    fn root_seed(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn resolve(&mut self) -> std::result::Result<(), String> {
        positive(self.selftest.trials, "selftest.trials")
    }
}

/// Parses `text`, applies the seed override and resolves.
pub fn parse_config<C: CommandConfig>(text: &str, seed: Option<u64>, path: &Path) -> Result<C> {
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut cfg: C = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
    if let Some(s) = seed {
        *cfg.root_seed() = s;
    }
    cfg.resolve().map_err(schema)?;
    Ok(cfg)
}

/// Reads and parses a config file; no path means all defaults.
pub fn load_config<C: CommandConfig>(path: Option<&Path>, seed: Option<u64>) -> Result<C> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_at(p))?;
            parse_config(&text, seed, p)
        }
        None => parse_config("", seed, Path::new("<defaults>")),
    }
}

/// Canonical text of a resolved config, written as `config_echo.toml`.
pub fn echo<C: CommandConfig>(cfg: &C) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Failed(format!("cannot serialize config: {e}")))
}
