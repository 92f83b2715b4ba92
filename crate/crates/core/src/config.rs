//! Run configuration: one JSON file with defaults for every field, strict
//! key checking, and an `effective_config.json` echo per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demo;
use crate::error::{Error, Result};
use crate::features::FeatureExtractorSpec;
use crate::geom::{PinholeCamera, PointLight};
use crate::kinematics::DhChain;
use crate::losses::LossParams;
use crate::optimizer::{LossKind, OptimizeSpec, StepRule, Target};
use crate::raster::SoftRenderConfig;

/// Descent settings; extractor, loss parameters and renderer live at the
/// top level of [`RunConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub target: Target,
    pub step_size: Option<f64>,
    pub step_rule: StepRule,
    pub max_iters: usize,
    pub loss: LossKind,
    pub convergence_eps: f64,
    pub clamp_to_limits: bool,
    pub attention_refresh_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = OptimizeSpec::default();
        Self {
            target: d.target,
            step_size: d.step_size,
            step_rule: d.step_rule,
            max_iters: d.max_iters,
            loss: d.loss,
            convergence_eps: d.convergence_eps,
            clamp_to_limits: d.clamp_to_limits,
            attention_refresh_iters: d.attention_refresh_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Chain description; `None` selects the bundled demo chain.
    pub chain_file: Option<PathBuf>,
    pub camera: PinholeCamera,
    pub light: PointLight,
    /// `None` derives the renderer settings from the camera.
    pub renderer: Option<SoftRenderConfig>,
    pub optimizer: OptimizerConfig,
    pub extractor: FeatureExtractorSpec,
    pub losses: LossParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            chain_file: None,
            camera: demo::demo_camera(),
            light: demo::demo_light(),
            renderer: None,
            optimizer: OptimizerConfig::default(),
            extractor: FeatureExtractorSpec::Filterbank,
            losses: LossParams::default(),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(chain) = &cfg.chain_file {
            if chain.is_relative() {
                cfg.chain_file = Some(dir.join(chain));
            }
        }
        if let FeatureExtractorSpec::External { sidecar } = &cfg.extractor {
            if sidecar.is_relative() {
                cfg.extractor = FeatureExtractorSpec::External {
                    sidecar: dir.join(sidecar),
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without touching the filesystem; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }

    /// `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let cfg = Self::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(chain) = &self.chain_file {
            if !chain.is_file() {
                return Err(config_err("chain_file", format!("{} does not exist", chain.display())));
            }
        }
        self.camera.validate().map_err(|e| config_err("camera", e.to_string()))?;
        if !(self.light.intensity >= 0.0) {
            return Err(config_err("light", "intensity must be non-negative"));
        }
        if let Some(r) = &self.renderer {
            r.validate().map_err(|e| config_err("renderer", e.to_string()))?;
        }
        if let FeatureExtractorSpec::External { sidecar } = &self.extractor {
            if !sidecar.is_file() {
                return Err(config_err("extractor", format!("sidecar {} does not exist", sidecar.display())));
            }
        }
        self.optimize_spec().validate()
    }

    pub fn chain(&self) -> Result<DhChain> {
        match &self.chain_file {
            Some(p) => DhChain::load(p),
            None => Ok(demo::demo_chain()),
        }
    }

    pub fn render_config(&self) -> SoftRenderConfig {
        self.renderer.unwrap_or_else(|| SoftRenderConfig::for_camera(&self.camera))
    }

    pub fn optimize_spec(&self) -> OptimizeSpec {
        let o = &self.optimizer;
        OptimizeSpec {
            target: o.target,
            step_size: o.step_size,
            step_rule: o.step_rule,
            max_iters: o.max_iters,
            loss: o.loss,
            extractor: self.extractor.clone(),
            convergence_eps: o.convergence_eps,
            clamp_to_limits: o.clamp_to_limits,
            loss_params: self.losses,
            attention_refresh_iters: o.attention_refresh_iters,
            render: self.renderer,
        }
    }

    /// The config with every default spelled out.
    pub fn effective_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("effective_config.json");
        std::fs::write(&path, self.effective_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
