//! Pipeline configuration files.
//!
//! ```toml
//! seed = 2024
//! n_views = 7
//! fusion = "vis"
//!
//! [paths]
//! data = "data"
//! output = "out"
//!
//! [[stages]]
//! n_hypotheses = 32
//! range_scale = 1.0
//! temperature = 0.05
//! fused_temperature = 0.05
//! smoothing = { spatial_radius = 2, depth_radius = 1 }
//! # two more [[stages]] tables
//!
//! [uncertainty]
//! a = 3.5
//! b = 1.0
//!
//! [filter]
//! prob_thresholds = [0.6, 0.6, 0.6]
//! min_consistent_views = 2
//! reproj_px = 1.0
//! rel_depth = 0.01
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, StageConfig};
use crate::error::{Error, Result};
use crate::features::DEFAULT_GROUPS;
use crate::fusion::FusionStrategy;
use crate::pairwise::FuParams;
use crate::pointcloud::FilterConfig;
use crate::synth::{SuiteParams, MAX_SOURCES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            output: "out".into(),
        }
    }
}

/// Overrides the per-scene depth range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthRange {
    pub d_min: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Source views per reference.
    pub n_views: usize,
    pub fusion: FusionStrategy,
    pub groups: usize,
    pub floor_ratio: f64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_range: Option<DepthRange>,
    pub paths: Paths,
    pub stages: [StageConfig; 3],
    pub uncertainty: FuParams,
    pub filter: FilterConfig,
    pub synth: SuiteParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cascade = CascadeConfig::new(1.0, 1.0);
        Self {
            seed: 2024,
            n_views: 7,
            fusion: cascade.fusion,
            groups: DEFAULT_GROUPS,
            floor_ratio: cascade.floor_ratio,
            jobs: 0,
            depth_range: None,
            paths: Paths::default(),
            stages: cascade.stages,
            uncertainty: cascade.uncertainty,
            filter: FilterConfig::default(),
            synth: SuiteParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Cascade settings for a scene with the given depth range, unless overridden.
    pub fn cascade(&self, d_min: f64, delta: f64) -> CascadeConfig {
        let (d_min, delta) = match self.depth_range {
            Some(r) => (r.d_min, r.delta),
            None => (d_min, delta),
        };
        CascadeConfig {
            d_min,
            delta,
            stages: self.stages,
            fusion: self.fusion,
            uncertainty: self.uncertainty,
            groups: self.groups,
            floor_ratio: self.floor_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.n_views > MAX_SOURCES {
            return Err(Error::config(format!(
                "n_views must lie in 1..={MAX_SOURCES}, got {}",
                self.n_views
            )));
        }
        let (d_min, delta) = self.depth_range.map_or((1.0, 1.0), |r| (r.d_min, r.delta));
        self.cascade(d_min, delta).validate()?;
        self.filter.validate(usize::MAX)?;
        let s = &self.synth;
        if !s.width.is_multiple_of(4)
            || !s.height.is_multiple_of(4)
            || s.width == 0
            || s.height == 0
        {
            return Err(Error::config(format!(
                "synthetic image size {}x{} must be a positive multiple of 4",
                s.width, s.height
            )));
        }
        if s.scenes_per_suite == 0 {
            return Err(Error::config("scenes_per_suite must be at least 1"));
        }
        Ok(())
    }
}
