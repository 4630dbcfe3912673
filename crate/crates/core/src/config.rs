//! Pipeline configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ScanPattern;
use crate::drivable::{DrivableConfig, EgoState};
use crate::error::{invalid, Result};
use crate::fusion::{CameraModel, FusionConfig};
use crate::geometry::RigidTransform;
use crate::ground::GroundConfig;
use crate::scene::RoiBand;

/// Mounting of one LiDAR in the vehicle frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarMount {
    pub name: String,
    #[serde(default)]
    pub translation: [f64; 3],
    /// Roll, pitch, yaw in radians.
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl LidarMount {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            translation: [0.0; 3],
            rpy: [0.0; 3],
        }
    }

    pub fn transform(&self) -> RigidTransform {
        let [r, p, y] = self.rpy;
        RigidTransform::from_rpy(r, p, y, self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    #[serde(flatten)]
    pub pattern: ScanPattern,
    /// Clusters whose top stays below this height above ground are dropped.
    pub min_height: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            pattern: ScanPattern::default(),
            min_height: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub lidars: Vec<LidarMount>,
    pub cameras: Vec<CameraModel>,
    pub roi: RoiBand,
    pub ground: GroundConfig,
    pub cluster: ClusterConfig,
    pub fusion: FusionConfig,
    pub drivable: DrivableConfig,
    pub ego: EgoState,
    /// Largest lateral gap between a fitted curb and the mapped boundary
    /// before the curb is distrusted.
    pub curb_tolerance: f64,
    /// Centroid distance for matching clusters to truth objects.
    pub match_distance: f64,
    /// Fraction of frames that may be skipped before a run fails.
    pub max_skipped: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ground = GroundConfig::default();
        Self {
            lidars: vec![LidarMount::new("lidar")],
            cameras: Vec::new(),
            roi: RoiBand {
                left_margin: 0.5,
                right_margin: ground.curb_reach,
                x_min: -20.0,
                x_max: 60.0,
            },
            ground,
            cluster: ClusterConfig::default(),
            fusion: FusionConfig::default(),
            drivable: DrivableConfig::default(),
            ego: EgoState::default(),
            curb_tolerance: 2.0,
            match_distance: 1.0,
            max_skipped: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| invalid(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.lidars.is_empty() {
            return Err(invalid("at least one lidar is required"));
        }
        for l in &self.lidars {
            l.transform().validate()?;
        }
        for c in &self.cameras {
            c.validate()?;
        }
        if !(self.roi.left_margin >= 0.0 && self.roi.right_margin >= 0.0) {
            return Err(invalid("roi margins must be non-negative"));
        }
        self.ground.validate()?;
        self.cluster.pattern.validate()?;
        self.cluster.pattern.points_per_line()?;
        self.fusion.validate()?;
        self.drivable.validate()?;
        self.ego.validate()?;
        if !(self.curb_tolerance > 0.0 && self.match_distance > 0.0) {
            return Err(invalid("curb tolerance and match distance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_skipped) {
            return Err(invalid("max_skipped must lie in [0, 1]"));
        }
        Ok(())
    }
}
