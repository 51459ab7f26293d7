//! Experiment configuration: one TOML file drives generate/train/eval/report.
//!
//! Unknown keys are rejected everywhere. Loading produces a [`ResolvedConfig`]
//! with every default filled in; the resolved form is serialized back into
//! each output directory so results carry their exact provenance.

use std::path::Path;

use sha2::Digest;

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::scene::{reference_scene, SceneDef, TrajectoryKind, TrajectorySpec};
use crate::train::{MethodKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Principal point; defaults to the sensor center.
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
}

impl Default for IntrinsicsConfig {
    fn default() -> Self {
        IntrinsicsConfig { focal: 64.0, width: 64, height: 64, cx: None, cy: None }
    }
}

impl IntrinsicsConfig {
    pub fn build(&self) -> Intrinsics {
        let mut intr = Intrinsics::centered(self.focal, self.width, self.height);
        if let Some(cx) = self.cx {
            intr.cx = cx;
        }
        if let Some(cy) = self.cy {
            intr.cy = cy;
        }
        intr
    }
}

/// The reference trajectory: a 90-degree orbit arc split into 3 tasks of 5
/// views around the origin.
pub fn reference_trajectory() -> TrajectorySpec {
    TrajectorySpec {
        kind: TrajectoryKind::OrbitArc,
        tasks: 3,
        views_per_task: 5,
        extent: 90.0,
        radius: 2.2,
        height: 0.8,
        start: [0.0; 3],
        travel: [1.0, 0.0, 0.0],
        target: [0.0; 3],
    }
}

fn default_methods() -> Vec<String> {
    MethodKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Omitted: the built-in reference scene.
    #[serde(default)]
    pub scene: Option<SceneDef>,
    #[serde(default = "reference_trajectory")]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub intrinsics: IntrinsicsConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            deterministic: false,
            methods: default_methods(),
            scene: None,
            trajectory: reference_trajectory(),
            intrinsics: IntrinsicsConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Fully validated configuration with all defaults applied.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub deterministic: bool,
    #[serde(serialize_with = "serialize_methods")]
    pub methods: Vec<MethodKind>,
    pub scene: SceneDef,
    pub trajectory: TrajectorySpec,
    pub intrinsics: Intrinsics,
    pub train: TrainConfig,
}

fn serialize_methods<S: serde::Serializer>(methods: &[MethodKind], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    methods.iter().map(|m| m.name()).collect::<Vec<_>>().serialize(s)
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        let mut methods = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let kind: MethodKind = name.parse()?;
            if methods.contains(&kind) {
                return Err(Error::Config(format!("method '{name}' listed twice")));
            }
            methods.push(kind);
        }
        let scene = self.scene.clone().unwrap_or_else(reference_scene);
        scene.validate()?;
        self.trajectory.validate()?;
        let intrinsics = self.intrinsics.build();
        intrinsics.validate()?;
        let mut train = self.train.clone();
        // the experiment seed is the single source of randomness
        train.seed = self.seed;
        train.random_ray_bounds = scene.bounds;
        train.validate()?;
        Ok(ResolvedConfig {
            seed: self.seed,
            deterministic: self.deterministic,
            methods,
            scene,
            trajectory: self.trajectory.clone(),
            intrinsics,
            train,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e.to_string()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    /// SHA-256 of the resolved TOML; the provenance identity of a run.
    pub fn hash(&self) -> Result<String> {
        let mut hasher = sha2::Sha256::new();
        hasher.update(self.to_toml()?.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}
