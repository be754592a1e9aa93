//! The run config file: every tunable in one TOML document.

use std::path::{Path, PathBuf};

use e2edrive::policy::{CollectConfig, CollectionMix, EpisodeConfig, EvalConfig, ExpertGains};
use e2edrive::sim::{CameraConfig, RoadConfig, RoadSpec, ScenarioConfig, ScenarioKind, SimSetup, VehicleParams, PHYSICS_DT};
use e2edrive::trainer::TrainConfig;
use e2edrive::vision::CropRegion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config value out of range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: PathBuf,
    pub weights: PathBuf,
    pub loss_curve: PathBuf,
    pub record_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            weights: "model.e2ew".into(),
            loss_curve: "loss_curve.csv".into(),
            record_dir: "recordings".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub frames: usize,
    pub seed: u64,
    pub mix: CollectionMix,
    pub center_ticks: usize,
    pub braking_ticks: usize,
    pub recovery_max_ticks: usize,
    pub recovery_gate: f64,
    pub recovery_done: f64,
}

impl Default for CollectSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        Self {
            frames: 8000,
            seed: 11,
            mix: CollectionMix::default(),
            center_ticks: c.center_ticks,
            braking_ticks: c.braking_ticks,
            recovery_max_ticks: c.recovery_max_ticks,
            recovery_gate: c.recovery_gate,
            recovery_done: c.recovery_done,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub max_time: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            episodes: e.episodes,
            seed: e.seed,
            scenario: e.scenario,
            max_time: e.episode.max_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    pub scenario: ScenarioKind,
    pub seed: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            scenario: ScenarioKind::Center,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Control and frame rate, Hz. The period must be a whole number of
    /// 0.05 s physics steps.
    pub control_hz: f64,
    /// Defaults to the standard sky/hood crop of the camera frame.
    pub crop: Option<CropRegion>,
    pub split_seed: u64,
    pub paths: Paths,
    pub road: RoadConfig,
    pub vehicle: VehicleParams,
    pub scenario: ScenarioConfig,
    pub camera: CameraConfig,
    pub expert: ExpertGains,
    pub collect: CollectSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub server: ServerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            control_hz: 10.0,
            crop: None,
            split_seed: 11,
            paths: Paths::default(),
            road: RoadConfig::default(),
            vehicle: VehicleParams::default(),
            scenario: ScenarioConfig::default(),
            camera: CameraConfig::default(),
            expert: ExpertGains::default(),
            collect: CollectSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            server: ServerSection::default(),
        }
    }
}

fn range_err(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Range(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn crop_region(&self) -> CropRegion {
        self.crop.unwrap_or_else(|| CropRegion::default_for(self.camera.width, self.camera.height))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.control_hz.is_finite() && self.control_hz > 0.0 && self.control_hz <= 1.0 / PHYSICS_DT) {
            return Err(ConfigError::Range(format!("control_hz {} must be in (0, 20]", self.control_hz)));
        }
        self.episode_config().substeps().map_err(range_err)?;
        self.road.validate().map_err(range_err)?;
        self.vehicle.validate().map_err(range_err)?;
        self.scenario.validate().map_err(range_err)?;
        self.camera.validate().map_err(range_err)?;
        self.crop_region()
            .validate(self.camera.width, self.camera.height)
            .map_err(range_err)?;
        self.collect.mix.validate().map_err(range_err)?;
        self.collect_config().validate().map_err(range_err)?;
        if self.collect.frames == 0 {
            return Err(ConfigError::Range("collect.frames must be positive".into()));
        }
        self.train.validate().map_err(range_err)?;
        if self.eval.episodes == 0 {
            return Err(ConfigError::Range("eval.episodes must be positive".into()));
        }
        if self.scenario.road_margin + 1.0 > self.road.length {
            return Err(ConfigError::Range("scenario.road_margin leaves no room to spawn".into()));
        }
        Ok(())
    }

    pub fn setup(&self) -> Result<SimSetup, ConfigError> {
        let road = RoadSpec::generate(&self.road).map_err(range_err)?;
        SimSetup::new(road, self.vehicle.clone(), self.scenario.clone(), self.camera.clone()).map_err(range_err)
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            gains: self.expert.clone(),
            control_dt: self.control_dt(),
            center_ticks: self.collect.center_ticks,
            braking_ticks: self.collect.braking_ticks,
            recovery_max_ticks: self.collect.recovery_max_ticks,
            recovery_gate: self.collect.recovery_gate,
            recovery_done: self.collect.recovery_done,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_time: self.eval.max_time,
            control_dt: self.control_dt(),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.eval.episodes,
            seed: self.eval.seed,
            scenario: self.eval.scenario,
            episode: self.episode_config(),
        }
    }
}

/// Parses `a,b,c` strategy fractions.
pub fn parse_mix(text: &str) -> Result<CollectionMix, ConfigError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError::Parse(format!("mix `{text}`: {e}")))?;
    let [a, b, c] = parts[..] else {
        return Err(ConfigError::Parse(format!("mix `{text}` needs three comma-separated fractions")));
    };
    CollectionMix::new(a, b, c).map_err(range_err)
}
