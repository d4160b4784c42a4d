use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::camera::{load_camera_model, CameraModel};
use crate::filter::FilterParams;
use crate::sync::{NetworkModel, SyncPolicy};
use crate::synth::SceneSpec;

/// Per-stage switches. Disabled filtering passes raw frames through;
/// disabled export still hashes the meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub filter: bool,
    pub refine: bool,
    pub feather: bool,
    pub prune: bool,
    pub export: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            filter: true,
            refine: true,
            feather: true,
            prune: true,
            export: true,
        }
    }
}

/// Everything a run needs. Relative paths in a config file resolve against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Camera model JSON; the 320x288 pinhole default when absent.
    pub camera: Option<PathBuf>,
    /// Recorded `.vmsh` stream; the synthetic `scene` when absent.
    pub input: Option<PathBuf>,
    pub scene: SceneSpec,
    pub filter: FilterParams,
    pub sync: SyncPolicy,
    pub network: NetworkModel,
    pub out: PathBuf,
    pub stages: StageFlags,
    pub queue_capacity: usize,
    pub bench_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            camera: None,
            input: None,
            scene: SceneSpec::standard(),
            filter: FilterParams::default(),
            sync: SyncPolicy::default(),
            network: NetworkModel::default(),
            out: PathBuf::from("out"),
            stages: StageFlags::default(),
            queue_capacity: 4,
            bench_frames: 120,
        }
    }
}

fn config_error(path: Option<&Path>, message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        path: path.map(Path::to_path_buf),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| config_error(None, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_error(Some(path), e.to_string()))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| config_error(Some(path), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.camera.as_mut().map(resolve);
        config.input.as_mut().map(resolve);
        resolve(&mut config.out);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for p in self.camera.iter().chain(&self.input) {
            if !p.exists() {
                return Err(PipelineError::Missing(p.clone()));
            }
        }
        if self.input.is_none() {
            self.scene.validate()?;
        }
        self.filter.validate().map_err(|e| config_error(None, e.to_string()))?;
        self.sync.validate()?;
        self.network.validate()?;
        if self.queue_capacity == 0 {
            return Err(config_error(None, "queue_capacity must be at least 1"));
        }
        Ok(())
    }

    pub fn camera_model(&self) -> Result<CameraModel, PipelineError> {
        match &self.camera {
            Some(p) => Ok(load_camera_model(p)?),
            None => Ok(CameraModel::default_nfov()),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.scene.seed = seed;
            self.network.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(camera) = &o.camera {
            self.camera = Some(camera.clone());
        }
        let f = &mut self.filter;
        set(&mut f.historic_window_ms, o.historic_ms);
        set(&mut f.small_n, o.small_n);
        set(&mut f.small_threshold_mm, o.small_mm);
        set(&mut f.large_n2, o.large_n2);
        set(&mut f.large_lambda_mm, o.large_lambda_mm);
        set(&mut f.large_ratio, o.large_ratio);
        set(&mut self.sync.out_of_order_wait_ms, o.wait_ms);
        set(&mut self.sync.max_lag_ms, o.max_lag_ms);
        for ch in [&mut self.network.depth, &mut self.network.color] {
            set(&mut ch.loss_rate, o.loss);
            set(&mut ch.latency_ms, o.latency_ms);
            set(&mut ch.jitter_ms, o.jitter_ms);
        }
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Command-line values that win over the config file. Network values apply
/// to both channels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub historic_ms: Option<u64>,
    pub small_n: Option<usize>,
    pub small_mm: Option<u16>,
    pub large_n2: Option<usize>,
    pub large_lambda_mm: Option<u16>,
    pub large_ratio: Option<f64>,
    pub wait_ms: Option<u64>,
    pub max_lag_ms: Option<u64>,
    pub loss: Option<f64>,
    pub latency_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
}
