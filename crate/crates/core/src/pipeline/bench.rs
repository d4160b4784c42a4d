use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{elapsed_ms, filter_class, hex, mesh_class, mesh_frame, ErrorClass, FrameSource, PipelineConfig, PipelineError, TimingSummary};
use crate::filter::TemporalFilter;
use crate::frame::FramePair;
use crate::mesh::{ply_bytes, MeshBuilder};

/// Fewer samples than this are flagged as low confidence.
pub const CONFIDENT_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        });
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub grid: (usize, usize),
    /// `filter_frame` latency per frame.
    pub filter: TimingSummary,
    /// Build, refine, feather and prune latency per frame.
    pub mesh: TimingSummary,
    pub low_confidence: bool,
    pub machine: MachineInfo,
    pub mesh_sha256: Vec<String>,
}

/// Times the filter and the mesh stages over `frames` frames of the
/// configured source. Frames are produced before timing starts.
pub fn run_bench(config: &PipelineConfig, frames: usize) -> Result<BenchReport, PipelineError> {
    let mut config = config.clone();
    config.scene.frames = frames;
    config.validate()?;
    let model = config.camera_model()?;
    let pairs: Vec<FramePair> = FrameSource::open(&config, &model)?
        .take(frames)
        .collect::<Result<_, _>>()?;
    let (w, h) = (model.depth.width, model.depth.height);
    let mut filter =
        TemporalFilter::new(w, h, config.filter).map_err(|e| PipelineError::stage("filter", None, filter_class(&e), e))?;
    let builder = MeshBuilder::new(&model);
    let (mut filter_ms, mut mesh_ms, mut hashes) = (Vec::new(), Vec::new(), Vec::new());
    for pair in pairs {
        let n = pair.frame_number();
        let start = Instant::now();
        let filtered = filter
            .process(pair.depth())
            .map_err(|e| PipelineError::stage("filter", Some(n), filter_class(&e), e))?;
        filter_ms.push(elapsed_ms(start));
        let pair = pair
            .with_depth(filtered)
            .map_err(|e| PipelineError::stage("filter", Some(n), ErrorClass::Format, e))?;
        let start = Instant::now();
        let mesh =
            mesh_frame(&builder, &pair, &config.stages).map_err(|e| PipelineError::stage("mesh", Some(n), mesh_class(&e), e))?;
        mesh_ms.push(elapsed_ms(start));
        hashes.push(hex(&Sha256::digest(ply_bytes(&mesh))));
    }
    Ok(BenchReport {
        frames: mesh_ms.len(),
        grid: (builder.grid().rows, builder.grid().cols),
        filter: TimingSummary::from_samples(&filter_ms),
        mesh: TimingSummary::from_samples(&mesh_ms),
        low_confidence: mesh_ms.len() < CONFIDENT_SAMPLES,
        machine: MachineInfo::detect(),
        mesh_sha256: hashes,
    })
}
