//! End-to-end runner: read or synthesize frames, filter them on the
//! producer side, simulate delivery, then mesh and export the frames the
//! renderer shows.
//!
//! A metadata pass over frame numbers and timestamps decides which frames
//! are shown. The heavy work then streams through three threads joined by
//! bounded queues: read+filter, mesh, export. Depth crosses the
//! producer/consumer seam in its serialized record form.

mod bench;
mod config;

pub use bench::{run_bench, BenchReport, MachineInfo};
pub use config::{Overrides, PipelineConfig, StageFlags};

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::AlignError;
use crate::camera::{CameraError, CameraModel};
use crate::filter::{FilterError, TemporalFilter};
use crate::frame::{ColorFrame, FrameError, FramePair};
use crate::mesh::{feather_alpha, ply_bytes, prune_long_triangles, refine_edge_vertices, GridMesh, MeshBuilder, MeshError};
use crate::metrics::{MetricsError, QualityAccumulator, QualityReport};
use crate::stream::{decode_depth, encode_depth, StreamError, StreamReader};
use crate::sync::{decisions_csv, simulate_network_frames, FrameStamp, RenderDecision, SyncError, SyncStats};
use crate::synth::{generate_scene, SceneFrames, SynthError};

/// Stable process exit codes per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Writing outputs failed.
    Output = 1,
    /// Bad arguments, config, parameters or a missing input file.
    Input = 2,
    /// Malformed stream or frame shapes that disagree.
    Format = 3,
    /// Degenerate numerical input.
    Numerical = 4,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config{}: {message}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    Config { path: Option<PathBuf>, message: String },
    #[error("{}: no such file", .0.display())]
    Missing(PathBuf),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Scene(#[from] SynthError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} failed{}: {message}", frame.map(|n| format!(" at frame {n}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<u32>,
        class: ErrorClass,
        message: String,
    },
}

fn stream_class(e: &StreamError) -> ErrorClass {
    match e {
        StreamError::Io { .. } => ErrorClass::Input,
        _ => ErrorClass::Format,
    }
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config { .. } | PipelineError::Missing(_) | PipelineError::Sync(_) => ErrorClass::Input,
            PipelineError::Camera(_) | PipelineError::Scene(_) => ErrorClass::Input,
            PipelineError::Stream(e) => stream_class(e),
            PipelineError::Align(e) => match e {
                AlignError::Rank | AlignError::NonFinite(_) => ErrorClass::Numerical,
                _ => ErrorClass::Input,
            },
            PipelineError::Output { .. } => ErrorClass::Output,
            PipelineError::Stage { class, .. } => *class,
        }
    }

    pub fn output(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    fn stage(stage: &'static str, frame: Option<u32>, class: ErrorClass, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage,
            frame,
            class,
            message: message.to_string(),
        }
    }
}

fn filter_class(e: &FilterError) -> ErrorClass {
    match e {
        FilterError::Params(_) => ErrorClass::Input,
        FilterError::Shape { .. } => ErrorClass::Format,
    }
}

fn mesh_class(e: &MeshError) -> ErrorClass {
    match e {
        MeshError::Shape { .. } => ErrorClass::Format,
        MeshError::Io { .. } => ErrorClass::Output,
    }
}

/// Median, 95th percentile and mean of per-frame latencies in milliseconds.
/// Percentiles use the nearest-rank rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TimingSummary {
    pub samples: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            samples: s.len(),
            median_ms: rank(0.5),
            p95_ms: rank(0.95),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            max_ms: s[s.len() - 1],
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeshSummary {
    pub frame_number: u32,
    pub vertices: usize,
    pub triangles: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PipelineTiming {
    pub filter: TimingSummary,
    pub mesh: TimingSummary,
    pub export: TimingSummary,
    pub total_ms: f64,
}

/// Contents of `metrics.json`. Everything except `timing` is a
/// deterministic function of the config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub frames: usize,
    /// Absent for single-frame runs.
    pub quality: Option<QualityReport>,
    pub sync: SyncStats,
    pub meshes: Vec<MeshSummary>,
    pub timing: PipelineTiming,
}

pub const METRICS_FILE: &str = "metrics.json";
pub const DECISIONS_FILE: &str = "decisions.csv";

pub fn mesh_file_name(frame_number: u32) -> String {
    format!("mesh_{frame_number:06}.ply")
}

/// Frames of the configured source, read or generated lazily.
pub enum FrameSource {
    Stream(StreamReader<BufReader<File>>),
    Synth(Box<SceneFrames>),
}

impl FrameSource {
    pub fn open(config: &PipelineConfig, model: &CameraModel) -> Result<Self, PipelineError> {
        Ok(match &config.input {
            Some(path) => FrameSource::Stream(StreamReader::open(path)?),
            None => FrameSource::Synth(Box::new(generate_scene(&config.scene, model)?)),
        })
    }
}

impl Iterator for FrameSource {
    type Item = Result<FramePair, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            FrameSource::Stream(r) => r.next(),
            FrameSource::Synth(s) => s.next().map(Ok),
        }
    }
}

/// Frame numbers and capture times of the source, without keeping payloads.
pub fn frame_stamps(config: &PipelineConfig) -> Result<Vec<FrameStamp>, PipelineError> {
    match &config.input {
        Some(path) => StreamReader::open(path)?
            .map(|p| p.map(|p| FrameStamp::from(&p)).map_err(PipelineError::from))
            .collect(),
        None => {
            config.scene.validate()?;
            Ok((0..config.scene.frames)
                .map(|k| FrameStamp {
                    frame_number: k as u32,
                    timestamp_us: k as u64 * 1_000_000 / crate::synth::CAPTURE_FPS,
                })
                .collect())
        }
    }
}

/// Builds and post-processes the mesh of one pair as the stages require.
pub fn mesh_frame(builder: &MeshBuilder, pair: &FramePair, stages: &StageFlags) -> Result<GridMesh, MeshError> {
    let mut mesh = builder.build(pair)?;
    if stages.refine {
        mesh = refine_edge_vertices(mesh);
    }
    if stages.feather {
        mesh = feather_alpha(mesh);
    }
    if stages.prune {
        mesh = prune_long_triangles(mesh);
    }
    Ok(mesh)
}

struct Boundary {
    frame_number: u32,
    depth_record: Vec<u8>,
    color: ColorFrame,
}

struct ProducerOutput {
    frames: usize,
    quality: Option<QualityReport>,
    filter_ms: Vec<f64>,
}

fn produce(
    config: &PipelineConfig,
    model: &CameraModel,
    shown: &HashSet<u32>,
    tx: SyncSender<Boundary>,
) -> Result<ProducerOutput, PipelineError> {
    let mut source = FrameSource::open(config, model)?;
    let (w, h) = (model.depth.width, model.depth.height);
    let mut filter = TemporalFilter::new(w, h, config.filter)
        .map_err(|e| PipelineError::stage("filter", None, filter_class(&e), e))?;
    let mut quality = QualityAccumulator::default();
    let mut filter_ms = Vec::new();
    let mut frames = 0;
    let metric_err = |n: u32, e: MetricsError| PipelineError::stage("metrics", Some(n), ErrorClass::Format, e);
    for pair in &mut source {
        let pair = pair.map_err(|e| {
            let class = stream_class(&e);
            PipelineError::stage("read", None, class, e)
        })?;
        let n = pair.frame_number();
        frames += 1;
        let (raw, color) = pair.into_parts();
        let filtered = if config.stages.filter {
            let start = Instant::now();
            let out = filter
                .process(&raw)
                .map_err(|e| PipelineError::stage("filter", Some(n), filter_class(&e), e))?;
            filter_ms.push(elapsed_ms(start));
            out
        } else {
            raw.clone()
        };
        quality.push(&raw, &filtered).map_err(|e| metric_err(n, e))?;
        if !shown.contains(&n) {
            continue;
        }
        let mut depth_record = Vec::with_capacity(filtered.data().len() * 2 + 32);
        encode_depth(&mut depth_record, &filtered).expect("writing to memory");
        let msg = Boundary {
            frame_number: n,
            depth_record,
            color,
        };
        if tx.send(msg).is_err() {
            // consumer stopped; its error is reported instead
            break;
        }
    }
    Ok(ProducerOutput {
        frames,
        quality: (frames >= 2).then(|| quality.report()).transpose().map_err(|e| metric_err(0, e))?,
        filter_ms,
    })
}

fn consume(
    config: &PipelineConfig,
    model: &CameraModel,
    rx: Receiver<Boundary>,
    tx: SyncSender<GridMesh>,
) -> Result<Vec<f64>, PipelineError> {
    let builder = MeshBuilder::new(model);
    let mut mesh_ms = Vec::new();
    for msg in rx {
        let n = msg.frame_number;
        let depth = decode_depth(&msg.depth_record)
            .map_err(|e| PipelineError::stage("boundary", Some(n), ErrorClass::Format, e))?;
        let pair = FramePair::new(depth, msg.color)
            .map_err(|e: FrameError| PipelineError::stage("boundary", Some(n), ErrorClass::Format, e))?;
        let start = Instant::now();
        let mesh = mesh_frame(&builder, &pair, &config.stages)
            .map_err(|e| PipelineError::stage("mesh", Some(n), mesh_class(&e), e))?;
        mesh_ms.push(elapsed_ms(start));
        if tx.send(mesh).is_err() {
            break;
        }
    }
    Ok(mesh_ms)
}

fn export(config: &PipelineConfig, rx: Receiver<GridMesh>) -> Result<(Vec<MeshSummary>, Vec<f64>), PipelineError> {
    let mut summaries = Vec::new();
    let mut export_ms = Vec::new();
    for mesh in rx {
        let start = Instant::now();
        let bytes = ply_bytes(&mesh);
        let n = mesh.frame_number();
        if config.stages.export {
            let path = config.out.join(mesh_file_name(n));
            fs::write(&path, &bytes).map_err(|e| PipelineError::output(&path, e))?;
        }
        summaries.push(MeshSummary {
            frame_number: n,
            vertices: mesh.valid_vertex_count(),
            triangles: mesh.triangles().len(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
        export_ms.push(elapsed_ms(start));
    }
    Ok((summaries, export_ms))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let mut f = File::create(path).map_err(|e| PipelineError::output(path, e))?;
    f.write_all(contents).map_err(|e| PipelineError::output(path, e))
}

/// Runs every stage and writes `mesh_NNNNNN.ply`, `metrics.json` and
/// `decisions.csv` into `config.out`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let total = Instant::now();
    config.validate()?;
    let model = config.camera_model()?;
    fs::create_dir_all(&config.out).map_err(|e| PipelineError::output(&config.out, e))?;

    let stamps = frame_stamps(config)?;
    let run = simulate_network_frames(&stamps, &config.network, &config.sync)?;
    write_file(&config.out.join(DECISIONS_FILE), decisions_csv(&run.decisions).as_bytes())?;
    let shown: HashSet<u32> = run.decisions.iter().filter_map(|d| d.action.shows_frame()).collect();

    let (to_mesh, from_producer) = sync_channel(config.queue_capacity);
    let (to_export, from_mesher) = sync_channel(config.queue_capacity);
    let (produced, meshed, exported) = thread::scope(|s| {
        let producer = s.spawn(|| produce(config, &model, &shown, to_mesh));
        let mesher = s.spawn(|| consume(config, &model, from_producer, to_export));
        let exporter = s.spawn(|| export(config, from_mesher));
        let panicked = "pipeline stage panicked";
        (
            producer.join().expect(panicked),
            mesher.join().expect(panicked),
            exporter.join().expect(panicked),
        )
    });
    // upstream errors first: a failing producer also starves later stages
    let produced = produced?;
    let mesh_ms = meshed?;
    let (meshes, export_ms) = exported?;

    let report = PipelineReport {
        frames: produced.frames,
        quality: produced.quality,
        sync: run.stats,
        meshes,
        timing: PipelineTiming {
            filter: TimingSummary::from_samples(&produced.filter_ms),
            mesh: TimingSummary::from_samples(&mesh_ms),
            export: TimingSummary::from_samples(&export_ms),
            total_ms: elapsed_ms(total),
        },
    };
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_file(&config.out.join(METRICS_FILE), &json)?;
    Ok(report)
}

/// Decisions for the configured source and network without meshing.
pub fn run_sync(config: &PipelineConfig) -> Result<(Vec<RenderDecision>, SyncStats), PipelineError> {
    config.validate()?;
    let stamps = frame_stamps(config)?;
    let run = simulate_network_frames(&stamps, &config.network, &config.sync)?;
    Ok((run.decisions, run.stats))
}
