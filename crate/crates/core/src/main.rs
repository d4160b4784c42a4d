use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use volcap::align::{fit_rigid, point_errors, read_correspondences, residual};
use volcap::filter::TemporalFilter;
use volcap::mesh::{export_ply, MeshBuilder};
use volcap::metrics::QualityAccumulator;
use volcap::pipeline::{
    mesh_file_name, mesh_frame, run_bench, run_pipeline, run_sync, ErrorClass, FrameSource, Overrides, PipelineConfig,
    PipelineError,
};
use volcap::stream::{StreamReader, StreamWriter};
use volcap::sync::decisions_csv;
use volcap::synth::{generate_scene, load_scene_spec};

/// Volumetric capture toolkit.
#[derive(Debug, Parser)]
#[command(name = "volcap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic .vmsh stream.
    Synth {
        /// Scene JSON; the config's scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Temporally filter a stream and report raw versus filtered quality.
    Filter {
        /// Stream to filter.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate delivery and write the renderer's decision log.
    Sync {
        /// Stream to take frame numbers from; the configured scene otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build one PLY mesh per frame of a stream.
    Mesh {
        /// Stream to mesh.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a rigid transform to a correspondence CSV.
    Align {
        /// Rows of `ax,ay,az,bx,by,bz` in meters.
        correspondences: PathBuf,
        /// Also write the result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run filter, sync, mesh and export end to end.
    Pipeline {
        /// Recorded stream; the configured synthetic scene otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Time the filter and the mesh stages.
    Bench {
        /// Frames to time; the config's bench_frames when omitted.
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline config JSON; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for scene noise and the network model.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Camera JSON; the default NFOV pinhole otherwise.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Historic fill window.
    #[arg(long)]
    historic_ms: Option<u64>,
    /// Frames in the small-jitter moving average.
    #[arg(long)]
    small_n: Option<usize>,
    /// Small-jitter hold threshold.
    #[arg(long)]
    small_mm: Option<u16>,
    /// Frames scanned for large jumps.
    #[arg(long)]
    large_n2: Option<usize>,
    /// Change that counts as a large jump.
    #[arg(long)]
    large_lambda_mm: Option<u16>,
    /// Share of jumping frames that triggers the large hold.
    #[arg(long)]
    large_ratio: Option<f64>,
    /// How long the renderer waits for a missing half.
    #[arg(long)]
    wait_ms: Option<u64>,
    /// Lag behind the newest complete frame that forces a jump.
    #[arg(long)]
    max_lag_ms: Option<u64>,
    /// Loss rate applied to both channels.
    #[arg(long)]
    loss: Option<f64>,
    /// Mean one-way delay of both channels.
    #[arg(long)]
    latency_ms: Option<f64>,
    /// Delay standard deviation of both channels.
    #[arg(long)]
    jitter_ms: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = match &self.config {
            Some(path) if !path.exists() => return Err(PipelineError::Missing(path.clone())),
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            camera: self.camera.clone(),
            historic_ms: self.historic_ms,
            small_n: self.small_n,
            small_mm: self.small_mm,
            large_n2: self.large_n2,
            large_lambda_mm: self.large_lambda_mm,
            large_ratio: self.large_ratio,
            wait_ms: self.wait_ms,
            max_lag_ms: self.max_lag_ms,
            loss: self.loss,
            latency_ms: self.latency_ms,
            jitter_ms: self.jitter_ms,
        });
        Ok(config)
    }

    fn require_out(&self) -> Result<&Path, PipelineError> {
        self.out.as_deref().ok_or_else(|| PipelineError::Config {
            path: None,
            message: "--out is required".into(),
        })
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn with_input(mut config: PipelineConfig, input: &Path) -> PipelineConfig {
    config.input = Some(input.to_path_buf());
    config
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth { spec, common } => {
            let mut config = common.config()?;
            if let Some(path) = spec {
                config.scene = load_scene_spec(path)?;
                if let Some(seed) = common.seed {
                    config.scene.seed = seed;
                }
            }
            let out = common.require_out()?;
            config.validate()?;
            let model = config.camera_model()?;
            let mut writer = StreamWriter::create(out)?;
            for pair in generate_scene(&config.scene, &model)? {
                writer.write_pair(&pair)?;
            }
            let frames = writer.written();
            writer.finish()?;
            print_json(&json!({ "frames": frames, "out": out }));
        }
        Command::Filter { input, common } => {
            let config = with_input(common.config()?, &input);
            let out = common.require_out()?;
            config.validate()?;
            let mut writer = StreamWriter::create(out)?;
            let mut filter: Option<TemporalFilter> = None;
            let mut quality = QualityAccumulator::default();
            for pair in StreamReader::open(&input)? {
                let pair = pair?;
                let depth = pair.depth();
                let f = match &mut filter {
                    Some(f) => f,
                    None => filter.insert(TemporalFilter::new(depth.width(), depth.height(), config.filter).map_err(
                        |e| PipelineError::Config {
                            path: None,
                            message: e.to_string(),
                        },
                    )?),
                };
                let filtered = f.process(depth).map_err(|e| PipelineError::Stage {
                    stage: "filter",
                    frame: Some(pair.frame_number()),
                    class: ErrorClass::Format,
                    message: e.to_string(),
                })?;
                quality.push(depth, &filtered).map_err(|e| PipelineError::Stage {
                    stage: "metrics",
                    frame: Some(pair.frame_number()),
                    class: ErrorClass::Format,
                    message: e.to_string(),
                })?;
                let frame = pair.frame_number();
                writer.write_pair(&pair.with_depth(filtered).map_err(|e| PipelineError::Stage {
                    stage: "filter",
                    frame: Some(frame),
                    class: ErrorClass::Format,
                    message: e.to_string(),
                })?)?;
            }
            let frames = writer.written();
            writer.finish()?;
            print_json(&json!({ "frames": frames, "quality": quality.report().ok() }));
        }
        Command::Sync { input, common } => {
            let mut config = common.config()?;
            if let Some(input) = input {
                config.input = Some(input);
            }
            let (decisions, stats) = run_sync(&config)?;
            let csv = decisions_csv(&decisions);
            match &common.out {
                Some(path) => fs::write(path, csv).map_err(|e| PipelineError::output(path, e))?,
                None => print!("{csv}"),
            }
            eprintln!("{}", serde_json::to_string(&stats).expect("serializable"));
        }
        Command::Mesh { input, common } => {
            let config = with_input(common.config()?, &input);
            let out = common.require_out()?.to_path_buf();
            config.validate()?;
            let model = config.camera_model()?;
            fs::create_dir_all(&out).map_err(|e| PipelineError::output(&out, e))?;
            let builder = MeshBuilder::new(&model);
            let mut written = 0usize;
            for pair in FrameSource::open(&config, &model)? {
                let pair = pair?;
                let n = pair.frame_number();
                let mesh = mesh_frame(&builder, &pair, &config.stages).map_err(|e| PipelineError::Stage {
                    stage: "mesh",
                    frame: Some(n),
                    class: ErrorClass::Format,
                    message: e.to_string(),
                })?;
                let path = out.join(mesh_file_name(n));
                export_ply(&mesh, &path).map_err(|e| PipelineError::Stage {
                    stage: "export",
                    frame: Some(n),
                    class: ErrorClass::Output,
                    message: e.to_string(),
                })?;
                written += 1;
            }
            print_json(&json!({ "meshes": written, "out": out }));
        }
        Command::Align { correspondences, out } => {
            let corr = read_correspondences(&correspondences)?;
            let fit = fit_rigid(&corr);
            let report = json!({
                "transform": fit.to_json(),
                "residual": residual(&corr, &fit),
                "point_errors": point_errors(&corr, &fit),
            });
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).expect("serializable");
                fs::write(&path, text).map_err(|e| PipelineError::output(&path, e))?;
            }
            print_json(&report);
        }
        Command::Pipeline { input, common } => {
            let mut config = common.config()?;
            if let Some(input) = input {
                config.input = Some(input);
            }
            let report = run_pipeline(&config)?;
            print_json(&json!({
                "out": config.out,
                "frames": report.frames,
                "meshes": report.meshes.len(),
                "sync": report.sync,
                "quality": report.quality,
            }));
        }
        Command::Bench { frames, common } => {
            let config = common.config()?;
            let report = run_bench(&config, frames.unwrap_or(config.bench_frames))?;
            if let Some(path) = &common.out {
                let text = serde_json::to_string_pretty(&report).expect("serializable");
                fs::write(path, text).map_err(|e| PipelineError::output(path, e))?;
            }
            print_json(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ErrorClass::Input.exit_code() as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
