use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use volcap::filter::TemporalFilter;
use volcap::frame::FramePair;
use volcap::mesh::{ply_bytes, MeshBuilder};
use volcap::metrics::quality_report;
use volcap::pipeline::{
    hex, mesh_file_name, mesh_frame, run_bench, run_pipeline, PipelineConfig, DECISIONS_FILE, METRICS_FILE,
};
use volcap::sync::{capture_stamps, simulate_network_frames, ChannelModel, NetworkModel};
use volcap::synth::{generate_scene, NoiseSpec};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::load(configs().join("pipeline_small.json")).unwrap();
    c.out = out.to_path_buf();
    c
}

#[test]
fn lossless_static_plane_renders_every_frame_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(tmp.path());
    c.scene.geometry = volcap::synth::Geometry::FlatPlane;
    c.scene.noise = NoiseSpec::default();
    c.scene.frames = 20;
    c.network = NetworkModel::ideal();
    let report = run_pipeline(&c).unwrap();

    // every second captured pair is delivered
    assert_eq!(report.sync.frames, 10);
    assert_eq!(report.sync.rendered, 10);
    assert_eq!(report.sync.skipped + report.sync.jumps + report.sync.superseded, 0);
    assert_eq!(report.meshes.len(), 10);
    let first = &report.meshes[0].sha256;
    assert!(report.meshes.iter().all(|m| &m.sha256 == first));
    let bytes = fs::read(tmp.path().join(mesh_file_name(report.meshes[9].frame_number))).unwrap();
    assert_eq!(&hex(&Sha256::digest(&bytes)), first);
}

#[test]
fn total_depth_loss_skips_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(tmp.path());
    c.network.depth = ChannelModel {
        loss_rate: 1.0,
        ..ChannelModel::default()
    };
    c.network.color.loss_rate = 0.0;
    let report = run_pipeline(&c).unwrap();
    assert!(report.meshes.is_empty());
    assert!(!fs::read_dir(tmp.path()).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "ply")));
    let csv = fs::read_to_string(tmp.path().join(DECISIONS_FILE)).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("skip")), "{csv}");
}

#[test]
fn metrics_match_stagewise_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small_config(tmp.path());
    let report = run_pipeline(&c).unwrap();
    let model = c.camera_model().unwrap();

    let pairs: Vec<FramePair> = generate_scene(&c.scene, &model).unwrap().collect();
    let mut filter = TemporalFilter::new(64, 48, c.filter).unwrap();
    let filtered: Vec<_> = pairs.iter().map(|p| filter.process(p.depth()).unwrap()).collect();
    let raw: Vec<_> = pairs.iter().map(|p| p.depth().clone()).collect();
    assert_eq!(report.quality, Some(quality_report(&raw, &filtered).unwrap()));

    let run = simulate_network_frames(&capture_stamps(pairs.len(), 30), &c.network, &c.sync).unwrap();
    assert_eq!(report.sync, run.stats);

    let builder = MeshBuilder::new(&model);
    let shown: Vec<u32> = run.decisions.iter().filter_map(|d| d.action.shows_frame()).collect();
    assert_eq!(report.meshes.iter().map(|m| m.frame_number).collect::<Vec<_>>(), shown);
    for m in &report.meshes {
        let k = m.frame_number as usize;
        let pair = pairs[k].clone().with_depth(filtered[k].clone()).unwrap();
        let mesh = mesh_frame(&builder, &pair, &c.stages).unwrap();
        assert_eq!(hex(&Sha256::digest(ply_bytes(&mesh))), m.sha256, "frame {k}");
    }

    let json: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(json["sync"]["rendered"], run.stats.rendered);
    assert!(json["timing"]["mesh"]["median_ms"].is_number());
}

#[test]
fn disabled_export_still_reports_meshes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(tmp.path());
    c.stages.export = false;
    let report = run_pipeline(&c).unwrap();
    assert!(!report.meshes.is_empty());
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn single_frame_bench_is_low_confidence() {
    let c = small_config(Path::new("unused"));
    let report = run_bench(&c, 1).unwrap();
    assert_eq!(report.frames, 1);
    assert_eq!(report.mesh.samples, 1);
    assert!(report.low_confidence);
}

#[test]
fn bench_hashes_repeat() {
    let c = small_config(Path::new("unused"));
    let a = run_bench(&c, 5).unwrap();
    let b = run_bench(&c, 5).unwrap();
    assert_eq!(a.mesh_sha256, b.mesh_sha256);
}
