use std::ffi::{CStr, CString};
use std::ptr;

use nalgebra::{Rotation3, Vector3};

use volcap::camera::CameraModel;
use volcap::filter::{FilterParams, TemporalFilter};
use volcap::frame::{ColorFrame, DepthFrame, FramePair};
use volcap::mesh::MeshBuilder;
use volcap::sync::{synchronize_with_stats, Action, Channel, StreamPacket, SyncPolicy};
use volcap_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(vc_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn rigid_fit_through_the_abi() {
    let r = Rotation3::from_euler_angles(0.2, 0.5, -1.0);
    let t = Vector3::new(1.0, -2.0, 0.5);
    let a = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.3, 0.3];
    let b: Vec<f64> = a
        .chunks(3)
        .flat_map(|c| {
            let p = r * Vector3::new(c[0], c[1], c[2]) + t;
            [p.x, p.y, p.z]
        })
        .collect();
    let (mut rot, mut tr, mut res) = ([0.0; 9], [0.0; 3], -1.0);
    let s = unsafe { vc_fit_rigid(a.as_ptr(), b.as_ptr(), 5, rot.as_mut_ptr(), tr.as_mut_ptr(), &mut res) };
    assert_eq!(s, VcStatus::VC_OK);
    for i in 0..3 {
        assert!((tr[i] - t[i]).abs() < 1e-12);
        for j in 0..3 {
            assert!((rot[3 * i + j] - r[(i, j)]).abs() < 1e-12);
        }
    }
    assert!(res.abs() < 1e-20);
}

#[test]
fn rigid_fit_errors_map_to_status() {
    let line = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
    let (mut rot, mut tr) = ([0.0; 9], [0.0; 3]);
    let s = unsafe { vc_fit_rigid(line.as_ptr(), line.as_ptr(), 3, rot.as_mut_ptr(), tr.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, VcStatus::VC_NUMERICAL);
    assert!(!last_error().is_empty());

    let s = unsafe { vc_fit_rigid(line.as_ptr(), line.as_ptr(), 2, rot.as_mut_ptr(), tr.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, VcStatus::VC_INPUT);

    let s = unsafe { vc_fit_rigid(ptr::null(), line.as_ptr(), 3, rot.as_mut_ptr(), tr.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, VcStatus::VC_NULL_POINTER);
    assert!(last_error().contains('a'));
}

#[test]
fn filter_matches_the_library() {
    let (w, h) = (8, 6);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { vc_filter_new(w, h, ptr::null(), &mut handle) }, VcStatus::VC_OK);
    let mut direct = TemporalFilter::new(w, h, FilterParams::default()).unwrap();
    let mut state = 7u32;
    for n in 0..12u32 {
        let data: Vec<u16> = (0..w * h)
            .map(|_| {
                state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                if state >> 28 == 0 { 0 } else { 1500 + (state >> 24) as u16 % 12 }
            })
            .collect();
        let ts = u64::from(n) * 33_333;
        let mut out = vec![0u16; w * h];
        let s = unsafe { vc_filter_process(handle, n, ts, data.as_ptr(), out.as_mut_ptr(), out.len()) };
        assert_eq!(s, VcStatus::VC_OK);
        let want = direct.process(&DepthFrame::new(n, ts, w, h, data).unwrap()).unwrap();
        assert_eq!(out.as_slice(), want.data());
    }
    let mut out = vec![0u16; 3];
    let s = unsafe { vc_filter_process(handle, 12, 0, out.clone().as_ptr(), out.as_mut_ptr(), 3) };
    assert_eq!(s, VcStatus::VC_FORMAT);
    unsafe { vc_filter_free(handle) };

    let mut bad = vc_filter_params_default();
    bad.small_n = 0;
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { vc_filter_new(w, h, &bad, &mut handle) }, VcStatus::VC_INPUT);
    assert!(handle.is_null());
}

#[test]
fn mesh_build_and_export() {
    let camera = vc_camera_default();
    let (mut w, mut h) = (0, 0);
    assert_eq!(unsafe { vc_camera_depth_size(camera, &mut w, &mut h) }, VcStatus::VC_OK);
    assert_eq!((w, h), (320, 288));
    let model = CameraModel::default_nfov();
    let depth = vec![1500u16; w * h];
    let rgb = vec![128u8; 3 * model.color.width * model.color.height];

    let stages = VcMeshStages { refine: false, feather: false, prune: false };
    let mut mesh = ptr::null_mut();
    let s = unsafe { vc_mesh_build(camera, 0, depth.as_ptr(), depth.len(), rgb.as_ptr(), rgb.len(), &stages, &mut mesh) };
    assert_eq!(s, VcStatus::VC_OK, "{}", last_error());
    let pair = FramePair::new(
        DepthFrame::new(0, 0, w, h, depth.clone()).unwrap(),
        ColorFrame::new(0, 0, model.color.width, model.color.height, rgb.clone()).unwrap(),
    )
    .unwrap();
    let direct = MeshBuilder::new(&model).build(&pair).unwrap();
    let count = unsafe { vc_mesh_triangle_count(mesh) };
    assert_eq!(count, direct.triangles().len());
    assert_eq!(count, 2 * (w - 1) * (h - 1));
    assert_eq!(unsafe { vc_mesh_vertex_count(mesh) }, w * h);
    let mut idx = vec![0u32; 3 * count];
    assert_eq!(unsafe { vc_mesh_triangles(mesh, idx.as_mut_ptr(), count) }, count);
    assert_eq!(idx.chunks(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>(), direct.triangles());

    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("m.ply").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vc_mesh_write_ply(mesh, path.as_ptr()) }, VcStatus::VC_OK);
    let text = std::fs::read_to_string(tmp.path().join("m.ply")).unwrap();
    assert!(text.starts_with("ply\n"));
    let bad = CString::new(tmp.path().join("no/such/dir/m.ply").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vc_mesh_write_ply(mesh, bad.as_ptr()) }, VcStatus::VC_OUTPUT);
    unsafe { vc_mesh_free(mesh) };

    let mut mesh = ptr::null_mut();
    let s = unsafe { vc_mesh_build(camera, 0, depth.as_ptr(), 10, rgb.as_ptr(), rgb.len(), ptr::null(), &mut mesh) };
    assert_eq!(s, VcStatus::VC_FORMAT);
    unsafe { vc_camera_free(camera) };
}

#[test]
fn camera_load_reports_missing_file() {
    let mut cam = ptr::null_mut();
    let path = CString::new("/nonexistent/camera.json").unwrap();
    assert_eq!(unsafe { vc_camera_load(path.as_ptr(), &mut cam) }, VcStatus::VC_INPUT);
    assert!(last_error().contains("/nonexistent/camera.json"));
    let good = CString::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/camera_small.json")).unwrap();
    assert_eq!(unsafe { vc_camera_load(good.as_ptr(), &mut cam) }, VcStatus::VC_OK);
    unsafe { vc_camera_free(cam) };
}

#[test]
fn synchronizer_matches_batch_run() {
    // frame 2 loses its color half; frame 5 arrives late
    let mut trace = Vec::new();
    for n in 0..8u32 {
        let send = u64::from(n) * 33_333;
        let extra = if n == 5 { 90_000 } else { 0 };
        trace.push(StreamPacket::new(Channel::Depth, n, send, send + 20_000 + extra).unwrap());
        if n != 2 {
            trace.push(StreamPacket::new(Channel::Color, n, send, send + 25_000 + extra).unwrap());
        }
    }
    trace.sort_by_key(|p| p.arrival_time_us);
    let (want, want_stats) = synchronize_with_stats(&trace, &SyncPolicy::default()).unwrap();

    let mut sync = ptr::null_mut();
    assert_eq!(unsafe { vc_sync_new(ptr::null(), &mut sync) }, VcStatus::VC_OK);
    for p in &trace {
        let ch = match p.channel {
            Channel::Depth => VcChannel::VC_DEPTH,
            Channel::Color => VcChannel::VC_COLOR,
        };
        let s = unsafe { vc_sync_push(sync, ch, p.frame_number, p.send_time_us, p.arrival_time_us) };
        assert_eq!(s, VcStatus::VC_OK);
    }
    assert_eq!(unsafe { vc_sync_finish(sync) }, VcStatus::VC_OK);
    let mut got = Vec::new();
    let mut d = VcDecision { time_us: 0, action: VcAction::VC_WAIT, frame_number: 0 };
    while unsafe { vc_sync_next(sync, &mut d) } {
        got.push(d);
    }
    let want: Vec<VcDecision> = want
        .iter()
        .map(|d| {
            let (action, frame_number) = match d.action {
                Action::Render(n) => (VcAction::VC_RENDER, n),
                Action::Skip(n) => (VcAction::VC_SKIP, n),
                Action::JumpTo(n) => (VcAction::VC_JUMP_TO, n),
                Action::Wait => (VcAction::VC_WAIT, 0),
            };
            VcDecision { time_us: d.time_us, action, frame_number }
        })
        .collect();
    assert_eq!(got, want);
    assert!(got.iter().any(|d| d.action == VcAction::VC_SKIP && d.frame_number == 2));

    let mut stats = VcSyncStats::default();
    assert_eq!(unsafe { vc_sync_stats(sync, &mut stats) }, VcStatus::VC_OK);
    assert_eq!(stats.frames, want_stats.frames);
    assert_eq!(stats.rendered, want_stats.rendered);
    assert_eq!(stats.skipped, want_stats.skipped);
    assert_eq!(stats.rendered + stats.jumps + stats.skipped + stats.superseded, stats.frames);
    unsafe { vc_sync_free(sync) };
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        vc_camera_free(ptr::null_mut());
        vc_filter_free(ptr::null_mut());
        vc_mesh_free(ptr::null_mut());
        vc_sync_free(ptr::null_mut());
        assert_eq!(vc_mesh_triangle_count(ptr::null()), 0);
        assert!(!vc_sync_next(ptr::null_mut(), ptr::null_mut()));
        assert_eq!(vc_sync_push(ptr::null_mut(), VcChannel::VC_DEPTH, 0, 0, 0), VcStatus::VC_NULL_POINTER);
        let v = CStr::from_ptr(vc_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
