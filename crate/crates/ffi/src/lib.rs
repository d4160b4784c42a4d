//! C ABI for volcap.
//!
//! Objects cross the boundary as opaque handles created by `vc_*_new` or
//! `vc_*_load` and released by the matching `vc_*_free`. Every fallible call
//! returns a [`VcStatus`]; on failure [`vc_last_error`] describes the cause
//! on the calling thread. Panics are caught and reported as `VC_PANIC`.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Vector3;

use volcap::align::{fit_rigid, residual, AlignError, CorrespondenceSet};
use volcap::camera::{load_camera_model, CameraModel};
use volcap::filter::{FilterParams, TemporalFilter};
use volcap::frame::{ColorFrame, DepthFrame, FramePair};
use volcap::mesh::{export_ply, feather_alpha, prune_long_triangles, refine_edge_vertices, GridMesh, MeshBuilder};
use volcap::sync::{Action, Channel, StreamPacket, SyncPolicy, Synchronizer};

/// Result of every fallible call. Values match the CLI exit codes where the
/// classes overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    VC_OK = 0,
    /// Writing a file failed.
    VC_OUTPUT = 1,
    /// Bad argument, missing file or invalid parameter.
    VC_INPUT = 2,
    /// Malformed data or mismatched shapes.
    VC_FORMAT = 3,
    /// Degenerate geometry such as collinear correspondences.
    VC_NUMERICAL = 4,
    VC_NULL_POINTER = 5,
    VC_PANIC = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = CString::new(message.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

struct Failure(VcStatus, String);

impl Failure {
    fn new(status: VcStatus, e: impl std::fmt::Display) -> Self {
        Failure(status, e.to_string())
    }
}

/// Runs `f`, recording the error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcStatus::VC_OK,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VcStatus::VC_PANIC
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(VcStatus::VC_NULL_POINTER, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` is null or points to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` is null or a nul-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VcStatus::VC_INPUT, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ camera

/// Opaque camera calibration.
pub struct VcCamera(CameraModel);

/// The built-in 320x288 depth / 1920x1080 color pinhole model.
#[no_mangle]
pub extern "C" fn vc_camera_default() -> *mut VcCamera {
    Box::into_raw(Box::new(VcCamera(CameraModel::default_nfov())))
}

/// Loads a camera JSON file into `*out`.
///
/// # Safety
/// `path` is a nul-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vc_camera_load(path: *const c_char, out: *mut *mut VcCamera) -> VcStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path, "path")?;
        let model = load_camera_model(&path).map_err(|e| Failure::new(VcStatus::VC_INPUT, e))?;
        *out = Box::into_raw(Box::new(VcCamera(model)));
        Ok(())
    })
}

/// Depth sensor size in pixels.
///
/// # Safety
/// `camera` is a live handle; `width` and `height` are writable.
#[no_mangle]
pub unsafe extern "C" fn vc_camera_depth_size(camera: *const VcCamera, width: *mut usize, height: *mut usize) -> VcStatus {
    guard(|| {
        non_null(camera, "camera")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        let m = &(*camera).0;
        *width = m.depth.width;
        *height = m.depth.height;
        Ok(())
    })
}

/// # Safety
/// `camera` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_camera_free(camera: *mut VcCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

// ------------------------------------------------------------------ alignment

/// Least-squares rigid fit of `n` point pairs given as packed `xyz` triples.
/// Writes the row-major rotation to `rotation[9]`, the translation to
/// `translation[3]` and, when non-null, the summed squared residual.
///
/// # Safety
/// `a` and `b` hold `3 * n` doubles; `rotation` and `translation` are
/// writable for 9 and 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_fit_rigid(
    a: *const f64,
    b: *const f64,
    n: usize,
    rotation: *mut f64,
    translation: *mut f64,
    residual_out: *mut f64,
) -> VcStatus {
    guard(|| {
        let a = slice(a, 3 * n, "a")?;
        let b = slice(b, 3 * n, "b")?;
        non_null(rotation, "rotation")?;
        non_null(translation, "translation")?;
        let points = |s: &[f64]| s.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let corr = CorrespondenceSet::new(points(a), points(b)).map_err(|e| {
            let status = match e {
                AlignError::Rank | AlignError::NonFinite(_) => VcStatus::VC_NUMERICAL,
                _ => VcStatus::VC_INPUT,
            };
            Failure::new(status, e)
        })?;
        let fit = fit_rigid(&corr);
        ptr::copy_nonoverlapping(fit.rotation_row_major().as_ptr(), rotation, 9);
        ptr::copy_nonoverlapping(fit.translation().as_ptr(), translation, 3);
        if !residual_out.is_null() {
            *residual_out = residual(&corr, &fit);
        }
        Ok(())
    })
}

// ------------------------------------------------------------------ filter

/// Temporal filter parameters; see [`vc_filter_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VcFilterParams {
    pub historic_window_ms: u64,
    pub small_n: usize,
    pub small_threshold_mm: u16,
    pub large_n2: usize,
    pub large_lambda_mm: u16,
    pub large_ratio: f64,
}

impl From<FilterParams> for VcFilterParams {
    fn from(p: FilterParams) -> Self {
        Self {
            historic_window_ms: p.historic_window_ms,
            small_n: p.small_n,
            small_threshold_mm: p.small_threshold_mm,
            large_n2: p.large_n2,
            large_lambda_mm: p.large_lambda_mm,
            large_ratio: p.large_ratio,
        }
    }
}

impl From<VcFilterParams> for FilterParams {
    fn from(p: VcFilterParams) -> Self {
        Self {
            historic_window_ms: p.historic_window_ms,
            small_n: p.small_n,
            small_threshold_mm: p.small_threshold_mm,
            large_n2: p.large_n2,
            large_lambda_mm: p.large_lambda_mm,
            large_ratio: p.large_ratio,
        }
    }
}

#[no_mangle]
pub extern "C" fn vc_filter_params_default() -> VcFilterParams {
    FilterParams::default().into()
}

/// Opaque temporal filter for one depth stream.
pub struct VcFilter(TemporalFilter);

/// Creates a filter for `width x height` depth frames. `params` may be null
/// for the defaults.
///
/// # Safety
/// `params` is null or readable; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vc_filter_new(
    width: usize,
    height: usize,
    params: *const VcFilterParams,
    out: *mut *mut VcFilter,
) -> VcStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = if params.is_null() {
            FilterParams::default()
        } else {
            (*params).into()
        };
        let f = TemporalFilter::new(width, height, params).map_err(|e| Failure::new(VcStatus::VC_INPUT, e))?;
        *out = Box::into_raw(Box::new(VcFilter(f)));
        Ok(())
    })
}

/// Filters one frame of `len` millimeter readings (0 = invalid) into
/// `output`, which may alias `depth`.
///
/// # Safety
/// `filter` is a live handle; `depth` is readable and `output` writable for
/// `len` values.
#[no_mangle]
pub unsafe extern "C" fn vc_filter_process(
    filter: *mut VcFilter,
    frame_number: u32,
    timestamp_us: u64,
    depth: *const u16,
    output: *mut u16,
    len: usize,
) -> VcStatus {
    guard(|| {
        non_null(filter, "filter")?;
        non_null(output, "output")?;
        let f = &mut (*filter).0;
        let (w, h) = (f.history().width(), f.history().height());
        if len != w * h {
            return Err(Failure(VcStatus::VC_FORMAT, format!("expected {} readings, got {len}", w * h)));
        }
        let data = slice(depth, len, "depth")?.to_vec();
        let frame =
            DepthFrame::new(frame_number, timestamp_us, w, h, data).map_err(|e| Failure::new(VcStatus::VC_FORMAT, e))?;
        let filtered = f.process(&frame).map_err(|e| Failure::new(VcStatus::VC_FORMAT, e))?;
        ptr::copy_nonoverlapping(filtered.data().as_ptr(), output, len);
        Ok(())
    })
}

/// # Safety
/// `filter` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_filter_free(filter: *mut VcFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

// ------------------------------------------------------------------ mesh

/// Refinement passes to run after the grid mesh is built.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VcMeshStages {
    pub refine: bool,
    pub feather: bool,
    pub prune: bool,
}

/// Opaque triangle mesh.
pub struct VcMesh(GridMesh);

/// Builds a mesh from a depth frame (millimeters, row-major) and an RGB8
/// color frame sized for `camera`. `stages` may be null to run every pass.
///
/// # Safety
/// `camera` is a live handle; `depth` holds `depth_len` values and `rgb`
/// holds `rgb_len` bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_build(
    camera: *const VcCamera,
    frame_number: u32,
    depth: *const u16,
    depth_len: usize,
    rgb: *const u8,
    rgb_len: usize,
    stages: *const VcMeshStages,
    out: *mut *mut VcMesh,
) -> VcStatus {
    guard(|| {
        non_null(camera, "camera")?;
        non_null(out, "out")?;
        let model = &(*camera).0;
        let format = |e: volcap::frame::FrameError| Failure::new(VcStatus::VC_FORMAT, e);
        let d = DepthFrame::new(
            frame_number,
            0,
            model.depth.width,
            model.depth.height,
            slice(depth, depth_len, "depth")?.to_vec(),
        )
        .map_err(format)?;
        let c = ColorFrame::new(
            frame_number,
            0,
            model.color.width,
            model.color.height,
            slice(rgb, rgb_len, "rgb")?.to_vec(),
        )
        .map_err(format)?;
        let pair = FramePair::new(d, c).map_err(format)?;
        let stages = if stages.is_null() {
            VcMeshStages {
                refine: true,
                feather: true,
                prune: true,
            }
        } else {
            *stages
        };
        let mut mesh = MeshBuilder::new(model)
            .build(&pair)
            .map_err(|e| Failure::new(VcStatus::VC_FORMAT, e))?;
        if stages.refine {
            mesh = refine_edge_vertices(mesh);
        }
        if stages.feather {
            mesh = feather_alpha(mesh);
        }
        if stages.prune {
            mesh = prune_long_triangles(mesh);
        }
        *out = Box::into_raw(Box::new(VcMesh(mesh)));
        Ok(())
    })
}

/// Valid vertices; 0 for a null handle.
///
/// # Safety
/// `mesh` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_vertex_count(mesh: *const VcMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.valid_vertex_count())
}

/// Triangles; 0 for a null handle.
///
/// # Safety
/// `mesh` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_triangle_count(mesh: *const VcMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangles().len())
}

/// Copies up to `capacity` triangles as grid vertex index triples into
/// `indices` (3 values each) and returns how many were copied.
///
/// # Safety
/// `mesh` is a live handle and `indices` is writable for `3 * capacity`
/// values.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_triangles(mesh: *const VcMesh, indices: *mut u32, capacity: usize) -> usize {
    let (Some(m), false) = (mesh.as_ref(), indices.is_null()) else {
        return 0;
    };
    let tris = m.0.triangles();
    let n = tris.len().min(capacity);
    ptr::copy_nonoverlapping(tris.as_ptr().cast::<u32>(), indices, 3 * n);
    n
}

/// Writes the mesh as ASCII PLY.
///
/// # Safety
/// `mesh` is a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_write_ply(mesh: *const VcMesh, path: *const c_char) -> VcStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let path = path_arg(path, "path")?;
        export_ply(&(*mesh).0, &path).map_err(|e| Failure::new(VcStatus::VC_OUTPUT, e))
    })
}

/// # Safety
/// `mesh` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_mesh_free(mesh: *mut VcMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

// ------------------------------------------------------------------ sync

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VcSyncPolicy {
    pub out_of_order_wait_ms: u64,
    pub max_lag_ms: u64,
    pub delivery_fps: u32,
    pub capture_fps: u32,
}

#[no_mangle]
pub extern "C" fn vc_sync_policy_default() -> VcSyncPolicy {
    let p = SyncPolicy::default();
    VcSyncPolicy {
        out_of_order_wait_ms: p.out_of_order_wait_ms,
        max_lag_ms: p.max_lag_ms,
        delivery_fps: p.delivery_fps,
        capture_fps: p.capture_fps,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcChannel {
    VC_DEPTH = 0,
    VC_COLOR = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcAction {
    VC_RENDER = 0,
    VC_SKIP = 1,
    VC_JUMP_TO = 2,
    VC_WAIT = 3,
}

/// One renderer decision. `frame_number` is 0 for `VC_WAIT`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcDecision {
    pub time_us: u64,
    pub action: VcAction,
    pub frame_number: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VcSyncStats {
    pub frames: u64,
    pub rendered: u64,
    pub jumps: u64,
    pub skipped: u64,
    pub superseded: u64,
    pub mean_render_latency_ms: f64,
}

/// Opaque synchronizer with a queue of decisions not yet collected.
pub struct VcSync {
    inner: Synchronizer,
    queue: VecDeque<VcDecision>,
}

impl VcSync {
    fn enqueue(&mut self, decisions: Vec<volcap::sync::RenderDecision>) {
        self.queue.extend(decisions.into_iter().map(|d| {
            let (action, n) = match d.action {
                Action::Render(n) => (VcAction::VC_RENDER, n),
                Action::Skip(n) => (VcAction::VC_SKIP, n),
                Action::JumpTo(n) => (VcAction::VC_JUMP_TO, n),
                Action::Wait => (VcAction::VC_WAIT, 0),
            };
            VcDecision {
                time_us: d.time_us,
                action,
                frame_number: n,
            }
        }));
    }
}

/// `policy` may be null for the defaults.
///
/// # Safety
/// `policy` is null or readable; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_new(policy: *const VcSyncPolicy, out: *mut *mut VcSync) -> VcStatus {
    guard(|| {
        non_null(out, "out")?;
        let policy = match policy.as_ref() {
            None => SyncPolicy::default(),
            Some(p) => SyncPolicy {
                out_of_order_wait_ms: p.out_of_order_wait_ms,
                max_lag_ms: p.max_lag_ms,
                delivery_fps: p.delivery_fps,
                capture_fps: p.capture_fps,
            },
        };
        let inner = Synchronizer::new(policy).map_err(|e| Failure::new(VcStatus::VC_INPUT, e))?;
        *out = Box::into_raw(Box::new(VcSync {
            inner,
            queue: VecDeque::new(),
        }));
        Ok(())
    })
}

/// Feeds one packet. Packets must arrive in non-decreasing arrival order.
/// Resulting decisions are queued for [`vc_sync_next`].
///
/// # Safety
/// `sync` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_push(
    sync: *mut VcSync,
    channel: VcChannel,
    frame_number: u32,
    send_time_us: u64,
    arrival_time_us: u64,
) -> VcStatus {
    guard(|| {
        non_null(sync, "sync")?;
        let channel = match channel {
            VcChannel::VC_DEPTH => Channel::Depth,
            VcChannel::VC_COLOR => Channel::Color,
        };
        let s = &mut *sync;
        let packet = StreamPacket::new(channel, frame_number, send_time_us, arrival_time_us)
            .map_err(|e| Failure::new(VcStatus::VC_INPUT, e))?;
        let out = s.inner.push(packet).map_err(|e| Failure::new(VcStatus::VC_INPUT, e))?;
        s.enqueue(out);
        Ok(())
    })
}

/// Advances virtual time to `now_us`, queueing timeouts (or one wait).
///
/// # Safety
/// `sync` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_poll(sync: *mut VcSync, now_us: u64) -> VcStatus {
    guard(|| {
        non_null(sync, "sync")?;
        let s = &mut *sync;
        let out = s.inner.poll(now_us);
        s.enqueue(out);
        Ok(())
    })
}

/// Times out every outstanding frame at the end of a stream.
///
/// # Safety
/// `sync` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_finish(sync: *mut VcSync) -> VcStatus {
    guard(|| {
        non_null(sync, "sync")?;
        let s = &mut *sync;
        let out = s.inner.finish();
        s.enqueue(out);
        Ok(())
    })
}

/// Pops the oldest queued decision into `out`. Returns false when the queue
/// is empty or an argument is null.
///
/// # Safety
/// `sync` is null or a live handle; `out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_next(sync: *mut VcSync, out: *mut VcDecision) -> bool {
    let (Some(s), false) = (sync.as_mut(), out.is_null()) else {
        return false;
    };
    match s.queue.pop_front() {
        Some(d) => {
            *out = d;
            true
        }
        None => false,
    }
}

/// # Safety
/// `sync` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_stats(sync: *const VcSync, out: *mut VcSyncStats) -> VcStatus {
    guard(|| {
        non_null(sync, "sync")?;
        non_null(out, "out")?;
        let s = (*sync).inner.stats();
        *out = VcSyncStats {
            frames: s.frames,
            rendered: s.rendered,
            jumps: s.jumps,
            skipped: s.skipped,
            superseded: s.superseded,
            mean_render_latency_ms: s.mean_render_latency_ms,
        };
        Ok(())
    })
}

/// # Safety
/// `sync` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_sync_free(sync: *mut VcSync) {
    if !sync.is_null() {
        drop(Box::from_raw(sync));
    }
}
