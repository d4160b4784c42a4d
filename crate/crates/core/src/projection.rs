//! World → pixel camera math for the reconstruction grid.
//!
//! Every grid point `P = (X, Y, 1)` is distorted with the depth lens model,
//! mapped to a depth pixel with the depth intrinsics and looked up in the
//! depth map. The same ray, distorted with the color lens model and scaled by
//! the measured depth, is moved into the color camera with the extrinsics,
//! perspective-divided and sampled bilinearly from the color image.

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraModel, DistortionModel};
use crate::frame::{ColorFrame, DepthFrame, INVALID_DEPTH};

/// Below this magnitude the rational distortion denominator is singular.
pub const DENOMINATOR_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("distortion denominator {denominator:e} is singular at r² = {r2}")]
    Singular { r2: f64, denominator: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
}

/// Fixed `rows x cols` lattice of rays with `X ∈ [-0.5, 0.5]` across columns
/// and `Y ∈ [-0.5, 0.5]` across rows (`Y = 0.5` on row 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid needs at least 2x2 points");
        Self { rows, cols }
    }

    /// Grid matching the depth sensor resolution of `model`.
    pub fn for_model(model: &CameraModel) -> Self {
        Self::new(model.depth.height, model.depth.width)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize, j: usize) -> GridPoint {
        debug_assert!(i < self.rows && j < self.cols);
        GridPoint {
            i,
            j,
            x: j as f64 / (self.cols - 1) as f64 - 0.5,
            y: 0.5 - i as f64 / (self.rows - 1) as f64,
        }
    }

    /// Grid X/Y at fractional grid coordinates.
    pub fn ray_at(&self, i: f64, j: f64) -> (f64, f64) {
        (
            j / (self.cols - 1) as f64 - 0.5,
            0.5 - i / (self.rows - 1) as f64,
        )
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| self.point(i, j)))
    }
}

/// A grid ray `(X, Y, 1)` and its lattice indices (row `i`, column `j`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
}

/// Applies radial + tangential distortion to normalized coordinates.
pub fn distort_point(x: f64, y: f64, model: &DistortionModel) -> Result<(f64, f64), ProjectionError> {
    let r2 = x * x + y * y;
    let r4 = r2 * r2;
    let r6 = r4 * r2;
    let numerator = 1.0 + model.k1 * r2 + model.k2 * r4 + model.k3 * r6;
    let denominator = 1.0 + model.k4 * r2 + model.k5 * r4 + model.k6 * r6;
    if denominator.abs() < DENOMINATOR_EPSILON {
        return Err(ProjectionError::Singular { r2, denominator });
    }
    let radial = numerator / denominator;
    let xd = x * radial + 2.0 * model.p1 * x * y + model.p2 * (r2 + 2.0 * x * x);
    let yd = y * radial + model.p1 * (r2 + 2.0 * y * y) + 2.0 * model.p2 * x * y;
    Ok((xd, yd))
}

/// Normalizes a camera-space point by its depth, then distorts it.
pub fn distort_camera_point(p: &Vector3<f64>, model: &DistortionModel) -> Result<(f64, f64), ProjectionError> {
    if p.z <= 0.0 {
        return Err(ProjectionError::BehindCamera { z: p.z });
    }
    distort_point(p.x / p.z, p.y / p.z, model)
}

pub fn project_to_pixel(x: f64, y: f64, intr: &CameraIntrinsics) -> (f64, f64) {
    (intr.fx * x + intr.cx, intr.fy * y + intr.cy)
}

/// Inverse of [`project_to_pixel`].
pub fn unproject_pixel(u: f64, v: f64, intr: &CameraIntrinsics) -> (f64, f64) {
    ((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy)
}

/// Nearest integer pixel for a real coordinate, or `None` outside
/// `[-0.5, size - 0.5]`. The closed boundaries round inward.
pub fn nearest_pixel(coord: f64, size: usize) -> Option<usize> {
    if !(coord >= -0.5 && coord <= size as f64 - 0.5) {
        return None;
    }
    Some((coord.round().max(0.0) as usize).min(size - 1))
}

/// Depth pixel `(column, row)` sampled by grid point `p`.
pub fn depth_pixel(p: &GridPoint, model: &CameraModel) -> Result<Option<(usize, usize)>, ProjectionError> {
    let (xd, yd) = distort_point(p.x, p.y, &model.depth.distortion)?;
    let (u, v) = project_to_pixel(xd, yd, &model.depth.intrinsics);
    Ok(nearest_pixel(u, model.depth.width).zip(nearest_pixel(v, model.depth.height)))
}

/// Depth in millimeters seen along grid ray `p`; `None` when the ray leaves
/// the image, the reading is invalid or the lens model is singular there.
pub fn lookup_depth(p: &GridPoint, depth: &DepthFrame, model: &CameraModel) -> Option<u16> {
    let (xd, yd) = distort_point(p.x, p.y, &model.depth.distortion).ok()?;
    let (u, v) = project_to_pixel(xd, yd, &model.depth.intrinsics);
    let col = nearest_pixel(u, depth.width())?;
    let row = nearest_pixel(v, depth.height())?;
    match depth.get(col, row) {
        INVALID_DEPTH => None,
        d => Some(d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorSample {
    pub rgb: [u8; 3],
    /// Set when the projection fell outside the image and the nearest edge
    /// was sampled instead.
    pub clamped: bool,
}

/// Bilinear sample with integer coordinates at pixel centers.
pub fn sample_bilinear(color: &ColorFrame, u: f64, v: f64) -> ColorSample {
    let w = color.width();
    let h = color.height();
    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;
    let clamped = !(u >= 0.0 && u <= max_u && v >= 0.0 && v <= max_v);
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, max_u) };
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max_v) };
    // u, v are nonnegative here, so truncation is floor
    let x0 = u as usize;
    let y0 = v as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = u - x0 as f64;
    let ay = v - y0 as f64;
    let data = color.data();
    let (i00, i01) = (3 * (y0 * w + x0), 3 * (y0 * w + x1));
    let (i10, i11) = (3 * (y1 * w + x0), 3 * (y1 * w + x1));
    let (p00, p01, p10, p11) = (&data[i00..i00 + 3], &data[i01..i01 + 3], &data[i10..i10 + 3], &data[i11..i11 + 3]);
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let top = p00[c] as f64 * (1.0 - ax) + p01[c] as f64 * ax;
        let bottom = p10[c] as f64 * (1.0 - ax) + p11[c] as f64 * ax;
        let value = top * (1.0 - ay) + bottom * ay;
        // round half up; the saturating cast truncates a nonnegative value
        *out = (value + 0.5) as u8;
    }
    ColorSample { rgb, clamped }
}

/// Color pixel coordinates for a color-distorted ray `(xd, yd)` at depth `d`.
fn color_pixel(xd: f64, yd: f64, d: u16, model: &CameraModel) -> Result<(f64, f64), ProjectionError> {
    let scale = d as f64 * 1e-3;
    let world = Vector3::new(xd * scale, yd * scale, scale);
    let pc = model.color_extrinsics.apply(&world);
    if pc.z <= 0.0 {
        return Err(ProjectionError::BehindCamera { z: pc.z });
    }
    Ok(project_to_pixel(pc.x / pc.z, pc.y / pc.z, &model.color.intrinsics))
}

/// Color seen by grid ray `p` whose depth reading is `d` millimeters.
pub fn lookup_color(
    p: &GridPoint,
    d: u16,
    color: &ColorFrame,
    model: &CameraModel,
) -> Result<ColorSample, ProjectionError> {
    let (xd, yd) = distort_point(p.x, p.y, &model.color.distortion)?;
    let (u, v) = color_pixel(xd, yd, d, model)?;
    Ok(sample_bilinear(color, u, v))
}

/// Vertex position in meters relative to the depth sensor: `(X, Y, 1)·d·10⁻³`.
pub fn grid_vertex_world(p: &GridPoint, d: u16) -> Vector3<f64> {
    let s = d as f64 * 1e-3;
    Vector3::new(p.x * s, p.y * s, s)
}

/// Per-grid-point lookups that do not depend on frame content, computed once
/// per camera model.
#[derive(Debug, Clone)]
pub struct GridLookup {
    grid: Grid,
    model: CameraModel,
    /// Row-major depth pixel index per grid point.
    depth_index: Vec<Option<u32>>,
    /// Color-distorted ray per grid point; `None` where the lens model is singular.
    color_ray: Vec<Option<(f64, f64)>>,
}

impl GridLookup {
    pub fn new(grid: Grid, model: &CameraModel) -> Self {
        let mut depth_index = Vec::with_capacity(grid.len());
        let mut color_ray = Vec::with_capacity(grid.len());
        for p in grid.points() {
            let idx = depth_pixel(&p, model)
                .ok()
                .flatten()
                .map(|(c, r)| (r * model.depth.width + c) as u32);
            depth_index.push(idx);
            color_ray.push(distort_point(p.x, p.y, &model.color.distortion).ok());
        }
        Self {
            grid,
            model: *model,
            depth_index,
            color_ray,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn model(&self) -> &CameraModel {
        &self.model
    }

    /// Same result as [`lookup_depth`] for grid point index `k`.
    pub fn depth_at(&self, k: usize, depth: &DepthFrame) -> Option<u16> {
        let idx = self.depth_index[k]? as usize;
        match depth.data()[idx] {
            INVALID_DEPTH => None,
            d => Some(d),
        }
    }

    /// Same result as [`lookup_color`] for grid point index `k`.
    pub fn color_at(&self, k: usize, d: u16, color: &ColorFrame) -> Result<ColorSample, ProjectionError> {
        let (xd, yd) = match self.color_ray[k] {
            Some(ray) => ray,
            None => {
                let p = self.grid.point(k / self.grid.cols, k % self.grid.cols);
                distort_point(p.x, p.y, &self.model.color.distortion)?
            }
        };
        let (u, v) = color_pixel(xd, yd, d, &self.model)?;
        Ok(sample_bilinear(color, u, v))
    }
}
