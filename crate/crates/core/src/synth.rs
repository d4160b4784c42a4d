//! Seeded synthetic RGBD scenes.
//!
//! Depth pixels are cast as pinhole rays through the depth intrinsics (lens
//! distortion is not inverted) and intersected with the scene. Each frame
//! then gets per-pixel Gaussian noise rounded to whole millimeters and i.i.d.
//! dropout. Randomness comes from one ChaCha8 stream seeded with
//! `SceneSpec::seed`, consumed frame by frame in row-major pixel order (a
//! dropout uniform, then a noise sample when σ > 0), followed by the burst
//! draws.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::frame::{ColorFrame, DepthFrame, FramePair};
use crate::projection::unproject_pixel;

/// Capture rate used for synthetic timestamps.
pub const CAPTURE_FPS: u64 = 30;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    FlatPlane,
    /// Plane whose right part (normalized `x ≥ edge_x`) sits `step_mm` further away.
    StepEdge {
        step_mm: f64,
        #[serde(default)]
        edge_x: f64,
    },
    /// Sphere on the optical axis resting in front of the plane.
    SphereOnPlane { radius_mm: f64 },
}

/// Pixels within `radius_px` of a burst center read invalid for
/// `duration_frames` frames. A burst starts with `start_probability` per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstDropout {
    pub start_probability: f64,
    pub radius_px: f64,
    pub duration_frames: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub gaussian_sigma_mm: f64,
    pub dropout_rate: f64,
    pub burst_dropout: Option<BurstDropout>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_sigma_mm: 0.0,
            dropout_rate: 0.0,
            burst_dropout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub base_depth_mm: f64,
    pub drift_mm_per_frame: f64,
    pub noise: NoiseSpec,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::FlatPlane,
            base_depth_mm: 1000.0,
            drift_mm_per_frame: 0.0,
            noise: NoiseSpec::default(),
            frames: 60,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Flat plane at 1 m, σ = 2 mm, 5% dropout, 60 frames, seed 7.
    pub fn standard() -> Self {
        Self {
            noise: NoiseSpec {
                gaussian_sigma_mm: 2.0,
                dropout_rate: 0.05,
                burst_dropout: None,
            },
            seed: 7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Invalid(m));
        let n = &self.noise;
        if self.frames == 0 {
            return fail("frames must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&n.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1]", n.dropout_rate));
        }
        if !(n.gaussian_sigma_mm.is_finite() && n.gaussian_sigma_mm >= 0.0) {
            return fail(format!("gaussian_sigma_mm {} must be finite and nonnegative", n.gaussian_sigma_mm));
        }
        if !(self.base_depth_mm.is_finite() && self.base_depth_mm > 0.0 && self.drift_mm_per_frame.is_finite()) {
            return fail("base depth must be positive and drift finite".into());
        }
        if let Some(b) = n.burst_dropout {
            if !(0.0..=1.0).contains(&b.start_probability) || b.radius_px.is_nan() || b.radius_px < 0.0 {
                return fail(format!("invalid burst dropout {b:?}"));
            }
        }
        match self.geometry {
            Geometry::StepEdge { step_mm, edge_x } if !(step_mm.is_finite() && edge_x.is_finite()) => {
                fail("step edge parameters must be finite".into())
            }
            Geometry::SphereOnPlane { radius_mm } if !(radius_mm > 0.0 && radius_mm < self.base_depth_mm) => {
                fail(format!("sphere radius {radius_mm} must lie in (0, base_depth_mm)"))
            }
            _ => Ok(()),
        }
    }
}

pub fn parse_scene_spec(text: &str) -> Result<SceneSpec, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn load_scene_spec(path: impl AsRef<Path>) -> Result<SceneSpec, SynthError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = parse_scene_spec(&text).map_err(|source| SynthError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Noiseless scene depth in millimeters along normalized ray `(x, y, 1)`.
pub fn scene_depth_mm(geometry: &Geometry, base_mm: f64, x: f64, y: f64) -> f64 {
    match *geometry {
        Geometry::FlatPlane => base_mm,
        Geometry::StepEdge { step_mm, edge_x } => {
            if x >= edge_x {
                base_mm + step_mm
            } else {
                base_mm
            }
        }
        Geometry::SphereOnPlane { radius_mm } => {
            // |s·(x, y, 1) − (0, 0, c)|² = r², nearest root
            let c = base_mm - radius_mm;
            let a = x * x + y * y + 1.0;
            let disc = c * c - a * (c * c - radius_mm * radius_mm);
            if disc < 0.0 {
                return base_mm;
            }
            let s = (c - disc.sqrt()) / a;
            if s > 0.0 {
                s.min(base_mm)
            } else {
                base_mm
            }
        }
    }
}

/// Deterministic color pattern: 32-pixel checker modulated by position.
fn color_pattern(width: usize, height: usize) -> Vec<u8> {
    let mut data = Vec::with_capacity(width * height * 3);
    for v in 0..height {
        for u in 0..width {
            let check = ((u / 32) + (v / 32)) % 2 == 0;
            let r = (u * 255 / width.max(1)) as u8;
            let g = (v * 255 / height.max(1)) as u8;
            let b = if check { 200 } else { 60 };
            data.extend_from_slice(&[r, g, b]);
        }
    }
    data
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    u: f64,
    v: f64,
    remaining: u32,
}

/// Iterator over the frames of a scene. See [`generate_scene`].
#[derive(Debug, Clone)]
pub struct SceneFrames {
    spec: SceneSpec,
    width: usize,
    height: usize,
    color_width: usize,
    color_height: usize,
    rays: Vec<(f64, f64)>,
    color: Vec<u8>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    bursts: Vec<Burst>,
    next: usize,
}

impl SceneFrames {
    fn depth_frame(&mut self, k: usize) -> Vec<u16> {
        let base = self.spec.base_depth_mm + self.spec.drift_mm_per_frame * k as f64;
        let dropout = self.spec.noise.dropout_rate;
        let mut data = Vec::with_capacity(self.rays.len());
        for &(x, y) in &self.rays {
            let drop = self.rng.random::<f64>() < dropout;
            let e = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
            let z = (scene_depth_mm(&self.spec.geometry, base, x, y) + e).round();
            data.push(if drop { 0 } else { z.clamp(1.0, u16::MAX as f64) as u16 });
        }
        if let Some(b) = self.spec.noise.burst_dropout {
            if self.rng.random::<f64>() < b.start_probability && b.duration_frames > 0 {
                let u = self.rng.random::<f64>() * self.width as f64;
                let v = self.rng.random::<f64>() * self.height as f64;
                self.bursts.push(Burst {
                    u,
                    v,
                    remaining: b.duration_frames,
                });
            }
            let r2 = b.radius_px * b.radius_px;
            for burst in &self.bursts {
                for (idx, d) in data.iter_mut().enumerate() {
                    let du = (idx % self.width) as f64 - burst.u;
                    let dv = (idx / self.width) as f64 - burst.v;
                    if du * du + dv * dv <= r2 {
                        *d = 0;
                    }
                }
            }
            self.bursts.iter_mut().for_each(|b| b.remaining -= 1);
            self.bursts.retain(|b| b.remaining > 0);
        }
        data
    }
}

impl Iterator for SceneFrames {
    type Item = FramePair;

    fn next(&mut self) -> Option<FramePair> {
        if self.next >= self.spec.frames {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let ts = k as u64 * 1_000_000 / CAPTURE_FPS;
        let depth = DepthFrame::new(k as u32, ts, self.width, self.height, self.depth_frame(k))
            .expect("dimensions come from a validated model");
        let color = ColorFrame::new(k as u32, ts, self.color_width, self.color_height, self.color.clone())
            .expect("dimensions come from a validated model");
        Some(FramePair::new(depth, color).expect("same frame number"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.frames - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SceneFrames {}

/// Frames of `spec` rendered through `model`, numbered from 0 at 30 fps.
pub fn generate_scene(spec: &SceneSpec, model: &CameraModel) -> Result<SceneFrames, SynthError> {
    spec.validate()?;
    let (w, h) = (model.depth.width, model.depth.height);
    let intr = &model.depth.intrinsics;
    let rays = (0..w * h)
        .map(|idx| unproject_pixel((idx % w) as f64, (idx / w) as f64, intr))
        .collect();
    let sigma = spec.noise.gaussian_sigma_mm;
    Ok(SceneFrames {
        spec: *spec,
        width: w,
        height: h,
        color_width: model.color.width,
        color_height: model.color.height,
        rays,
        color: color_pattern(model.color.width, model.color.height),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        noise: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("validated sigma")),
        bursts: Vec::new(),
        next: 0,
    })
}
