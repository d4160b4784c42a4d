//! Camera intrinsics, lens distortion, rigid transforms and the JSON camera
//! model file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{COLOR_HEIGHT, COLOR_WIDTH, DEPTH_HEIGHT, DEPTH_WIDTH};

/// Elementwise tolerance for `RᵀR = I` and `det(R) = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid camera model: {0}")]
    Validation(String),
    #[error("invalid rigid transform: {0}")]
    Transform(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(CameraError::Validation(format!("fx must be > 0, got {}", self.fx)));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(CameraError::Validation(format!("fy must be > 0, got {}", self.fy)));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(CameraError::Validation("principal point must be finite".into()));
        }
        Ok(())
    }
}

/// Rational radial (k1..k6) plus tangential (p1, p2) lens distortion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionModel {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub k4: f64,
    #[serde(default)]
    pub k5: f64,
    #[serde(default)]
    pub k6: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl DistortionModel {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Rotation + translation (meters). `R` is orthonormal with `det(R) = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::Transform("translation must be finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Builds from a row-major 3x3 rotation and a translation.
    pub fn from_arrays(r: &[f64; 9], t: &[f64; 3]) -> Result<Self, CameraError> {
        Self::new(Matrix3::from_row_slice(r), Vector3::from_row_slice(t))
    }

    /// Skips validation; callers guarantee orthonormality (SVD outputs,
    /// products and transposes of valid rotations).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_json(&self) -> TransformJson {
        TransformJson {
            r: self.rotation_row_major(),
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

/// `{ "R": [9 row-major], "t": [3] }`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = CameraError;

    fn try_from(value: TransformJson) -> Result<Self, Self::Error> {
        RigidTransform::from_arrays(&value.r, &value.t)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), CameraError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(CameraError::Transform("rotation must be finite".into()));
    }
    let gram = r.transpose() * r;
    let max_dev = (gram - Matrix3::identity()).amax();
    if max_dev > ROTATION_TOLERANCE {
        return Err(CameraError::Transform(format!(
            "R is not orthonormal: max |RᵀR - I| = {max_dev:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(CameraError::Transform(format!(
            "det(R) = {det}, expected +1 (reflections are rejected)"
        )));
    }
    Ok(())
}

/// Per-sensor calibration together with the sensor resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionModel,
    pub width: usize,
    pub height: usize,
}

/// Depth and color sensor calibration plus the depth → color extrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub depth: SensorModel,
    pub color: SensorModel,
    pub color_extrinsics: RigidTransform,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        self.depth.intrinsics.validate()?;
        self.color.intrinsics.validate()?;
        for (name, s) in [("depth", &self.depth), ("color", &self.color)] {
            if s.width == 0 || s.height == 0 || s.width > u16::MAX as usize || s.height > u16::MAX as usize {
                return Err(CameraError::Validation(format!(
                    "{name} resolution {}x{} out of range",
                    s.width, s.height
                )));
            }
        }
        if self.depth.width < 2 || self.depth.height < 2 {
            return Err(CameraError::Validation(
                "depth resolution must be at least 2x2 to span a grid".into(),
            ));
        }
        check_rotation(self.color_extrinsics.rotation())
    }

    /// Undistorted pinhole pair whose grid rays land exactly on depth pixel
    /// centers: `u = (w-1)·(X + 0.5)`, `v = (h-1)·(Y + 0.5)`.
    pub fn pinhole(depth_w: usize, depth_h: usize, color_w: usize, color_h: usize) -> Self {
        let sensor = |w: usize, h: usize| SensorModel {
            intrinsics: CameraIntrinsics {
                fx: (w - 1) as f64,
                fy: (h - 1) as f64,
                cx: (w - 1) as f64 / 2.0,
                cy: (h - 1) as f64 / 2.0,
            },
            distortion: DistortionModel::default(),
            width: w,
            height: h,
        };
        Self {
            depth: sensor(depth_w, depth_h),
            color: sensor(color_w, color_h),
            color_extrinsics: RigidTransform::identity(),
        }
    }

    /// 320x288 depth, 1920x1080 color, identity extrinsics, no distortion.
    pub fn default_nfov() -> Self {
        Self::pinhole(DEPTH_WIDTH, DEPTH_HEIGHT, COLOR_WIDTH, COLOR_HEIGHT)
    }

    pub fn to_json(&self) -> CameraModelJson {
        let sensor = |s: &SensorModel| SensorJson {
            fx: s.intrinsics.fx,
            fy: s.intrinsics.fy,
            cx: s.intrinsics.cx,
            cy: s.intrinsics.cy,
            distortion: s.distortion,
            width: Some(s.width),
            height: Some(s.height),
        };
        CameraModelJson {
            depth: sensor(&self.depth),
            color: sensor(&self.color),
            color_extrinsics: self.color_extrinsics.to_json(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(flatten)]
    pub distortion: DistortionModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

/// On-disk camera model. Missing distortion keys default to 0; missing
/// resolutions default to 320x288 (depth) and 1920x1080 (color).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModelJson {
    pub depth: SensorJson,
    pub color: SensorJson,
    pub color_extrinsics: TransformJson,
}

impl TryFrom<CameraModelJson> for CameraModel {
    type Error = CameraError;

    fn try_from(json: CameraModelJson) -> Result<Self, Self::Error> {
        let sensor = |s: &SensorJson, name: &str, w: usize, h: usize| -> Result<SensorModel, CameraError> {
            let intrinsics = CameraIntrinsics {
                fx: s.fx,
                fy: s.fy,
                cx: s.cx,
                cy: s.cy,
            };
            intrinsics
                .validate()
                .map_err(|e| CameraError::Validation(format!("{name}: {e}")))?;
            Ok(SensorModel {
                intrinsics,
                distortion: s.distortion,
                width: s.width.unwrap_or(w),
                height: s.height.unwrap_or(h),
            })
        };
        let model = CameraModel {
            depth: sensor(&json.depth, "depth", DEPTH_WIDTH, DEPTH_HEIGHT)?,
            color: sensor(&json.color, "color", COLOR_WIDTH, COLOR_HEIGHT)?,
            color_extrinsics: RigidTransform::try_from(json.color_extrinsics)
                .map_err(|e| CameraError::Validation(format!("color_extrinsics: {e}")))?,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn parse_camera_model(text: &str) -> Result<CameraModel, CameraError> {
    let json: CameraModelJson = serde_json::from_str(text).map_err(|source| CameraError::Json {
        path: PathBuf::from("<string>"),
        source,
    })?;
    CameraModel::try_from(json)
}

pub fn load_camera_model(path: impl AsRef<Path>) -> Result<CameraModel, CameraError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CameraError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let json: CameraModelJson = serde_json::from_str(&text).map_err(|source| CameraError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    CameraModel::try_from(json)
}

pub fn save_camera_model(model: &CameraModel, path: impl AsRef<Path>) -> Result<(), CameraError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&model.to_json()).expect("camera model serializes");
    fs::write(path, text).map_err(|source| CameraError::Io {
        path: path.to_path_buf(),
        source,
    })
}
