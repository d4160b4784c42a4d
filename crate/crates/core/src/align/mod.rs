//! Least-squares rigid registration between coordinate frames and the
//! transforms that chain hands and objects between them.

mod frames;
mod protocol;

pub use frames::FrameGraph;
pub use protocol::{evaluate_alignment, simulate_setup_errors, AlignmentError, SetupSimulation};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::camera::RigidTransform;

/// Correspondences used by the setup procedure (four markers).
pub const DEFAULT_CORRESPONDENCES: usize = 4;

/// Point sets whose second principal extent is below this fraction of the
/// first are treated as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("need at least 3 correspondences, got {0}")]
    Arity(usize),
    #[error("point sets differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("source points are collinear or coincident (rank < 2)")]
    Rank,
    #[error("non-finite coordinate in correspondence {0}")]
    NonFinite(usize),
    #[error("no path between frames {from:?} and {to:?}")]
    Path { from: String, to: String },
    #[error("unknown frame {0:?}")]
    UnknownFrame(String),
    #[error("transform {from:?} -> {to:?} contradicts the existing chain by {deviation:e}")]
    Inconsistent { from: String, to: String, deviation: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Paired 3D points `A[n] ↔ B[n]` in meters, `N ≥ 3`, `A` not collinear.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    a: Vec<Vector3<f64>>,
    b: Vec<Vector3<f64>>,
}

impl CorrespondenceSet {
    pub fn new(a: Vec<Vector3<f64>>, b: Vec<Vector3<f64>>) -> Result<Self, AlignError> {
        if a.len() != b.len() {
            return Err(AlignError::LengthMismatch { a: a.len(), b: b.len() });
        }
        if a.len() < 3 {
            return Err(AlignError::Arity(a.len()));
        }
        if let Some(n) = a.iter().zip(&b).position(|(p, q)| !p.iter().chain(q.iter()).all(|v| v.is_finite())) {
            return Err(AlignError::NonFinite(n));
        }
        if is_collinear(&a) {
            return Err(AlignError::Rank);
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn source(&self) -> &[Vector3<f64>] {
        &self.a
    }

    pub fn target(&self) -> &[Vector3<f64>] {
        &self.b
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn is_collinear(points: &[Vector3<f64>]) -> bool {
    let c = centroid(points);
    let scatter: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let mut eig = SymmetricEigen::new(scatter).eigenvalues.as_slice().to_vec();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig[0] <= 0.0 || (eig[1].max(0.0) / eig[0]).sqrt() < COLLINEAR_RATIO
}

/// Rotation and translation minimizing `Σ‖R·Aⁿ + t − Bⁿ‖²`.
///
/// Centers both sets on their centroids, takes the SVD `U·S·Vᵀ` of the
/// cross-covariance `Σ (Aⁿ − ψA)(Bⁿ − ψB)ᵀ` and sets `R = V·Uᵀ`. A reflection
/// (`det R < 0`) is corrected by negating the column of `V` belonging to the
/// smallest singular value. Finally `t = ψB − R·ψA`.
pub fn fit_rigid(corr: &CorrespondenceSet) -> RigidTransform {
    let ca = centroid(&corr.a);
    let cb = centroid(&corr.b);
    let h: Matrix3<f64> = corr
        .a
        .iter()
        .zip(&corr.b)
        .map(|(a, b)| (a - ca) * (b - cb).transpose())
        .sum();
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let mut v = svd.v_t.expect("v_t requested").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        // ties resolve to the highest column index
        let s = &svd.singular_values;
        let mut smallest = 0;
        for k in 1..3 {
            if s[k] <= s[smallest] {
                smallest = k;
            }
        }
        v.column_mut(smallest).neg_mut();
        r = v * u.transpose();
    }
    let t = cb - r * ca;
    RigidTransform::from_parts_unchecked(r, t)
}

/// `ε = Σ‖R·Aⁿ + t − Bⁿ‖²` in m².
pub fn residual(corr: &CorrespondenceSet, transform: &RigidTransform) -> f64 {
    corr.a
        .iter()
        .zip(&corr.b)
        .map(|(a, b)| (transform.apply(a) - b).norm_squared())
        .sum()
}

/// Per-correspondence Euclidean error after applying `transform`.
pub fn point_errors(corr: &CorrespondenceSet, transform: &RigidTransform) -> Vec<f64> {
    corr.a
        .iter()
        .zip(&corr.b)
        .map(|(a, b)| (transform.apply(a) - b).norm())
        .collect()
}

/// Parses `ax,ay,az,bx,by,bz` rows. Blank lines, `#` comments and a
/// non-numeric header row are skipped.
pub fn parse_correspondences(text: &str, path: &Path) -> Result<CorrespondenceSet, AlignError> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let values: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if a.is_empty() && fields.iter().all(|f| f.parse::<f64>().is_err()) => continue,
            Err(e) => {
                return Err(AlignError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: e.to_string(),
                })
            }
        };
        if values.len() != 6 {
            return Err(AlignError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected 6 columns, got {}", values.len()),
            });
        }
        a.push(Vector3::new(values[0], values[1], values[2]));
        b.push(Vector3::new(values[3], values[4], values[5]));
    }
    CorrespondenceSet::new(a, b)
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet, AlignError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| AlignError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_correspondences(&text, path)
}

pub fn format_correspondences(corr: &CorrespondenceSet) -> String {
    corr.a
        .iter()
        .zip(&corr.b)
        .map(|(a, b)| format!("{:?},{:?},{:?},{:?},{:?},{:?}\n", a.x, a.y, a.z, b.x, b.y, b.z))
        .collect()
}
