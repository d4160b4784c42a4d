//! Alignment-error measurement: mapped landmarks versus their physical
//! positions, and a seeded simulation of the four-marker setup.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{fit_rigid, AlignError, CorrespondenceSet, DEFAULT_CORRESPONDENCES};
use crate::camera::RigidTransform;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentError {
    pub mean_error_m: f64,
    /// Population standard deviation of the per-point errors.
    pub sigma_m: f64,
    pub per_point_m: Vec<f64>,
}

/// Mean and standard deviation of `‖true[n] − mapped[n]‖`.
pub fn evaluate_alignment(
    points_true: &[Vector3<f64>],
    points_mapped: &[Vector3<f64>],
) -> Result<AlignmentError, AlignError> {
    if points_true.len() != points_mapped.len() {
        return Err(AlignError::LengthMismatch {
            a: points_true.len(),
            b: points_mapped.len(),
        });
    }
    let per_point: Vec<f64> = points_true
        .iter()
        .zip(points_mapped)
        .map(|(p, q)| (p - q).norm())
        .collect();
    if per_point.is_empty() {
        return Ok(AlignmentError {
            mean_error_m: 0.0,
            sigma_m: 0.0,
            per_point_m: per_point,
        });
    }
    let n = per_point.len() as f64;
    let mean = per_point.iter().sum::<f64>() / n;
    let var = per_point.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(AlignmentError {
        mean_error_m: mean,
        sigma_m: var.sqrt(),
        per_point_m: per_point,
    })
}

/// Monte-Carlo model of the marker-based setup: `correspondences` markers on
/// a static object (a 28x20 cm region with up to 5 cm of relief) are measured
/// in two frames with i.i.d. Gaussian noise per axis, a rigid transform is
/// fitted, and four checkpoints evenly spaced on the border of a 10x6 cm
/// insert are mapped through the fit and compared with their true positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupSimulation {
    pub setups: usize,
    pub correspondences: usize,
    pub noise_sigma_m: f64,
    pub seed: u64,
}

impl Default for SetupSimulation {
    fn default() -> Self {
        Self {
            setups: 1000,
            correspondences: DEFAULT_CORRESPONDENCES,
            noise_sigma_m: 0.008,
            seed: 0,
        }
    }
}

const RELIEF_M: [f64; 4] = [0.0, 0.03, 0.01, 0.05];

fn marker_positions(n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|k| {
            let angle = PI / 4.0 + 2.0 * PI * k as f64 / n as f64;
            Vector3::new(0.14 * angle.cos() * 2f64.sqrt(), 0.10 * angle.sin() * 2f64.sqrt(), RELIEF_M[k % 4])
        })
        .collect()
}

fn checkpoints() -> [Vector3<f64>; 4] {
    [
        Vector3::new(0.05, 0.0, 0.02),
        Vector3::new(0.0, 0.03, 0.02),
        Vector3::new(-0.05, 0.0, 0.02),
        Vector3::new(0.0, -0.03, 0.02),
    ]
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    // uniform rotation from a normalized Gaussian quaternion
    let g = Normal::new(0.0, 1.0).unwrap();
    let q = nalgebra::Quaternion::new(g.sample(rng), g.sample(rng), g.sample(rng), g.sample(rng));
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    RigidTransform::from_parts_unchecked(r, t)
}

/// Runs the simulation, returning one [`AlignmentError`] per setup.
pub fn simulate_setup_errors(sim: &SetupSimulation) -> Result<Vec<AlignmentError>, AlignError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let noise = Normal::new(0.0, sim.noise_sigma_m.max(0.0)).expect("finite sigma");
    let markers = marker_positions(sim.correspondences);
    let checks = checkpoints();
    let mut out = Vec::with_capacity(sim.setups);
    for _ in 0..sim.setups {
        let truth = random_transform(&mut rng);
        let mut jitter = || Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        let a: Vec<_> = markers.iter().map(|m| m + jitter()).collect();
        let b: Vec<_> = markers.iter().map(|m| truth.apply(m) + jitter()).collect();
        let fit = fit_rigid(&CorrespondenceSet::new(a, b)?);
        let expected: Vec<_> = checks.iter().map(|p| truth.apply(p)).collect();
        let mapped: Vec<_> = checks.iter().map(|p| fit.apply(p)).collect();
        out.push(evaluate_alignment(&expected, &mapped)?);
    }
    Ok(out)
}
