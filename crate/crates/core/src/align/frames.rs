use std::collections::{HashMap, VecDeque};

use super::AlignError;
use crate::camera::RigidTransform;

/// Composed cycles must reproduce identity within this tolerance.
pub const CYCLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    /// Maps coordinates of the edge's *stored* source frame into its stored
    /// target frame.
    transform: RigidTransform,
    /// False when traversing the stored edge backwards.
    forward: bool,
}

/// Named coordinate frames connected by rigid transforms.
///
/// `add_transform(a, b, T)` records `p_b = T·p_a`. Re-expressing a pose
/// against an edge's direction applies `R₁ = R₂⁻¹·R₃`, `t₁ = R₂⁻¹·(t₃ − t₂)`
/// with `{R, t}₂` the edge and `{R, t}₃` the pose.
#[derive(Debug, Clone, Default)]
pub struct FrameGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<Vec<Edge>>,
}

impl FrameGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, name: &str) -> usize {
        if let Some(&k) = self.index.get(name) {
            return k;
        }
        let k = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), k);
        self.edges.push(Vec::new());
        k
    }

    pub fn frames(&self) -> &[String] {
        &self.names
    }

    /// Records `p_to = transform · p_from`. Rejects transforms that close a
    /// cycle inconsistently.
    pub fn add_transform(&mut self, from: &str, to: &str, transform: RigidTransform) -> Result<(), AlignError> {
        let a = self.add_frame(from);
        let b = self.add_frame(to);
        if let Ok(existing) = self.transform_between(from, to) {
            let deviation = (existing.rotation() - transform.rotation())
                .amax()
                .max((existing.translation() - transform.translation()).amax());
            if deviation > CYCLE_TOLERANCE {
                return Err(AlignError::Inconsistent {
                    from: from.to_string(),
                    to: to.to_string(),
                    deviation,
                });
            }
            return Ok(());
        }
        self.edges[a].push(Edge {
            to: b,
            transform,
            forward: true,
        });
        self.edges[b].push(Edge {
            to: a,
            transform,
            forward: false,
        });
        Ok(())
    }

    fn lookup(&self, name: &str) -> Result<usize, AlignError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| AlignError::UnknownFrame(name.to_string()))
    }

    /// Breadth-first path as a list of edges.
    fn path(&self, from: &str, to: &str) -> Result<Vec<&Edge>, AlignError> {
        let start = self.lookup(from)?;
        let goal = self.lookup(to)?;
        let mut previous: Vec<Option<(usize, usize)>> = vec![None; self.names.len()];
        let mut seen = vec![false; self.names.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for (e, edge) in self.edges[node].iter().enumerate() {
                if !seen[edge.to] {
                    seen[edge.to] = true;
                    previous[edge.to] = Some((node, e));
                    queue.push_back(edge.to);
                }
            }
        }
        if !seen[goal] {
            return Err(AlignError::Path {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        let mut hops = Vec::new();
        let mut node = goal;
        while let Some((prev, e)) = previous[node] {
            hops.push(&self.edges[prev][e]);
            node = prev;
        }
        hops.reverse();
        Ok(hops)
    }

    /// Re-expresses a pose given in `from` coordinates in `to` coordinates.
    pub fn change_of_frame(&self, pose: &RigidTransform, from: &str, to: &str) -> Result<RigidTransform, AlignError> {
        let mut pose = *pose;
        for edge in self.path(from, to)? {
            pose = if edge.forward {
                edge.transform.compose(&pose)
            } else {
                express_in_source(&edge.transform, &pose)
            };
        }
        Ok(pose)
    }

    /// Transform mapping `from` coordinates into `to` coordinates.
    pub fn transform_between(&self, from: &str, to: &str) -> Result<RigidTransform, AlignError> {
        self.change_of_frame(&RigidTransform::identity(), from, to)
    }
}

/// `R₁ = R₂ᵀ·R₃`, `t₁ = R₂ᵀ·(t₃ − t₂)`.
fn express_in_source(edge: &RigidTransform, pose: &RigidTransform) -> RigidTransform {
    let r2_inv = edge.rotation().transpose();
    RigidTransform::from_parts_unchecked(
        r2_inv * pose.rotation(),
        r2_inv * (pose.translation() - edge.translation()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Vector3};

    fn random_transform(seed: f64) -> RigidTransform {
        RigidTransform::new(
            Rotation3::from_euler_angles(seed, 0.5 * seed - 0.3, 1.7 * seed).into_inner(),
            Vector3::new(seed, -2.0 * seed, 0.3),
        )
        .unwrap()
    }

    #[test]
    fn identity_edge_leaves_pose() {
        let mut g = FrameGraph::new();
        g.add_transform("camera1", "remote", RigidTransform::identity()).unwrap();
        let pose = random_transform(0.4);
        let out = g.change_of_frame(&pose, "remote", "camera1").unwrap();
        assert!((out.rotation() - pose.rotation()).amax() < 1e-15);
        assert!((out.translation() - pose.translation()).amax() < 1e-15);
    }

    #[test]
    fn translation_edge_arithmetic() {
        let mut g = FrameGraph::new();
        g.add_transform("camera1", "remote", RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0)))
            .unwrap();
        let hand = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let out = g.change_of_frame(&hand, "remote", "camera1").unwrap();
        assert_eq!(*out.translation(), Vector3::zeros());
        assert_eq!(*out.rotation(), Matrix3::identity());
    }

    #[test]
    fn round_trip_through_chain() {
        let mut g = FrameGraph::new();
        g.add_transform("camera1", "camera2", random_transform(0.2)).unwrap();
        g.add_transform("camera1", "remote", random_transform(0.9)).unwrap();
        g.add_transform("local_hmd", "camera1", random_transform(-0.6)).unwrap();
        let pose = random_transform(1.3);
        let there = g.change_of_frame(&pose, "camera2", "local_hmd").unwrap();
        let back = g.change_of_frame(&there, "local_hmd", "camera2").unwrap();
        assert!((back.rotation() - pose.rotation()).amax() < 1e-9);
        assert!((back.translation() - pose.translation()).amax() < 1e-9);
    }

    #[test]
    fn inconsistent_cycle_rejected() {
        let mut g = FrameGraph::new();
        let ab = random_transform(0.2);
        let bc = random_transform(0.7);
        g.add_transform("a", "b", ab).unwrap();
        g.add_transform("b", "c", bc).unwrap();
        // consistent closing edge is accepted
        g.add_transform("a", "c", bc.compose(&ab)).unwrap();
        let err = g.add_transform("c", "a", RigidTransform::identity()).unwrap_err();
        assert!(matches!(err, AlignError::Inconsistent { .. }));
    }

    #[test]
    fn disconnected_frames() {
        let mut g = FrameGraph::new();
        g.add_transform("a", "b", RigidTransform::identity()).unwrap();
        g.add_frame("island");
        assert!(matches!(
            g.change_of_frame(&RigidTransform::identity(), "a", "island"),
            Err(AlignError::Path { .. })
        ));
        assert!(matches!(
            g.transform_between("a", "nowhere"),
            Err(AlignError::UnknownFrame(_))
        ));
    }
}
