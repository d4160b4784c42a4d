//! Grid triangle mesh built from one synchronized depth/color pair, and the
//! remote-side edge refinement passes.

mod ply;
mod refine;

pub use ply::{export_ply, ply_bytes, write_ply};
pub use refine::{edge_offset, feather_alpha, neighbor_mask, neighbor_masks, prune_long_triangles, refine_edge_vertices};

use nalgebra::Vector3;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::frame::FramePair;
use crate::projection::{grid_vertex_world, Grid, GridLookup};

/// Vertices closer than this are connected; triangles with an edge at least
/// this long are dropped.
pub const CONNECT_DISTANCE_M: f64 = 0.1;

/// 8-neighborhood offsets `(di, dj)`, numbered clockwise from the top left.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{sensor} frame is {got:?} but the camera model expects {expected:?}")]
    Shape {
        sensor: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `rows x cols` vertex lattice with per-vertex position (m), color, alpha
/// and validity, plus the triangle list.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMesh {
    grid: Grid,
    positions: Vec<Vector3<f64>>,
    colors: Vec<[u8; 3]>,
    alphas: Vec<f32>,
    valid: Vec<bool>,
    triangles: Vec<[u32; 3]>,
    frame_number: u32,
}

impl GridMesh {
    /// Mesh with every vertex invalid and no triangles.
    pub fn empty(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            positions: vec![Vector3::zeros(); n],
            colors: vec![[0; 3]; n],
            alphas: vec![0.0; n],
            valid: vec![false; n],
            triangles: Vec::new(),
            frame_number: 0,
        }
    }

    /// Builds a mesh from explicit vertex data and connects it with the
    /// standard grid topology. `None` entries are invalid vertices.
    pub fn from_positions(grid: Grid, positions: &[Option<Vector3<f64>>], color: [u8; 3]) -> Self {
        assert_eq!(positions.len(), grid.len());
        let mut mesh = Self::empty(grid);
        for (k, p) in positions.iter().enumerate() {
            if let Some(p) = p {
                mesh.positions[k] = *p;
                mesh.colors[k] = color;
                mesh.alphas[k] = 1.0;
                mesh.valid[k] = true;
            }
        }
        mesh.triangles = connect(&mesh);
        mesh
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn frame_number(&self) -> u32 {
        self.frame_number
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn alphas(&self) -> &[f32] {
        &self.alphas
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn valid_vertex_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.grid.cols + j
    }

    /// Longest triangle edge in meters (0 for an empty mesh).
    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| {
                let p = |k: u32| self.positions[k as usize];
                [
                    (p(t[0]) - p(t[1])).norm(),
                    (p(t[1]) - p(t[2])).norm(),
                    (p(t[2]) - p(t[0])).norm(),
                ]
            })
            .fold(0.0, f64::max)
    }

    /// SHA-256 of the ASCII PLY encoding.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(ply_bytes(self)).into()
    }
}

/// Reusable builder that caches the per-grid-point pixel lookups for one
/// camera model.
#[derive(Debug, Clone)]
pub struct MeshBuilder {
    lookup: GridLookup,
}

impl MeshBuilder {
    pub fn new(model: &CameraModel) -> Self {
        Self {
            lookup: GridLookup::new(Grid::for_model(model), model),
        }
    }

    pub fn grid(&self) -> Grid {
        self.lookup.grid()
    }

    pub fn build(&self, pair: &FramePair) -> Result<GridMesh, MeshError> {
        let model = self.lookup.model();
        let (depth, color) = (pair.depth(), pair.color());
        check_shape("depth", (model.depth.width, model.depth.height), (depth.width(), depth.height()))?;
        check_shape("color", (model.color.width, model.color.height), (color.width(), color.height()))?;

        let grid = self.lookup.grid();
        let mut mesh = GridMesh::empty(grid);
        mesh.frame_number = pair.frame_number();
        let cols = grid.cols;
        mesh.positions
            .par_chunks_mut(cols)
            .zip(mesh.colors.par_chunks_mut(cols))
            .zip(mesh.alphas.par_chunks_mut(cols))
            .zip(mesh.valid.par_chunks_mut(cols))
            .enumerate()
            .for_each(|(i, (((pos, col), alpha), valid))| {
                for j in 0..cols {
                    let k = i * cols + j;
                    let Some(d) = self.lookup.depth_at(k, depth) else {
                        continue;
                    };
                    pos[j] = grid_vertex_world(&grid.point(i, j), d);
                    // Unprojectable color leaves the vertex black.
                    col[j] = self.lookup.color_at(k, d, color).map(|s| s.rgb).unwrap_or([0; 3]);
                    alpha[j] = 1.0;
                    valid[j] = true;
                }
            });
        mesh.triangles = connect(&mesh);
        Ok(mesh)
    }
}

fn check_shape(sensor: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<(), MeshError> {
    if expected != got {
        return Err(MeshError::Shape { sensor, expected, got });
    }
    Ok(())
}

/// Looks up depth, position and color for every grid point and connects the
/// valid vertices.
pub fn build_grid_mesh(pair: &FramePair, model: &CameraModel) -> Result<GridMesh, MeshError> {
    MeshBuilder::new(model).build(pair)
}

pub(crate) fn within_reach(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    // squared to skip the root; the threshold square is exact enough
    (a - b).norm_squared() < CONNECT_DISTANCE_M * CONNECT_DISTANCE_M
}

/// Splits each quad along its top-left → bottom-right diagonal into
/// `[TL, BL, BR]` and `[TL, BR, TR]`, keeping triangles whose three vertices
/// are valid and pairwise closer than [`CONNECT_DISTANCE_M`].
fn connect(mesh: &GridMesh) -> Vec<[u32; 3]> {
    let Grid { rows, cols } = mesh.grid;
    let ok = |a: usize, b: usize| within_reach(&mesh.positions[a], &mesh.positions[b]);
    let tri = |a: usize, b: usize, c: usize| -> Option<[u32; 3]> {
        let v = &mesh.valid;
        (v[a] && v[b] && v[c] && ok(a, b) && ok(b, c) && ok(c, a)).then_some([a as u32, b as u32, c as u32])
    };
    (0..rows - 1)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..cols - 1).flat_map(move |j| {
                let tl = i * cols + j;
                let tr = tl + 1;
                let bl = tl + cols;
                let br = bl + 1;
                [tri(tl, bl, br), tri(tl, br, tr)].into_iter().flatten()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ColorFrame, DepthFrame};

    fn flat_pair(w: usize, h: usize, depth_mm: u16) -> FramePair {
        FramePair::new(
            DepthFrame::filled(0, 0, w, h, depth_mm).unwrap(),
            ColorFrame::filled(0, 0, w, h, [10, 20, 30]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_quad_makes_two_triangles() {
        // 2x2 grid at 1 m spans 1 m, so use a narrow camera-independent patch
        let grid = Grid::new(2, 2);
        let p = |x, y| Some(Vector3::new(x, y, 1.0));
        let mesh = GridMesh::from_positions(grid, &[p(0.0, 0.01), p(0.01, 0.01), p(0.0, 0.0), p(0.01, 0.0)], [0; 3]);
        assert_eq!(mesh.triangles(), &[[0, 2, 3], [0, 3, 1]]);
    }

    #[test]
    fn far_vertex_is_not_connected() {
        let grid = Grid::new(2, 3);
        let p = |x, z| Some(Vector3::new(x, 0.0, z));
        // vertex 2 (top right) is 0.15 m deeper than its neighbors
        let mesh = GridMesh::from_positions(
            grid,
            &[p(0.0, 1.0), p(0.01, 1.0), p(0.02, 1.15), p(0.0, 1.0), p(0.01, 1.0), p(0.02, 1.0)],
            [0; 3],
        );
        // the left quad survives; the right quad's triangle containing vertex 2 does not
        assert_eq!(mesh.triangles(), &[[0, 3, 4], [0, 4, 1], [1, 4, 5]]);
    }

    #[test]
    fn flat_plane_triangle_count() {
        let model = CameraModel::pinhole(32, 24, 32, 24);
        let mesh = build_grid_mesh(&flat_pair(32, 24, 1000), &model).unwrap();
        assert_eq!(mesh.triangles().len(), 2 * 31 * 23);
        assert_eq!(mesh.valid_vertex_count(), 32 * 24);
        assert!(mesh.colors().iter().all(|&c| c == [10, 20, 30]));
    }

    #[test]
    fn shape_mismatch() {
        let model = CameraModel::pinhole(32, 24, 64, 48);
        let err = build_grid_mesh(&flat_pair(32, 24, 1000), &model).unwrap_err();
        assert!(matches!(err, MeshError::Shape { sensor: "color", .. }));
    }

    #[test]
    fn invalid_depth_makes_invalid_vertices() {
        let model = CameraModel::pinhole(4, 4, 4, 4);
        let mut data = vec![1000u16; 16];
        data[5] = 0;
        let pair = FramePair::new(
            DepthFrame::new(0, 0, 4, 4, data).unwrap(),
            ColorFrame::filled(0, 0, 4, 4, [1, 2, 3]).unwrap(),
        )
        .unwrap();
        let mesh = build_grid_mesh(&pair, &model).unwrap();
        assert_eq!(mesh.valid_vertex_count(), 15);
        // depth pixel (1, 1) is sampled by grid row 4-1-1 = 2, column 1
        assert!(!mesh.valid()[mesh.index(2, 1)]);
        for t in mesh.triangles() {
            assert!(t.iter().all(|&k| mesh.valid()[k as usize]));
        }
    }
}
