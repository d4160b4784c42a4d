//! Edge refinement: vertex movement, alpha feathering and triangle pruning.
//!
//! A neighbor counts when it is valid and closer than 10 cm in 3D. Vertices
//! with all eight neighbors are interior. A vertex with `1..=7` neighbors is
//! an edge vertex and moves half a grid cell toward the centroid of its
//! present neighbors, keeping its depth; see [`edge_offset`] for the case
//! table.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{within_reach, GridMesh, NEIGHBOR_OFFSETS};

/// Bit `b` is set when neighbor `b` (clockwise from top left) is present.
pub fn neighbor_mask(mesh: &GridMesh, i: usize, j: usize) -> u8 {
    let grid = mesh.grid();
    let k = i * grid.cols + j;
    if !mesh.valid[k] {
        return 0;
    }
    let center = &mesh.positions[k];
    let mut mask = 0u8;
    for (b, &(di, dj)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        let (ni, nj) = (i as isize + di, j as isize + dj);
        if ni < 0 || nj < 0 || ni >= grid.rows as isize || nj >= grid.cols as isize {
            continue;
        }
        let n = ni as usize * grid.cols + nj as usize;
        if mesh.valid[n] && within_reach(center, &mesh.positions[n]) {
            mask |= 1 << b;
        }
    }
    mask
}

/// [`neighbor_mask`] for every vertex. Each vertex pair is tested once and
/// sets the matching bit on both ends.
pub fn neighbor_masks(mesh: &GridMesh) -> Vec<u8> {
    let grid = mesh.grid();
    let (rows, cols) = (grid.rows, grid.cols);
    let (pos, valid) = (&mesh.positions, &mesh.valid);
    let mut masks = vec![0u8; grid.len()];
    // (forward offset, bit at the vertex, bit at the neighbor)
    let forward: [(isize, isize, u8, u8); 4] = [(0, 1, 3, 7), (1, 1, 4, 0), (1, 0, 5, 1), (1, -1, 6, 2)];
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            if !valid[k] {
                continue;
            }
            for &(di, dj, bit, back) in &forward {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni >= rows as isize || nj < 0 || nj >= cols as isize {
                    continue;
                }
                let n = ni as usize * cols + nj as usize;
                if valid[n] && within_reach(&pos[k], &pos[n]) {
                    masks[k] |= 1 << bit;
                    masks[n] |= 1 << back;
                }
            }
        }
    }
    masks
}

/// In-grid displacement `(di, dj)` of a vertex with neighbor mask `mask`, in
/// grid cells.
///
/// | neighbors | rule |
/// |-----------|------|
/// | 0 | isolated, no direction: unmoved |
/// | 8 | interior: unmoved |
/// | 1..=7 | half a cell along the unit vector toward the mean offset of the present neighbors; unmoved if that mean is zero (balanced configurations) |
///
/// Examples: a straight left boundary (neighbors 1..=5 present) moves half
/// a cell right; a convex corner with neighbors 3, 4, 5 moves half a cell
/// along the diagonal toward 4; a lone neighbor pulls the vertex half a cell
/// toward itself.
pub fn edge_offset(mask: u8) -> Option<(f64, f64)> {
    let count = mask.count_ones();
    if count == 0 || count == 8 {
        return None;
    }
    let (mut si, mut sj) = (0isize, 0isize);
    for (b, &(di, dj)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        if mask & (1 << b) != 0 {
            si += di;
            sj += dj;
        }
    }
    if si == 0 && sj == 0 {
        return None;
    }
    let norm = ((si * si + sj * sj) as f64).sqrt();
    Some((0.5 * si as f64 / norm, 0.5 * sj as f64 / norm))
}

/// Moves edge vertices toward their neighbors, parallel to the grid plane at
/// the vertex's own depth. Neighbor tests use the input positions.
pub fn refine_edge_vertices(mut mesh: GridMesh) -> GridMesh {
    let grid = mesh.grid();
    let cols = grid.cols;
    let step_x = 1.0 / (cols - 1) as f64;
    let step_y = 1.0 / (grid.rows - 1) as f64;
    let masks = neighbor_masks(&mesh);
    let moved: Vec<Vector3<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = mesh.positions[k];
            if !mesh.valid[k] {
                return p;
            }
            match edge_offset(masks[k]) {
                // X grows with the column, Y shrinks with the row
                Some((di, dj)) => p + Vector3::new(dj * step_x * p.z, -di * step_y * p.z, 0.0),
                None => p,
            }
        })
        .collect();
    mesh.positions = moved;
    mesh
}

/// Sets each valid vertex's alpha to its neighbor count divided by 8.
pub fn feather_alpha(mut mesh: GridMesh) -> GridMesh {
    let alphas: Vec<f32> = neighbor_masks(&mesh)
        .into_iter()
        .map(|m| m.count_ones() as f32 / 8.0)
        .collect();
    mesh.alphas = alphas;
    mesh
}

/// Drops triangles with any edge of 10 cm or more.
pub fn prune_long_triangles(mut mesh: GridMesh) -> GridMesh {
    let positions = &mesh.positions;
    let keep = |t: &[u32; 3]| {
        let p = |k: u32| &positions[k as usize];
        within_reach(p(t[0]), p(t[1])) && within_reach(p(t[1]), p(t[2])) && within_reach(p(t[2]), p(t[0]))
    };
    let kept: Vec<[u32; 3]> = mesh.triangles.par_iter().filter(|t| keep(t)).copied().collect();
    mesh.triangles = kept;
    mesh
}
