use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::{GridMesh, MeshError};

/// Writes an ASCII PLY with `x y z red green blue alpha` per valid vertex and
/// the triangle list. Invalid vertices are omitted and indices remapped.
pub fn write_ply<W: Write>(mesh: &GridMesh, mut w: W) -> io::Result<()> {
    let mut remap = vec![u32::MAX; mesh.grid().len()];
    let mut next = 0u32;
    for (k, &valid) in mesh.valid().iter().enumerate() {
        if valid {
            remap[k] = next;
            next += 1;
        }
    }
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {next}")?;
    for name in ["x", "y", "z"] {
        writeln!(w, "property float {name}")?;
    }
    for name in ["red", "green", "blue", "alpha"] {
        writeln!(w, "property uchar {name}")?;
    }
    writeln!(w, "element face {}", mesh.triangles().len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (k, &valid) in mesh.valid().iter().enumerate() {
        if !valid {
            continue;
        }
        let p = mesh.positions()[k];
        let [r, g, b] = mesh.colors()[k];
        let a = (mesh.alphas()[k].clamp(0.0, 1.0) * 255.0).round() as u8;
        writeln!(w, "{} {} {} {r} {g} {b} {a}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    for t in mesh.triangles() {
        writeln!(
            w,
            "3 {} {} {}",
            remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]
        )?;
    }
    w.flush()
}

pub fn ply_bytes(mesh: &GridMesh) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ply(mesh, &mut buf).expect("writing to memory");
    buf
}

pub fn export_ply(mesh: &GridMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    let err = |source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(err)?;
    write_ply(mesh, BufWriter::new(file)).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Grid;
    use nalgebra::Vector3;

    #[test]
    fn empty_mesh_has_zero_elements() {
        let text = String::from_utf8(ply_bytes(&GridMesh::empty(Grid::new(3, 3)))).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.contains("element face 0\n"));
        assert!(text.ends_with("end_header\n"));
    }

    #[test]
    fn two_triangle_patch() {
        let p = |x, y| Some(Vector3::new(x, y, 1.0));
        let mesh = GridMesh::from_positions(
            Grid::new(2, 2),
            &[p(0.0, 0.01), p(0.01, 0.01), p(0.0, 0.0), p(0.01, 0.0)],
            [1, 2, 3],
        );
        let text = String::from_utf8(ply_bytes(&mesh)).unwrap();
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert!(text.contains("element vertex 4\n"));
        assert!(text.contains("element face 2\n"));
        assert_eq!(body[0], "0 0.01 1 1 2 3 255");
        assert_eq!(&body[4..], &["3 0 2 3", "3 0 3 1"]);
    }

    #[test]
    fn invalid_vertices_are_remapped() {
        let p = |x, y| Some(Vector3::new(x, y, 1.0));
        let mesh = GridMesh::from_positions(
            Grid::new(2, 3),
            &[None, p(0.0, 0.01), p(0.01, 0.01), None, p(0.0, 0.0), p(0.01, 0.0)],
            [0; 3],
        );
        let text = String::from_utf8(ply_bytes(&mesh)).unwrap();
        assert!(text.contains("element vertex 4\n"));
        // grid indices 1,2,4,5 → 0,1,2,3
        assert!(text.ends_with("3 0 2 3\n3 0 3 1\n"));
    }

    #[test]
    fn export_reports_path_on_error() {
        let err = export_ply(&GridMesh::empty(Grid::new(2, 2)), "/nonexistent-dir/x.ply").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.ply"));
    }
}
