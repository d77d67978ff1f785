//! Wavefront OBJ mesh reader and writer.
//!
//! Only `v` and `f` records carry geometry here; faces with more than three
//! vertices are fan-triangulated and texture/normal references are ignored.

use std::fs;
use std::path::Path;

use crate::geometry::Vec3;

use super::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl RawMesh {
    /// Surface area summed over triangles.
    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

fn obj_error(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Obj { path: path.display().to_string(), line, msg: msg.into() }
}

/// Resolves an OBJ vertex reference (1-based, negative counts from the end).
fn resolve_index(token: &str, n_vertices: usize, path: &Path, line: usize) -> Result<u32, IoError> {
    let head = token.split('/').next().unwrap_or(token);
    let idx: i64 = head
        .parse()
        .map_err(|_| obj_error(path, line, format!("bad face index '{token}'")))?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        n_vertices as i64 + idx
    } else {
        return Err(obj_error(path, line, "face index 0 is not valid"));
    };
    if resolved < 0 || resolved >= n_vertices as i64 {
        return Err(obj_error(
            path,
            line,
            format!("face index {idx} outside vertex range 1..={n_vertices}"),
        ));
    }
    Ok(resolved as u32)
}

pub fn load_obj(path: &Path) -> Result<RawMesh, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| obj_error(path, line_no, "vertex with fewer than 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| obj_error(path, line_no, format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| resolve_index(t, vertices.len(), path, line_no))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(obj_error(path, line_no, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    let tri = [idx[0], idx[k], idx[k + 1]];
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        faces.push(tri);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(RawMesh { vertices, faces })
}

/// Writes vertices with 9 fractional digits, enough for text round-trips of
/// unit-normalized meshes.
pub fn save_obj(path: &Path, mesh: &RawMesh) -> Result<(), IoError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:.9} {:.9} {:.9}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out).map_err(|e| IoError::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn loads_cube_with_quads() {
        let dir = tmp();
        let path = dir.path().join("cube.obj");
        // Axis-aligned unit cube, quad faces.
        let text = "\
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 4 8 5 1\n";
        fs::write(&path, text).unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 12, "six quads fan into twelve triangles");
        assert!((mesh.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn parses_slash_forms_and_ignores_other_records() {
        let dir = tmp();
        let path = dir.path().join("tri.obj");
        let text = "\
mtllib scene.mtl\no thing\nvn 0 0 1\nvt 0.5 0.5\n\
v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/1/1 3//1\n";
        fs::write(&path, text).unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn negative_indices_resolve_from_end() {
        let dir = tmp();
        let path = dir.path().join("neg.obj");
        fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(load_obj(&path).unwrap().faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_index_names_line() {
        let dir = tmp();
        let path = dir.path().join("bad.obj");
        fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap();
        match load_obj(&path) {
            Err(IoError::Obj { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected obj error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let dir = tmp();
        let path = dir.path().join("degen.obj");
        fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\nf 1 2 3\n").unwrap();
        assert_eq!(load_obj(&path).unwrap().faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn text_round_trip_within_tolerance() {
        let dir = tmp();
        let path = dir.path().join("rt.obj");
        let mesh = RawMesh {
            vertices: vec![
                Vec3::new(-0.512345678, 0.000000001, 0.333333333),
                Vec3::new(0.25, -0.75, 0.5),
                Vec3::new(0.1, 0.2, -0.3),
                Vec3::new(0.0, 0.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]],
        };
        save_obj(&path, &mesh).unwrap();
        let loaded = load_obj(&path).unwrap();
        assert_eq!(loaded.faces, mesh.faces);
        for (a, b) in mesh.vertices.iter().zip(&loaded.vertices) {
            assert!((a - b).norm() < 1e-8);
        }
    }
}
