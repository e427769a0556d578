//! ASCII mesh file format:
//!
//! ```text
//! mmesh 1
//! vertices N
//! x y                 (N lines, 17 significant digits)
//! cells M
//! v0 v1 v2 region     (M lines)
//! facets K
//! v0 v1 marker        (K lines)
//! ```
//!
//! Indices are 0-based. Reading repairs cell orientation to CCW.

use super::{Mesh, MeshError};
use crate::geom::Vec2;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut out = String::new();
    out.push_str("mmesh 1\n");
    let _ = writeln!(out, "vertices {}", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.16e} {:.16e}", v.x, v.y);
    }
    let _ = writeln!(out, "cells {}", mesh.n_cells());
    for (cell, reg) in mesh.cells.iter().zip(&mesh.cell_region) {
        let _ = writeln!(out, "{} {} {} {}", cell[0], cell[1], cell[2], reg);
    }
    let _ = writeln!(out, "facets {}", mesh.facets.len());
    for (facet, m) in mesh.facets.iter().zip(&mesh.facet_marker) {
        let _ = writeln!(out, "{} {} {}", facet[0], facet[1], m);
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        for (idx, line) in self.iter.by_ref() {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok((idx + 1, trimmed));
            }
        }
        Err(MeshError::Parse {
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_count(line: usize, text: &str, keyword: &str) -> Result<usize, MeshError> {
    let mut parts = text.split_whitespace();
    let head = parts.next().unwrap_or("");
    if head != keyword {
        return Err(MeshError::Parse {
            line,
            msg: format!("expected `{keyword} N`, found `{text}`"),
        });
    }
    parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|_| parts.next().is_none())
        .ok_or(MeshError::Parse {
            line,
            msg: format!("malformed `{keyword}` count"),
        })
}

fn parse_fields<T: std::str::FromStr>(
    line: usize,
    text: &str,
    n: usize,
) -> Result<Vec<T>, MeshError> {
    let vals: Result<Vec<T>, _> = text.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(MeshError::Parse {
            line,
            msg: format!("expected {n} fields, found `{text}`"),
        }),
    }
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = Lines {
        iter: text.lines().enumerate(),
    };
    let (lno, header) = lines.next("header")?;
    match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["mmesh", "1"] => {}
        ["mmesh", v] => return Err(MeshError::UnsupportedVersion(v.to_string())),
        _ => {
            return Err(MeshError::Parse {
                line: lno,
                msg: format!("expected `mmesh 1` header, found `{header}`"),
            })
        }
    }
    let (lno, l) = lines.next("vertices")?;
    let n_vertices = parse_count(lno, l, "vertices")?;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (lno, l) = lines.next("vertex coordinates")?;
        let xy: Vec<f64> = parse_fields(lno, l, 2)?;
        vertices.push(Vec2::new(xy[0], xy[1]));
    }
    let (lno, l) = lines.next("cells")?;
    let n_cells = parse_count(lno, l, "cells")?;
    let mut cells = Vec::with_capacity(n_cells);
    let mut regions = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (lno, l) = lines.next("cell")?;
        let f: Vec<i64> = parse_fields(lno, l, 4)?;
        let idx: Vec<usize> = f[..3]
            .iter()
            .map(|&v| usize::try_from(v).ok().filter(|&i| i < n_vertices))
            .collect::<Option<_>>()
            .ok_or(MeshError::Parse {
                line: lno,
                msg: "cell vertex index out of range".into(),
            })?;
        cells.push([idx[0], idx[1], idx[2]]);
        regions.push(f[3] as i32);
    }
    let (lno, l) = lines.next("facets")?;
    let n_facets = parse_count(lno, l, "facets")?;
    let mut facets = Vec::with_capacity(n_facets);
    let mut markers = Vec::with_capacity(n_facets);
    for _ in 0..n_facets {
        let (lno, l) = lines.next("facet")?;
        let f: Vec<i64> = parse_fields(lno, l, 3)?;
        let idx: Vec<usize> = f[..2]
            .iter()
            .map(|&v| usize::try_from(v).ok().filter(|&i| i < n_vertices))
            .collect::<Option<_>>()
            .ok_or(MeshError::Parse {
                line: lno,
                msg: "facet vertex index out of range".into(),
            })?;
        facets.push([idx[0], idx[1]]);
        markers.push(f[2] as i32);
    }
    Mesh::new(vertices, cells, regions, facets, markers)
}

#[cfg(test)]
mod tests {
    use super::super::{gen_annulus, gen_cable_submesh, gen_rect_grid};
    use super::*;

    #[test]
    fn round_trip_generated_meshes() {
        let dir = std::env::temp_dir().join("mmshape_mesh_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        for (name, mesh) in [
            ("rect", gen_rect_grid(0.0, 0.0, 2.0, 1.0, 3, 2).unwrap()),
            ("annulus", gen_annulus(Vec2::new(0.5, 0.5), 0.2, 0.4, 2, 16).unwrap()),
            (
                "cable",
                gen_cable_submesh(Vec2::new(0.03, 0.2), 0.2, 0.255, 0.45, 16).unwrap(),
            ),
        ] {
            let path = dir.join(format!("{name}.mmesh"));
            write_mesh(&mesh, &path).unwrap();
            let back = read_mesh(&path).unwrap();
            assert_eq!(mesh, back, "mesh {name} did not round-trip");
        }
    }

    #[test]
    fn unsupported_version_rejected() {
        let dir = std::env::temp_dir().join("mmshape_mesh_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_version.mmesh");
        std::fs::write(&path, "mmesh 2\nvertices 0\ncells 0\nfacets 0\n").unwrap();
        match read_mesh(&path) {
            Err(MeshError::UnsupportedVersion(v)) => assert_eq!(v, "2"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_cell_block_names_line() {
        let dir = std::env::temp_dir().join("mmshape_mesh_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.mmesh");
        std::fs::write(
            &path,
            "mmesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 2\n0 1 2 0\n",
        )
        .unwrap();
        match read_mesh(&path) {
            Err(MeshError::Parse { msg, .. }) => assert!(msg.contains("cell")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn reader_repairs_orientation() {
        let dir = std::env::temp_dir().join("mmshape_mesh_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cw.mmesh");
        std::fs::write(
            &path,
            "mmesh 1\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 2 1 0\nfacets 0\n",
        )
        .unwrap();
        let mesh = read_mesh(&path).unwrap();
        assert!(mesh.cell_area(0) > 0.0);
    }
}
