//! Output writers: legacy-VTK ASCII unstructured grids (one file per mesh
//! per snapshot) and CSV tables with a header row, '.' decimals and '\n'
//! line ends. Floats are written with 17 significant digits so a parse
//! round-trips exactly.

use crate::geom::Vec2;
use crate::mesh::Mesh;
use crate::shape::GradientDensity;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// Point data attached to a VTK snapshot.
pub enum VtkData<'a> {
    Scalars { name: &'a str, values: &'a [f64] },
    Vectors { name: &'a str, values: &'a [Vec2] },
}

/// Writes a triangle mesh with point data as a legacy ASCII VTK
/// unstructured grid.
pub fn write_vtk(mesh: &Mesh, data: &[VtkData], path: impl AsRef<Path>) -> io::Result<()> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("mmshape field snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.16e} {:.16e} 0.0", v.x, v.y);
    }
    let _ = writeln!(out, "CELLS {} {}", mesh.n_cells(), 4 * mesh.n_cells());
    for cell in &mesh.cells {
        let _ = writeln!(out, "3 {} {} {}", cell[0], cell[1], cell[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", mesh.n_cells());
    for _ in 0..mesh.n_cells() {
        out.push_str("5\n");
    }
    if !data.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
        for block in data {
            match block {
                VtkData::Scalars { name, values } => {
                    assert_eq!(values.len(), mesh.n_vertices());
                    let _ = writeln!(out, "SCALARS {name} double 1");
                    out.push_str("LOOKUP_TABLE default\n");
                    for v in *values {
                        let _ = writeln!(out, "{v:.16e}");
                    }
                }
                VtkData::Vectors { name, values } => {
                    assert_eq!(values.len(), mesh.n_vertices());
                    let _ = writeln!(out, "VECTORS {name} double");
                    for v in *values {
                        let _ = writeln!(out, "{:.16e} {:.16e} 0.0", v.x, v.y);
                    }
                }
            }
        }
    }
    std::fs::write(path, out)
}

/// One CSV cell; floats print with 17 significant digits.
#[derive(Debug, Clone)]
pub enum CsvCell {
    I(i64),
    F(f64),
    S(String),
}

impl std::fmt::Display for CsvCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CsvCell::I(v) => write!(f, "{v}"),
            CsvCell::F(v) => write!(f, "{v:.16e}"),
            CsvCell::S(v) => write!(f, "{v}"),
        }
    }
}

impl From<f64> for CsvCell {
    fn from(v: f64) -> Self {
        CsvCell::F(v)
    }
}

impl From<usize> for CsvCell {
    fn from(v: usize) -> Self {
        CsvCell::I(v as i64)
    }
}

impl From<i64> for CsvCell {
    fn from(v: i64) -> Self {
        CsvCell::I(v)
    }
}

impl From<&str> for CsvCell {
    fn from(v: &str) -> Self {
        CsvCell::S(v.to_string())
    }
}

pub fn write_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: &[Vec<CsvCell>],
) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Density dump: facet midpoint coordinates and the density value.
pub fn write_density_csv(density: &GradientDensity, path: impl AsRef<Path>) -> io::Result<()> {
    let rows: Vec<Vec<CsvCell>> = density
        .facets
        .iter()
        .map(|f| vec![f.midpoint.x.into(), f.midpoint.y.into(), f.g.into()])
        .collect();
    write_csv(path, &["x", "y", "g"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen_rect_grid;

    #[test]
    fn vtk_counts_and_constant_field() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let path = std::env::temp_dir().join("mmshape_io_test.vtk");
        write_vtk(
            &mesh,
            &[VtkData::Scalars {
                name: "T",
                values: &ones,
            }],
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(&format!("CELLS {} {}", mesh.n_cells(), 4 * mesh.n_cells())));
        let cell_type_lines = text.lines().filter(|l| *l == "5").count();
        assert_eq!(cell_type_lines, mesh.n_cells());
        // every scalar is exactly 1
        let after = text.split("LOOKUP_TABLE default\n").nth(1).unwrap();
        for line in after.lines().take(mesh.n_vertices()) {
            assert_eq!(line.parse::<f64>().unwrap(), 1.0);
        }
    }

    #[test]
    fn csv_round_trips_to_full_precision() {
        let values = [1.0 / 3.0, std::f64::consts::PI, 2.5e-17, -1.23456789012345e8];
        let rows: Vec<Vec<CsvCell>> = values.iter().map(|&v| vec![v.into()]).collect();
        let path = std::env::temp_dir().join("mmshape_io_test.csv");
        write_csv(&path, &["value"], &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("value"));
        for (&want, line) in values.iter().zip(lines) {
            let got: f64 = line.parse().unwrap();
            assert_eq!(got.to_bits(), want.to_bits(), "{line}");
        }
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
    }
}
