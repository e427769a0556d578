//! Debug SVG dump of a classification: uncut, cut and covered cells in
//! three fill colors.

use super::{CellStatus, Classification};
use crate::geom::BBox;
use crate::mesh::Mesh;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_classification_svg(
    mesh: &Mesh,
    cls: &Classification,
    path: impl AsRef<Path>,
) -> std::io::Result<()> {
    let bbox = BBox::from_points(&mesh.vertices);
    let w = bbox.max.x - bbox.min.x;
    let h = bbox.max.y - bbox.min.y;
    let scale = 800.0 / w.max(h);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.2} {:.2}">"#,
        w * scale,
        h * scale,
        w * scale,
        h * scale
    );
    for cell in 0..mesh.n_cells() {
        let fill = match cls.status[cell] {
            CellStatus::Uncut => "#9ecae1",
            CellStatus::Cut { .. } => "#fdae6b",
            CellStatus::Covered { .. } => "#a1a1a1",
        };
        let pts: String = mesh
            .cell_points(cell)
            .iter()
            .map(|p| {
                format!(
                    "{:.3},{:.3} ",
                    (p.x - bbox.min.x) * scale,
                    // SVG y axis points down
                    (bbox.max.y - p.y) * scale
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="{}" stroke="#333" stroke-width="0.5"/>"##,
            pts.trim_end(),
            fill
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}
