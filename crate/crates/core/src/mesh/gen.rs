//! Structured generators for the geometries used by the experiments:
//! crisscross rectangles, (elliptic) annuli, mapped disks and cable
//! submeshes with concentric material regions.

use super::{marker, region, Mesh, MeshError};
use crate::geom::Vec2;

fn invalid(msg: impl Into<String>) -> MeshError {
    MeshError::InvalidArgument(msg.into())
}

/// Crisscross rectangle grid: each of the nx*ny quads is split into four
/// triangles through its centroid, so the mesh is symmetric under 90-degree
/// rotation. Outer boundary facets carry marker 10.
pub fn gen_rect_grid(
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    nx: usize,
    ny: usize,
) -> Result<Mesh, MeshError> {
    if !(x1 > x0) || !(y1 > y0) {
        return Err(invalid("rectangle extent must be positive"));
    }
    if nx < 1 || ny < 1 {
        return Err(invalid("grid counts must be at least 1"));
    }
    let dx = (x1 - x0) / nx as f64;
    let dy = (y1 - y0) / ny as f64;
    let gid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec2::new(x0 + i as f64 * dx, y0 + j as f64 * dy));
        }
    }
    let mut cells = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = gid(i, j);
            let v10 = gid(i + 1, j);
            let v11 = gid(i + 1, j + 1);
            let v01 = gid(i, j + 1);
            let vc = vertices.len();
            vertices.push(Vec2::new(
                x0 + (i as f64 + 0.5) * dx,
                y0 + (j as f64 + 0.5) * dy,
            ));
            cells.push([v00, v10, vc]);
            cells.push([v10, v11, vc]);
            cells.push([v11, v01, vc]);
            cells.push([v01, v00, vc]);
        }
    }
    let mut facets = Vec::new();
    for i in 0..nx {
        facets.push([gid(i, 0), gid(i + 1, 0)]);
        facets.push([gid(i, ny), gid(i + 1, ny)]);
    }
    for j in 0..ny {
        facets.push([gid(0, j), gid(0, j + 1)]);
        facets.push([gid(nx, j), gid(nx, j + 1)]);
    }
    let n_cells = cells.len();
    let markers = vec![marker::EXTERIOR; facets.len()];
    Mesh::new(vertices, cells, vec![region::FILL; n_cells], facets, markers)
}

/// Structured circular annulus; inner loop facets carry marker 1 (Γ) and
/// the outer loop marker 2 (Λ).
pub fn gen_annulus(
    center: Vec2,
    r_in: f64,
    r_out: f64,
    n_r: usize,
    n_t: usize,
) -> Result<Mesh, MeshError> {
    gen_ellipse_annulus(center, r_in, r_in, r_out, n_r, n_t)
}

/// Annulus between an inner ellipse with semi-axes (a_in, b_in) and an
/// outer circle of radius r_out; intermediate rings interpolate linearly.
/// Inner loop marker 1, outer loop marker 2.
pub fn gen_ellipse_annulus(
    center: Vec2,
    a_in: f64,
    b_in: f64,
    r_out: f64,
    n_r: usize,
    n_t: usize,
) -> Result<Mesh, MeshError> {
    if !(a_in > 0.0 && b_in > 0.0) {
        return Err(invalid("inner semi-axes must be positive"));
    }
    if !(r_out > a_in && r_out > b_in) {
        return Err(invalid("outer radius must exceed the inner semi-axes"));
    }
    if n_r < 1 {
        return Err(invalid("need at least one radial layer"));
    }
    if n_t < 8 {
        return Err(invalid("need at least 8 circumferential segments"));
    }
    let mut vertices = Vec::with_capacity((n_r + 1) * n_t);
    for k in 0..=n_r {
        let t = k as f64 / n_r as f64;
        let a = a_in + (r_out - a_in) * t;
        let b = b_in + (r_out - b_in) * t;
        for j in 0..n_t {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n_t as f64;
            vertices.push(center + Vec2::new(a * th.cos(), b * th.sin()));
        }
    }
    let vid = |k: usize, j: usize| k * n_t + (j % n_t);
    let mut cells = Vec::with_capacity(2 * n_r * n_t);
    for k in 0..n_r {
        for j in 0..n_t {
            let a = vid(k, j);
            let b = vid(k, j + 1);
            let c = vid(k + 1, j + 1);
            let d = vid(k + 1, j);
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }
    let mut facets = Vec::new();
    let mut markers = Vec::new();
    for j in 0..n_t {
        facets.push([vid(0, j), vid(0, j + 1)]);
        markers.push(marker::GAMMA);
        facets.push([vid(n_r, j), vid(n_r, j + 1)]);
        markers.push(marker::LAMBDA);
    }
    let n_cells = cells.len();
    Mesh::new(vertices, cells, vec![region::FILL; n_cells], facets, markers)
}

/// Crisscross square mapped onto a disk with the elliptical square-to-disk
/// map; the square boundary lands exactly on the circle, and there is no
/// high-valence center fan.
fn mapped_disk_parts(
    center: Vec2,
    radius: f64,
    n: usize,
) -> (Vec<Vec2>, Vec<[usize; 3]>, Vec<usize>) {
    let map = |x: f64, y: f64| -> Vec2 {
        let q = Vec2::new(
            x * (1.0 - 0.5 * y * y).sqrt(),
            y * (1.0 - 0.5 * x * x).sqrt(),
        );
        center + q * radius
    };
    let gid = |i: usize, j: usize| j * (n + 1) + i;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(map(coord(i), coord(j)));
        }
    }
    let mut cells = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = gid(i, j);
            let v10 = gid(i + 1, j);
            let v11 = gid(i + 1, j + 1);
            let v01 = gid(i, j + 1);
            let vc = vertices.len();
            let centroid =
                (vertices[v00] + vertices[v10] + vertices[v11] + vertices[v01]) * 0.25;
            vertices.push(centroid);
            cells.push([v00, v10, vc]);
            cells.push([v10, v11, vc]);
            cells.push([v11, v01, vc]);
            cells.push([v01, v00, vc]);
        }
    }
    // CCW boundary walk: bottom, right, top, left.
    let mut boundary = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary.push(gid(i, 0));
    }
    for j in 0..n {
        boundary.push(gid(n, j));
    }
    for i in (1..=n).rev() {
        boundary.push(gid(i, n));
    }
    for j in (1..=n).rev() {
        boundary.push(gid(0, j));
    }
    (vertices, cells, boundary)
}

/// Disk mesh with exterior boundary marker 10; `n` is the resolution of
/// the underlying mapped square grid (boundary has 4n vertices).
pub fn gen_disk(center: Vec2, radius: f64, n: usize) -> Result<Mesh, MeshError> {
    if !(radius > 0.0) {
        return Err(invalid("disk radius must be positive"));
    }
    if n < 2 {
        return Err(invalid("disk resolution must be at least 2"));
    }
    let (vertices, cells, boundary) = mapped_disk_parts(center, radius, n);
    let nb = boundary.len();
    let facets: Vec<[usize; 2]> = (0..nb)
        .map(|k| [boundary[k], boundary[(k + 1) % nb]])
        .collect();
    let n_cells = cells.len();
    let markers = vec![marker::EXTERIOR; facets.len()];
    Mesh::new(vertices, cells, vec![region::FILL; n_cells], facets, markers)
}

/// Cable submesh: mapped-disk metal core (region 2) to r_met, insulation
/// band (region 1) to r_iso, fill halo (region 0) to r_halo. Facet markers:
/// 3 on the r_met circle, 4 on r_iso, 2 on the outer rim.
pub fn gen_cable_submesh(
    center: Vec2,
    r_met: f64,
    r_iso: f64,
    r_halo: f64,
    resolution: usize,
) -> Result<Mesh, MeshError> {
    if !(0.0 < r_met && r_met < r_iso && r_iso < r_halo) {
        return Err(invalid("cable radii must satisfy 0 < r_met < r_iso < r_halo"));
    }
    if resolution < 8 {
        return Err(invalid("cable resolution must be at least 8"));
    }
    let n_core = (resolution / 4).max(2);
    let n_t = 4 * n_core;
    let (mut vertices, mut cells, core_boundary) = mapped_disk_parts(center, r_met, n_core);
    let mut regions = vec![region::METAL; cells.len()];
    let mut facets = Vec::new();
    let mut markers = Vec::new();
    for k in 0..n_t {
        facets.push([core_boundary[k], core_boundary[(k + 1) % n_t]]);
        markers.push(marker::GAMMA_I);
    }
    let dirs: Vec<Vec2> = core_boundary
        .iter()
        .map(|&v| (vertices[v] - center) / r_met)
        .collect();
    let mut prev_ring = core_boundary;
    let bands = [
        (r_met, r_iso, region::INSULATION, marker::GAMMA_E),
        (r_iso, r_halo, region::FILL, marker::LAMBDA),
    ];
    for (r0, r1, reg, outer_marker) in bands {
        let arc = 2.0 * std::f64::consts::PI * 0.5 * (r0 + r1) / n_t as f64;
        let layers = (((r1 - r0) / arc).round() as usize).max(1);
        for l in 1..=layers {
            let r = r0 + (r1 - r0) * l as f64 / layers as f64;
            let ring: Vec<usize> = dirs
                .iter()
                .map(|&d| {
                    vertices.push(center + d * r);
                    vertices.len() - 1
                })
                .collect();
            for j in 0..n_t {
                let a = prev_ring[j];
                let b = prev_ring[(j + 1) % n_t];
                let c = ring[(j + 1) % n_t];
                let d = ring[j];
                cells.push([a, b, c]);
                cells.push([a, c, d]);
                regions.push(reg);
                regions.push(reg);
            }
            if l == layers {
                for j in 0..n_t {
                    facets.push([ring[j], ring[(j + 1) % n_t]]);
                    markers.push(outer_marker);
                }
            }
            prev_ring = ring;
        }
    }
    Mesh::new(vertices, cells, regions, facets, markers)
}
