//! Interface segments along the visible submesh boundary Λ and overlap
//! pieces tiling the hidden parts of cut background cells.

use super::{CellLocator, CellStatus, Classification, ConvexPolygon, CutError};
use crate::geom::{segment_intersection_params, BBox, Vec2};
use crate::mesh::{marker, Mesh};

/// A piece of a marker-2 submesh facet lying inside one background cell.
#[derive(Debug, Clone)]
pub struct InterfaceSegment {
    pub p0: Vec2,
    pub p1: Vec2,
    /// Unit normal pointing out of the submesh.
    pub normal: Vec2,
    pub submesh_facet: usize,
    /// Submesh cell adjacent to the facet.
    pub submesh_cell: usize,
    /// Background cell containing the segment midpoint.
    pub background_cell: usize,
    pub length: f64,
    /// Mean mesh size (h0 + h1) / 2 entering the penalty scaling.
    pub h: f64,
}

impl InterfaceSegment {
    pub fn midpoint(&self) -> Vec2 {
        (self.p0 + self.p1) * 0.5
    }
}

/// Splits every marker-2 facet of the submesh at its crossings with
/// background cell edges and pairs each piece with the background cell
/// containing its midpoint.
pub fn interface_segments(
    submesh: &Mesh,
    background: &Mesh,
    cls: &Classification,
) -> Result<Vec<InterfaceSegment>, CutError> {
    let adjacency = submesh.facet_cells();
    let locator = CellLocator::new(background);
    let h = 0.5 * (background.h_max + submesh.h_max);
    let cell_boxes: Vec<BBox> = (0..background.n_cells())
        .map(|c| BBox::from_points(&background.cell_points(c)).inflated(1e-12))
        .collect();
    let mut out = Vec::new();
    for facet in submesh.facets_with_marker(marker::LAMBDA) {
        let [a, b] = submesh.facet_points(facet);
        let facet_box = BBox::from_points(&[a, b]).inflated(1e-12);
        let mut ts = vec![0.0, 1.0];
        for (cell, cb) in cell_boxes.iter().enumerate() {
            if !cb.intersects(&facet_box) {
                continue;
            }
            let tri = background.cell_points(cell);
            for k in 0..3 {
                if let Some((t, u)) =
                    segment_intersection_params(a, b, tri[k], tri[(k + 1) % 3])
                {
                    if (-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u)
                    {
                        ts.push(t.clamp(0.0, 1.0));
                    }
                }
            }
        }
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-10);
        let sub_cell = adjacency[facet][0];
        let normal = submesh.facet_normal_from_cell(facet, sub_cell);
        for pair in ts.windows(2) {
            let (t0, t1) = (pair[0], pair[1]);
            if t1 - t0 < 1e-10 {
                continue;
            }
            let p0 = a + (b - a) * t0;
            let p1 = a + (b - a) * t1;
            let mid = (p0 + p1) * 0.5;
            let bg_cell = locator.locate(background, mid).ok_or_else(|| {
                CutError::Inconsistent(format!(
                    "interface segment midpoint ({:.6}, {:.6}) lies outside the background mesh",
                    mid.x, mid.y
                ))
            })?;
            if cls.is_covered(bg_cell) {
                return Err(CutError::Inconsistent(format!(
                    "interface segment midpoint located in covered background cell {bg_cell}"
                )));
            }
            out.push(InterfaceSegment {
                p0,
                p1,
                normal,
                submesh_facet: facet,
                submesh_cell: sub_cell,
                background_cell: bg_cell,
                length: (p1 - p0).norm(),
                h,
            });
        }
    }
    out.sort_by(|s, t| {
        (s.submesh_facet, s.background_cell).cmp(&(t.submesh_facet, t.background_cell))
    });
    Ok(out)
}

/// One convex piece of a (cut background cell) ∩ (submesh cell) overlap.
#[derive(Debug, Clone)]
pub struct OverlapPiece {
    pub polygon: ConvexPolygon,
    pub background_cell: usize,
    pub submesh_cell: usize,
}

/// Clips the hidden part of every cut background cell against the submesh
/// cells it touches. The pieces tile each hidden part; a mismatch beyond
/// 1e-8 relative is reported as an inconsistency.
pub fn overlap_pieces(
    submesh: &Mesh,
    background: &Mesh,
    cls: &Classification,
    submesh_index: usize,
) -> Result<Vec<OverlapPiece>, CutError> {
    let sub_boxes: Vec<BBox> = (0..submesh.n_cells())
        .map(|c| BBox::from_points(&submesh.cell_points(c)).inflated(1e-12))
        .collect();
    let mut out = Vec::new();
    for cell in 0..background.n_cells() {
        if cls.status[cell] != (CellStatus::Cut { submesh: submesh_index }) {
            continue;
        }
        let hidden = cls.hidden[cell]
            .as_ref()
            .expect("cut cell carries its hidden polygon");
        let hidden_box = hidden.bbox().inflated(1e-12);
        let mut tiled = 0.0;
        for (sc, sb) in sub_boxes.iter().enumerate() {
            if !sb.intersects(&hidden_box) {
                continue;
            }
            let [a, b, c] = submesh.cell_points(sc);
            let tri = ConvexPolygon::from_triangle(a, b, c)
                .map_err(|e| CutError::Inconsistent(format!("bad submesh cell {sc}: {e}")))?;
            if let Some(piece) = super::clip_polygon(hidden.vertices(), &tri) {
                tiled += piece.area();
                out.push(OverlapPiece {
                    polygon: piece,
                    background_cell: cell,
                    submesh_cell: sc,
                });
            }
        }
        let want = hidden.area();
        if (tiled - want).abs() > 1e-8 * want.max(background.cell_area(cell)) {
            return Err(CutError::Inconsistent(format!(
                "overlap pieces of background cell {cell} tile {tiled:.3e} of {want:.3e}"
            )));
        }
    }
    out.sort_by(|s, t| {
        (s.background_cell, s.submesh_cell).cmp(&(t.background_cell, t.submesh_cell))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{classify_cells, Footprint};
    use super::*;
    use crate::mesh::{gen_annulus, gen_rect_grid};

    fn annulus_stackup() -> (Mesh, Mesh, Classification) {
        let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 8, 8).unwrap();
        let sub = gen_annulus(Vec2::new(0.5, 0.5), 0.13, 0.33, 3, 24).unwrap();
        let fp = super::super::footprint_of_submesh(&sub).unwrap();
        let cls = classify_cells(&bg, &[fp]).unwrap();
        (bg, sub, cls)
    }

    #[test]
    fn segment_lengths_tile_the_footprint_perimeter() {
        let (bg, sub, cls) = annulus_stackup();
        let segs = interface_segments(&sub, &bg, &cls).unwrap();
        let total: f64 = segs.iter().map(|s| s.length).sum();
        let fp = super::super::footprint_polygon(&sub).unwrap();
        let pv = fp.vertices();
        let perimeter: f64 = (0..pv.len())
            .map(|i| (pv[(i + 1) % pv.len()] - pv[i]).norm())
            .sum();
        assert!(
            (total - perimeter).abs() <= 1e-10 * perimeter,
            "{total} vs {perimeter}"
        );
        // midpoints sit on the facet and inside the paired cell
        for s in &segs {
            let mid = s.midpoint();
            let [a, b, c] = bg.cell_points(s.background_cell);
            assert!(crate::geom::point_in_triangle(mid, a, b, c, 1e-10));
            assert!((s.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn facet_inside_one_cell_stays_unsplit() {
        // coarse background, tiny facets: many facets remain unsplit. The
        // guard is dropped since this scale cannot honor the halo rule.
        let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let sub = gen_annulus(Vec2::new(0.5, 0.5), 0.05, 0.1, 1, 16).unwrap();
        let fp = Footprint {
            outline: super::super::footprint_polygon(&sub).unwrap(),
            guard: None,
        };
        let cls = classify_cells(&bg, &[fp]).unwrap();
        let segs = interface_segments(&sub, &bg, &cls).unwrap();
        let n_facets = sub.facets_with_marker(marker::LAMBDA).count();
        let unsplit = segs
            .iter()
            .filter(|s| {
                let [a, b] = sub.facet_points(s.submesh_facet);
                (s.p0 - a).norm() < 1e-12 && (s.p1 - b).norm() < 1e-12
            })
            .count();
        assert!(unsplit >= 1);
        assert!(segs.len() >= n_facets);
    }

    #[test]
    fn segment_count_matches_crossing_oracle() {
        // brute-force count of (facet x crossed background edge) incidences:
        // each facet yields 1 + (#crossings) segments
        let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let sub = gen_annulus(Vec2::new(0.48, 0.52), 0.1, 0.31, 2, 6 * 4).unwrap();
        let fp = super::super::footprint_of_submesh(&sub).unwrap();
        let cls = classify_cells(&bg, &[fp]).unwrap();
        let segs = interface_segments(&sub, &bg, &cls).unwrap();

        let mut expected = 0usize;
        for facet in sub.facets_with_marker(marker::LAMBDA) {
            let [a, b] = sub.facet_points(facet);
            let mut ts: Vec<f64> = Vec::new();
            // oracle: undirected background edges collected independently
            let mut edges = std::collections::HashSet::new();
            for cell in bg.cells.iter() {
                for k in 0..3 {
                    let (u, v) = (cell[k], cell[(k + 1) % 3]);
                    edges.insert(if u < v { (u, v) } else { (v, u) });
                }
            }
            for (u, v) in edges {
                if let Some((t, s)) = segment_intersection_params(
                    a,
                    b,
                    bg.vertices[u],
                    bg.vertices[v],
                ) {
                    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s) {
                        ts.push(t);
                    }
                }
            }
            ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            ts.dedup_by(|x, y| (*x - *y).abs() < 1e-10);
            ts.retain(|&t| t > 1e-10 && t < 1.0 - 1e-10);
            expected += ts.len() + 1;
        }
        assert_eq!(segs.len(), expected);
    }

    #[test]
    fn overlap_pieces_tile_hidden_parts() {
        let (bg, sub, cls) = annulus_stackup();
        let pieces = overlap_pieces(&sub, &bg, &cls, 0).unwrap();
        let total: f64 = pieces.iter().map(|p| p.polygon.area()).sum();
        let hidden: f64 = (0..bg.n_cells()).map(|c| cls.hidden_area(c)).sum();
        assert!((total - hidden).abs() <= 1e-10 * hidden.max(1.0));
        // piece containment in both parents
        for p in pieces.iter().step_by(7) {
            let [a, b, c] = sub.cell_points(p.submesh_cell);
            let tri = ConvexPolygon::from_triangle(a, b, c).unwrap();
            for &v in p.polygon.vertices() {
                assert!(tri.contains(v, 1e-9));
            }
        }
    }

    #[test]
    fn overlap_area_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let (bg, sub, cls) = annulus_stackup();
        let pieces = overlap_pieces(&sub, &bg, &cls, 0).unwrap();
        let total: f64 = pieces.iter().map(|p| p.polygon.area()).sum();

        // Monte-Carlo: points hitting both a cut background cell's hidden
        // region (inside footprint) and the submesh domain
        let fp = super::super::footprint_polygon(&sub).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut hits = 0usize;
        let sub_locator = CellLocator::new(&sub);
        for _ in 0..n {
            let p = Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if !fp.contains(p, 0.0) {
                continue;
            }
            let Some(bg_cell) = super::super::point_locate(&bg, p) else {
                continue;
            };
            if !matches!(cls.status[bg_cell], CellStatus::Cut { .. }) {
                continue;
            }
            if sub_locator.locate(&sub, p).is_some() {
                hits += 1;
            }
        }
        let estimate = hits as f64 / n as f64; // domain area is 1
        let sigma = (estimate * (1.0 - estimate) / n as f64).sqrt();
        assert!(
            (estimate - total).abs() <= 3.0 * sigma,
            "MC {estimate} vs pieces {total} (3σ = {})",
            3.0 * sigma
        );
    }
}
