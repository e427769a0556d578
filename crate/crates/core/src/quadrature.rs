//! Quadrature rules on reference triangles and segments.
//!
//! Triangle rules are Dunavant rules restricted to the ones with strictly
//! positive weights, so cut-cell rules keep nonnegative weights after
//! mapping. A requested degree is served by the smallest positive-weight
//! rule that is exact for it.

use crate::geom::{triangle_area, Vec2};

/// One quadrature node in barycentric coordinates plus its weight; weights
/// of a rule sum to 1 on the reference triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriNode {
    pub bary: [f64; 3],
    pub weight: f64,
}

fn orbit1(out: &mut Vec<TriNode>, w: f64) {
    out.push(TriNode {
        bary: [1.0 / 3.0; 3],
        weight: w,
    });
}

fn orbit3(out: &mut Vec<TriNode>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    for bary in [[b, a, a], [a, b, a], [a, a, b]] {
        out.push(TriNode { bary, weight: w });
    }
}

fn orbit6(out: &mut Vec<TriNode>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for bary in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        out.push(TriNode { bary, weight: w });
    }
}

/// Positive-weight rule exact for bivariate polynomials of total degree
/// `degree` on a triangle. Supported degrees 1..=6.
pub fn triangle_rule(degree: usize) -> Vec<TriNode> {
    let mut nodes = Vec::new();
    match degree {
        0 | 1 => orbit1(&mut nodes, 1.0),
        2 => orbit3(&mut nodes, 1.0 / 6.0, 1.0 / 3.0),
        // Dunavant degree-3 carries a negative centroid weight; use the
        // degree-4 rule for both 3 and 4.
        3 | 4 => {
            orbit3(&mut nodes, 0.445948490915965, 0.223381589678011);
            orbit3(&mut nodes, 0.091576213509771, 0.109951743655322);
        }
        5 => {
            orbit1(&mut nodes, 0.225);
            orbit3(&mut nodes, 0.470142064105115, 0.132394152788506);
            orbit3(&mut nodes, 0.101286507323456, 0.125939180544827);
        }
        6 => {
            orbit3(&mut nodes, 0.249286745170910, 0.116786275726379);
            orbit3(&mut nodes, 0.063089014491502, 0.050844906370207);
            orbit6(
                &mut nodes,
                0.310352451033785,
                0.636502499121399,
                0.082851075618374,
            );
        }
        _ => panic!("triangle quadrature degree {degree} not supported (1..=6)"),
    }
    nodes
}

/// Rule mapped onto the physical triangle (a, b, c); weights carry the
/// absolute triangle area.
pub fn mapped_triangle_rule(a: Vec2, b: Vec2, c: Vec2, degree: usize) -> Vec<(Vec2, f64)> {
    let area = triangle_area(a, b, c).abs();
    triangle_rule(degree)
        .into_iter()
        .map(|n| {
            let p = a * n.bary[0] + b * n.bary[1] + c * n.bary[2];
            (p, n.weight * area)
        })
        .collect()
}

/// Two-point Gauss rule on the segment (p0, p1); exact for cubics. Weights
/// carry the segment length.
pub fn segment_gauss2(p0: Vec2, p1: Vec2) -> [(Vec2, f64); 2] {
    let len = (p1 - p0).norm();
    let off = 0.5 / 3.0f64.sqrt();
    let t0 = 0.5 - off;
    let t1 = 0.5 + off;
    [
        (p0 + (p1 - p0) * t0, 0.5 * len),
        (p0 + (p1 - p0) * t1, 0.5 * len),
    ]
}

/// Gauss-Legendre nodes and weights on [0, 1]; supported n in {2, 4, 8}.
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    // Nodes/weights on [-1, 1], positive half; mirrored below.
    let half: &[(f64, f64)] = match n {
        2 => &[(0.5773502691896257, 1.0)],
        4 => &[
            (0.3399810435848563, 0.6521451548625461),
            (0.8611363115940526, 0.3478548451374538),
        ],
        8 => &[
            (0.1834346424956498, 0.3626837833783620),
            (0.5255324099163290, 0.3137066458778873),
            (0.7966664774136267, 0.2223810344533745),
            (0.9602898564975363, 0.1012285362903763),
        ],
        _ => panic!("gauss_legendre_01: n {n} not supported"),
    };
    let mut out = Vec::with_capacity(n);
    for &(x, w) in half {
        out.push((0.5 * (1.0 - x), 0.5 * w));
        out.push((0.5 * (1.0 + x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact_on_reference(a: u32, b: u32) -> f64 {
        // integral of x^a y^b over the unit reference triangle x,y>=0, x+y<=1
        // equals a! b! / (a+b+2)!
        let fact = |k: u32| (1..=k as u64).product::<u64>() as f64;
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn rules_integrate_monomials_exactly() {
        let v0 = Vec2::new(0.0, 0.0);
        let v1 = Vec2::new(1.0, 0.0);
        let v2 = Vec2::new(0.0, 1.0);
        for degree in 1..=6usize {
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let num: f64 = mapped_triangle_rule(v0, v1, v2, degree)
                        .iter()
                        .map(|(p, w)| p.x.powi(a as i32) * p.y.powi(b as i32) * w)
                        .sum();
                    let exact = monomial_exact_on_reference(a, b);
                    assert!(
                        (num - exact).abs() <= 1e-14 + 1e-12 * exact.abs(),
                        "degree {degree} monomial x^{a} y^{b}: {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn weights_positive_and_normalized() {
        for degree in 1..=6usize {
            let rule = triangle_rule(degree);
            let total: f64 = rule.iter().map(|n| n.weight).sum();
            assert!((total - 1.0).abs() < 1e-13);
            assert!(rule.iter().all(|n| n.weight > 0.0));
        }
    }

    #[test]
    fn segment_rule_integrates_cubic() {
        let p0 = Vec2::new(1.0, 2.0);
        let p1 = Vec2::new(3.0, 2.0);
        // integral of x^3 over x in [1,3] = (81-1)/4 = 20
        let num: f64 = segment_gauss2(p0, p1)
            .iter()
            .map(|(p, w)| p.x.powi(3) * w)
            .sum();
        assert!((num - 20.0).abs() < 1e-12);
    }

    #[test]
    fn gl01_integrates_high_degree() {
        // integral of t^7 over [0,1] = 1/8 (4-point rule is exact to degree 7)
        let num: f64 = gauss_legendre_01(4).iter().map(|(t, w)| t.powi(7) * w).sum();
        assert!((num - 0.125).abs() < 1e-14);
    }
}
