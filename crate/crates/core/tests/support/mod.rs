//! Shared oracles for the integration tests.

use amd_mil::numerics::{Matrix, Rng};

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Exact convex-hull membership for dimension 1..=3 via separating
/// hyperplanes through facet candidates (requires vertices in general
/// position, which random Gaussian rows are almost surely).
pub fn in_convex_hull(point: &[f64], vertices: &[&[f64]], tol: f64) -> bool {
    let dim = point.len();
    assert!((1..=3).contains(&dim), "hull check implemented for d <= 3");
    assert!(vertices.iter().all(|v| v.len() == dim));
    match dim {
        1 => {
            let lo = vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            let hi = vertices
                .iter()
                .map(|v| v[0])
                .fold(f64::NEG_INFINITY, f64::max);
            point[0] >= lo - tol && point[0] <= hi + tol
        }
        2 => {
            for i in 0..vertices.len() {
                for j in (i + 1)..vertices.len() {
                    let edge = [
                        vertices[j][0] - vertices[i][0],
                        vertices[j][1] - vertices[i][1],
                    ];
                    let normal = [-edge[1], edge[0]];
                    if separates(point, vertices, vertices[i], &normal, tol) {
                        return false;
                    }
                }
            }
            true
        }
        _ => {
            for i in 0..vertices.len() {
                for j in (i + 1)..vertices.len() {
                    for k in (j + 1)..vertices.len() {
                        let a = sub3(vertices[j], vertices[i]);
                        let b = sub3(vertices[k], vertices[i]);
                        let normal = [
                            a[1] * b[2] - a[2] * b[1],
                            a[2] * b[0] - a[0] * b[2],
                            a[0] * b[1] - a[1] * b[0],
                        ];
                        if normal.iter().map(|v| v * v).sum::<f64>() < 1e-18 {
                            continue;
                        }
                        if separates(point, vertices, vertices[i], &normal, tol) {
                            return false;
                        }
                    }
                }
            }
            true
        }
    }
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn separates(point: &[f64], vertices: &[&[f64]], origin: &[f64], normal: &[f64], tol: f64) -> bool {
    let side = |p: &[f64]| -> f64 {
        p.iter()
            .zip(origin)
            .zip(normal)
            .map(|((pv, ov), nv)| (pv - ov) * nv)
            .sum()
    };
    let p_side = side(point);
    let above = vertices.iter().all(|v| side(v) <= tol);
    let below = vertices.iter().all(|v| side(v) >= -tol);
    (above && p_side > tol) || (below && p_side < -tol)
}

#[allow(dead_code)]
pub fn assert_rows_stochastic(m: &Matrix<f64>, tol: f64, what: &str) {
    for r in 0..m.rows() {
        let sum: f64 = m.row(r).iter().sum();
        assert!(
            (sum - 1.0).abs() <= tol,
            "{what}: row {r} sums to {sum}, expected 1"
        );
        assert!(
            m.row(r).iter().all(|&v| v >= 0.0),
            "{what}: row {r} has negative entries"
        );
    }
}
