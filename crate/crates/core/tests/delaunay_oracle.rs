//! Brute-force verification of the triangulation: empty-circumcircle checks
//! on every produced triangle, the Euler edge-count identity against a
//! gift-wrapping hull, and an all-triples edge oracle. The oracle math here
//! is written independently of the library's predicates.

use graphfuse_core::{delaunay_edges, delaunay_triangles, knn_edges, PointSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rng_from(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Raw in-circle determinant (positive: d inside the circumcircle of CCW
/// a, b, c), straight 3x3 cofactor expansion.
fn incircle_det(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    let m = [
        [a.0 - d.0, a.1 - d.1, (a.0 - d.0).powi(2) + (a.1 - d.1).powi(2)],
        [b.0 - d.0, b.1 - d.1, (b.0 - d.0).powi(2) + (b.1 - d.1).powi(2)],
        [c.0 - d.0, c.1 - d.1, (c.0 - d.0).powi(2) + (c.1 - d.1).powi(2)],
    ];
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Number of convex-hull vertices by gift wrapping.
fn hull_vertex_count(pts: &[(f64, f64)]) -> usize {
    let n = pts.len();
    let start = (0..n)
        .min_by(|&i, &j| pts[i].partial_cmp(&pts[j]).unwrap())
        .unwrap();
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut next = (current + 1) % n;
        for cand in 0..n {
            if cand == current {
                continue;
            }
            let c = cross(pts[current], pts[next], pts[cand]);
            if c < 0.0 {
                next = cand;
            }
        }
        if next == start {
            break;
        }
        hull.push(next);
        current = next;
        assert!(hull.len() <= n, "gift wrapping failed to terminate");
    }
    hull.len()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0))
        .collect()
}

#[test]
fn produced_triangles_have_empty_circumcircles_over_100_seeds() {
    let started = std::time::Instant::now();
    let mut rng = rng_from(2024);
    for case in 0..100 {
        let n = rng.random_range(3..=12usize);
        let coords = random_points(&mut rng, n);
        let pts = PointSet::from_coords(coords.clone()).unwrap();
        let tris = delaunay_triangles(&pts).unwrap();
        assert!(!tris.is_empty(), "case {case}: no triangles for {n} random points");
        for t in &tris {
            let (a, b, c) = (coords[t[0]], coords[t[1]], coords[t[2]]);
            // Orient CCW for the sign convention.
            let (a, b, c) = if cross(a, b, c) > 0.0 { (a, b, c) } else { (a, c, b) };
            for (q, &point) in coords.iter().enumerate() {
                if t.contains(&q) {
                    continue;
                }
                let det = incircle_det(a, b, c, point);
                assert!(
                    det <= 1e-9,
                    "case {case}: point {q} inside circumcircle of {t:?} (det {det:.3e})"
                );
            }
        }
    }
    assert!(started.elapsed().as_secs() < 10, "oracle suite exceeded its runtime budget");
}

#[test]
fn edge_count_satisfies_the_euler_identity() {
    // For a triangulation of n points with h hull points: E = 3n - 3 - h.
    let mut rng = rng_from(515);
    for _ in 0..100 {
        let n = rng.random_range(3..=12usize);
        let coords = random_points(&mut rng, n);
        let pts = PointSet::from_coords(coords.clone()).unwrap();
        let edges = delaunay_edges(&pts).unwrap();
        let h = hull_vertex_count(&coords);
        assert_eq!(edges.len(), 3 * n - 3 - h, "n = {n}, h = {h}");
    }
}

#[test]
fn all_triples_oracle_reproduces_the_edge_set() {
    // Independent construction: an edge belongs to the Delaunay graph of a
    // generic-position point set iff some triangle through it has an empty
    // circumcircle.
    let mut rng = rng_from(909);
    for _ in 0..40 {
        let n = rng.random_range(3..=10usize);
        let coords = random_points(&mut rng, n);
        let pts = PointSet::from_coords(coords.clone()).unwrap();
        let edges = delaunay_edges(&pts).unwrap();

        let mut expected = std::collections::BTreeSet::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let (a, b, c) = (coords[i], coords[j], coords[k]);
                    if cross(a, b, c).abs() < 1e-12 {
                        continue;
                    }
                    let (oa, ob, oc) =
                        if cross(a, b, c) > 0.0 { (a, b, c) } else { (a, c, b) };
                    let empty = coords.iter().enumerate().all(|(q, &p)| {
                        [i, j, k].contains(&q) || incircle_det(oa, ob, oc, p) <= 1e-9
                    });
                    if empty {
                        expected.insert((i, j));
                        expected.insert((i, k));
                        expected.insert((j, k));
                    }
                }
            }
        }
        let got: std::collections::BTreeSet<(usize, usize)> =
            edges.pairs().iter().copied().collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn delaunay_beats_knn_on_graph_diameter_shape() {
    // Structural sanity on a clustered layout: the triangulation connects
    // everything by construction, while small-k nearest neighbors can leave
    // clusters isolated.
    let mut coords = Vec::new();
    for i in 0..5 {
        for j in 0..3 {
            coords.push((i as f64 * 0.1, j as f64 * 0.1));
            coords.push((100.0 + i as f64 * 0.1, j as f64 * 0.1));
        }
    }
    let pts = PointSet::from_coords(coords.clone()).unwrap();
    let n = coords.len();

    let reachable = |pairs: &[(usize, usize)]| -> usize {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in pairs {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().filter(|&&s| s).count()
    };

    let dt = delaunay_edges(&pts).unwrap();
    assert_eq!(reachable(dt.pairs()), n, "triangulation must span the point set");
    let knn = knn_edges(&pts, 3).unwrap();
    assert!(reachable(knn.pairs()) < n, "k=3 should isolate the distant cluster");
}
