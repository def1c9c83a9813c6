//! k-nearest-neighbor edges over the unstructured points.

use super::{EdgeList, PointSet};
use crate::error::{Error, Result};

/// Undirected union of each point's `min(k, n - 1)` nearest neighbors by
/// Euclidean distance, canonicalized and deduplicated.
///
/// Distance ties resolve by lexicographic coordinate order, so the edge set
/// does not depend on input ordering.
pub fn knn_edges(points: &PointSet, k: usize) -> Result<EdgeList> {
    if k == 0 {
        return Err(Error::contract("knn_edges with k = 0"));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::contract(format!("knn_edges needs at least 2 points, got {n}")));
    }
    let coords = points.points();
    let take = k.min(n - 1);

    let mut set = std::collections::BTreeSet::new();
    let mut cand: Vec<(f64, f64, f64, usize)> = Vec::with_capacity(n - 1);
    for (i, &(xi, yi)) in coords.iter().enumerate() {
        cand.clear();
        for (j, &(xj, yj)) in coords.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
            cand.push((d2, xj, yj, j));
        }
        let key = |a: &(f64, f64, f64, usize)| (a.0, a.1, a.2);
        if take < cand.len() {
            cand.select_nth_unstable_by(take - 1, |a, b| {
                key(a).partial_cmp(&key(b)).expect("finite coordinates")
            });
        }
        for &(_, _, _, j) in &cand[..take] {
            set.insert(if i < j { (i, j) } else { (j, i) });
        }
    }

    let (pairs, attrs): (Vec<_>, Vec<_>) = set
        .into_iter()
        .map(|(a, b)| {
            let (ax, ay) = coords[a];
            let (bx, by) = coords[b];
            ((a, b), ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt())
        })
        .unzip();
    EdgeList::from_pairs(pairs, attrs)
}
