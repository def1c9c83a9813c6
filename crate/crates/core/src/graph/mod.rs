//! Joint multimodal graph construction.
//!
//! A graph over `H*W` image nodes (row-major, ids `0..H*W`) followed by the
//! unstructured spectral nodes. Edges come in three groups: 8-neighborhood
//! grid edges between pixels, Delaunay-or-kNN edges among spectral points,
//! and cross-modal nearest-neighbor edges found after lifting the image
//! layer to `z = 0` and the spectral layer to `z = 1`. Every edge carries
//! its Euclidean distance as a scalar attribute.

mod delaunay;
mod knn;

pub use delaunay::{delaunay_edges, delaunay_triangles};
pub use knn::knn_edges;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Width of the zero-padded node feature vector: one grayscale slot plus
/// the reduced spectrum.
pub const FEATURE_DIM: usize = 1 + SPECTRUM_DIM;
/// Width of a reduced spectrum payload.
pub const SPECTRUM_DIM: usize = 64;

/// How to connect the unstructured spectral points among themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Construction {
    Delaunay,
    Knn { k: usize },
}

impl Default for Construction {
    fn default() -> Self {
        Construction::Delaunay
    }
}

impl std::fmt::Display for Construction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Construction::Delaunay => write!(f, "delaunay"),
            Construction::Knn { k } => write!(f, "knn{k}"),
        }
    }
}

/// Unstructured sample points with per-point payload vectors.
///
/// Coordinates are in pixel units; duplicate coordinates are rejected so
/// nearest-neighbor and triangulation results are well defined.
#[derive(Clone, Debug)]
pub struct PointSet {
    points: Vec<(f64, f64)>,
    payloads: Vec<Vec<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<(f64, f64)>, payloads: Vec<Vec<f64>>) -> Result<Self> {
        if payloads.len() != points.len() {
            return Err(Error::contract(format!(
                "{} payloads for {} points",
                payloads.len(),
                points.len()
            )));
        }
        if let Some(d) = payloads.first().map(|p| p.len()) {
            if payloads.iter().any(|p| p.len() != d) {
                return Err(Error::contract("payload vectors differ in length"));
            }
        }
        if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::contract("non-finite point coordinate"));
        }
        let mut keys: Vec<(u64, u64)> =
            points.iter().map(|&(x, y)| (x.to_bits(), y.to_bits())).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate point coordinates"));
        }
        Ok(PointSet { points, payloads })
    }

    /// Geometry-only point set (empty payload per point).
    pub fn from_coords(points: Vec<(f64, f64)>) -> Result<Self> {
        let payloads = vec![Vec::new(); points.len()];
        Self::new(points, payloads)
    }

    pub fn empty() -> Self {
        PointSet { points: Vec::new(), payloads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        self.points[i]
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn payload(&self, i: usize) -> &[f64] {
        &self.payloads[i]
    }
}

/// Canonical undirected edge list with scalar attributes.
///
/// Pairs are stored with `source < target` (self-loops excepted), sorted
/// lexicographically and duplicate-free. Attributes are Euclidean distances,
/// zero only for self-loops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeList {
    pairs: Vec<(usize, usize)>,
    attrs: Vec<f64>,
}

impl EdgeList {
    pub fn new() -> Self {
        EdgeList::default()
    }

    /// Canonicalizes (orients, sorts, dedupes) raw pairs. Duplicates must
    /// agree on their attribute.
    pub fn from_pairs(pairs: Vec<(usize, usize)>, attrs: Vec<f64>) -> Result<Self> {
        if pairs.len() != attrs.len() {
            return Err(Error::contract(format!(
                "{} attrs for {} edge pairs",
                attrs.len(),
                pairs.len()
            )));
        }
        let mut entries: Vec<(usize, usize, f64)> = pairs
            .into_iter()
            .zip(attrs)
            .map(|((a, b), w)| if a <= b { (a, b, w) } else { (b, a, w) })
            .collect();
        entries.sort_unstable_by(|l, r| (l.0, l.1).cmp(&(r.0, r.1)));
        entries.dedup_by(|dup, keep| {
            let same = dup.0 == keep.0 && dup.1 == keep.1;
            debug_assert!(!same || (dup.2 - keep.2).abs() < 1e-9);
            same
        });
        let mut out = EdgeList::new();
        for (a, b, w) in entries {
            if w < 0.0 {
                return Err(Error::contract(format!("negative edge attribute {w}")));
            }
            if w == 0.0 && a != b {
                return Err(Error::contract(format!("zero-length edge {a}-{b} between distinct nodes")));
            }
            out.pairs.push((a, b));
            out.attrs.push(w);
        }
        Ok(out)
    }

    /// Union of several canonical lists, re-canonicalized.
    pub fn merged(lists: &[&EdgeList]) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut attrs = Vec::new();
        for l in lists {
            pairs.extend_from_slice(&l.pairs);
            attrs.extend_from_slice(&l.attrs);
        }
        Self::from_pairs(pairs, attrs)
    }

    /// Appends one zero-weight self-loop per node. Errors if a self-loop is
    /// already present.
    pub fn with_self_loops(&self, n_nodes: usize) -> Result<Self> {
        if let Some(&(a, _)) = self.pairs.iter().find(|&&(a, b)| a == b) {
            return Err(Error::contract(format!("node {a} already has a self-loop")));
        }
        let mut pairs = self.pairs.clone();
        let mut attrs = self.attrs.clone();
        pairs.extend((0..n_nodes).map(|i| (i, i)));
        attrs.extend(std::iter::repeat(0.0).take(n_nodes));
        Self::from_pairs(pairs, attrs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn attrs(&self) -> &[f64] {
        &self.attrs
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.pairs.binary_search(&key).is_ok()
    }
}

/// Joint representation of both modalities.
///
/// Image nodes are exactly `H*W`, precede the spectral nodes, and carry the
/// grayscale value in feature slot 0; spectral nodes carry the reduced
/// spectrum in slots `1..65`. The absent modality's slots stay zero.
#[derive(Clone, Debug)]
pub struct MultimodalGraph {
    pub image_shape: (usize, usize),
    /// Node coordinates `(x, y, layer)`, layer 0 = image, 1 = spectral.
    pub coords: Vec<[f64; 3]>,
    /// `n x 65` zero-padded node features.
    pub features: Tensor,
    pub edges: EdgeList,
    /// Per-pixel validity over image nodes (row-major).
    pub validity: Vec<bool>,
    /// Per-pixel ground-truth labels over image nodes, when known.
    pub labels: Option<Vec<u16>>,
}

impl MultimodalGraph {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_image_nodes(&self) -> usize {
        self.image_shape.0 * self.image_shape.1
    }

    pub fn n_spectral_nodes(&self) -> usize {
        self.n_nodes() - self.n_image_nodes()
    }

    pub fn is_image_node(&self, id: usize) -> bool {
        id < self.n_image_nodes()
    }
}

/// 8-neighborhood grid edges over an `h x w` pixel lattice.
///
/// Axis neighbors get attribute 1, diagonal neighbors sqrt(2). Each
/// undirected edge is emitted once, already in canonical order. The result
/// for the most recent shape is cached: training reassembles a graph per
/// request and the grid part never changes.
pub fn build_grid_edges(h: usize, w: usize) -> EdgeList {
    static CACHE: std::sync::Mutex<Option<((usize, usize), EdgeList)>> =
        std::sync::Mutex::new(None);
    if let Ok(guard) = CACHE.lock() {
        if let Some(((ch, cw), edges)) = guard.as_ref() {
            if (*ch, *cw) == (h, w) {
                return edges.clone();
            }
        }
    }
    let built = build_grid_edges_uncached(h, w);
    if let Ok(mut guard) = CACHE.lock() {
        *guard = Some(((h, w), built.clone()));
    }
    built
}

fn build_grid_edges_uncached(h: usize, w: usize) -> EdgeList {
    let sqrt2 = 2.0f64.sqrt();
    let mut pairs = Vec::new();
    let mut attrs = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let id = r * w + c;
            // Targets listed in increasing id order: right, down-left, down,
            // down-right. Each pair appears exactly once.
            if c + 1 < w {
                pairs.push((id, id + 1));
                attrs.push(1.0);
            }
            if r + 1 < h && c > 0 {
                pairs.push((id, id + w - 1));
                attrs.push(sqrt2);
            }
            if r + 1 < h {
                pairs.push((id, id + w));
                attrs.push(1.0);
            }
            if r + 1 < h && c + 1 < w {
                pairs.push((id, id + w + 1));
                attrs.push(sqrt2);
            }
        }
    }
    EdgeList::from_pairs(pairs, attrs).expect("grid edges are canonical by construction")
}

/// Nearest-neighbor edges between the two modalities in the lifted space.
///
/// Image nodes sit at `(x, y, 0)`, spectral nodes at `(x, y, 1)`. Every
/// image node links to its nearest spectral node and vice versa; the union
/// is deduplicated. Attributes are 3-D distances, hence always >= 1.
/// Distance ties are broken toward the lowest node id.
pub fn cross_modal_edges(image_shape: (usize, usize), spectral: &PointSet) -> Result<EdgeList> {
    let (h, w) = image_shape;
    if spectral.is_empty() {
        return Err(Error::contract("cross_modal_edges with empty spectral set"));
    }
    let n_image = h * w;
    let mut pairs = Vec::with_capacity(n_image + spectral.len());
    let mut attrs = Vec::with_capacity(n_image + spectral.len());

    // Image -> nearest spectral node, ties to the lowest spectral id. When
    // the points sit on pixel centers (the pipeline case) a bucket grid with
    // an expanding ring search replaces the exhaustive scan.
    let on_grid = spectral
        .points()
        .iter()
        .all(|&(x, y)| x.fract() == 0.0 && y.fract() == 0.0 && x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64);
    if on_grid && spectral.len() >= 32 {
        let mut bucket = vec![usize::MAX; n_image];
        for (s, &(x, y)) in spectral.points().iter().enumerate() {
            let cell = y as usize * w + x as usize;
            debug_assert_eq!(bucket[cell], usize::MAX);
            bucket[cell] = s;
        }
        let consider = |rr: usize, cc: usize, r: usize, c: usize, best: &mut u64, best_s: &mut usize| {
            let s = bucket[rr * w + cc];
            if s != usize::MAX {
                let dr = (rr as i64 - r as i64).unsigned_abs();
                let dc = (cc as i64 - c as i64).unsigned_abs();
                let d2 = dr * dr + dc * dc;
                if d2 < *best || (d2 == *best && s < *best_s) {
                    *best = d2;
                    *best_s = s;
                }
            }
        };
        for r in 0..h {
            for c in 0..w {
                let mut best = u64::MAX;
                let mut best_s = usize::MAX;
                // Chebyshev rings outward; equal Euclidean distances can
                // span two rings, so scanning continues through the ring
                // whose nearest cell ties the best hit.
                for ring in 0..=h.max(w) {
                    let k2 = (ring * ring) as u64;
                    if best_s != usize::MAX && k2 > best {
                        break;
                    }
                    let c_lo = c.saturating_sub(ring);
                    let c_hi = (c + ring).min(w - 1);
                    if r >= ring {
                        for cc in c_lo..=c_hi {
                            consider(r - ring, cc, r, c, &mut best, &mut best_s);
                        }
                    }
                    if ring > 0 && r + ring < h {
                        for cc in c_lo..=c_hi {
                            consider(r + ring, cc, r, c, &mut best, &mut best_s);
                        }
                    }
                    if ring > 0 {
                        let r_lo = (r + 1).saturating_sub(ring);
                        let r_hi = (r + ring - 1).min(h - 1);
                        for rr in r_lo..=r_hi {
                            if c >= ring {
                                consider(rr, c - ring, r, c, &mut best, &mut best_s);
                            }
                            if c + ring < w {
                                consider(rr, c + ring, r, c, &mut best, &mut best_s);
                            }
                        }
                    }
                }
                pairs.push((r * w + c, n_image + best_s));
                attrs.push((best as f64 + 1.0).sqrt());
            }
        }
    } else {
        // Exhaustive scan in ascending spectral id: the first strictly
        // smaller distance wins, so ties resolve to the lowest id.
        for r in 0..h {
            for c in 0..w {
                let (px, py) = (c as f64, r as f64);
                let mut best = f64::INFINITY;
                let mut best_s = 0;
                for (s, &(x, y)) in spectral.points().iter().enumerate() {
                    let d2 = (x - px) * (x - px) + (y - py) * (y - py) + 1.0;
                    if d2 < best {
                        best = d2;
                        best_s = s;
                    }
                }
                pairs.push((r * w + c, n_image + best_s));
                attrs.push(best.sqrt());
            }
        }
    }

    // Spectral -> nearest image node. The nearest pixel center is among the
    // floor/ceil candidates of each coordinate; ties resolve to the lowest
    // image node id, i.e. smaller row then smaller column.
    for (s, &(x, y)) in spectral.points().iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_id = 0;
        let cand = |v: f64, limit: usize| -> Vec<usize> {
            let lo = v.floor().clamp(0.0, (limit - 1) as f64) as usize;
            let hi = v.ceil().clamp(0.0, (limit - 1) as f64) as usize;
            if lo == hi { vec![lo] } else { vec![lo, hi] }
        };
        for &r in &cand(y, h) {
            for &c in &cand(x, w) {
                let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2) + 1.0;
                let id = r * w + c;
                if d2 < best || (d2 == best && id < best_id) {
                    best = d2;
                    best_id = id;
                }
            }
        }
        pairs.push((best_id, n_image + s));
        attrs.push(best.sqrt());
    }

    EdgeList::from_pairs(pairs, attrs)
}

/// Assembles the joint graph from a normalized grayscale image and a
/// spectral point set.
///
/// Node order is row-major image nodes then spectral nodes; features follow
/// the zero-padding scheme. An empty spectral set degrades to the grid-only
/// graph (the 0% ablation path). Spectral coordinates must be integer pixel
/// centers within bounds, with 64-wide payloads.
pub fn assemble_graph(
    bse: &[f64],
    image_shape: (usize, usize),
    spectral: &PointSet,
    construction: Construction,
    validity: &[bool],
    labels: Option<&[u16]>,
) -> Result<MultimodalGraph> {
    let (h, w) = image_shape;
    let n_image = h * w;
    if h == 0 || w == 0 {
        return Err(Error::contract("empty image"));
    }
    if bse.len() != n_image {
        return Err(Error::contract(format!(
            "bse has {} values for a {h}x{w} image",
            bse.len()
        )));
    }
    if validity.len() != n_image {
        return Err(Error::contract("validity mask length mismatch"));
    }
    if let Some(l) = labels {
        if l.len() != n_image {
            return Err(Error::contract("label map length mismatch"));
        }
    }
    if bse.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract("bse values must be normalized to [0, 1]"));
    }
    for (i, &(x, y)) in spectral.points().iter().enumerate() {
        if x.fract() != 0.0 || y.fract() != 0.0 {
            return Err(Error::contract(format!(
                "spectral point {i} at ({x}, {y}) is not a pixel center"
            )));
        }
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return Err(Error::contract(format!(
                "spectral point {i} at ({x}, {y}) outside {h}x{w} image bounds"
            )));
        }
        if spectral.payload(i).len() != SPECTRUM_DIM {
            return Err(Error::contract(format!(
                "spectral payload {i} has {} values, expected {SPECTRUM_DIM}",
                spectral.payload(i).len()
            )));
        }
    }

    let n = n_image + spectral.len();
    let mut coords = Vec::with_capacity(n);
    for r in 0..h {
        for c in 0..w {
            coords.push([c as f64, r as f64, 0.0]);
        }
    }
    for &(x, y) in spectral.points() {
        coords.push([x, y, 1.0]);
    }

    let mut features = Tensor::zeros(n, FEATURE_DIM);
    {
        let fd = features.data_mut();
        for (i, &v) in bse.iter().enumerate() {
            fd[i * FEATURE_DIM] = v;
        }
        for s in 0..spectral.len() {
            let row = &mut fd[(n_image + s) * FEATURE_DIM..(n_image + s + 1) * FEATURE_DIM];
            row[1..].copy_from_slice(spectral.payload(s));
        }
    }

    let grid = build_grid_edges(h, w);
    let edges = if spectral.is_empty() {
        grid
    } else {
        let intra = if spectral.len() >= 2 {
            let local = match construction {
                Construction::Delaunay => delaunay_edges(spectral)?,
                Construction::Knn { k } => knn_edges(spectral, k)?,
            };
            // Intra-spectral edges are produced in local point indices;
            // shift them into the global id space.
            let pairs = local
                .pairs()
                .iter()
                .map(|&(a, b)| (a + n_image, b + n_image))
                .collect();
            EdgeList::from_pairs(pairs, local.attrs().to_vec())?
        } else {
            EdgeList::new()
        };
        let cross = cross_modal_edges(image_shape, spectral)?;
        EdgeList::merged(&[&grid, &intra, &cross])?
    };

    Ok(MultimodalGraph {
        image_shape,
        coords,
        features,
        edges,
        validity: validity.to_vec(),
        labels: labels.map(|l| l.to_vec()),
    })
}
