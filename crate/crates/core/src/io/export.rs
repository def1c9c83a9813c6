//! Human-readable graph dumps for external plotting.

use std::fmt::Write as _;

use crate::error::Result;
use crate::graph::MultimodalGraph;

/// Structured text dump: header, nodes (coordinates, layer, feature
/// summary), then edges in canonical order. Numeric attributes are printed
/// with 13 significant digits.
pub fn export_graph(graph: &MultimodalGraph) -> Result<String> {
    let (h, w) = graph.image_shape;
    let mut out = String::new();
    writeln!(
        out,
        "graph H={h} W={w} image_nodes={} spectral_nodes={} edges={}",
        graph.n_image_nodes(),
        graph.n_spectral_nodes(),
        graph.edges.len()
    )
    .unwrap();
    for (id, c) in graph.coords.iter().enumerate() {
        let layer = c[2] as u8;
        if graph.is_image_node(id) {
            let bse = graph.features.at(id, 0);
            let valid = graph.validity[id];
            write!(out, "node {id} layer={layer} x={} y={} bse={bse:.12e} valid={valid}", c[0], c[1])
                .unwrap();
            if let Some(labels) = &graph.labels {
                write!(out, " label={}", labels[id]).unwrap();
            }
            out.push('\n');
        } else {
            let nnz = graph.features.row(id)[1..].iter().filter(|&&v| v != 0.0).count();
            writeln!(out, "node {id} layer={layer} x={} y={} spectrum_nnz={nnz}", c[0], c[1])
                .unwrap();
        }
    }
    for (&(a, b), &attr) in graph.edges.pairs().iter().zip(graph.edges.attrs()) {
        writeln!(out, "edge {a} {b} dist={attr:.12e}").unwrap();
    }
    Ok(out)
}
