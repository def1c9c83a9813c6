//! Graph attention network with scalar edge attributes.
//!
//! Per head, each directed edge `j -> i` gets the logit
//! `leaky_relu(a_selfᵀ W x_i + a_neighᵀ W x_j + a_edgeᵀ W_e e_ij)`;
//! coefficients are softmax-normalized over every target's in-neighborhood
//! and weight the aggregation `x'_i = act(Σ_j α_ij W x_j + bias)`. Hidden
//! layers concatenate head outputs and apply ELU; the final layer averages
//! heads and emits raw class logits. Before processing, every node receives
//! a self-loop with edge attribute 0 and undirected edges are materialized
//! in both directions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeList, MultimodalGraph, FEATURE_DIM};
use crate::seeding;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Negative-side slope of the attention nonlinearity.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Layer-stack configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatConfig {
    pub input_dim: usize,
    pub hidden_channels: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig { input_dim: FEATURE_DIM, hidden_channels: 56, heads: 4, layers: 3, classes: 50 }
    }
}

impl GatConfig {
    pub fn with_classes(classes: usize) -> Self {
        GatConfig { classes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.classes == 0 || self.input_dim == 0 {
            return Err(Error::contract("gat config dimensions must be positive"));
        }
        if self.hidden_channels % self.heads != 0 {
            return Err(Error::contract(format!(
                "hidden channels {} not divisible by {} heads",
                self.hidden_channels, self.heads
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_channels / self.heads
    }

    /// `(in_dim, head_dim, out_dim, concat)` for one layer.
    fn layer_dims(&self, layer: usize) -> (usize, usize, usize, bool) {
        let in_dim = if layer == 0 { self.input_dim } else { self.hidden_channels };
        if layer + 1 == self.layers {
            (in_dim, self.classes, self.classes, false)
        } else {
            (in_dim, self.head_dim(), self.hidden_channels, true)
        }
    }
}

/// Parameters of a single attention head.
#[derive(Clone, Debug)]
pub struct HeadParams {
    /// Feature transform, `in_dim x head_dim`.
    pub w_feat: Tensor,
    /// Edge-attribute transform, `1 x head_dim`.
    pub w_edge: Tensor,
    /// Attention vector dotted with the attending node's transform.
    pub attn_self: Tensor,
    /// Attention vector dotted with the neighbor's transform.
    pub attn_neigh: Tensor,
    /// Attention vector dotted with the transformed edge attribute.
    pub attn_edge: Tensor,
}

/// Per-layer parameters: one set per head plus a shared output bias.
#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub heads: Vec<HeadParams>,
    pub bias: Tensor,
}

/// The full layer stack.
#[derive(Clone, Debug)]
pub struct GatNetwork {
    pub config: GatConfig,
    pub layers: Vec<GatLayerParams>,
}

/// Number of parameter tensors per head, used for canonical flattening.
const TENSORS_PER_HEAD: usize = 5;

impl GatNetwork {
    /// Glorot-uniform initialization, deterministic per seed.
    pub fn init(config: GatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::rng_from(seed);
        let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            Tensor::from_vec(rows, cols, data).expect("sized by construction")
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (in_dim, head_dim, out_dim, _) = config.layer_dims(l);
            let heads = (0..config.heads)
                .map(|_| HeadParams {
                    w_feat: glorot(in_dim, head_dim, in_dim, head_dim),
                    w_edge: glorot(1, head_dim, 1, head_dim),
                    attn_self: glorot(head_dim, 1, head_dim, 1),
                    attn_neigh: glorot(head_dim, 1, head_dim, 1),
                    attn_edge: glorot(head_dim, 1, head_dim, 1),
                })
                .collect();
            layers.push(GatLayerParams { heads, bias: Tensor::zeros(1, out_dim) });
        }
        Ok(GatNetwork { config, layers })
    }

    /// All-zero parameters (useful for contract tests).
    pub fn zeros(config: GatConfig) -> Result<Self> {
        let mut net = Self::init(config, 0)?;
        for p in net.params_mut() {
            p.data_mut().fill(0.0);
        }
        Ok(net)
    }

    /// Parameter tensors in canonical order: per layer, per head
    /// `(w_feat, w_edge, attn_self, attn_neigh, attn_edge)`, then the bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.n_param_tensors());
        for layer in &self.layers {
            for h in &layer.heads {
                out.extend([&h.w_feat, &h.w_edge, &h.attn_self, &h.attn_neigh, &h.attn_edge]);
            }
            out.push(&layer.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.n_param_tensors());
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.extend([
                    &mut h.w_feat,
                    &mut h.w_edge,
                    &mut h.attn_self,
                    &mut h.attn_neigh,
                    &mut h.attn_edge,
                ]);
            }
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn n_param_tensors(&self) -> usize {
        self.config.layers * (self.config.heads * TENSORS_PER_HEAD + 1)
    }

    pub fn n_param_scalars(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a network from tensors in canonical order (checkpoint load).
    pub fn from_params(config: GatConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = config.layers * (config.heads * TENSORS_PER_HEAD + 1);
        if tensors.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} parameter tensors, got {}",
                tensors.len()
            )));
        }
        let reference = Self::zeros(config)?;
        for (have, want) in tensors.iter().zip(reference.params()) {
            if have.shape() != want.shape() {
                return Err(Error::shape("from_params", have.shape(), want.shape()));
            }
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let heads = (0..config.heads)
                .map(|_| HeadParams {
                    w_feat: it.next().unwrap(),
                    w_edge: it.next().unwrap(),
                    attn_self: it.next().unwrap(),
                    attn_neigh: it.next().unwrap(),
                    attn_edge: it.next().unwrap(),
                })
                .collect();
            layers.push(GatLayerParams { heads, bias: it.next().unwrap() });
        }
        Ok(GatNetwork { config, layers })
    }

    /// Overwrites parameters from a snapshot in canonical order.
    pub fn load_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::contract("parameter snapshot count mismatch"));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::shape("load_param_values", p.shape(), v.shape()));
            }
            **p = v.clone();
        }
        Ok(())
    }
}

/// Returns a copy of the graph with one zero-weight self-loop per node.
/// Errors if a self-loop is already present.
pub fn add_self_loops(graph: &MultimodalGraph) -> Result<MultimodalGraph> {
    let mut out = graph.clone();
    out.edges = graph.edges.with_self_loops(graph.n_nodes())?;
    Ok(out)
}

/// Directed edge arrays ready for attention: every undirected edge in both
/// directions plus one self-loop per node.
pub struct DirectedEdges {
    pub src: Arc<Vec<usize>>,
    pub tgt: Arc<Vec<usize>>,
    pub attr: Tensor,
    pub n_nodes: usize,
}

impl DirectedEdges {
    /// Expands an undirected, loop-free edge list; self-loops are appended
    /// here with attribute 0.
    pub fn from_undirected(edges: &EdgeList, n_nodes: usize) -> Result<Self> {
        let looped = edges.with_self_loops(n_nodes)?;
        Ok(Self::from_looped(&looped, n_nodes))
    }

    /// Expands an edge list that already carries its self-loops.
    pub fn from_looped(edges: &EdgeList, n_nodes: usize) -> Self {
        let mut src = Vec::with_capacity(edges.len() * 2);
        let mut tgt = Vec::with_capacity(edges.len() * 2);
        let mut attr = Vec::with_capacity(edges.len() * 2);
        for (&(a, b), &w) in edges.pairs().iter().zip(edges.attrs()) {
            src.push(a);
            tgt.push(b);
            attr.push(w);
            if a != b {
                src.push(b);
                tgt.push(a);
                attr.push(w);
            }
        }
        let attr = Tensor::column(attr);
        DirectedEdges { src: Arc::new(src), tgt: Arc::new(tgt), attr, n_nodes }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Every node must attend over at least one incoming edge.
    fn check_target_coverage(&self) -> Result<()> {
        let mut covered = vec![false; self.n_nodes];
        for &t in self.tgt.iter() {
            covered[t] = true;
        }
        if let Some(node) = covered.iter().position(|&c| !c) {
            return Err(Error::contract(format!("node {node} has no incoming edge")));
        }
        Ok(())
    }
}

/// Tape handles for one layer's parameters.
struct LayerNodes {
    heads: Vec<[NodeId; TENSORS_PER_HEAD]>,
    bias: NodeId,
}

/// Tape handles for the whole network, in canonical parameter order.
pub struct NetworkNodes {
    layers: Vec<LayerNodes>,
}

impl NetworkNodes {
    /// Inserts every parameter tensor as a leaf.
    pub fn insert(tape: &mut Tape, net: &GatNetwork) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|layer| LayerNodes {
                heads: layer
                    .heads
                    .iter()
                    .map(|h| {
                        [
                            tape.leaf(h.w_feat.clone()),
                            tape.leaf(h.w_edge.clone()),
                            tape.leaf(h.attn_self.clone()),
                            tape.leaf(h.attn_neigh.clone()),
                            tape.leaf(h.attn_edge.clone()),
                        ]
                    })
                    .collect(),
                bias: tape.leaf(layer.bias.clone()),
            })
            .collect();
        NetworkNodes { layers }
    }

    /// Node ids matching [`GatNetwork::params`] order.
    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in &layer.heads {
                out.extend_from_slice(head);
            }
            out.push(layer.bias);
        }
        out
    }

    /// Rebuilds the layer structure from ids in canonical order (e.g. leaves
    /// inserted by a gradient checker).
    pub fn from_flat(ids: &[NodeId], config: &GatConfig) -> Result<Self> {
        let expected = config.layers * (config.heads * TENSORS_PER_HEAD + 1);
        if ids.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} parameter nodes, got {}",
                ids.len()
            )));
        }
        let mut it = ids.iter().copied();
        let layers = (0..config.layers)
            .map(|_| {
                let heads = (0..config.heads)
                    .map(|_| {
                        let mut head = [ids[0]; TENSORS_PER_HEAD];
                        for slot in &mut head {
                            *slot = it.next().unwrap();
                        }
                        head
                    })
                    .collect();
                LayerNodes { heads, bias: it.next().unwrap() }
            })
            .collect();
        Ok(NetworkNodes { layers })
    }
}

enum Activation {
    Elu,
    Identity,
}

/// One attention layer on the tape. Returns the layer output and the
/// per-head attention coefficient nodes.
fn gat_layer_on_tape(
    tape: &mut Tape,
    x: NodeId,
    edges: &DirectedEdges,
    attr_node: NodeId,
    layer: &LayerNodes,
    concat: bool,
    activation: Activation,
) -> Result<(NodeId, Vec<NodeId>)> {
    edges.check_target_coverage()?;
    let n_heads = layer.heads.len();
    let head_dim = tape.value(layer.heads[0][0]).cols();

    // All heads share the input, so one wide matmul against the
    // concatenated transforms replaces per-head products; per-head blocks
    // are sliced back out afterwards.
    let w_all: Vec<NodeId> = layer.heads.iter().map(|h| h[0]).collect();
    let w_cat = tape.concat_cols(&w_all)?;
    let h_cat = tape.matmul(x, w_cat)?;

    let mut outputs = Vec::with_capacity(n_heads);
    let mut alphas = Vec::with_capacity(n_heads);
    for (hi, &[_, w_edge, attn_self, attn_neigh, attn_edge]) in layer.heads.iter().enumerate() {
        let h = tape.slice_cols(h_cat, hi * head_dim, (hi + 1) * head_dim)?;
        let per_target = tape.matmul(h, attn_self)?;
        let per_source = tape.matmul(h, attn_neigh)?;
        // a_edgeᵀ (W_e e) collapses to e * (W_e a_edge) for scalar attributes.
        let edge_proj = tape.matmul(w_edge, attn_edge)?;
        let edge_term = tape.scale_by(attr_node, edge_proj)?;
        let raw = tape.edge_logits(
            per_target,
            per_source,
            edge_term,
            edges.src.clone(),
            edges.tgt.clone(),
        )?;
        let bent = tape.leaky_relu(raw, LEAKY_SLOPE)?;
        let alpha = tape.segment_softmax(bent, edges.tgt.clone(), edges.n_nodes)?;
        let msg = tape.attn_aggregate(h, alpha, edges.src.clone(), edges.tgt.clone())?;
        outputs.push(msg);
        alphas.push(alpha);
    }
    let combined = if concat {
        tape.concat_cols(&outputs)?
    } else {
        tape.mean_parts(&outputs)?
    };
    let biased = tape.add_bias(combined, layer.bias)?;
    let out = match activation {
        Activation::Elu => tape.elu(biased),
        Activation::Identity => biased,
    };
    Ok((out, alphas))
}

/// Full network forward on an existing tape; returns the `n x classes`
/// logit node. `features` must already be a tape leaf.
pub fn network_logits_on_tape(
    tape: &mut Tape,
    features: NodeId,
    edges: &DirectedEdges,
    nodes: &NetworkNodes,
    config: &GatConfig,
) -> Result<NodeId> {
    let width = tape.value(features).cols();
    if width != config.input_dim {
        return Err(Error::shape(
            "network_forward",
            (tape.value(features).rows(), width),
            (edges.n_nodes, config.input_dim),
        ));
    }
    let attr_node = tape.leaf_const(edges.attr.clone());
    let mut x = features;
    for (li, layer) in nodes.layers.iter().enumerate() {
        let last = li + 1 == nodes.layers.len();
        let activation = if last { Activation::Identity } else { Activation::Elu };
        let (out, _) = gat_layer_on_tape(tape, x, edges, attr_node, layer, !last, activation)?;
        x = out;
    }
    Ok(x)
}

/// Forward pass over raw features and a loop-free undirected edge list.
/// Self-loops are inserted and undirected edges expanded internally.
pub fn forward_features(features: &Tensor, edges: &EdgeList, net: &GatNetwork) -> Result<Tensor> {
    let n = features.rows();
    let directed = DirectedEdges::from_undirected(edges, n)?;
    let mut tape = Tape::new();
    let x = tape.leaf_const(features.clone());
    let nodes = NetworkNodes::insert(&mut tape, net);
    let logits = network_logits_on_tape(&mut tape, x, &directed, &nodes, &net.config)?;
    Ok(tape.value(logits).clone())
}

/// Per-node class logits for every node of the graph (image and spectral).
pub fn network_forward(graph: &MultimodalGraph, net: &GatNetwork) -> Result<Tensor> {
    forward_features(&graph.features, &graph.edges, net)
}

/// Attention coefficients of a single layer, per head, for inspection and
/// normalization checks.
pub fn layer_attention(
    features: &Tensor,
    edges: &DirectedEdges,
    layer: &GatLayerParams,
    concat: bool,
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let x = tape.leaf_const(features.clone());
    let attr_node = tape.leaf_const(edges.attr.clone());
    let nodes = LayerNodes {
        heads: layer
            .heads
            .iter()
            .map(|h| {
                [
                    tape.leaf(h.w_feat.clone()),
                    tape.leaf(h.w_edge.clone()),
                    tape.leaf(h.attn_self.clone()),
                    tape.leaf(h.attn_neigh.clone()),
                    tape.leaf(h.attn_edge.clone()),
                ]
            })
            .collect(),
        bias: tape.leaf(layer.bias.clone()),
    };
    let (_, alphas) =
        gat_layer_on_tape(&mut tape, x, edges, attr_node, &nodes, concat, Activation::Identity)?;
    Ok(alphas.into_iter().map(|a| tape.value(a).clone()).collect())
}

/// The image part of the node logits, reshaped onto the pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageLogits {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    data: Vec<f64>,
}

impl ImageLogits {
    /// Class logits of pixel `(r, c)`.
    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let i = r * self.width + c;
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Drops the spectral rows and reshapes the first `H*W` logit rows onto the
/// image grid (row-major).
pub fn extract_image_logits(logits: &Tensor, graph: &MultimodalGraph) -> Result<ImageLogits> {
    let (h, w) = graph.image_shape;
    if logits.rows() != graph.n_nodes() {
        return Err(Error::shape("extract_image_logits", logits.shape(), (graph.n_nodes(), logits.cols())));
    }
    let classes = logits.cols();
    Ok(ImageLogits {
        height: h,
        width: w,
        classes,
        data: logits.data()[..h * w * classes].to_vec(),
    })
}

/// Per-pixel argmax with ties resolved to the lowest class index.
pub fn predict(map: &ImageLogits) -> Vec<u16> {
    let mut out = Vec::with_capacity(map.height * map.width);
    for i in 0..map.height * map.width {
        let row = &map.data[i * map.classes..(i + 1) * map.classes];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        out.push(best as u16);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{assemble_graph, Construction, PointSet, SPECTRUM_DIM};

    fn small_config(classes: usize) -> GatConfig {
        GatConfig { input_dim: FEATURE_DIM, hidden_channels: 8, heads: 2, layers: 2, classes }
    }

    fn toy_graph() -> MultimodalGraph {
        let spectral = PointSet::new(
            vec![(0.0, 0.0), (1.0, 1.0)],
            vec![vec![0.3; SPECTRUM_DIM], vec![0.7; SPECTRUM_DIM]],
        )
        .unwrap();
        assemble_graph(
            &[0.1, 0.4, 0.6, 0.9],
            (2, 2),
            &spectral,
            Construction::Delaunay,
            &[true; 4],
            Some(&[0, 1, 1, 0]),
        )
        .unwrap()
    }

    #[test]
    fn add_self_loops_counts() {
        let g = toy_graph();
        let before = g.edges.len();
        let looped = add_self_loops(&g).unwrap();
        assert_eq!(looped.edges.len(), before + g.n_nodes());
        let loops: Vec<_> = looped
            .edges
            .pairs()
            .iter()
            .zip(looped.edges.attrs())
            .filter(|((a, b), _)| a == b)
            .collect();
        assert_eq!(loops.len(), g.n_nodes());
        assert!(loops.iter().all(|(_, &w)| w == 0.0));
        assert!(add_self_loops(&looped).is_err());
    }

    #[test]
    fn isolated_node_gets_only_its_self_loop() {
        let edges = EdgeList::new();
        let d = DirectedEdges::from_undirected(&edges, 1).unwrap();
        assert_eq!(d.n_edges(), 1);
        assert_eq!((d.src[0], d.tgt[0]), (0, 0));
        assert_eq!(d.attr.data(), &[0.0]);
    }

    #[test]
    fn zero_parameters_give_uniform_attention_and_zero_output() {
        let net = GatNetwork::zeros(small_config(3)).unwrap();
        let g = toy_graph();
        let logits = network_forward(&g, &net).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));

        let directed = DirectedEdges::from_undirected(&g.edges, g.n_nodes()).unwrap();
        let alphas = layer_attention(&g.features, &directed, &net.layers[0], true).unwrap();
        // With all-zero parameters every logit ties, so each target's
        // coefficients are uniform over its in-degree.
        let mut indeg = vec![0usize; g.n_nodes()];
        for &t in directed.tgt.iter() {
            indeg[t] += 1;
        }
        for alpha in &alphas {
            for (e, &a) in alpha.data().iter().enumerate() {
                let expect = 1.0 / indeg[directed.tgt[e]] as f64;
                assert!((a - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let net = GatNetwork::init(small_config(3), 77).unwrap();
        let g = toy_graph();
        let directed = DirectedEdges::from_undirected(&g.edges, g.n_nodes()).unwrap();
        let alphas = layer_attention(&g.features, &directed, &net.layers[0], true).unwrap();
        for alpha in &alphas {
            let mut sums = vec![0.0; g.n_nodes()];
            for (e, &a) in alpha.data().iter().enumerate() {
                sums[directed.tgt[e]] += a;
            }
            for s in sums {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singleton_neighborhood_reduces_to_dense_transform() {
        // One node with only its self-loop: alpha = 1, so the layer output is
        // act(W x + bias) computed by hand.
        let config = GatConfig { input_dim: 3, hidden_channels: 4, heads: 1, layers: 1, classes: 4 };
        let net = GatNetwork::init(config, 5).unwrap();
        let features = Tensor::from_vec(1, 3, vec![0.2, -0.4, 0.8]).unwrap();
        let out = forward_features(&features, &EdgeList::new(), &net).unwrap();

        let head = &net.layers[0].heads[0];
        let expect = features.matmul(&head.w_feat).unwrap();
        for (k, &v) in out.data().iter().enumerate() {
            // Final layer: heads averaged (single head), identity activation.
            let want = expect.data()[k] + net.layers[0].bias.data()[k];
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn two_identical_neighbors_split_attention_evenly() {
        // Path 1 - 0 - 2 where nodes 1 and 2 have identical features and the
        // two edges identical attributes: node 0 must attend 0.5 / 0.5.
        let features =
            Tensor::from_vec(3, 2, vec![0.9, -0.1, 0.4, 0.7, 0.4, 0.7]).unwrap();
        let edges = EdgeList::from_pairs(vec![(0, 1), (0, 2)], vec![1.0, 1.0]).unwrap();
        let directed = DirectedEdges::from_undirected(&edges, 3).unwrap();
        let config = GatConfig { input_dim: 2, hidden_channels: 4, heads: 2, layers: 1, classes: 4 };
        let net = GatNetwork::init(config, 9).unwrap();
        let alphas = layer_attention(&features, &directed, &net.layers[0], false).unwrap();
        for alpha in &alphas {
            let into_zero: Vec<f64> = alpha
                .data()
                .iter()
                .zip(directed.tgt.iter())
                .zip(directed.src.iter())
                .filter(|((_, &t), &s)| t == 0 && s != 0)
                .map(|((&a, _), _)| a)
                .collect();
            assert_eq!(into_zero.len(), 2);
            assert!((into_zero[0] - into_zero[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let net = GatNetwork::init(small_config(3), 1).unwrap();
        let features = Tensor::zeros(4, 7);
        let err = forward_features(&features, &build_grid(2, 2), &net).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    fn build_grid(h: usize, w: usize) -> EdgeList {
        crate::graph::build_grid_edges(h, w)
    }

    #[test]
    fn forward_is_deterministic() {
        let net = GatNetwork::init(small_config(5), 123).unwrap();
        let g = toy_graph();
        let a = network_forward(&g, &net).unwrap();
        let b = network_forward(&g, &net).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn extract_and_predict_layouts() {
        let g = toy_graph();
        let n = g.n_nodes();
        // Logit rows labeled by node id in class-0 slot.
        let mut logits = Tensor::zeros(n, 3);
        for i in 0..n {
            logits.set(i, 0, i as f64);
            logits.set(i, 1, -1.0);
        }
        let map = extract_image_logits(&logits, &g).unwrap();
        assert_eq!((map.height, map.width, map.classes), (2, 2, 3));
        // Row i lands at pixel (i / W, i % W).
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(map.at(r, c)[0], (r * 2 + c) as f64);
            }
        }
        // Flattening the map reproduces the first H*W logit rows exactly.
        assert_eq!(map.data(), &logits.data()[..4 * 3]);
    }

    #[test]
    fn predict_argmax_and_ties() {
        let map = ImageLogits { height: 1, width: 3, classes: 2, data: vec![0.1, 0.9, 0.5, 0.5, 2.0, 1.0] };
        assert_eq!(predict(&map), vec![1, 0, 0]);
        // Shifting all logits of a pixel leaves its argmax unchanged.
        let shifted = ImageLogits {
            height: 1,
            width: 3,
            classes: 2,
            data: map.data.iter().map(|v| v + 10.0).collect(),
        };
        assert_eq!(predict(&shifted), predict(&map));
    }

    #[test]
    fn default_config_matches_reference_architecture() {
        let c = GatConfig::default();
        assert_eq!((c.layers, c.hidden_channels, c.heads, c.classes, c.input_dim), (3, 56, 4, 50, 65));
        assert_eq!(c.head_dim(), 14);
    }
}
