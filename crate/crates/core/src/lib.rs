//! Fusion of a dense grayscale image modality with sparse point-wise
//! spectral measurements, by joint graph construction and an
//! edge-attributed graph attention network producing per-pixel
//! multi-class segmentation.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`tensor`], [`tape`], [`optim`], [`gradcheck`] — a minimal dense
//!   numeric kernel with reverse-mode gradients and Adam.
//! * [`graph`] — joint graph construction: 8-neighborhood grid edges over
//!   pixels, Delaunay or kNN edges over the unstructured points,
//!   cross-modal nearest-neighbor edges in a lifted 3-D space, Euclidean
//!   edge attributes and 65-wide zero-padded node features.
//! * [`gat`] — multi-head graph attention layers with scalar edge
//!   attributes, zero-weight self-loops, and extraction of the image part
//!   of the node logits.
//! * [`synth`] — a synthetic SEM-style benchmark generator (Voronoi phase
//!   maps, noisy grayscale renders, Poisson photon-count spectra) with
//!   deliberately confounded phase pairs so that fusion is required.
//! * [`train`], [`metrics`] — the training loop with per-request spectral
//!   resampling, evaluation at fixed fractions, sweeps, and the
//!   image-only ablation baseline.
//! * [`io`] — binary dataset and checkpoint containers, graph dumps, and
//!   CSV/JSON reports.
//!
//! With the default `parallel` feature, batch gradient computation and
//! evaluation fan out across samples via rayon with a deterministic,
//! order-fixed reduction; disabling the feature yields a fully sequential
//! build with identical results.

pub mod error;
pub mod gat;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod seeding;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use gat::{
    add_self_loops, extract_image_logits, forward_features, network_forward, predict,
    DirectedEdges, GatConfig, GatLayerParams, GatNetwork, HeadParams, ImageLogits,
};
pub use gradcheck::grad_check;
pub use graph::{
    assemble_graph, build_grid_edges, cross_modal_edges, delaunay_edges, delaunay_triangles,
    knn_edges, Construction, EdgeList, MultimodalGraph, PointSet, FEATURE_DIM, SPECTRUM_DIM,
};
pub use metrics::{ClassScores, ConfusionMatrix, Metrics};
pub use optim::{AdamParams, AdamState};
pub use synth::{
    default_phase_specs, generate_dataset, generate_phase_map, reduce_spectrum, render_bse,
    render_spectra, sample_eds_indices, sample_eds_points, Dataset, GeneratorConfig, PhaseSpec,
    SampleData, SpectralPeak, SyntheticSample, RAW_CHANNELS,
};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use train::{
    ablation_bse_only, evaluate, split_dataset, sweep_fractions, train, EpochStats, SplitIndices,
    TrainConfig, TrainOutcome,
};
