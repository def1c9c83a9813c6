//! Training loop, evaluation, sweeps and the image-only ablation.
//!
//! Each data request draws a fresh spectral fraction from the configured
//! range, samples that many measurement points, assembles the joint graph
//! and builds a fresh tape. A "batch" is gradient accumulation over that
//! many sample-graphs before one optimizer step (graphs differ in node
//! count, so batching cannot be tensor stacking). With the `parallel`
//! feature, per-sample passes inside a batch run on worker threads and are
//! reduced in a fixed sample order, keeping results bit-identical to the
//! sequential build.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::{network_logits_on_tape, DirectedEdges, GatNetwork, NetworkNodes};
use crate::gat::{extract_image_logits, predict};
use crate::graph::{assemble_graph, Construction, MultimodalGraph};
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::optim::{AdamParams, AdamState};
use crate::parallel;
use crate::seeding::{self, tag};
use crate::synth::{sample_eds_points, Dataset, SampleData};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Optimization and data-protocol knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Spectral fraction range sampled per training request.
    pub fraction_min: f64,
    pub fraction_max: f64,
    pub construction: Construction,
    /// Fixed fraction used for per-epoch validation scoring.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.01,
            epochs: 120,
            fraction_min: 0.0,
            fraction_max: 0.7,
            construction: Construction::Delaunay,
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale epoch budget; the full 120-epoch protocol stays available
    /// through [`TrainConfig::default`].
    pub fn desk_scale() -> Self {
        TrainConfig { epochs: 40, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::contract("negative learning rate"));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fraction_min)
            || !(0.0..=1.0).contains(&self.fraction_max)
            || self.fraction_min > self.fraction_max
        {
            return Err(Error::contract(format!(
                "fraction range [{}, {}] not within [0, 1]",
                self.fraction_min, self.fraction_max
            )));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::contract("validation fraction outside [0, 1]"));
        }
        if let Construction::Knn { k } = self.construction {
            if k == 0 {
                return Err(Error::contract("knn construction needs k >= 1"));
            }
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index partition of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic shuffled partition of `n` samples.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("ratios ({a}, {b}, {c}) must be nonnegative and sum to 1")));
    }
    if n < 10 {
        return Err(Error::contract(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng_from(seeding::derive(seed, tag::SPLIT));
    for i in 0..n {
        let j = i + rng.random_range(0..n - i);
        order.swap(i, j);
    }
    let n_train = (n as f64 * a).round() as usize;
    let n_val = (n as f64 * b).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro-F1 on the validation split; absent when the split is empty.
    pub val_macro_f1: Option<f64>,
}

/// Result of a training run: the best-validation parameters plus history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: GatNetwork,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
}

/// Assembles the graph for one data request at the given fraction, using
/// the provided RNG for point selection.
fn request_graph(
    data: &Dataset,
    sample: &SampleData,
    fraction: f64,
    construction: Construction,
    rng: &mut impl Rng,
) -> Result<MultimodalGraph> {
    let points = sample_eds_points(sample, data.width, fraction, rng)?;
    assemble_graph(
        &sample.bse,
        (data.height, data.width),
        &points,
        construction,
        &sample.validity,
        Some(&sample.labels),
    )
}

/// Forward + masked loss + backward for one sample-graph. Returns the loss
/// and per-parameter gradients in canonical order.
fn sample_pass(
    data: &Dataset,
    sample: &SampleData,
    net: &GatNetwork,
    construction: Construction,
    fraction_range: (f64, f64),
    request_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut rng = seeding::rng_from(request_seed);
    let fraction =
        fraction_range.0 + (fraction_range.1 - fraction_range.0) * rng.random::<f64>();
    let graph = request_graph(data, sample, fraction, construction, &mut rng)?;

    let n = graph.n_nodes();
    let n_image = graph.n_image_nodes();
    let labels = graph.labels.as_ref().expect("training graphs carry labels");
    let mut label_vec = vec![0usize; n];
    let mut mask = vec![false; n];
    for i in 0..n_image {
        label_vec[i] = labels[i] as usize;
        mask[i] = graph.validity[i];
    }

    let directed = DirectedEdges::from_undirected(&graph.edges, n)?;
    let mut tape = Tape::new();
    let x = tape.leaf_const(graph.features.clone());
    let nodes = NetworkNodes::insert(&mut tape, net);
    let logits = network_logits_on_tape(&mut tape, x, &directed, &nodes, &net.config)?;
    let loss = tape.cross_entropy(logits, Arc::new(label_vec), Arc::new(mask))?;
    let loss_value = tape.scalar(loss);
    tape.backward(loss)?;
    let grads = nodes.flat().iter().map(|&id| tape.grad(id).clone()).collect();
    Ok((loss_value, grads))
}

/// Trains the network; returns the parameters with the best validation
/// macro-F1 (or the final parameters when the validation split is empty).
pub fn train(
    data: &Dataset,
    split: &SplitIndices,
    mut net: GatNetwork,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::contract("empty train split"));
    }
    if net.config.classes < data.n_classes {
        return Err(Error::contract(format!(
            "network emits {} classes, dataset has {}",
            net.config.classes, data.n_classes
        )));
    }

    let adam = AdamParams { learning_rate: cfg.learning_rate, ..Default::default() };
    let mut state = AdamState::new(adam, &net.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..cfg.epochs {
        // Deterministic epoch shuffle of the train indices.
        let mut order = split.train.clone();
        let mut shuffle_rng =
            seeding::rng_from(seeding::derive_chain(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        for i in 0..order.len() {
            let j = i + shuffle_rng.random_range(0..order.len() - i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base_pos = batch_no * cfg.batch_size;
            let jobs: Vec<(usize, u64)> = batch
                .iter()
                .enumerate()
                .map(|(k, &idx)| {
                    let pos = (base_pos + k) as u64;
                    (idx, seeding::derive_chain(cfg.seed, &[tag::REQUEST, epoch as u64, pos]))
                })
                .collect();
            let passes: Vec<Result<(f64, Vec<Tensor>)>> =
                parallel::map_ordered(jobs, |(idx, request_seed)| {
                    sample_pass(
                        data,
                        &data.samples[idx],
                        &net,
                        cfg.construction,
                        (cfg.fraction_min, cfg.fraction_max),
                        request_seed,
                    )
                });

            // Fixed-order reduction: mean loss and mean gradients.
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for pass in passes {
                let (loss, g) = pass?;
                batch_loss += loss;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b);
                        }
                    }
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.scale_in_place(scale);
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training diverged: loss {batch_loss} at epoch {epoch}, batch {batch_no}"
                )));
            }
            loss_sum += batch_loss * batch.len() as f64;
            state.step(&mut net.params_mut(), &grads)?;
        }
        let train_loss = loss_sum / order.len() as f64;

        let val_macro_f1 = if split.val.is_empty() {
            None
        } else {
            let m = evaluate(
                data,
                &split.val,
                &net,
                cfg.construction,
                cfg.val_fraction,
                seeding::derive(cfg.seed, tag::VALIDATION),
            )?;
            Some(m.macro_f1)
        };
        if let Some(f1) = val_macro_f1 {
            let improved = best.as_ref().map_or(true, |(_, b, _)| f1 > *b);
            if improved {
                best = Some((epoch, f1, net.params().into_iter().cloned().collect()));
            }
        }
        history.push(EpochStats { epoch, train_loss, val_macro_f1 });
    }

    let (best_epoch, best_val_f1) = match best {
        Some((epoch, f1, snapshot)) => {
            net.load_param_values(&snapshot)?;
            (Some(epoch), Some(f1))
        }
        None => (None, None),
    };
    Ok(TrainOutcome { net, history, best_epoch, best_val_f1 })
}

/// Evaluates a split at a fixed spectral fraction. Point selection is
/// seeded per sample index, so repeated calls are identical.
pub fn evaluate(
    data: &Dataset,
    indices: &[usize],
    net: &GatNetwork,
    construction: Construction,
    fraction: f64,
    seed: u64,
) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::contract("evaluate on an empty split"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!("fraction {fraction} outside [0, 1]")));
    }
    let jobs: Vec<usize> = indices.to_vec();
    let confusions: Vec<Result<ConfusionMatrix>> = parallel::map_ordered(jobs, |idx| {
        let sample = &data.samples[idx];
        let mut rng =
            seeding::rng_from(seeding::derive_chain(seed, &[tag::EVAL, idx as u64]));
        let graph = request_graph(data, sample, fraction, construction, &mut rng)?;
        let logits = crate::gat::network_forward(&graph, net)?;
        let map = extract_image_logits(&logits, &graph)?;
        let pred = predict(&map);
        let mut cm = ConfusionMatrix::new(net.config.classes);
        cm.accumulate(&sample.labels, &pred, &sample.validity)?;
        Ok(cm)
    });
    let confusions = confusions.into_iter().collect::<Result<Vec<_>>>()?;
    Metrics::from_sample_confusions(fraction, &confusions)
}

/// One [`Metrics`] row per fraction, same parameters throughout.
pub fn sweep_fractions(
    data: &Dataset,
    indices: &[usize],
    net: &GatNetwork,
    construction: Construction,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Metrics>> {
    if fractions.is_empty() {
        return Err(Error::contract("empty fraction list"));
    }
    fractions
        .iter()
        .map(|&f| evaluate(data, indices, net, construction, f, seed))
        .collect()
}

/// Trains the identical architecture with the spectral fraction pinned to
/// zero (grid-only graphs) and evaluates it on the test split at fraction
/// zero: the fusion-benefit reference.
pub fn ablation_bse_only(
    data: &Dataset,
    split: &SplitIndices,
    net: GatNetwork,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, Metrics)> {
    let ablation_cfg = TrainConfig {
        fraction_min: 0.0,
        fraction_max: 0.0,
        val_fraction: 0.0,
        ..cfg.clone()
    };
    let outcome = train(data, split, net, &ablation_cfg)?;
    let metrics = evaluate(
        data,
        &split.test,
        &outcome.net,
        ablation_cfg.construction,
        0.0,
        seeding::derive(ablation_cfg.seed, tag::EVAL),
    )?;
    Ok((outcome, metrics))
}
