//! Post-training structure analysis: weight sparsity, active-neuron counts,
//! and removal of dead hidden neurons.
//!
//! A hidden neuron is dead when its outgoing row or its incoming column has
//! norm below the group threshold (or exactly zero, so a zero threshold still
//! removes exactly-null groups). A neuron cut off from its inputs emits a
//! constant, which is folded into the next layer's bias before removal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::regularizers::group_norms;
use crate::tensor::Matrix;

pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_GROUP_THRESHOLD: f64 = 1e-3;

#[inline]
fn is_dead(norm: f64, threshold: f64) -> bool {
    norm < threshold || norm == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub threshold: f64,
    /// Fraction of entries with `|w| < threshold`, per weight matrix.
    pub per_layer: Vec<f64>,
    /// Fraction over all weight entries.
    pub overall: f64,
}

pub fn sparsity(params: &NetworkParams, threshold: f64) -> SparsityReport {
    let total: usize = params.weights().map(|w| w.len()).sum();
    let small: usize = params
        .weights()
        .map(|w| w.data().iter().filter(|x| x.abs() < threshold).count())
        .sum();
    let overall = if total == 0 { 0.0 } else { small as f64 / total as f64 };
    let per_layer = params
        .weights()
        .map(|w| {
            if w.is_empty() {
                return 0.0;
            }
            w.data().iter().filter(|x| x.abs() < threshold).count() as f64 / w.len() as f64
        })
        .collect();
    SparsityReport {
        threshold,
        per_layer,
        overall,
    }
}

fn column_norms(w: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for (s, x) in sq.iter_mut().zip(w.row(r)) {
            *s += x * x;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Live neurons per layer, input layer first. Layers feeding a weight matrix
/// are judged by their outgoing rows, the output layer by its incoming
/// columns.
pub fn active_neurons(params: &NetworkParams, group_threshold: f64) -> Vec<usize> {
    let mut counts: Vec<usize> = params
        .weights()
        .map(|w| {
            group_norms(w)
                .into_iter()
                .filter(|&n| !is_dead(n, group_threshold))
                .count()
        })
        .collect();
    if let Some(last) = params.layers.last() {
        counts.push(
            column_norms(&last.weights)
                .into_iter()
                .filter(|&n| !is_dead(n, group_threshold))
                .count(),
        );
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrune {
    /// Neuron layer (1 = first hidden layer).
    pub layer: usize,
    pub original: usize,
    /// Surviving neurons, as indices into the original layer.
    pub kept: Vec<usize>,
    pub pruned: usize,
    /// Bias added to the next layer's surviving neurons by absorption.
    pub absorbed_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub group_threshold: f64,
    pub layers: Vec<LayerPrune>,
}

/// Removes dead hidden neurons until none remain.
pub fn prune_network(params: &NetworkParams, group_threshold: f64) -> Result<(NetworkParams, PruneReport)> {
    if !(group_threshold >= 0.0) {
        return Err(Error::Parameter(format!(
            "group threshold must be >= 0, got {group_threshold}"
        )));
    }
    let mut net = params.clone();
    let n_layers = net.num_layers();
    // original indices of the surviving neurons of each hidden layer
    let mut survivors: Vec<Vec<usize>> = (1..n_layers)
        .map(|h| (0..net.layers[h - 1].out_dim()).collect())
        .collect();

    loop {
        let mut changed = false;
        for h in 1..n_layers {
            let out_norms = group_norms(&net.layers[h].weights);
            let in_norms = column_norms(&net.layers[h - 1].weights);
            let width = out_norms.len();
            let mut keep = Vec::with_capacity(width);
            for n in 0..width {
                if is_dead(out_norms[n], group_threshold) {
                    continue;
                }
                if is_dead(in_norms[n], group_threshold) {
                    let producer = &net.layers[h - 1];
                    let c = producer.constant_output(n, producer.bias[n]);
                    let row = net.layers[h].weights.row(n).to_vec();
                    for (b, w) in net.layers[h].bias.iter_mut().zip(row) {
                        *b += c * w;
                    }
                    continue;
                }
                keep.push(n);
            }
            if keep.len() == width {
                continue;
            }
            if keep.is_empty() {
                return Err(Error::DegenerateNetwork(h));
            }
            changed = true;
            let producer = &mut net.layers[h - 1];
            producer.weights = producer.weights.col_slice(&keep)?;
            producer.bias = keep.iter().map(|&i| producer.bias[i]).collect();
            producer.bn = producer.bn.as_ref().map(|bn| bn.select(&keep));
            producer.spec.out_dim = keep.len();
            let consumer = &mut net.layers[h];
            consumer.weights = consumer.weights.row_slice(&keep)?;
            consumer.spec.in_dim = keep.len();
            survivors[h - 1] = keep.iter().map(|&i| survivors[h - 1][i]).collect();
        }
        if !changed {
            break;
        }
    }

    let layers = (1..n_layers)
        .map(|h| {
            let kept = survivors[h - 1].clone();
            let next_kept: Vec<usize> = if h + 1 < n_layers {
                survivors[h].clone()
            } else {
                (0..params.output_dim()).collect()
            };
            let absorbed_bias = next_kept
                .iter()
                .enumerate()
                .map(|(i, &orig)| net.layers[h].bias[i] - params.layers[h].bias[orig])
                .collect();
            LayerPrune {
                layer: h,
                original: params.layers[h - 1].out_dim(),
                pruned: params.layers[h - 1].out_dim() - kept.len(),
                kept,
                absorbed_bias,
            }
        })
        .collect();
    Ok((
        net,
        PruneReport {
            group_threshold,
            layers,
        },
    ))
}

/// Largest eval-mode output difference between two networks on `probe`.
pub fn compare_outputs(a: &NetworkParams, b: &NetworkParams, probe: &Matrix) -> Result<f64> {
    if a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim() {
        return Err(Error::Shape(format!(
            "networks map {}→{} and {}→{}",
            a.input_dim(),
            a.output_dim(),
            b.input_dim(),
            b.output_dim()
        )));
    }
    a.predict(probe)?.max_abs_diff(&b.predict(probe)?)
}
