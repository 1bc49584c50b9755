//! Fully connected network: parameters, initialization, forward pass.
//!
//! Layer `l` (0-based in code) maps `a_l` to `a_{l+1} = act(bn(a_l · W + b))`,
//! with `W` of shape `in_dim × out_dim`. Row `n` of `W` holds the outgoing
//! weights of neuron `n` of the previous layer; this row is the unit that
//! regularizers group and that pruning removes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{normal_draws, Matrix, RngStream};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation value; ReLU'(0) = 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    /// Hidden layers get ReLU (and batch norm when requested); the output
    /// layer is a plain affine map.
    pub fn chain(dims: &[usize], batch_norm: bool) -> Vec<LayerSpec> {
        let last = dims.len().saturating_sub(2);
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
                batch_norm: batch_norm && i != last,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn fresh(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            shift: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }

    /// Eval-mode affine map of a single pre-activation value of neuron `j`.
    pub fn eval_affine(&self, j: usize, z: f64) -> f64 {
        self.gamma[j] * (z - self.running_mean[j]) / (self.running_var[j] + BN_EPS).sqrt()
            + self.shift[j]
    }

    pub(crate) fn select(&self, keep: &[usize]) -> Self {
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            gamma: pick(&self.gamma),
            shift: pick(&self.shift),
            running_mean: pick(&self.running_mean),
            running_var: pick(&self.running_var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Value of neuron `j` when its pre-activation is the constant `z`
    /// (eval-mode normalization, then activation).
    pub fn constant_output(&self, j: usize, z: f64) -> f64 {
        let y = match &self.bn {
            Some(bn) => bn.eval_affine(j, z),
            None => z,
        };
        self.spec.activation.apply(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/B) batch variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Normalized pre-activations `x̂`.
    pub normalized: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `a · W + b`
    pub pre: Matrix,
    /// Present for batch-norm layers in train mode.
    pub stats: Option<BatchStats>,
    /// Input to the activation.
    pub post_bn: Matrix,
}

/// Everything backprop needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    /// `activations[0]` is the input batch; `activations[l + 1]` is the output of layer `l`.
    pub activations: Vec<Matrix>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

/// Builds a network with `N(0, std²)` weights, zero biases and fresh batch
/// norm. `init_std = None` uses `sqrt(2 / fan_in)` per layer.
pub fn init_network(specs: &[LayerSpec], seed: u64, init_std: Option<f64>) -> Result<NetworkParams> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::Config(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                s.in_dim,
                i - 1,
                specs[i - 1].out_dim
            )));
        }
    }
    if let Some(std) = init_std {
        if !(std > 0.0) {
            return Err(Error::Config(format!("init_std must be > 0, got {std}")));
        }
    }
    let root = RngStream::new(seed);
    let layers = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let std = init_std.unwrap_or_else(|| (2.0 / s.in_dim as f64).sqrt());
            let mut rng = root.fork(i as u64);
            let w = normal_draws(&mut rng, s.in_dim * s.out_dim, 0.0, std)?;
            Ok(Layer {
                spec: *s,
                weights: Matrix::new(s.in_dim, s.out_dim, w)?,
                bias: vec![0.0; s.out_dim],
                bn: s.batch_norm.then(|| BatchNorm::fresh(s.out_dim)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkParams { layers })
}

impl NetworkParams {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Neuron counts per layer, input layer first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(|l| &l.weights)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.is_finite()
                && l.bias.iter().all(|x| x.is_finite())
                && l.bn.as_ref().map_or(true, |bn| {
                    [&bn.gamma, &bn.shift, &bn.running_mean, &bn.running_var]
                        .iter()
                        .all(|v| v.iter().all(|x| x.is_finite()))
                })
        })
    }

    /// Forward pass without side effects. Train mode normalizes with batch
    /// statistics (returned in the trace); eval mode uses running statistics.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardTrace)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let batch = x.rows();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let mut traces = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = activations[li].matmul(&layer.weights)?;
            pre.add_row_vector(&layer.bias);
            let (post_bn, stats) = match (&layer.bn, mode) {
                (None, _) => (pre.clone(), None),
                (Some(bn), Mode::Eval) => {
                    let mut out = pre.clone();
                    for r in 0..batch {
                        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                            *v = bn.eval_affine(j, *v);
                        }
                    }
                    (out, None)
                }
                (Some(bn), Mode::Train) => {
                    if batch < 2 {
                        return Err(Error::DegenerateBatch(batch));
                    }
                    let stats = batch_stats(&pre);
                    let mut out = stats.normalized.clone();
                    for r in 0..batch {
                        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                            *v = bn.gamma[j] * *v + bn.shift[j];
                        }
                    }
                    (out, Some(stats))
                }
            };
            // checked before the activation: ReLU would map NaN to 0
            if !post_bn.is_finite() {
                return Err(Error::Numerical {
                    layer: li,
                    what: "forward activations".into(),
                });
            }
            let act = post_bn.map(|v| layer.spec.activation.apply(v));
            traces.push(LayerTrace {
                pre,
                stats,
                post_bn,
            });
            activations.push(act);
        }
        let out = activations.last().cloned().expect("at least one layer");
        Ok((
            out,
            ForwardTrace {
                mode,
                activations,
                layers: traces,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics. The biased batch variance is tracked, so a full-batch
    /// network evaluates identically in both modes once the averages settle.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        if trace.mode != Mode::Train {
            return;
        }
        for (layer, lt) in self.layers.iter_mut().zip(&trace.layers) {
            if let (Some(bn), Some(stats)) = (layer.bn.as_mut(), lt.stats.as_ref()) {
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] =
                        BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * stats.mean[j];
                    bn.running_var[j] =
                        BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * stats.var[j];
                }
            }
        }
    }

    /// Train-mode forward that also updates the running statistics.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        let (out, trace) = self.forward(x, Mode::Train)?;
        self.update_running_stats(&trace);
        Ok((out, trace))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Relabels the neurons of hidden layer `layer` (1-based neuron layer,
    /// i.e. the output of `self.layers[layer - 1]`): new neuron `j` is old
    /// neuron `perm[j]`.
    pub fn permute_hidden(&self, layer: usize, perm: &[usize]) -> Result<NetworkParams> {
        if layer == 0 || layer >= self.layers.len() {
            return Err(Error::InvalidLayer(layer));
        }
        let width = self.layers[layer - 1].out_dim();
        check_permutation(perm, width)?;
        let mut out = self.clone();
        let producer = &mut out.layers[layer - 1];
        producer.weights = self.layers[layer - 1].weights.col_slice(perm)?;
        producer.bias = perm.iter().map(|&i| self.layers[layer - 1].bias[i]).collect();
        if let Some(bn) = &self.layers[layer - 1].bn {
            producer.bn = Some(bn.select(perm));
        }
        out.layers[layer].weights = self.layers[layer].weights.row_slice(perm)?;
        Ok(out)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Parameter(format!(
            "permutation has {} entries, layer has {n} neurons",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parameter("not a permutation".into()));
        }
    }
    Ok(())
}

fn batch_stats(pre: &Matrix) -> BatchStats {
    let (batch, n) = pre.shape();
    let b = batch as f64;
    let mean: Vec<f64> = pre.column_sums().into_iter().map(|s| s / b).collect();
    let mut var = vec![0.0; n];
    for r in 0..batch {
        for (j, &z) in pre.row(r).iter().enumerate() {
            let d = z - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= b);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = pre.clone();
    for r in 0..batch {
        for (j, v) in normalized.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j];
        }
    }
    BatchStats {
        mean,
        var,
        inv_std,
        normalized,
    }
}
