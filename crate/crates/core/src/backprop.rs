//! Losses, analytic gradients of the training objective, and a
//! central-difference oracle to check them.
//!
//! The objective is `loss(forward_train(x), y) + λ · R(θ)`. Biases of
//! batch-normalized layers cancel under train-mode normalization, so their
//! gradient is defined as exactly zero and the oracle skips them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Mode, NetworkParams};
use crate::model::{init_network, LayerSpec};
use crate::regularizers::{
    add_reg_subgrad, reg_value, MaskPlacement, NeuronMask, RegKind, RegularizerSpec, ZeroRatio,
};
use crate::tensor::{normal_draws, RngStream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    SoftmaxCrossEntropy,
}

/// Supervision for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `batch × outputs` real targets.
    Values(Matrix),
    /// Class index per row.
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
}

/// Gradient with the same layout as the trainable part of [`NetworkParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                    gamma: l.bn.as_ref().map(|bn| vec![0.0; bn.gamma.len()]),
                    shift: l.bn.as_ref().map(|bn| vec![0.0; bn.shift.len()]),
                })
                .collect(),
        }
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers.iter().position(|g| {
            !g.weights.is_finite()
                || g.bias.iter().any(|x| !x.is_finite())
                || g.gamma.iter().chain(&g.shift).flatten().any(|x| !x.is_finite())
        })
    }
}

/// Mean loss over the batch (and over outputs, for squared error).
pub fn loss(pred: &Matrix, target: &Targets, kind: LossKind) -> Result<f64> {
    Ok(loss_and_grad(pred, target, kind, false)?.0)
}

fn loss_and_grad(pred: &Matrix, target: &Targets, kind: LossKind, want_grad: bool) -> Result<(f64, Option<Matrix>)> {
    let (batch, k) = pred.shape();
    if target.len() != batch {
        return Err(Error::Shape(format!(
            "{} predictions but {} targets",
            batch,
            target.len()
        )));
    }
    match (kind, target) {
        (LossKind::MeanSquaredError, Targets::Values(y)) => {
            if y.shape() != pred.shape() {
                return Err(Error::Shape(format!(
                    "targets {:?} vs predictions {:?}",
                    y.shape(),
                    pred.shape()
                )));
            }
            let n = (batch * k) as f64;
            let mut sum = 0.0;
            let mut grad = want_grad.then(|| Matrix::zeros(batch, k));
            for (i, (&p, &t)) in pred.data().iter().zip(y.data()).enumerate() {
                let d = p - t;
                sum += d * d;
                if let Some(g) = grad.as_mut() {
                    g.data_mut()[i] = 2.0 * d / n;
                }
            }
            Ok((sum / n, grad))
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
            let mut sum = 0.0;
            let mut grad = want_grad.then(|| Matrix::zeros(batch, k));
            for (r, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::Data(format!("label {label} out of range for {k} classes")));
                }
                let row = pred.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                let log_z = max + sum_exp.ln();
                sum += log_z - row[label];
                if let Some(g) = grad.as_mut() {
                    let g_row = g.row_mut(r);
                    for (j, &z) in row.iter().enumerate() {
                        g_row[j] = (z - log_z).exp() / batch as f64;
                    }
                    g_row[label] -= 1.0 / batch as f64;
                }
            }
            Ok((sum / batch as f64, grad))
        }
        _ => Err(Error::Config(format!("loss {kind:?} does not match the target type"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub data_loss: f64,
    /// `R(θ)` without `λ`.
    pub reg_value: f64,
    pub total: f64,
}

/// Objective, gradient and the train-mode trace (for running statistics).
pub fn evaluate(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Targets,
    lossk: LossKind,
    reg: &RegularizerSpec,
    masks: Option<&NeuronMask>,
) -> Result<(Objective, GradientSet, ForwardTrace)> {
    if x.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    reg.validate()?;
    let (pred, trace) = params.forward(x, Mode::Train)?;
    let (data_loss, d_out) = loss_and_grad(&pred, targets, lossk, true)?;
    let r = reg_value(params, reg, masks)?;
    let total = data_loss + reg.lambda * r;
    if !total.is_finite() {
        return Err(Error::Numerical {
            layer: params.num_layers() - 1,
            what: format!("objective is {total}"),
        });
    }
    let mut grads = backward(params, &trace, d_out.expect("gradient requested"))?;
    add_reg_subgrad(&mut grads, params, reg, masks, reg.lambda)?;
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::Numerical {
            layer,
            what: "gradient".into(),
        });
    }
    Ok((
        Objective {
            data_loss,
            reg_value: r,
            total,
        },
        grads,
        trace,
    ))
}

/// Objective value and its gradient.
pub fn gradients(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Targets,
    lossk: LossKind,
    reg: &RegularizerSpec,
    masks: Option<&NeuronMask>,
) -> Result<(f64, GradientSet)> {
    let (obj, grads, _) = evaluate(params, x, targets, lossk, reg, masks)?;
    Ok((obj.total, grads))
}

/// Objective value only, with the same train-mode semantics as [`gradients`].
pub fn objective(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Targets,
    lossk: LossKind,
    reg: &RegularizerSpec,
    masks: Option<&NeuronMask>,
) -> Result<f64> {
    let (pred, _) = params.forward(x, Mode::Train)?;
    Ok(loss(&pred, targets, lossk)? + reg.lambda * reg_value(params, reg, masks)?)
}

fn backward(params: &NetworkParams, trace: &ForwardTrace, d_out: Matrix) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    let mut d_act = d_out;
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let lt = &trace.layers[li];
        let act = layer.spec.activation;
        let mut d_post = d_act;
        for (g, &z) in d_post.data_mut().iter_mut().zip(lt.post_bn.data()) {
            *g *= act.derivative(z);
        }
        let g = &mut grads.layers[li];
        let d_pre = match (&layer.bn, &lt.stats) {
            (Some(bn), Some(stats)) => {
                let (batch, n) = d_post.shape();
                let b = batch as f64;
                let xhat = &stats.normalized;
                let mut sum_d = vec![0.0; n];
                let mut sum_d_xhat = vec![0.0; n];
                for r in 0..batch {
                    for j in 0..n {
                        let d = d_post.get(r, j);
                        sum_d[j] += d;
                        sum_d_xhat[j] += d * xhat.get(r, j);
                    }
                }
                g.gamma = Some(sum_d_xhat.clone());
                g.shift = Some(sum_d.clone());
                // gradient through the batch mean and variance
                let mut d_pre = Matrix::zeros(batch, n);
                for r in 0..batch {
                    for j in 0..n {
                        let d = d_post.get(r, j);
                        let v = bn.gamma[j] * stats.inv_std[j] / b
                            * (b * d - sum_d[j] - xhat.get(r, j) * sum_d_xhat[j]);
                        d_pre.set(r, j, v);
                    }
                }
                d_pre
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "gradients need a train-mode trace for batch-normalized layers".into(),
                ))
            }
            (None, _) => {
                g.bias = d_post.column_sums();
                d_post
            }
        };
        g.weights = trace.activations[li].t_matmul(&d_pre)?;
        if li > 0 {
            d_act = d_pre.matmul_t(&layer.weights)?;
        } else {
            break;
        }
    }
    Ok(grads)
}

/// A single trainable scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
    Gamma { layer: usize, index: usize },
    Shift { layer: usize, index: usize },
}

/// Every scalar that receives a gradient (biases feeding batch norm excluded).
pub fn trainable_slots(params: &NetworkParams) -> Vec<ParamSlot> {
    let mut slots = Vec::new();
    for (layer, l) in params.layers.iter().enumerate() {
        slots.extend((0..l.weights.len()).map(|index| ParamSlot::Weight { layer, index }));
        match &l.bn {
            None => slots.extend((0..l.bias.len()).map(|index| ParamSlot::Bias { layer, index })),
            Some(bn) => {
                slots.extend((0..bn.gamma.len()).map(|index| ParamSlot::Gamma { layer, index }));
                slots.extend((0..bn.shift.len()).map(|index| ParamSlot::Shift { layer, index }));
            }
        }
    }
    slots
}

fn param_mut(params: &mut NetworkParams, slot: ParamSlot) -> &mut f64 {
    match slot {
        ParamSlot::Weight { layer, index } => &mut params.layers[layer].weights.data_mut()[index],
        ParamSlot::Bias { layer, index } => &mut params.layers[layer].bias[index],
        ParamSlot::Gamma { layer, index } => {
            &mut params.layers[layer].bn.as_mut().expect("bn layer").gamma[index]
        }
        ParamSlot::Shift { layer, index } => {
            &mut params.layers[layer].bn.as_mut().expect("bn layer").shift[index]
        }
    }
}

pub fn grad_at(grads: &GradientSet, slot: ParamSlot) -> f64 {
    match slot {
        ParamSlot::Weight { layer, index } => grads.layers[layer].weights.data()[index],
        ParamSlot::Bias { layer, index } => grads.layers[layer].bias[index],
        ParamSlot::Gamma { layer, index } => grads.layers[layer].gamma.as_ref().map_or(0.0, |g| g[index]),
        ParamSlot::Shift { layer, index } => grads.layers[layer].shift.as_ref().map_or(0.0, |g| g[index]),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<ParamSlot>,
    pub checked: usize,
}

/// Compares analytic gradients with central differences of step `h` and
/// returns the largest `|analytic − numeric| / max(1e-8, |numeric|)`.
pub fn finite_diff_check(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Targets,
    lossk: LossKind,
    reg: &RegularizerSpec,
    masks: Option<&NeuronMask>,
    h: f64,
) -> Result<f64> {
    Ok(finite_diff_report(params, x, targets, lossk, reg, masks, h)?.max_rel_error)
}

pub fn finite_diff_report(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Targets,
    lossk: LossKind,
    reg: &RegularizerSpec,
    masks: Option<&NeuronMask>,
    h: f64,
) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be > 0, got {h}")));
    }
    let (_, grads) = gradients(params, x, targets, lossk, reg, masks)?;
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for slot in trainable_slots(params) {
        let orig = *param_mut(&mut probe, slot);
        *param_mut(&mut probe, slot) = orig + h;
        let up = objective(&probe, x, targets, lossk, reg, masks)?;
        *param_mut(&mut probe, slot) = orig - h;
        let down = objective(&probe, x, targets, lossk, reg, masks)?;
        *param_mut(&mut probe, slot) = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (grad_at(&grads, slot) - numeric).abs() / numeric.abs().max(1e-8);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(slot);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// A seeded problem for the gradient oracle.
#[derive(Debug, Clone)]
pub struct CheckCase {
    pub params: NetworkParams,
    pub x: Matrix,
    pub targets: Targets,
    pub loss: LossKind,
    pub reg: RegularizerSpec,
    pub masks: Option<NeuronMask>,
}

impl CheckCase {
    /// Small 4/5/4/3 network with regularizer `kind`. Odd seeds use squared
    /// error, even seeds cross-entropy. Draws are repeated until every
    /// hidden pre-activation sits at least `1e-2` from the ReLU kink and every
    /// weight at least `0.05` from zero, so the objective is smooth within a
    /// finite-difference step.
    pub fn seeded(kind: RegKind, batch_norm: bool, seed: u64) -> Result<Self> {
        const DIMS: [usize; 4] = [4, 5, 4, 3];
        const BATCH: usize = 6;
        let specs = LayerSpec::chain(&DIMS, batch_norm);
        let root = RngStream::new(seed);
        let lossk = if seed % 2 == 1 {
            LossKind::MeanSquaredError
        } else {
            LossKind::SoftmaxCrossEntropy
        };
        let mut reg = RegularizerSpec::new(kind, if kind == RegKind::None { 0.0 } else { 0.1 });
        reg.alpha = 0.4;
        for attempt in 0..1000 {
            let mut rng = root.fork(attempt);
            let mut params = init_network(&specs, rng.fork(0).seed(), Some(0.8))?;
            for layer in &mut params.layers {
                for w in layer.weights.data_mut() {
                    *w = w.signum() * w.abs().max(0.05);
                }
                for b in &mut layer.bias {
                    *b = 0.2 * rng.standard_normal();
                }
                if let Some(bn) = layer.bn.as_mut() {
                    for g in &mut bn.gamma {
                        *g = 0.5 + rng.uniform();
                    }
                    for d in &mut bn.shift {
                        *d = 0.6 * rng.uniform() - 0.3;
                    }
                }
            }
            let x = Matrix::new(BATCH, DIMS[0], normal_draws(&mut rng, BATCH * DIMS[0], 0.0, 1.0)?)?;
            let targets = match lossk {
                LossKind::MeanSquaredError => Targets::Values(Matrix::new(
                    BATCH,
                    DIMS[3],
                    normal_draws(&mut rng, BATCH * DIMS[3], 0.0, 1.0)?,
                )?),
                LossKind::SoftmaxCrossEntropy => Targets::Classes((0..BATCH).map(|i| i % DIMS[3]).collect()),
            };
            let (_, trace) = params.forward(&x, Mode::Train)?;
            let off_kink = trace.layers[..DIMS.len() - 2]
                .iter()
                .all(|t| t.post_bn.data().iter().all(|v| v.abs() >= 1e-2));
            if !off_kink {
                continue;
            }
            let masks = kind.is_partial().then(|| {
                NeuronMask::for_network(
                    &params,
                    ZeroRatio::new(1, 4).expect("valid ratio"),
                    MaskPlacement::SeededRandom,
                    seed,
                )
            });
            return Ok(Self {
                params,
                x,
                targets,
                loss: lossk,
                reg,
                masks,
            });
        }
        Err(Error::Parameter(format!("no smooth gradient-check draw for seed {seed}")))
    }

    pub fn check(&self, h: f64) -> Result<GradCheck> {
        finite_diff_report(
            &self.params,
            &self.x,
            &self.targets,
            self.loss,
            &self.reg,
            self.masks.as_ref(),
            h,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randm(seed: u64, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, normal_draws(&mut RngStream::new(seed), r * c, 0.0, 1.0).unwrap()).unwrap()
    }

    fn none() -> RegularizerSpec {
        RegularizerSpec::new(RegKind::None, 0.0)
    }

    #[test]
    fn loss_cases() {
        let p = randm(1, 4, 2);
        assert_eq!(loss(&p, &Targets::Values(p.clone()), LossKind::MeanSquaredError).unwrap(), 0.0);

        let uniform = Matrix::zeros(3, 10);
        let ce = loss(&uniform, &Targets::Classes(vec![0, 4, 9]), LossKind::SoftmaxCrossEntropy).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-15);
        assert!((ce - 2.302585).abs() < 1e-6);

        let mut sat = Matrix::zeros(1, 3);
        sat.set(0, 1, 50.0);
        let ce = loss(&sat, &Targets::Classes(vec![1]), LossKind::SoftmaxCrossEntropy).unwrap();
        assert!(ce < 1e-15 && ce >= 0.0);

        assert!(matches!(
            loss(&uniform, &Targets::Classes(vec![0, 10, 1]), LossKind::SoftmaxCrossEntropy),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn linear_regression_gradient_closed_form() {
        let mut net = init_network(&LayerSpec::chain(&[3, 1], false), 5, None).unwrap();
        net.layers[0].bias = vec![0.3];
        let x = randm(2, 6, 3);
        let y = randm(3, 6, 1);
        let (_, g) = gradients(&net, &x, &Targets::Values(y.clone()), LossKind::MeanSquaredError, &none(), None).unwrap();
        let mut resid = x.matmul(&net.layers[0].weights).unwrap();
        resid.add_row_vector(&[0.3]);
        for (r, t) in resid.data_mut().iter_mut().zip(y.data()) {
            *r -= t;
        }
        let mut expect = x.transpose().matmul(&resid).unwrap();
        expect.scale(2.0 / 6.0);
        assert!(g.layers[0].weights.max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn dead_relu_network() {
        let mut net = init_network(&LayerSpec::chain(&[3, 4, 4, 1], false), 0, None).unwrap();
        for l in &mut net.layers {
            l.weights.scale(0.0);
        }
        net.layers[2].bias = vec![0.7];
        let x = randm(8, 5, 3);
        let y = randm(9, 5, 1);
        let (_, g) = gradients(&net, &x, &Targets::Values(y.clone()), LossKind::MeanSquaredError, &none(), None).unwrap();
        for l in 0..2 {
            assert!(g.layers[l].weights.data().iter().all(|&v| v == 0.0));
            assert!(g.layers[l].bias.iter().all(|&v| v == 0.0));
        }
        let expect: f64 = y.data().iter().map(|t| 2.0 * (0.7 - t) / 5.0).sum();
        assert!((g.layers[2].bias[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn objective_decomposes() {
        let net = init_network(&LayerSpec::chain(&[3, 5, 2], true), 1, None).unwrap();
        let x = randm(4, 6, 3);
        let t = Targets::Classes(vec![0, 1, 1, 0, 1, 0]);
        let reg = RegularizerSpec::new(RegKind::SparseGroupLasso, 0.01);
        let (obj, _, _) = evaluate(&net, &x, &t, LossKind::SoftmaxCrossEntropy, &reg, None).unwrap();
        let pred = net.forward(&x, Mode::Train).unwrap().0;
        let l = loss(&pred, &t, LossKind::SoftmaxCrossEntropy).unwrap();
        let r = reg_value(&net, &reg, None).unwrap();
        assert_eq!(obj.total, l + 0.01 * r);
        assert_eq!(obj.data_loss, l);
    }

    #[test]
    fn quadratic_objective_is_exact() {
        let net = init_network(&LayerSpec::chain(&[3, 2], false), 2, None).unwrap();
        let x = randm(3, 5, 3);
        let y = Targets::Values(randm(4, 5, 2));
        let err = finite_diff_check(&net, &x, &y, LossKind::MeanSquaredError, &none(), None, 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn small_net_matches_oracle() {
        let net = init_network(&LayerSpec::chain(&[2, 3, 2], false), 11, Some(0.8)).unwrap();
        let x = randm(12, 4, 2);
        let t = Targets::Classes(vec![0, 1, 1, 0]);
        let reg = RegularizerSpec::new(RegKind::GroupLasso, 0.05);
        let err = finite_diff_check(&net, &x, &t, LossKind::SoftmaxCrossEntropy, &reg, None, 1e-5).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn non_finite_input_names_layer() {
        let net = init_network(&LayerSpec::chain(&[2, 3, 1], false), 0, None).unwrap();
        let x = Matrix::new(2, 2, vec![1e308, 1e308, 1e308, 1e308]).unwrap();
        let mut big = net.clone();
        big.layers[0].weights.scale(1e10);
        let err = gradients(&big, &x, &Targets::Values(Matrix::zeros(2, 1)), LossKind::MeanSquaredError, &none(), None);
        assert!(matches!(err, Err(Error::Numerical { layer: 0, .. })), "{err:?}");
    }

    #[test]
    fn bn_bias_gets_no_gradient() {
        let net = init_network(&LayerSpec::chain(&[3, 4, 2], true), 3, None).unwrap();
        let x = randm(5, 6, 3);
        let t = Targets::Classes(vec![0, 1, 0, 1, 1, 0]);
        let (_, g) = gradients(&net, &x, &t, LossKind::SoftmaxCrossEntropy, &none(), None).unwrap();
        assert!(g.layers[0].bias.iter().all(|&b| b == 0.0));
        assert!(g.layers[0].gamma.as_ref().unwrap().iter().any(|&v| v != 0.0));
    }
}
