//! Group-lasso family penalties and their (smoothed) gradients.
//!
//! A group is one row of a weight matrix: the outgoing weights of one neuron.
//! Biases and batch-norm parameters are never penalized. Every penalty here
//! excludes the global factor `λ`, which the objective applies.
//!
//! Partial kinds restrict the sum to groups whose mask bit is set. Full kinds
//! go through the same code with every row kept, so a partial penalty with an
//! all-ones mask is bit-identical to its full counterpart.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backprop::GradientSet;
use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::tensor::{Matrix, RngStream};

pub const DEFAULT_SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    None,
    L1,
    L2,
    GroupLasso,
    SparseGroupLasso,
    WeightedGl,
    WeightedSgl,
    PartialGl,
    PartialSgl,
}

impl RegKind {
    pub const ALL: [RegKind; 9] = [
        RegKind::None,
        RegKind::L1,
        RegKind::L2,
        RegKind::GroupLasso,
        RegKind::SparseGroupLasso,
        RegKind::WeightedGl,
        RegKind::WeightedSgl,
        RegKind::PartialGl,
        RegKind::PartialSgl,
    ];

    pub fn is_partial(self) -> bool {
        matches!(self, RegKind::PartialGl | RegKind::PartialSgl)
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, RegKind::WeightedGl | RegKind::WeightedSgl)
    }

    /// Kinds mixing a group term with an L1 term through `α`.
    pub fn is_sparse(self) -> bool {
        matches!(
            self,
            RegKind::SparseGroupLasso | RegKind::WeightedSgl | RegKind::PartialSgl
        )
    }

    pub fn has_group_term(self) -> bool {
        !matches!(self, RegKind::None | RegKind::L1 | RegKind::L2)
    }

    /// Partial counterpart of a full group kind.
    pub fn partial(self) -> Option<RegKind> {
        match self {
            RegKind::GroupLasso | RegKind::PartialGl => Some(RegKind::PartialGl),
            RegKind::SparseGroupLasso | RegKind::PartialSgl => Some(RegKind::PartialSgl),
            _ => None,
        }
    }

    /// Full counterpart of a partial kind.
    pub fn full(self) -> RegKind {
        match self {
            RegKind::PartialGl => RegKind::GroupLasso,
            RegKind::PartialSgl => RegKind::SparseGroupLasso,
            k => k,
        }
    }

    /// Short label used on the command line and in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
            RegKind::GroupLasso => "gl",
            RegKind::SparseGroupLasso => "sgl",
            RegKind::WeightedGl => "wgl",
            RegKind::WeightedSgl => "wsgl",
            RegKind::PartialGl => "pgl",
            RegKind::PartialSgl => "psgl",
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regularizer '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    /// Global factor of the objective.
    pub lambda: f64,
    /// Mixing between group and L1 terms for sparse kinds.
    pub alpha: f64,
    /// Per-layer factors for weighted kinds; empty selects the default
    /// (1 for the first half of the layers, 10 for the rest).
    #[serde(default)]
    pub layer_weights: Vec<f64>,
    /// Per-layer group weights; empty selects `sqrt(cols)` of each matrix.
    #[serde(default)]
    pub group_weights: Vec<f64>,
    pub smoothing_eps: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            alpha: 0.5,
            layer_weights: Vec::new(),
            group_weights: Vec::new(),
            smoothing_eps: DEFAULT_SMOOTHING,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.smoothing_eps > 0.0) {
            return Err(Error::Config("smoothing_eps must be > 0".into()));
        }
        Ok(())
    }

    fn layer_factor(&self, layer: usize, n_layers: usize) -> Result<f64> {
        if !self.kind.is_weighted() {
            return Ok(1.0);
        }
        if self.layer_weights.is_empty() {
            return Ok(if layer < n_layers / 2 { 1.0 } else { 10.0 });
        }
        self.layer_weights.get(layer).copied().ok_or_else(|| {
            Error::Config(format!(
                "{} layer weights given for {n_layers} layers",
                self.layer_weights.len()
            ))
        })
    }

    fn group_weight(&self, layer: usize, w: &Matrix) -> Result<f64> {
        if self.group_weights.is_empty() {
            return Ok((w.cols() as f64).sqrt());
        }
        self.group_weights.get(layer).copied().ok_or_else(|| {
            Error::Config(format!("no group weight for layer {layer}"))
        })
    }
}

/// Fraction of groups left out of a partial penalty, kept as an exact
/// rational so zero counts never drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZeroRatio {
    num: u64,
    den: u64,
}

impl ZeroRatio {
    pub const ZERO: ZeroRatio = ZeroRatio { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Config(format!("zero ratio {num}/{den} is not in [0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn denominator(self) -> u64 {
        self.den
    }

    /// `floor(ratio · n)`.
    pub fn zeros_for(self, n: usize) -> usize {
        (self.num as u128 * n as u128 / self.den as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl fmt::Display for ZeroRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ZeroRatio {
    type Err = Error;

    /// Accepts `"p/q"`, integers, and plain decimals such as `"0.125"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse zero ratio '{s}'"));
        if let Some((p, q)) = s.split_once('/') {
            let p = p.trim().parse().map_err(|_| bad())?;
            let q = q.trim().parse().map_err(|_| bad())?;
            return ZeroRatio::new(p, q);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        ZeroRatio::new(num, den)
    }
}

impl Serialize for ZeroRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ZeroRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPlacement {
    /// Zeros at the lowest group indices.
    #[default]
    Prefix,
    SeededRandom,
}

/// Mask over the groups (rows) of one weight matrix; `true` means penalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub bits: Vec<bool>,
    pub zero_ratio: ZeroRatio,
    pub placement: MaskPlacement,
}

impl LayerMask {
    pub fn all_ones(n: usize) -> Self {
        Self {
            bits: vec![true; n],
            zero_ratio: ZeroRatio::ZERO,
            placement: MaskPlacement::Prefix,
        }
    }

    pub fn kept(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }

    /// New mask with `new[j] = old[perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        crate::model::check_permutation(perm, self.bits.len())?;
        Ok(Self {
            bits: perm.iter().map(|&i| self.bits[i]).collect(),
            ..self.clone()
        })
    }
}

/// One mask per weight matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronMask {
    pub layers: Vec<LayerMask>,
}

impl NeuronMask {
    /// Masks every weight matrix of `params` with the same ratio.
    pub fn for_network(
        params: &NetworkParams,
        ratio: ZeroRatio,
        placement: MaskPlacement,
        seed: u64,
    ) -> Self {
        let root = RngStream::new(seed);
        Self {
            layers: params
                .weights()
                .enumerate()
                .map(|(l, w)| build_mask(w.rows(), ratio, placement, root.fork(l as u64).seed()))
                .collect(),
        }
    }

    /// Relabels the mask of the matrix fed by hidden neuron layer `layer`
    /// consistently with [`NetworkParams::permute_hidden`].
    pub fn permute_hidden(&self, layer: usize, perm: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        let m = out
            .layers
            .get_mut(layer)
            .ok_or(Error::InvalidLayer(layer))?;
        *m = self.layers[layer].permuted(perm)?;
        Ok(out)
    }

    fn check(&self, params: &NetworkParams) -> Result<()> {
        if self.layers.len() != params.num_layers() {
            return Err(Error::Config(format!(
                "mask covers {} layers, network has {}",
                self.layers.len(),
                params.num_layers()
            )));
        }
        for (l, (m, w)) in self.layers.iter().zip(params.weights()).enumerate() {
            if m.bits.len() != w.rows() {
                return Err(Error::Config(format!(
                    "mask for layer {l} has {} bits, matrix has {} rows",
                    m.bits.len(),
                    w.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Mask over `n_groups` groups with exactly `floor(ratio · n_groups)` zeros.
pub fn build_mask(n_groups: usize, ratio: ZeroRatio, placement: MaskPlacement, seed: u64) -> LayerMask {
    let zeros = ratio.zeros_for(n_groups);
    if zeros == n_groups && n_groups > 0 {
        warn!("zero ratio {ratio} leaves a layer of {n_groups} groups unregularized");
    }
    let mut bits = vec![true; n_groups];
    match placement {
        MaskPlacement::Prefix => bits[..zeros].iter_mut().for_each(|b| *b = false),
        MaskPlacement::SeededRandom => {
            let mut idx: Vec<usize> = (0..n_groups).collect();
            RngStream::new(seed).shuffle(&mut idx);
            for &i in &idx[..zeros] {
                bits[i] = false;
            }
        }
    }
    LayerMask {
        bits,
        zero_ratio: ratio,
        placement,
    }
}

/// Euclidean norm of every row.
pub fn group_norms(w: &Matrix) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

#[inline]
fn smoothed_norm(row: &[f64], eps: f64) -> f64 {
    let sq: f64 = row.iter().map(|x| x * x).sum();
    (sq + eps * eps).sqrt() - eps
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Rows of layer `l` entering the penalty.
fn penalized_rows(
    spec: &RegularizerSpec,
    masks: Option<&NeuronMask>,
    l: usize,
    rows: usize,
) -> Vec<usize> {
    match masks {
        Some(m) if spec.kind.is_partial() => m.layers[l].kept(),
        _ => (0..rows).collect(),
    }
}

fn check_masks(params: &NetworkParams, spec: &RegularizerSpec, masks: Option<&NeuronMask>) -> Result<()> {
    match (spec.kind.is_partial(), masks) {
        (true, None) => Err(Error::Config(format!(
            "regularizer {} needs a neuron mask",
            spec.kind
        ))),
        (false, Some(_)) => Err(Error::Config(format!(
            "regularizer {} does not take a neuron mask",
            spec.kind
        ))),
        (true, Some(m)) => m.check(params),
        (false, None) => Ok(()),
    }
}

/// Penalty value `R(θ)` (without the global `λ`).
pub fn reg_value(params: &NetworkParams, spec: &RegularizerSpec, masks: Option<&NeuronMask>) -> Result<f64> {
    check_masks(params, spec, masks)?;
    let n_layers = params.num_layers();
    let eps = spec.smoothing_eps;
    let (mut group_acc, mut l1_acc, mut sq_acc) = (0.0, 0.0, 0.0);
    for (l, w) in params.weights().enumerate() {
        let lw = spec.layer_factor(l, n_layers)?;
        match spec.kind {
            RegKind::None => {}
            RegKind::L1 => l1_acc += w.data().iter().map(|x| x.abs()).sum::<f64>(),
            RegKind::L2 => sq_acc += w.data().iter().map(|x| x * x).sum::<f64>(),
            kind => {
                let gw = spec.group_weight(l, w)?;
                let rows = penalized_rows(spec, masks, l, w.rows());
                let group: f64 = rows.iter().map(|&r| smoothed_norm(w.row(r), eps)).sum();
                group_acc += lw * gw * group;
                if kind.is_sparse() {
                    let l1: f64 = rows
                        .iter()
                        .map(|&r| w.row(r).iter().map(|x| x.abs()).sum::<f64>())
                        .sum();
                    l1_acc += lw * l1;
                }
            }
        }
    }
    Ok(match spec.kind {
        RegKind::None => 0.0,
        RegKind::L1 => l1_acc,
        RegKind::L2 => sq_acc,
        k if k.is_sparse() => (1.0 - spec.alpha) * group_acc + spec.alpha * l1_acc,
        _ => group_acc,
    })
}

/// Adds `scale · ∇R(θ)` to the weight gradients in `grads`.
pub fn add_reg_subgrad(
    grads: &mut GradientSet,
    params: &NetworkParams,
    spec: &RegularizerSpec,
    masks: Option<&NeuronMask>,
    scale: f64,
) -> Result<()> {
    check_masks(params, spec, masks)?;
    if spec.kind == RegKind::None || scale == 0.0 {
        return Ok(());
    }
    let n_layers = params.num_layers();
    let eps = spec.smoothing_eps;
    for (l, w) in params.weights().enumerate() {
        let dw = &mut grads.layers[l].weights;
        let lw = spec.layer_factor(l, n_layers)?;
        match spec.kind {
            RegKind::None => {}
            RegKind::L1 => {
                for (g, &x) in dw.data_mut().iter_mut().zip(w.data()) {
                    *g += scale * sign(x);
                }
            }
            RegKind::L2 => {
                for (g, &x) in dw.data_mut().iter_mut().zip(w.data()) {
                    *g += scale * 2.0 * x;
                }
            }
            kind => {
                let gw = spec.group_weight(l, w)?;
                let (group_c, l1_c) = if kind.is_sparse() {
                    (scale * lw * (1.0 - spec.alpha) * gw, scale * lw * spec.alpha)
                } else {
                    (scale * lw * gw, 0.0)
                };
                for r in penalized_rows(spec, masks, l, w.rows()) {
                    let row = w.row(r);
                    let sq: f64 = row.iter().map(|x| x * x).sum();
                    let c = group_c / (sq + eps * eps).sqrt();
                    for (g, &x) in dw.row_mut(r).iter_mut().zip(row) {
                        *g += c * x + l1_c * sign(x);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Gradient of `R(θ)` (without `λ`); only weight entries are non-zero.
pub fn reg_subgrad(params: &NetworkParams, spec: &RegularizerSpec, masks: Option<&NeuronMask>) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    add_reg_subgrad(&mut grads, params, spec, masks, 1.0)?;
    Ok(grads)
}

/// Number of scalar weights entering the penalty sum.
pub fn regularized_param_count(
    params: &NetworkParams,
    spec: &RegularizerSpec,
    masks: Option<&NeuronMask>,
) -> Result<usize> {
    check_masks(params, spec, masks)?;
    if spec.kind == RegKind::None {
        return Ok(0);
    }
    Ok(params
        .weights()
        .enumerate()
        .map(|(l, w)| penalized_rows(spec, masks, l, w.rows()).len() * w.cols())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_network, LayerSpec};

    fn one_layer(rows: &[&[f64]]) -> NetworkParams {
        let m = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let mut net = init_network(&LayerSpec::chain(&[m.rows(), m.cols()], false), 0, None).unwrap();
        net.layers[0].weights = m;
        net
    }

    fn unit_group_weights(mut spec: RegularizerSpec, n: usize) -> RegularizerSpec {
        spec.group_weights = vec![1.0; n];
        spec
    }

    #[test]
    fn group_norm_cases() {
        assert_eq!(group_norms(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()), vec![5.0]);
        assert_eq!(group_norms(&Matrix::zeros(3, 2)), vec![0.0; 3]);
        assert_eq!(group_norms(&Matrix::from_rows(&[vec![-2.0]]).unwrap()), vec![2.0]);
    }

    #[test]
    fn single_group_value() {
        let net = one_layer(&[&[3.0, 4.0]]);
        let spec = unit_group_weights(RegularizerSpec::new(RegKind::GroupLasso, 1.0), 1);
        assert!((reg_value(&net, &spec, None).unwrap() - 5.0).abs() <= 1e-8);
        let sharp = RegularizerSpec {
            smoothing_eps: 1e-300,
            ..spec
        };
        assert_eq!(reg_value(&net, &sharp, None).unwrap(), 5.0);
    }

    #[test]
    fn masked_group_drops_out_additively() {
        let net = init_network(&LayerSpec::chain(&[5, 6, 3], false), 3, None).unwrap();
        let spec = RegularizerSpec {
            smoothing_eps: 1e-300,
            ..RegularizerSpec::new(RegKind::PartialGl, 1.0)
        };
        let full = NeuronMask::for_network(&net, ZeroRatio::ZERO, MaskPlacement::Prefix, 0);
        let mut one_off = full.clone();
        one_off.layers[1].bits[2] = false;
        let a = reg_value(&net, &spec, Some(&full)).unwrap();
        let b = reg_value(&net, &spec, Some(&one_off)).unwrap();
        let w = &net.layers[1].weights;
        let expect = (w.cols() as f64).sqrt() * group_norms(w)[2];
        assert!(((a - b) - expect).abs() <= 1e-13 * a);
    }

    #[test]
    fn mask_required_only_for_partial_kinds() {
        let net = one_layer(&[&[1.0, 2.0]]);
        let mask = NeuronMask::for_network(&net, ZeroRatio::ZERO, MaskPlacement::Prefix, 0);
        assert!(matches!(
            reg_value(&net, &RegularizerSpec::new(RegKind::PartialGl, 1.0), None),
            Err(Error::Config(_))
        ));
        assert!(reg_value(&net, &RegularizerSpec::new(RegKind::GroupLasso, 1.0), Some(&mask)).is_err());
    }

    #[test]
    fn unit_vector_gradient() {
        let net = one_layer(&[&[3.0, 4.0]]);
        let mut spec = unit_group_weights(RegularizerSpec::new(RegKind::GroupLasso, 1.0), 1);
        spec.smoothing_eps = 1e-12;
        let g = reg_subgrad(&net, &spec, None).unwrap();
        let d = g.layers[0].weights.data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_group_has_zero_gradient() {
        let net = one_layer(&[&[0.0, 0.0], &[1.0, 0.0]]);
        for kind in [RegKind::GroupLasso, RegKind::SparseGroupLasso, RegKind::L1, RegKind::L2] {
            let g = reg_subgrad(&net, &RegularizerSpec::new(kind, 1.0), None).unwrap();
            assert_eq!(g.layers[0].weights.row(0), &[0.0, 0.0]);
        }
    }

    #[test]
    fn masked_rows_get_exactly_zero_gradient() {
        let net = init_network(&LayerSpec::chain(&[8, 5, 2], true), 1, None).unwrap();
        let masks = NeuronMask::for_network(&net, ZeroRatio::new(1, 2).unwrap(), MaskPlacement::SeededRandom, 4);
        for kind in [RegKind::PartialGl, RegKind::PartialSgl] {
            let g = reg_subgrad(&net, &RegularizerSpec::new(kind, 1.0), Some(&masks)).unwrap();
            for (lm, lg) in masks.layers.iter().zip(&g.layers) {
                for (r, &bit) in lm.bits.iter().enumerate() {
                    if !bit {
                        assert!(lg.weights.row(r).iter().all(|&x| x == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn mask_construction() {
        let m = build_mask(40, ZeroRatio::new(1, 8).unwrap(), MaskPlacement::Prefix, 0);
        assert_eq!(m.zeros(), 5);
        assert!(build_mask(40, ZeroRatio::ZERO, MaskPlacement::Prefix, 0).bits.iter().all(|&b| b));
        let m = build_mask(10, ZeroRatio::new(1, 4).unwrap(), MaskPlacement::Prefix, 0);
        assert_eq!(m.bits, [vec![false; 2], vec![true; 8]].concat());
        let all = build_mask(6, ZeroRatio::new(1, 1).unwrap(), MaskPlacement::Prefix, 0);
        assert_eq!(all.zeros(), 6);
        let r1 = build_mask(40, ZeroRatio::new(3, 8).unwrap(), MaskPlacement::SeededRandom, 9);
        let r2 = build_mask(40, ZeroRatio::new(3, 8).unwrap(), MaskPlacement::SeededRandom, 9);
        assert_eq!(r1, r2);
        assert_eq!(r1.zeros(), 15);
    }

    #[test]
    fn zero_ratio_parsing() {
        assert_eq!("1/8".parse::<ZeroRatio>().unwrap(), ZeroRatio::new(1, 8).unwrap());
        assert_eq!("0.125".parse::<ZeroRatio>().unwrap(), ZeroRatio::new(1, 8).unwrap());
        assert_eq!("0".parse::<ZeroRatio>().unwrap(), ZeroRatio::ZERO);
        assert_eq!("2/4".parse::<ZeroRatio>().unwrap().to_string(), "1/2");
        assert!("3/2".parse::<ZeroRatio>().is_err());
        assert!("x".parse::<ZeroRatio>().is_err());
        // floor(0.2 * 50) must be exactly 10
        assert_eq!("0.2".parse::<ZeroRatio>().unwrap().zeros_for(50), 10);
    }

    #[test]
    fn param_counts() {
        let net = init_network(&LayerSpec::chain(&[13, 40, 30, 1], true), 0, None).unwrap();
        let gl = RegularizerSpec::new(RegKind::GroupLasso, 1e-3);
        assert_eq!(regularized_param_count(&net, &gl, None).unwrap(), 1750);
        let pgl = RegularizerSpec::new(RegKind::PartialGl, 1e-3);
        let eighth = NeuronMask::for_network(&net, ZeroRatio::new(1, 8).unwrap(), MaskPlacement::Prefix, 0);
        assert_eq!(eighth.layers[1].kept().len() * 30, 1050);
        let all = NeuronMask::for_network(&net, ZeroRatio::new(1, 1).unwrap(), MaskPlacement::Prefix, 0);
        assert_eq!(regularized_param_count(&net, &pgl, Some(&all)).unwrap(), 0);
        assert_eq!(regularized_param_count(&net, &RegularizerSpec::new(RegKind::None, 1.0), None).unwrap(), 0);
    }

    #[test]
    fn weighted_defaults_scale_layers() {
        let net = init_network(&LayerSpec::chain(&[3, 4, 4, 2], false), 2, None).unwrap();
        let sharp = |kind| RegularizerSpec {
            smoothing_eps: 1e-300,
            ..RegularizerSpec::new(kind, 1.0)
        };
        let gl = reg_value(&net, &sharp(RegKind::GroupLasso), None).unwrap();
        let wgl = reg_value(&net, &sharp(RegKind::WeightedGl), None).unwrap();
        let per_layer: Vec<f64> = net
            .weights()
            .map(|w| (w.cols() as f64).sqrt() * group_norms(w).iter().sum::<f64>())
            .collect();
        let expect = per_layer[0] + 10.0 * (per_layer[1] + per_layer[2]);
        assert!((wgl - expect).abs() < 1e-12 * expect);
        assert!(wgl > gl);
    }

    #[test]
    fn l2_is_sum_of_squares() {
        let net = one_layer(&[&[1.0, -2.0], &[3.0, 0.5]]);
        let v = reg_value(&net, &RegularizerSpec::new(RegKind::L2, 1.0), None).unwrap();
        assert_eq!(v, 1.0 + 4.0 + 9.0 + 0.25);
        let l1 = reg_value(&net, &RegularizerSpec::new(RegKind::L1, 1.0), None).unwrap();
        assert_eq!(l1, 6.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partial_never_exceeds_full(seed in any::<u64>(), num in 0u64..=8) {
                let net = init_network(&LayerSpec::chain(&[6, 9, 5, 2], true), seed, None).unwrap();
                let ratio = ZeroRatio::new(num, 8).unwrap();
                let masks = NeuronMask::for_network(&net, ratio, MaskPlacement::SeededRandom, seed ^ 1);
                for kind in [RegKind::PartialGl, RegKind::PartialSgl] {
                    let part = reg_value(&net, &RegularizerSpec::new(kind, 1.0), Some(&masks)).unwrap();
                    let full = reg_value(&net, &RegularizerSpec::new(kind.full(), 1.0), None).unwrap();
                    prop_assert!(part <= full);
                    // random normal weights are never exactly zero
                    prop_assert_eq!(part == full, num == 0);
                }
            }

            #[test]
            fn mixing_identity(seed in any::<u64>(), alpha in prop::sample::select(vec![0.0, 0.1, 0.5, 1.0])) {
                let net = init_network(&LayerSpec::chain(&[4, 7, 3], false), seed, None).unwrap();
                let sgl = reg_value(&net, &RegularizerSpec::new(RegKind::SparseGroupLasso, 1.0).with_alpha(alpha), None).unwrap();
                let gl = reg_value(&net, &RegularizerSpec::new(RegKind::GroupLasso, 1.0), None).unwrap();
                let l1 = reg_value(&net, &RegularizerSpec::new(RegKind::L1, 1.0), None).unwrap();
                let mix = (1.0 - alpha) * gl + alpha * l1;
                prop_assert!((sgl - mix).abs() <= 1e-15 * mix.abs());
            }

            #[test]
            fn homogeneity(seed in any::<u64>(), c in -5.0f64..5.0) {
                let net = init_network(&LayerSpec::chain(&[4, 6, 3], false), seed, None).unwrap();
                let mut scaled = net.clone();
                scaled.layers.iter_mut().for_each(|l| l.weights.scale(c));
                for kind in [RegKind::GroupLasso, RegKind::L1, RegKind::SparseGroupLasso] {
                    let mut spec = RegularizerSpec::new(kind, 1.0);
                    spec.smoothing_eps = 1e-12;
                    let a = reg_value(&scaled, &spec, None).unwrap();
                    let b = c.abs() * reg_value(&net, &spec, None).unwrap();
                    prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
                }
            }
        }
    }
}
