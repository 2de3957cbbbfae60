//! The one-hidden-layer two-input network
//!
//! `f(z | x, y) = w_b(z) + Σ_i w_u^i(z) relu[w_l^i(x) + w_r^i(y)]`,
//!
//! its evaluation, a full-batch Adam trainer, and weight files.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Group, GroupKind};
use crate::linalg::gemm;

/// Pairs evaluated per block when sweeping large datasets.
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub group: GroupKind,
    pub order: usize,
    pub hidden: usize,
    pub bias_enabled: bool,
    /// `m x |G|`; row `i` is neuron `i`'s left input function.
    pub w_l: Vec<f64>,
    /// `m x |G|`
    pub w_r: Vec<f64>,
    /// `|G| x m`; column `i` is neuron `i`'s output function.
    pub w_u: Vec<f64>,
    /// `|G|`, all zero when the bias is disabled.
    pub w_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(group: GroupKind, order: usize, hidden: usize, bias_enabled: bool) -> Self {
        ModelParams {
            group,
            order,
            hidden,
            bias_enabled,
            w_l: vec![0.0; hidden * order],
            w_r: vec![0.0; hidden * order],
            w_u: vec![0.0; order * hidden],
            w_b: vec![0.0; order],
        }
    }

    /// Every entry iid `N(0, 1/√m)` (the bias stays zero when disabled).
    pub fn random(group: &Group, hidden: usize, bias_enabled: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (hidden.max(1) as f64).sqrt()).expect("positive std");
        let mut p = Self::zeros(group.kind(), group.order(), hidden, bias_enabled);
        for v in p.w_l.iter_mut().chain(p.w_r.iter_mut()).chain(p.w_u.iter_mut()) {
            *v = normal.sample(&mut rng);
        }
        if bias_enabled {
            for v in p.w_b.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.hidden, self.order);
        if self.w_l.len() != m * n || self.w_r.len() != m * n || self.w_u.len() != n * m || self.w_b.len() != n {
            return Err(Error::Validation("parameter shapes do not match (m, |G|)".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.w_l) && finite(&self.w_r) && finite(&self.w_u) && finite(&self.w_b)) {
            return Err(Error::Validation("parameters contain non-finite entries".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn wl(&self, i: usize, x: usize) -> f64 {
        self.w_l[i * self.order + x]
    }

    #[inline]
    pub fn wr(&self, i: usize, y: usize) -> f64 {
        self.w_r[i * self.order + y]
    }

    #[inline]
    pub fn wu(&self, z: usize, i: usize) -> f64 {
        self.w_u[z * self.hidden + i]
    }

    pub fn left_row(&self, i: usize) -> &[f64] {
        &self.w_l[i * self.order..(i + 1) * self.order]
    }

    pub fn right_row(&self, i: usize) -> &[f64] {
        &self.w_r[i * self.order..(i + 1) * self.order]
    }

    pub fn unembed_col(&self, i: usize) -> Vec<f64> {
        (0..self.order).map(|z| self.wu(z, i)).collect()
    }

    /// Keeps only the listed neurons (others zeroed). The bias is kept when
    /// `keep_bias`.
    pub fn restrict(&self, neurons: &[usize], keep_bias: bool) -> Self {
        let mut out = Self::zeros(self.group, self.order, self.hidden, self.bias_enabled);
        for &i in neurons {
            let n = self.order;
            out.w_l[i * n..(i + 1) * n].copy_from_slice(self.left_row(i));
            out.w_r[i * n..(i + 1) * n].copy_from_slice(self.right_row(i));
            for z in 0..n {
                out.w_u[z * self.hidden + i] = self.wu(z, i);
            }
        }
        if keep_bias {
            out.w_b = self.w_b.clone();
        }
        out
    }

    /// Embeddings transposed to `|G| x m` so that a row is one input's
    /// preactivation vector.
    pub fn left_by_input(&self) -> Vec<f64> {
        transpose(&self.w_l, self.hidden, self.order)
    }

    pub fn right_by_input(&self) -> Vec<f64> {
        transpose(&self.w_r, self.hidden, self.order)
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Abs,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Abs => v.abs(),
        }
    }
}

/// `logits[z]` for a single input pair.
pub fn forward(p: &ModelParams, x: usize, y: usize) -> Vec<f64> {
    let mut logits = p.w_b.clone();
    for i in 0..p.hidden {
        let h = (p.wl(i, x) + p.wr(i, y)).max(0.0);
        if h != 0.0 {
            for (z, l) in logits.iter_mut().enumerate() {
                *l += p.wu(z, i) * h;
            }
        }
    }
    logits
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `(x, y, x * y)`
    pub triples: Vec<(usize, usize, usize)>,
}

impl Dataset {
    pub fn full(group: &Group) -> Self {
        let n = group.order();
        let triples = (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).map(|(x, y)| (x, y, group.mul(x, y))).collect();
        Dataset { triples }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn validate(&self, group: &Group) -> Result<()> {
        for &(x, y, z) in &self.triples {
            if group.mul(x, y) != z {
                return Err(Error::Validation(format!("triple ({x}, {y}, {z}) disagrees with the group")));
            }
        }
        Ok(())
    }

    /// Deterministic iid split: a shuffled prefix of `ceil(fraction · N)`
    /// triples for training, the rest for testing.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((fraction * self.len() as f64).ceil() as usize).min(self.len());
        let pick = |ids: &[usize]| Dataset { triples: ids.iter().map(|&i| self.triples[i]).collect() };
        (pick(&idx[..k]), pick(&idx[k..]))
    }
}

/// Options for evaluation-time interventions.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions<'a> {
    pub activation: Activation,
    /// Added to every hidden preactivation, indexed `[pair * m + i]` over the
    /// dataset being evaluated.
    pub preact_noise: Option<&'a [f64]>,
}

/// Calls `visit(k, logits)` for every triple of `data`, computing logits in
/// blocks through the GEMM kernel.
pub fn for_each_logits(p: &ModelParams, data: &Dataset, opts: EvalOptions, mut visit: impl FnMut(usize, &[f64])) {
    let (m, n) = (p.hidden, p.order);
    let el = p.left_by_input();
    let er = p.right_by_input();
    let mut hidden = vec![0.0; EVAL_CHUNK * m];
    let mut logits = vec![0.0; EVAL_CHUNK * n];
    for (c, chunk) in data.triples.chunks(EVAL_CHUNK).enumerate() {
        let b = chunk.len();
        for (k, &(x, y, _)) in chunk.iter().enumerate() {
            let row = &mut hidden[k * m..(k + 1) * m];
            let (lx, ry) = (&el[x * m..(x + 1) * m], &er[y * m..(y + 1) * m]);
            for i in 0..m {
                let mut v = lx[i] + ry[i];
                if let Some(noise) = opts.preact_noise {
                    v += noise[(c * EVAL_CHUNK + k) * m + i];
                }
                row[i] = opts.activation.apply(v);
            }
            logits[k * n..(k + 1) * n].copy_from_slice(&p.w_b);
        }
        gemm(b, m, n, 1.0, &hidden, false, &p.w_u, true, 1.0, &mut logits);
        for k in 0..b {
            visit(c * EVAL_CHUNK + k, &logits[k * n..(k + 1) * n]);
        }
    }
}

/// Strict argmax check: ties count as incorrect.
#[inline]
pub fn is_correct(logits: &[f64], z: usize) -> bool {
    let t = logits[z];
    logits.iter().enumerate().all(|(j, &v)| j == z || v < t)
}

/// Softmax cross-entropy at label `z` with the usual max shift.
#[inline]
pub fn cross_entropy_row(logits: &[f64], z: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
    mx + s.ln() - logits[z]
}

/// Neumaier summation, so that means of many equal terms stay exact.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate_with(p: &ModelParams, data: &Dataset, opts: EvalOptions) -> Evaluation {
    if data.is_empty() {
        return Evaluation { loss: f64::NAN, accuracy: f64::NAN };
    }
    let mut loss = CompensatedSum::default();
    let mut correct = 0usize;
    for_each_logits(p, data, opts, |k, l| {
        let z = data.triples[k].2;
        loss.add(cross_entropy_row(l, z));
        correct += is_correct(l, z) as usize;
    });
    Evaluation { loss: loss.value() / data.len() as f64, accuracy: correct as f64 / data.len() as f64 }
}

pub fn evaluate(p: &ModelParams, data: &Dataset) -> Evaluation {
    evaluate_with(p, data, EvalOptions::default())
}

pub fn accuracy(p: &ModelParams, data: &Dataset) -> f64 {
    evaluate(p, data).accuracy
}

pub fn cross_entropy(p: &ModelParams, data: &Dataset) -> f64 {
    evaluate(p, data).loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub hidden: usize,
    pub bias_enabled: bool,
    /// Curve points are recorded every `log_every` epochs (and at the end).
    pub log_every: usize,
}

impl TrainConfig {
    /// Defaults per group: S5-like settings, with the S4 and A5 overrides.
    pub fn defaults_for(kind: GroupKind) -> Self {
        let base = TrainConfig {
            learning_rate: 1e-2,
            adam_betas: (0.9, 0.98),
            adam_eps: 1e-8,
            weight_decay: 2e-4,
            epochs: 25_000,
            train_fraction: 0.4,
            seed: 0,
            hidden: 128,
            bias_enabled: true,
            log_every: 100,
        };
        match kind {
            GroupKind::Symmetric(4) => TrainConfig { hidden: 64, train_fraction: 0.8, ..base },
            GroupKind::Alternating(5) => TrainConfig { hidden: 256, weight_decay: 1e-6, bias_enabled: false, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Validation(format!("train fraction {} outside (0, 1]", self.train_fraction)));
        }
        if self.hidden == 0 || self.log_every == 0 {
            return Err(Error::Validation("hidden size and logging interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// The factors behind `params` (absent after divergence).
    pub factors: Option<EmbeddingFactors>,
    pub curve: Vec<CurvePoint>,
    pub train: Dataset,
    pub test: Dataset,
    /// Epoch at which the loss became non-finite; training stops there and
    /// `params` holds the last finite iterate.
    pub diverged_at: Option<usize>,
}

/// Gradients in the same layout as [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w_l: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_u: Vec<f64>,
    pub w_b: Vec<f64>,
}

/// Reusable buffers for full-batch loss and gradient evaluation.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Workspace {
    fn new(batch: usize, m: usize, n: usize) -> Self {
        Workspace { hidden: vec![0.0; batch * m], logits: vec![0.0; batch * n], dhidden: vec![0.0; batch * m] }
    }
}

/// Trainable state with input-major embeddings (`|G| x m`).
struct Flat {
    el: Vec<f64>,
    er: Vec<f64>,
    wu: Vec<f64>,
    wb: Vec<f64>,
}

/// Mean cross-entropy and its gradient (without weight decay), written into
/// `grad` in the input-major layout.
fn loss_and_grad_flat(
    state: &Flat,
    m: usize,
    n: usize,
    data: &[(usize, usize, usize)],
    ws: &mut Workspace,
    grad: &mut Flat,
    want_grad: bool,
) -> f64 {
    let b = data.len();
    for (k, &(x, y, _)) in data.iter().enumerate() {
        let row = &mut ws.hidden[k * m..(k + 1) * m];
        let (lx, ry) = (&state.el[x * m..(x + 1) * m], &state.er[y * m..(y + 1) * m]);
        for i in 0..m {
            row[i] = (lx[i] + ry[i]).max(0.0);
        }
        ws.logits[k * n..(k + 1) * n].copy_from_slice(&state.wb);
    }
    gemm(b, m, n, 1.0, &ws.hidden, false, &state.wu, true, 1.0, &mut ws.logits);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (k, &(_, _, z)) in data.iter().enumerate() {
        let row = &mut ws.logits[k * n..(k + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let correct = row[z];
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        loss += mx + s.ln() - correct;
        if want_grad {
            for v in row.iter_mut() {
                *v *= inv_b / s;
            }
            row[z] -= inv_b;
        }
    }
    if !want_grad {
        return loss * inv_b;
    }
    // ws.logits now holds dL/dlogits.
    grad.wb.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..b {
        for (g, d) in grad.wb.iter_mut().zip(&ws.logits[k * n..(k + 1) * n]) {
            *g += d;
        }
    }
    gemm(n, b, m, 1.0, &ws.logits, true, &ws.hidden, false, 0.0, &mut grad.wu);
    gemm(b, n, m, 1.0, &ws.logits, false, &state.wu, false, 0.0, &mut ws.dhidden);
    grad.el.iter_mut().for_each(|v| *v = 0.0);
    grad.er.iter_mut().for_each(|v| *v = 0.0);
    for (k, &(x, y, _)) in data.iter().enumerate() {
        let h = &ws.hidden[k * m..(k + 1) * m];
        let dh = &ws.dhidden[k * m..(k + 1) * m];
        for i in 0..m {
            if h[i] > 0.0 {
                grad.el[x * m + i] += dh[i];
                grad.er[y * m + i] += dh[i];
            }
        }
    }
    loss * inv_b
}

impl Flat {
    fn from_params(p: &ModelParams) -> Self {
        Flat { el: p.left_by_input(), er: p.right_by_input(), wu: p.w_u.clone(), wb: p.w_b.clone() }
    }

    fn zeros_like(&self) -> Self {
        Flat {
            el: vec![0.0; self.el.len()],
            er: vec![0.0; self.er.len()],
            wu: vec![0.0; self.wu.len()],
            wb: vec![0.0; self.wb.len()],
        }
    }

    fn to_params(&self, template: &ModelParams) -> ModelParams {
        let (m, n) = (template.hidden, template.order);
        ModelParams {
            w_l: transpose(&self.el, n, m),
            w_r: transpose(&self.er, n, m),
            w_u: self.wu.clone(),
            w_b: self.wb.clone(),
            ..template.clone()
        }
    }

}

/// Mean cross-entropy over `data` and its exact gradient.
pub fn loss_and_gradient(p: &ModelParams, data: &Dataset) -> (f64, Gradients) {
    let (m, n) = (p.hidden, p.order);
    let state = Flat::from_params(p);
    let mut grad = state.zeros_like();
    let mut ws = Workspace::new(data.len(), m, n);
    let loss = loss_and_grad_flat(&state, m, n, &data.triples, &mut ws, &mut grad, true);
    if !p.bias_enabled {
        grad.wb.iter_mut().for_each(|v| *v = 0.0);
    }
    let g = grad.to_params(p);
    (loss, Gradients { w_l: g.w_l, w_r: g.w_r, w_u: g.w_u, w_b: g.w_b })
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Adam { lr, betas, eps, weight_decay, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One update of `params` given `grad` (same flat layout).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step_blocks(&mut [params], &[grad]);
    }

    fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for k in 0..p.len() {
                let gk = g[k] + self.weight_decay * p[k];
                let (mk, vk) = (&mut self.m[off + k], &mut self.v[off + k]);
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                p[k] -= self.lr * (*mk / c1) / ((*vk / c2).sqrt() + self.eps);
            }
            off += p.len();
        }
    }
}

/// The trained parametrization: each input has an `m`-dimensional embedding
/// followed by an `m x m` linearity, and only their product enters the
/// forward pass. Training the factors (rather than the product) changes the
/// implicit regularization of weight decay.
struct Factors {
    /// `|G| x m`, row `x` is `E_l(x)`.
    emb_l: Vec<f64>,
    emb_r: Vec<f64>,
    /// `m x m`, row `i` maps embeddings to neuron `i`.
    lin_l: Vec<f64>,
    lin_r: Vec<f64>,
    wu: Vec<f64>,
    wb: Vec<f64>,
}

impl Factors {
    /// Embeddings `N(0, 1)`; linear maps and bias uniform in `±1/√m`.
    fn init(n: usize, m: usize, bias_enabled: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("positive std");
        let bound = 1.0 / (m as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite range");
        let mut draw = |len: usize, normal_dist: bool| -> Vec<f64> {
            (0..len).map(|_| if normal_dist { normal.sample(&mut rng) } else { uniform.sample(&mut rng) }).collect()
        };
        let emb_l = draw(n * m, true);
        let emb_r = draw(n * m, true);
        let lin_l = draw(m * m, false);
        let lin_r = draw(m * m, false);
        let wu = draw(n * m, false);
        let wb = if bias_enabled { draw(n, false) } else { vec![0.0; n] };
        Factors { emb_l, emb_r, lin_l, lin_r, wu, wb }
    }

    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Factors {
            emb_l: z(&self.emb_l),
            emb_r: z(&self.emb_r),
            lin_l: z(&self.lin_l),
            lin_r: z(&self.lin_r),
            wu: z(&self.wu),
            wb: z(&self.wb),
        }
    }

    /// Writes the input-major products into `flat`.
    fn collapse_into(&self, n: usize, m: usize, flat: &mut Flat) {
        gemm(n, m, m, 1.0, &self.emb_l, false, &self.lin_l, true, 0.0, &mut flat.el);
        gemm(n, m, m, 1.0, &self.emb_r, false, &self.lin_r, true, 0.0, &mut flat.er);
        flat.wu.copy_from_slice(&self.wu);
        flat.wb.copy_from_slice(&self.wb);
    }

    /// Chain rule from gradients of the collapsed weights.
    fn backprop(&self, n: usize, m: usize, flat_grad: &Flat, out: &mut Factors) {
        gemm(n, m, m, 1.0, &flat_grad.el, false, &self.lin_l, false, 0.0, &mut out.emb_l);
        gemm(m, n, m, 1.0, &flat_grad.el, true, &self.emb_l, false, 0.0, &mut out.lin_l);
        gemm(n, m, m, 1.0, &flat_grad.er, false, &self.lin_r, false, 0.0, &mut out.emb_r);
        gemm(m, n, m, 1.0, &flat_grad.er, true, &self.emb_r, false, 0.0, &mut out.lin_r);
        out.wu.copy_from_slice(&flat_grad.wu);
        out.wb.copy_from_slice(&flat_grad.wb);
    }

    fn export(&self, n: usize, m: usize) -> EmbeddingFactors {
        EmbeddingFactors {
            order: n,
            hidden: m,
            emb_l: self.emb_l.clone(),
            emb_r: self.emb_r.clone(),
            lin_l: self.lin_l.clone(),
            lin_r: self.lin_r.clone(),
        }
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.emb_l, &mut self.emb_r, &mut self.lin_l, &mut self.lin_r, &mut self.wu, &mut self.wb]
    }

    fn len(&self) -> usize {
        self.emb_l.len() + self.emb_r.len() + self.lin_l.len() + self.lin_r.len() + self.wu.len() + self.wb.len()
    }
}

/// Trained embedding factors: `w_l(x) = W_l E_l(x)` and `w_r(y) = W_r E_r(y)`.
/// Kept alongside the collapsed weights because some interventions act on
/// the embeddings alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFactors {
    pub order: usize,
    pub hidden: usize,
    /// `|G| x m`, row `x` is `E_l(x)`.
    pub emb_l: Vec<f64>,
    pub emb_r: Vec<f64>,
    /// `m x m`.
    pub lin_l: Vec<f64>,
    pub lin_r: Vec<f64>,
}

impl EmbeddingFactors {
    /// Replaces the embeddings of `p` by `W_l E_l` and `W_r E_r`.
    pub fn collapse_onto(&self, p: &ModelParams) -> Result<ModelParams> {
        let (n, m) = (self.order, self.hidden);
        if p.order != n || p.hidden != m || self.emb_l.len() != n * m || self.lin_l.len() != m * m {
            return Err(Error::Validation("embedding factors do not match the model".into()));
        }
        let mut el = vec![0.0; n * m];
        let mut er = vec![0.0; n * m];
        gemm(n, m, m, 1.0, &self.emb_l, false, &self.lin_l, true, 0.0, &mut el);
        gemm(n, m, m, 1.0, &self.emb_r, false, &self.lin_r, true, 0.0, &mut er);
        Ok(ModelParams { w_l: transpose(&el, n, m), w_r: transpose(&er, n, m), ..p.clone() })
    }
}

/// The collapsed weights at initialization for `config` (what `train`
/// returns after zero epochs).
pub fn initial_params(group: &Group, config: &TrainConfig) -> ModelParams {
    let (m, n) = (config.hidden, group.order());
    let factors = Factors::init(n, m, config.bias_enabled, config.seed.wrapping_add(1));
    let template = ModelParams::zeros(group.kind(), n, m, config.bias_enabled);
    let mut flat = Flat::from_params(&template);
    factors.collapse_into(n, m, &mut flat);
    flat.to_params(&template)
}

/// Full-batch Adam on cross-entropy, over the factored parametrization.
/// Deterministic given `config.seed`: the split uses `seed` and the
/// initialization `seed + 1`.
pub fn train(group: &Group, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let full = Dataset::full(group);
    let (train_set, test_set) = full.split(config.train_fraction, config.seed);
    let (m, n) = (config.hidden, group.order());
    let template = ModelParams::zeros(group.kind(), n, m, config.bias_enabled);

    let mut factors = Factors::init(n, m, config.bias_enabled, config.seed.wrapping_add(1));
    let mut factor_grad = factors.zeros_like();
    let mut state = Flat::from_params(&template);
    let mut grad = state.zeros_like();
    let mut adam = Adam::new(factors.len(), config.learning_rate, config.adam_betas, config.adam_eps, config.weight_decay);
    let mut ws = Workspace::new(train_set.len(), m, n);
    let mut curve = Vec::new();
    let mut last_good = None;
    let mut diverged_at = None;

    for epoch in 0..=config.epochs {
        let is_log = epoch % config.log_every == 0 || epoch == config.epochs;
        let want_grad = epoch < config.epochs;
        factors.collapse_into(n, m, &mut state);
        let loss = loss_and_grad_flat(&state, m, n, &train_set.triples, &mut ws, &mut grad, want_grad);
        if !loss.is_finite() {
            diverged_at = Some(epoch);
            log::warn!("training diverged at epoch {epoch}");
            break;
        }
        if is_log {
            let params = state.to_params(&template);
            let tr = evaluate(&params, &train_set);
            let te = evaluate(&params, &test_set);
            curve.push(CurvePoint {
                epoch,
                train_loss: tr.loss,
                test_loss: te.loss,
                train_acc: tr.accuracy,
                test_acc: te.accuracy,
            });
            log::debug!("epoch {epoch}: train {:.4} test {:.4} acc {:.4}", tr.loss, te.loss, te.accuracy);
            last_good = Some(params);
        }
        if !want_grad {
            break;
        }
        if !config.bias_enabled {
            grad.wb.iter_mut().for_each(|v| *v = 0.0);
        }
        factors.backprop(n, m, &grad, &mut factor_grad);
        let [a, b, c, d, e, f] = factor_grad.blocks_mut();
        let grads: [&[f64]; 6] = [a, b, c, d, e, f];
        let [pa, pb, pc, pd, pe, pf] = factors.blocks_mut();
        // A disabled bias has zero gradient and zero value, so Adam keeps it
        // at zero.
        adam.step_blocks(&mut [pa, pb, pc, pd, pe, pf], &grads);
    }
    let (params, factors) = match (diverged_at, last_good) {
        (Some(_), Some(p)) => (p, None),
        (Some(_), None) => (initial_params(group, config), None),
        _ => (state.to_params(&template), Some(factors.export(n, m))),
    };
    Ok(TrainOutcome { params, factors, curve, train: train_set, test: test_set, diverged_at })
}

/// On-disk weight format.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeightFile {
    pub group: GroupKind,
    pub m: usize,
    pub bias_enabled: bool,
    pub w_l: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_u: Vec<f64>,
    pub w_b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuits: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<EmbeddingFactors>,
}

impl WeightFile {
    pub fn from_params(p: &ModelParams) -> Self {
        WeightFile {
            group: p.group,
            m: p.hidden,
            bias_enabled: p.bias_enabled,
            w_l: p.w_l.clone(),
            w_r: p.w_r.clone(),
            w_u: p.w_u.clone(),
            w_b: p.w_b.clone(),
            circuits: None,
            factors: None,
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        let order = self.w_b.len();
        let p = ModelParams {
            group: self.group,
            order,
            hidden: self.m,
            bias_enabled: self.bias_enabled,
            w_l: self.w_l,
            w_r: self.w_r,
            w_u: self.w_u,
            w_b: self.w_b,
        };
        p.validate()?;
        Ok(p)
    }
}

pub fn save_weights(path: &Path, p: &ModelParams, circuits: Option<serde_json::Value>) -> Result<()> {
    let mut wf = WeightFile::from_params(p);
    wf.circuits = circuits;
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, &wf)?;
    Ok(())
}

pub fn save_weight_file(path: &Path, wf: &WeightFile) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, wf)?;
    Ok(())
}

pub fn load_weight_file(path: &Path) -> Result<WeightFile> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

pub fn load_weights(path: &Path) -> Result<(ModelParams, Option<serde_json::Value>)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let wf: WeightFile = serde_json::from_reader(f)?;
    let circuits = wf.circuits.clone();
    Ok((wf.into_params()?, circuits))
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in curve {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve<W: Write>(out: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curve {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s3() -> Group {
        Group::new(GroupKind::Symmetric(3)).unwrap()
    }

    #[test]
    fn zero_weights_give_bias() {
        let g = s3();
        let mut p = ModelParams::zeros(g.kind(), 6, 4, true);
        p.w_b = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(forward(&p, 2, 3), p.w_b);
    }

    #[test]
    fn dead_neuron_contributes_nothing() {
        let g = s3();
        let mut p = ModelParams::zeros(g.kind(), 6, 1, false);
        p.w_l[0] = -0.4;
        p.w_r[1] = -0.6;
        p.w_u.iter_mut().for_each(|v| *v = 3.0);
        assert!(forward(&p, 0, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_loss_is_log_order() {
        let g = Group::new(GroupKind::Symmetric(5)).unwrap();
        let p = ModelParams::zeros(g.kind(), 120, 2, false);
        let d = Dataset::full(&g);
        let e = evaluate(&p, &d);
        assert!((e.loss - 120f64.ln()).abs() < 1e-12, "{}", e.loss);
        assert_eq!(e.accuracy, 0.0);
    }

    #[test]
    fn dominant_bias_scores_one_class() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let mut p = ModelParams::random(&g, 8, true, 3);
        p.w_b[5] = 1e6;
        assert!((accuracy(&p, &Dataset::full(&g)) - 1.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn batched_matches_single_forward() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let p = ModelParams::random(&g, 16, true, 4);
        let d = Dataset::full(&g);
        for_each_logits(&p, &d, EvalOptions::default(), |k, l| {
            let (x, y, _) = d.triples[k];
            let want = forward(&p, x, y);
            for (a, b) in l.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn forward_is_additive_over_neurons() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let p = ModelParams::random(&g, 10, true, 5);
        let a = p.restrict(&[0, 2, 4, 6, 8], true);
        let b = p.restrict(&[1, 3, 5, 7, 9], true);
        for (x, y) in [(0, 0), (3, 17), (23, 5)] {
            let (fa, fb, f) = (forward(&a, x, y), forward(&b, x, y), forward(&p, x, y));
            for z in 0..24 {
                assert!((fa[z] + fb[z] - p.w_b[z] - f[z]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut adam = Adam::new(3, 0.1, (0.9, 0.98), 1e-8, 0.0);
        let mut p = vec![1.0, -2.0, 3.5];
        adam.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = s3();
        let p = ModelParams::random(&g, 8, true, 9);
        let d = Dataset::full(&g);
        let (_, grad) = loss_and_gradient(&p, &d);
        let h = 1e-5;
        let check = |get: &dyn Fn(&mut ModelParams) -> &mut Vec<f64>, analytic: &[f64]| {
            for k in 0..analytic.len() {
                let mut plus = p.clone();
                get(&mut plus)[k] += h;
                let mut minus = p.clone();
                get(&mut minus)[k] -= h;
                let fd = (cross_entropy(&plus, &d) - cross_entropy(&minus, &d)) / (2.0 * h);
                let denom = fd.abs().max(analytic[k].abs()).max(1e-6);
                assert!((fd - analytic[k]).abs() / denom < 1e-4, "entry {k}: fd {fd} vs {}", analytic[k]);
            }
        };
        check(&|q| &mut q.w_l, &grad.w_l);
        check(&|q| &mut q.w_r, &grad.w_r);
        check(&|q| &mut q.w_u, &grad.w_u);
        check(&|q| &mut q.w_b, &grad.w_b);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let g = s3();
        let cfg = TrainConfig { epochs: 0, hidden: 8, train_fraction: 0.5, ..TrainConfig::defaults_for(g.kind()) };
        let out = train(&g, &cfg).unwrap();
        assert_eq!(out.params, initial_params(&g, &cfg));
        assert_eq!(out.curve.len(), 1);
    }

    #[test]
    fn factors_collapse_to_trained_weights() {
        let g = s3();
        let cfg = TrainConfig { epochs: 20, hidden: 8, ..TrainConfig::defaults_for(g.kind()) };
        let out = train(&g, &cfg).unwrap();
        let again = out.factors.as_ref().unwrap().collapse_onto(&out.params).unwrap();
        for (a, b) in again.w_l.iter().zip(&out.params.w_l).chain(again.w_r.iter().zip(&out.params.w_r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let g = s3();
        let cfg = TrainConfig { epochs: 50, hidden: 8, log_every: 10, ..TrainConfig::defaults_for(g.kind()) };
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn weight_file_round_trip() {
        let g = s3();
        let p = ModelParams::random(&g, 4, true, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&path, &p, None).unwrap();
        let (q, c) = load_weights(&path).unwrap();
        assert_eq!(p, q);
        assert!(c.is_none());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"group\":{\"kind\":\"symmetric\",\"n\":3}"));
    }
}
