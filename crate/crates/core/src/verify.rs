//! Verifiers returning sound lower bounds on accuracy, the logit-distance
//! bounds they rest on, and cross-entropy upper bounds.
//!
//! Every verifier counts the arithmetic it performs so that asymptotic
//! cost can be compared independently of the machine.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::Group;
use crate::idealized::{coset_idealize_neuron, idealize_checked, resolve_coset_label, CheckFailure, ResolvedCoset};
use crate::interpret::{CosetInterpretation, IrrepInterpretation};
use crate::linalg::{norm2, svd, Matrix};
use crate::model::{cross_entropy_row, for_each_logits, is_correct, Dataset, EvalOptions, ModelParams};
use crate::rep::IrrepTable;

/// Relative slack added to computed distances to absorb rounding.
const ROUNDING: f64 = 1e-10;

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifierReport {
    pub verifier: String,
    pub bound: f64,
    pub wall_time_s: f64,
    /// Smallest idealized margin used (for V_irrep the single margin).
    pub margin: f64,
    pub max_l: f64,
    pub mean_l: f64,
    pub n_certified_pairs: usize,
    pub n_pairs: usize,
    pub ops: u64,
    pub validation_failures: Vec<CheckFailure>,
}

impl VerifierReport {
    fn finish(mut self, certified: usize, n_pairs: usize, start: Instant) -> Self {
        self.n_certified_pairs = certified;
        self.n_pairs = n_pairs;
        self.bound = if n_pairs == 0 { 0.0 } else { certified as f64 / n_pairs as f64 };
        self.wall_time_s = start.elapsed().as_secs_f64();
        self
    }
}

/// Exact accuracy from a forward pass on all `|G|²` inputs.
pub fn v_brute(group: &Group, theta: &ModelParams) -> VerifierReport {
    let start = Instant::now();
    let data = Dataset::full(group);
    let n = group.order() as u64;
    let m = theta.hidden as u64;
    let mut certified = 0;
    let mut worst_margin = f64::INFINITY;
    for_each_logits(theta, &data, EvalOptions::default(), |k, logits| {
        let z = data.triples[k].2;
        if is_correct(logits, z) {
            certified += 1;
        }
        let other = logits.iter().enumerate().filter(|&(j, _)| j != z).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        worst_margin = worst_margin.min(logits[z] - other);
    });
    let report = VerifierReport {
        verifier: "brute".into(),
        margin: worst_margin,
        // Preactivations and relu, the unembedding product, bias and argmax.
        ops: n * n * (2 * m + 2 * m * n + 2 * n),
        ..Default::default()
    };
    report.finish(certified, data.len(), start)
}

/// Per-input bound on how far `θ̃`'s logits can sit from `θ`'s in the
/// direction that hurts the margin.
#[derive(Clone, Debug)]
pub struct LogitDistance {
    /// Upper bound on `‖f_θ(·|x,y) − f_θ̃(·|x,y)‖_∞`, indexed `[x·|G| + y]`.
    pub norm_bound: Vec<f64>,
    /// Exact `f_θ̃(xy|x,y) − f_θ(xy|x,y)`.
    pub correct_shift: Vec<f64>,
    /// Exact `f_θ(xy|x,y)`.
    pub correct_logit: Vec<f64>,
    pub ops: u64,
}

impl LogitDistance {
    /// `L(x, y)`: the margin of `θ` at `(x, y)` is at least the margin of
    /// `θ̃` minus this.
    pub fn l(&self, k: usize) -> f64 {
        self.norm_bound[k] + self.correct_shift[k]
    }
}

fn unembed_matrix(p: &ModelParams) -> Matrix {
    Matrix::from_vec(p.order, p.hidden, p.w_u.clone()).expect("shape")
}

fn check_shapes(theta: &ModelParams, ideal: &ModelParams) -> Result<()> {
    if theta.order != ideal.order || theta.hidden != ideal.hidden {
        return Err(Error::Validation("models disagree on (m, |G|)".into()));
    }
    Ok(())
}

/// Quadratic-time bound: for each input,
/// `‖(U − Ũ)ᵀ‖_{2,∞}‖h‖₂ + ‖Ũᵀ‖_{2,∞}‖h − h̃‖₂ + ‖w_b − w̃_b‖_∞`, plus the
/// exact shift of the correct logit.
pub fn logit_distance_quadratic(group: &Group, theta: &ModelParams, ideal: &ModelParams) -> Result<LogitDistance> {
    check_shapes(theta, ideal)?;
    let n = group.order();
    let m = theta.hidden;
    let u = unembed_matrix(theta);
    let ut = unembed_matrix(ideal);
    let r1 = crate::linalg::mixed_norms(&u.sub(&ut)).max_row2;
    let r2 = crate::linalg::mixed_norms(&ut).max_row2;
    let db = theta.w_b.iter().zip(&ideal.w_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (l, r) = (theta.left_by_input(), theta.right_by_input());
    let (lt, rt) = (ideal.left_by_input(), ideal.right_by_input());
    let mut out = LogitDistance {
        norm_bound: vec![0.0; n * n],
        correct_shift: vec![0.0; n * n],
        correct_logit: vec![0.0; n * n],
        ops: (4 * n * m) as u64,
    };
    for x in 0..n {
        let (lx, ltx) = (&l[x * m..(x + 1) * m], &lt[x * m..(x + 1) * m]);
        for y in 0..n {
            let (ry, rty) = (&r[y * m..(y + 1) * m], &rt[y * m..(y + 1) * m]);
            let z = group.mul(x, y);
            let (uz, utz) = (&u.row(z), &ut.row(z));
            let (mut hh, mut dd, mut f, mut ft) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..m {
                let h = (lx[i] + ry[i]).max(0.0);
                let ht = (ltx[i] + rty[i]).max(0.0);
                hh += h * h;
                dd += (h - ht) * (h - ht);
                f += uz[i] * h;
                ft += utz[i] * ht;
            }
            let k = x * n + y;
            let bound = r1 * hh.sqrt() + r2 * dd.sqrt() + db;
            out.norm_bound[k] = bound * (1.0 + ROUNDING) + ROUNDING;
            out.correct_logit[k] = f + theta.w_b[z];
            out.correct_shift[k] = ft + ideal.w_b[z] - out.correct_logit[k];
        }
    }
    out.ops += (n * n * 13 * m) as u64;
    Ok(out)
}

/// Linear-time bound: one input-independent `L` built from the largest
/// embedding norms, with the correct-logit shift bounded by the same norm.
pub fn logit_distance_linear(theta: &ModelParams, ideal: &ModelParams) -> Result<(f64, u64)> {
    check_shapes(theta, ideal)?;
    let (n, m) = (theta.order, theta.hidden);
    let u = unembed_matrix(theta);
    let ut = unembed_matrix(ideal);
    let r1 = crate::linalg::mixed_norms(&u.sub(&ut)).max_row2;
    let r2 = crate::linalg::mixed_norms(&ut).max_row2;
    let db = theta.w_b.iter().zip(&ideal.w_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let by_input = |p: &ModelParams, left: bool| if left { p.left_by_input() } else { p.right_by_input() };
    let max_norm = |v: &[f64]| (0..n).map(|x| norm2(&v[x * m..(x + 1) * m])).fold(0.0, f64::max);
    let max_diff = |a: &[f64], b: &[f64]| {
        (0..n)
            .map(|x| {
                let d: Vec<f64> = (0..m).map(|i| a[x * m + i] - b[x * m + i]).collect();
                norm2(&d)
            })
            .fold(0.0, f64::max)
    };
    let (l, r) = (by_input(theta, true), by_input(theta, false));
    let (lt, rt) = (by_input(ideal, true), by_input(ideal, false));
    let norm = r1 * (max_norm(&l) + max_norm(&r)) + r2 * (max_diff(&l, &lt) + max_diff(&r, &rt)) + db;
    let ops = (8 * n * m) as u64;
    Ok((2.0 * norm * (1.0 + ROUNDING) + ROUNDING, ops))
}

/// Per-neuron constant offsets and a constant bias shift added to `θ̃`.
/// Constant-in-`z` changes move every logit of an input equally, so they
/// leave margins and cross-entropy untouched while tightening the norms.
fn align_offsets(theta: &ModelParams, ideal: &mut ModelParams) {
    let (n, m) = (theta.order, theta.hidden);
    for i in 0..m {
        let kappa = (0..n).map(|z| theta.w_u[z * m + i] - ideal.w_u[z * m + i]).sum::<f64>() / n as f64;
        for z in 0..n {
            ideal.w_u[z * m + i] += kappa;
        }
    }
    let diffs: Vec<f64> = theta.w_b.iter().zip(&ideal.w_b).map(|(a, b)| a - b).collect();
    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let beta = 0.5 * (lo + hi);
    if beta != 0.0 {
        ideal.bias_enabled = true;
        ideal.w_b.iter_mut().for_each(|b| *b += beta);
    }
}

/// Everything V_irrep computes, kept for loss bounds and reporting.
#[derive(Clone, Debug)]
pub struct IrrepCertificate {
    pub report: VerifierReport,
    /// `θ̃` with offsets, neuron-aligned with `θ`.
    pub ideal: ModelParams,
    /// Idealized margin after floating-point slack.
    pub margin: f64,
    /// Idealized logits at `(e, e)`.
    pub ideal_logits: Vec<f64>,
    pub slack: f64,
    pub distance: LogitDistance,
}

impl IrrepCertificate {
    /// Lower bounds on the margin of `θ` at every input.
    pub fn pair_margins(&self) -> Vec<f64> {
        (0..self.distance.norm_bound.len()).map(|k| self.margin - self.distance.l(k)).collect()
    }
}

fn margin_at(logits: &[f64], z: usize) -> f64 {
    let other = logits.iter().enumerate().filter(|&(j, _)| j != z).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    logits[z] - other
}

pub fn v_irrep(group: &Group, table: &IrrepTable, theta: &ModelParams, pi: &IrrepInterpretation) -> VerifierReport {
    v_irrep_certificate(group, table, theta, pi).report
}

pub fn v_irrep_certificate(group: &Group, table: &IrrepTable, theta: &ModelParams, pi: &IrrepInterpretation) -> IrrepCertificate {
    let start = Instant::now();
    let n = group.order();
    let m = theta.hidden;
    let idealization = idealize_checked(group, table, theta, pi);
    let mut ideal = idealization.model.params.clone();
    if ideal.hidden != m || ideal.order != n {
        ideal = ModelParams::zeros(theta.group, n, m, false);
    }
    align_offsets(theta, &mut ideal);
    // Bi-equivariance makes one forward pass at (e, e) give the margin
    // everywhere.
    let e = group.identity();
    let ideal_logits = crate::model::forward(&ideal, e, e);
    let margin = margin_at(&ideal_logits, e) - idealization.slack;
    let distance = logit_distance_quadratic(group, theta, &ideal).expect("shapes checked");
    let mut certified = 0;
    let (mut max_l, mut sum_l) = (f64::NEG_INFINITY, 0.0);
    for k in 0..n * n {
        let l = distance.l(k);
        max_l = max_l.max(l);
        sum_l += l;
        if margin > l {
            certified += 1;
        }
    }
    let d2: u64 = pi
        .partitions
        .iter()
        .map(|p| {
            let (k, d) = (p.vectors.len() as u64, p.vectors.first().map_or(0, Vec::len) as u64);
            n as u64 * k * (2 * d * d + k * d)
        })
        .sum();
    let ops = d2 + (m * n * 16) as u64 + (2 * m * n) as u64 + distance.ops + (n * n) as u64;
    let report = VerifierReport {
        verifier: "irrep".into(),
        margin,
        max_l,
        mean_l: sum_l / (n * n) as f64,
        ops,
        validation_failures: idealization.failures.clone(),
        ..Default::default()
    };
    let report = report.finish(certified, n * n, start);
    IrrepCertificate { report, ideal, margin, ideal_logits, slack: idealization.slack, distance }
}

/// One `(H, g)` class of coset-labeled neurons.
struct CosetClass {
    resolved: ResolvedCoset,
    neurons: Vec<usize>,
    /// `min Σ_i relu[w̃_l^i(x) + w̃_r^i(y)]` over `xy ∉ Hg⁻¹`.
    s: f64,
}

pub fn v_coset(group: &Group, theta: &ModelParams, pi: &CosetInterpretation) -> VerifierReport {
    let start = Instant::now();
    let n = group.order();
    let m = theta.hidden;
    let mut failures = Vec::new();
    let mut ops: u64 = 0;
    if pi.neurons.len() != m || pi.group != group.kind() {
        failures.push(CheckFailure {
            check: "shape".into(),
            partition: None,
            neurons: Vec::new(),
            detail: "interpretation does not match the model".into(),
        });
        let report = VerifierReport { verifier: "coset".into(), validation_failures: failures, ..Default::default() };
        return report.finish(0, n * n, start);
    }
    // Steps 1-2: validate subgroups and average over cosets.
    let mut ideal = ModelParams::zeros(theta.group, n, m, false);
    let mut classes: Vec<CosetClass> = Vec::new();
    for (i, label) in pi.neurons.iter().enumerate() {
        let Some(label) = label else { continue };
        let resolved = match resolve_coset_label(group, label) {
            Ok(r) => r,
            Err(e) => {
                failures.push(CheckFailure { check: "subgroup".into(), partition: None, neurons: vec![i], detail: e.to_string() });
                continue;
            }
        };
        ops += (resolved.h.order() * resolved.h.order()) as u64;
        let [wl, wr, wu] = coset_idealize_neuron(group, theta, i, &resolved);
        ops += (2 * n * resolved.h.order() + 2 * n) as u64;
        ideal.w_l[i * n..(i + 1) * n].copy_from_slice(&wl);
        ideal.w_r[i * n..(i + 1) * n].copy_from_slice(&wr);
        for z in 0..n {
            ideal.w_u[z * m + i] = wu[z];
        }
        match classes.iter_mut().find(|c| c.resolved.key == resolved.key) {
            Some(c) => c.neurons.push(i),
            None => classes.push(CosetClass { resolved, neurons: vec![i], s: f64::INFINITY }),
        }
    }
    // Step 3: s(H, g) over pairs of coset representatives.
    for class in &mut classes {
        let right = crate::group::enumerate_cosets(group, &class.resolved.h, crate::group::Side::Right).expect("validated");
        let left = crate::group::enumerate_cosets(group, &class.resolved.k, crate::group::Side::Left).expect("validated");
        for bx in &right.blocks {
            let x = bx[0];
            for by in &left.blocks {
                let y = by[0];
                if class.resolved.target[group.mul(x, y)] {
                    continue;
                }
                let total: f64 = class.neurons.iter().map(|&i| (ideal.w_l[i * n + x] + ideal.w_r[i * n + y]).max(0.0)).sum();
                class.s = class.s.min(total);
            }
        }
        ops += (right.len() * left.len() * class.neurons.len() * 2) as u64;
    }
    // Step 4: per-output margin, pessimized over the inputs with xy = z.
    // lo/hi bracket each idealized activation over those inputs.
    let mut lo = vec![f64::INFINITY; m * n];
    let mut hi = vec![0.0f64; m * n];
    let labeled: Vec<usize> = classes.iter().flat_map(|c| c.neurons.iter().copied()).collect();
    for x in 0..n {
        for y in 0..n {
            let z = group.mul(x, y);
            for &i in &labeled {
                let h = (ideal.w_l[i * n + x] + ideal.w_r[i * n + y]).max(0.0);
                lo[i * n + z] = lo[i * n + z].min(h);
                hi[i * n + z] = hi[i * n + z].max(h);
            }
        }
    }
    ops += (n * n * labeled.len() * 3) as u64;
    let mut margins = vec![f64::INFINITY; n];
    for z in 0..n {
        for zp in 0..n {
            if zp == z {
                continue;
            }
            let mut total = 0.0;
            for class in &classes {
                let mut pess = 0.0;
                let mut min_du = f64::INFINITY;
                for &i in &class.neurons {
                    let du = ideal.w_u[z * m + i] - ideal.w_u[zp * m + i];
                    pess += (du * lo[i * n + z]).min(du * hi[i * n + z]);
                    min_du = min_du.min(du);
                }
                if !class.resolved.target[z] && class.s.is_finite() {
                    // Off Hg⁻¹ every du ≥ 0 by construction of w̃_u.
                    pess = pess.max(class.s * min_du);
                }
                total += pess;
            }
            margins[z] = margins[z].min(total);
        }
    }
    ops += (n * n * labeled.len() * 5) as u64;
    // Step 5: logit distance, then certify outputs whose margin beats the
    // worst L over their inputs.
    align_offsets(theta, &mut ideal);
    let distance = logit_distance_quadratic(group, theta, &ideal).expect("shapes");
    ops += distance.ops;
    let mut worst_l = vec![f64::NEG_INFINITY; n];
    let (mut max_l, mut sum_l) = (f64::NEG_INFINITY, 0.0);
    for x in 0..n {
        for y in 0..n {
            let l = distance.l(x * n + y);
            let z = group.mul(x, y);
            worst_l[z] = worst_l[z].max(l);
            max_l = max_l.max(l);
            sum_l += l;
        }
    }
    let certified_outputs = (0..n).filter(|&z| margins[z] > worst_l[z]).count();
    let report = VerifierReport {
        verifier: "coset".into(),
        margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        max_l,
        mean_l: sum_l / (n * n) as f64,
        ops,
        validation_failures: failures,
        ..Default::default()
    };
    report.finish(certified_outputs * n, n * n, start)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMethod {
    Margin,
    Lipschitz,
    Smooth,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossBoundReport {
    pub method: LossMethod,
    pub bound: f64,
    pub finite: bool,
}

impl LossBoundReport {
    fn new(method: LossMethod, bound: f64) -> Self {
        LossBoundReport { method, bound, finite: bound.is_finite() }
    }
}

/// `−log(e^M / (|G| − 1 + e^M)) = log(1 + (|G| − 1)e^{−M})`.
fn margin_loss(m: f64, order: usize) -> f64 {
    let k = (order - 1) as f64;
    if m >= 0.0 {
        (k * (-m).exp()).ln_1p()
    } else {
        -m + (m.exp() + k).ln()
    }
}

/// Mean over inputs of the cross-entropy implied by a margin lower bound.
pub fn ce_bound_margin(margins: &[f64], order: usize) -> LossBoundReport {
    if margins.is_empty() || order < 2 {
        return LossBoundReport::new(LossMethod::Margin, 0.0);
    }
    let mut sum = crate::model::CompensatedSum::default();
    for &m in margins {
        sum.add(margin_loss(m, order));
    }
    LossBoundReport::new(LossMethod::Margin, sum.value() / margins.len() as f64)
}

/// Loss bounds from a bi-equivariant model's exact loss `base`, the norm
/// of the loss gradient at its logits, and per-input ℓ₂ logit distances.
/// Returns the Lipschitz and smoothness variants.
pub fn ce_bound_from_distances(base: f64, grad_norm: f64, distances: &[f64]) -> [LossBoundReport; 2] {
    let k = distances.len().max(1) as f64;
    let mean: f64 = distances.iter().sum::<f64>() / k;
    let mean_sq: f64 = distances.iter().map(|d| d * d).sum::<f64>() / k;
    [
        LossBoundReport::new(LossMethod::Lipschitz, base + std::f64::consts::SQRT_2 * mean),
        LossBoundReport::new(LossMethod::Smooth, base + grad_norm * mean + 0.25 * mean_sq),
    ]
}

/// Loss bound through a bi-equivariant `θ̃`: its loss is read off one forward
/// pass, then widened by ℓ₂ logit distances. Reports the smaller variant.
/// `slack` bounds the per-logit deviation of `θ̃` from exact
/// bi-equivariance.
pub fn ce_bound_smooth(group: &Group, theta: &ModelParams, ideal: &ModelParams, slack: f64) -> Result<LossBoundReport> {
    check_shapes(theta, ideal)?;
    let n = group.order();
    let m = theta.hidden;
    let e = group.identity();
    let logits = crate::model::forward(ideal, e, e);
    let base = cross_entropy_row(&logits, e);
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let grad_norm = logits
        .iter()
        .enumerate()
        .map(|(z, l)| {
            let p = (l - mx).exp() / total;
            let g = if z == e { p - 1.0 } else { p };
            g * g
        })
        .sum::<f64>()
        .sqrt();
    let u = unembed_matrix(theta);
    let ut = unembed_matrix(ideal);
    let s1 = svd(&u.sub(&ut))?.spectral_norm();
    let s2 = svd(&ut)?.spectral_norm();
    let db = norm2(&theta.w_b.iter().zip(&ideal.w_b).map(|(a, b)| a - b).collect::<Vec<_>>());
    let equivariance = slack * (n as f64).sqrt();
    let (l, r) = (theta.left_by_input(), theta.right_by_input());
    let (lt, rt) = (ideal.left_by_input(), ideal.right_by_input());
    let mut distances = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            let (mut hh, mut dd) = (0.0, 0.0);
            for i in 0..m {
                let h = (l[x * m + i] + r[y * m + i]).max(0.0);
                let ht = (lt[x * m + i] + rt[y * m + i]).max(0.0);
                hh += h * h;
                dd += (h - ht) * (h - ht);
            }
            let d = s1 * hh.sqrt() + s2 * dd.sqrt() + db + equivariance;
            distances.push(d * (1.0 + ROUNDING) + ROUNDING);
        }
    }
    let [lip, smooth] = ce_bound_from_distances(base, grad_norm, &distances);
    Ok(if smooth.bound <= lip.bound { smooth } else { lip })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupKind;
    use crate::idealized::{interpretation_of, materialize, CircuitSpec, RhoSetCircuitSpec};
    use crate::model::{accuracy, cross_entropy, forward};
    use crate::rep::{perm_rep_on_cosets, rho_set_from_action};

    fn s4() -> (Group, IrrepTable) {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        (g, t)
    }

    fn circuit(g: &Group, t: &IrrepTable) -> crate::idealized::IdealizedModel {
        let h = g.point_stabilizer(3).unwrap();
        let action = perm_rep_on_cosets(g, &h).unwrap();
        let irrep = t.irreps.iter().find(|r| r.dim == 3 && rho_set_from_action(&action, r).is_ok()).unwrap();
        let set = rho_set_from_action(&action, irrep).unwrap();
        let a = crate::linalg::normalized(&[0.3, -0.5, 0.8]).unwrap();
        materialize(g, t, vec![CircuitSpec::RhoSet(RhoSetCircuitSpec { irrep: irrep.name.clone(), rho_set: set.vectors, a, c: 1.0 })]).unwrap()
    }

    #[test]
    fn brute_cases() {
        let (g, t) = s4();
        let model = circuit(&g, &t);
        assert_eq!(v_brute(&g, &model.params).bound, 1.0);
        let zero = ModelParams::zeros(g.kind(), 24, 8, false);
        assert_eq!(v_brute(&g, &zero).bound, 0.0);
        let p = ModelParams::random(&g, 16, true, 2);
        assert_eq!(v_brute(&g, &p).bound, accuracy(&p, &Dataset::full(&g)));
    }

    #[test]
    fn irrep_fixed_point() {
        let (g, t) = s4();
        let model = circuit(&g, &t);
        let pi = interpretation_of(&model, g.kind());
        let cert = v_irrep_certificate(&g, &t, &model.params, &pi);
        assert_eq!(cert.report.bound, 1.0);
        assert!(cert.margin > 0.0);
        assert!(cert.report.max_l < 1e-8, "{}", cert.report.max_l);
        assert!(cert.report.validation_failures.is_empty());
        // The margin is the same at every input.
        for (x, y) in [(3, 7), (11, 0), (23, 19)] {
            let l = forward(&cert.ideal, x, y);
            assert!((margin_at(&l, g.mul(x, y)) - cert.margin).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_distance_cases() {
        let (g, _) = s4();
        let p = ModelParams::random(&g, 8, true, 5);
        let same = logit_distance_quadratic(&g, &p, &p).unwrap();
        assert!((0..576).all(|k| same.l(k).abs() < 1e-9));
        let mut q = p.clone();
        q.w_b[5] += 0.25;
        let d = logit_distance_quadratic(&g, &p, &q).unwrap();
        for x in 0..24 {
            for y in 0..24 {
                let k = x * 24 + y;
                assert!((d.norm_bound[k] - 0.25).abs() < 1e-9);
                let want = if g.mul(x, y) == 5 { 0.5 } else { 0.25 };
                assert!((d.l(k) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn margin_loss_cases() {
        let r = ce_bound_margin(&[0.0; 10], 120);
        assert_eq!(r.bound, (120f64).ln());
        assert!(ce_bound_margin(&[800.0], 120).bound < 1e-300);
        assert!(ce_bound_margin(&[-800.0], 120).bound.is_finite());
    }

    #[test]
    fn smooth_bound_is_exact_for_identical_models() {
        let (g, t) = s4();
        let model = circuit(&g, &t);
        let exact = cross_entropy(&model.params, &Dataset::full(&g));
        let b = ce_bound_smooth(&g, &model.params, &model.params, 0.0).unwrap();
        assert!((b.bound - exact).abs() < 1e-8, "{} vs {exact}", b.bound);
    }

    #[test]
    fn lipschitz_perturbation_is_bounded() {
        let eps = 0.3;
        let mut d = vec![0.0; 576];
        d[17] = eps;
        let [lip, _] = ce_bound_from_distances(1.0, 0.5, &d);
        assert!(lip.bound - 1.0 <= std::f64::consts::SQRT_2 * eps / 576.0 + 1e-15);
    }
}
