//! Exact ρ-set and sign circuits, idealization of trained weights from an
//! interpretation, and the bi-equivariance and separation diagnostics.
//!
//! A ρ-set circuit with irrep `ρ`, ρ-set `B`, unit vector `a` and
//! coefficient `c` has one neuron per ordered pair `(b, b′) ∈ B × B`:
//!
//! `w_l(x) = bᵀρ(x)a`, `w_r(y) = −aᵀρ(y)b′`, `w_u(z) = −c·bᵀρ(z)b′`.
//!
//! Summed over all pairs, its logits depend only on `x⁻¹zy⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Group, GroupKind, Subgroup};
use crate::interpret::{CosetInterpretation, CosetLabel, IrrepInterpretation};
use crate::linalg::{dot, norm2, Matrix, TOL};
use crate::model::ModelParams;
use crate::rep::{character_inner, Irrep, IrrepTable, RhoSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSetCircuitSpec {
    pub irrep: String,
    pub rho_set: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub c: f64,
}

/// Two-element circuit on the sign irrep. `c_plus` weights the pairs with
/// `b′ = −b`, `c_minus` the pairs with `b′ = b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCircuitSpec {
    pub c_plus: f64,
    pub c_minus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CircuitSpec {
    RhoSet(RhoSetCircuitSpec),
    Sign(SignCircuitSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronOrigin {
    pub circuit: usize,
    /// Indices of `(b, b′)` in the circuit's ρ-set.
    pub pair: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct IdealizedModel {
    pub circuits: Vec<CircuitSpec>,
    pub params: ModelParams,
    /// `None` for dead (zeroed) neurons.
    pub neuron_origin: Vec<Option<NeuronOrigin>>,
}

impl IdealizedModel {
    /// The `circuits` section of a weight file.
    pub fn circuits_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.circuits).expect("circuit specs serialize")
    }
}

/// Neurons of one circuit: left and right rows, output columns, and the
/// bias the circuit needs.
#[derive(Clone, Debug)]
pub struct NeuronBlock {
    pub order: usize,
    pub w_l: Vec<Vec<f64>>,
    pub w_r: Vec<Vec<f64>>,
    pub w_u: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl NeuronBlock {
    pub fn len(&self) -> usize {
        self.w_l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_l.is_empty()
    }
}

/// `(w_l, w_r, w_u)` of the pair neuron with embedding scale `s` and output
/// scale `t`.
pub fn pair_neuron(irrep: &Irrep, b: &[f64], b_prime: &[f64], a: &[f64], s: f64, t: f64) -> [Vec<f64>; 3] {
    let n = irrep.order();
    let mut wl = Vec::with_capacity(n);
    let mut wr = Vec::with_capacity(n);
    let mut wu = Vec::with_capacity(n);
    for g in 0..n {
        wl.push(s * irrep.bilinear(b, g, a));
        wr.push(-s * irrep.bilinear(a, g, b_prime));
        wu.push(-t * irrep.bilinear(b, g, b_prime));
    }
    [wl, wr, wu]
}

fn lookup<'t>(table: &'t IrrepTable, name: &str) -> Result<&'t Irrep> {
    table.get(name).ok_or_else(|| Error::Validation(format!("unknown irrep {name}")))
}

impl RhoSetCircuitSpec {
    pub fn validate(&self, table: &IrrepTable) -> Result<RhoSet> {
        let irrep = lookup(table, &self.irrep)?;
        if irrep.dim < 2 {
            return Err(Error::Validation(format!("{} is one-dimensional; use a sign circuit", irrep.name)));
        }
        if self.a.len() != irrep.dim || (norm2(&self.a) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("a must be a unit vector of the irrep's dimension".into()));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Validation(format!("coefficient must be positive, got {}", self.c)));
        }
        RhoSet::from_vectors(irrep, self.rho_set.clone(), TOL.rho_set_exact)
    }
}

pub fn build_rho_set_circuit(spec: &RhoSetCircuitSpec, table: &IrrepTable) -> Result<NeuronBlock> {
    spec.validate(table)?;
    let irrep = lookup(table, &spec.irrep)?;
    let k = spec.rho_set.len();
    let mut block = NeuronBlock {
        order: irrep.order(),
        w_l: Vec::with_capacity(k * k),
        w_r: Vec::with_capacity(k * k),
        w_u: Vec::with_capacity(k * k),
        bias: vec![0.0; irrep.order()],
        pairs: Vec::with_capacity(k * k),
    };
    for i in 0..k {
        for j in 0..k {
            let [wl, wr, wu] = pair_neuron(irrep, &spec.rho_set[i], &spec.rho_set[j], &spec.a, 1.0, spec.c);
            block.w_l.push(wl);
            block.w_r.push(wr);
            block.w_u.push(wu);
            block.pairs.push((i, j));
        }
    }
    Ok(block)
}

/// Four pair neurons on `B = {+1, −1}` plus the bias `(c₋ − c₊)·sgn(z)`,
/// which together output `(c₊ + c₋)·sgn(x⁻¹zy⁻¹)`.
pub fn build_sign_circuit(spec: &SignCircuitSpec, table: &IrrepTable) -> Result<NeuronBlock> {
    if !(spec.c_plus.is_finite() && spec.c_minus.is_finite()) {
        return Err(Error::Validation("sign coefficients must be finite".into()));
    }
    let sign = table.sign().ok_or_else(|| Error::Unsupported(format!("{} has no sign irrep", table.kind)))?;
    let n = sign.order();
    let set = [[1.0], [-1.0]];
    let mut block = NeuronBlock {
        order: n,
        w_l: Vec::new(),
        w_r: Vec::new(),
        w_u: Vec::new(),
        bias: sign.character.iter().map(|&s| (spec.c_minus - spec.c_plus) * s).collect(),
        pairs: Vec::new(),
    };
    for i in 0..2 {
        for j in 0..2 {
            let c = if i == j { spec.c_minus } else { spec.c_plus };
            let [wl, wr, wu] = pair_neuron(sign, &set[i], &set[j], &[1.0], 1.0, c);
            block.w_l.push(wl);
            block.w_r.push(wr);
            block.w_u.push(wu);
            block.pairs.push((i, j));
        }
    }
    Ok(block)
}

/// Stacks circuits into one model; the bias is enabled only when some
/// circuit needs it.
pub fn materialize(group: &Group, table: &IrrepTable, circuits: Vec<CircuitSpec>) -> Result<IdealizedModel> {
    let blocks: Vec<NeuronBlock> = circuits
        .iter()
        .map(|c| match c {
            CircuitSpec::RhoSet(s) => build_rho_set_circuit(s, table),
            CircuitSpec::Sign(s) => build_sign_circuit(s, table),
        })
        .collect::<Result<_>>()?;
    let n = group.order();
    let m: usize = blocks.iter().map(NeuronBlock::len).sum();
    let bias_enabled = blocks.iter().any(|b| b.bias.iter().any(|&v| v != 0.0));
    let mut params = ModelParams::zeros(group.kind(), n, m, bias_enabled);
    let mut origin = Vec::with_capacity(m);
    let mut i = 0;
    for (ci, block) in blocks.iter().enumerate() {
        for (k, pair) in block.pairs.iter().enumerate() {
            params.w_l[i * n..(i + 1) * n].copy_from_slice(&block.w_l[k]);
            params.w_r[i * n..(i + 1) * n].copy_from_slice(&block.w_r[k]);
            for z in 0..n {
                params.w_u[z * m + i] = block.w_u[k][z];
            }
            origin.push(Some(NeuronOrigin { circuit: ci, pair: *pair }));
            i += 1;
        }
        for z in 0..n {
            params.w_b[z] += block.bias[z];
        }
    }
    Ok(IdealizedModel { circuits, params, neuron_origin: origin })
}

/// `Z(a, B) = −c Σ_{b,b′} relu[aᵀ(b − b′)] b b′ᵀ`, so that the circuit's
/// logit is `⟨ρ(x⁻¹zy⁻¹), Z⟩`.
pub fn hyperplane_matrix(rho_set: &[Vec<f64>], a: &[f64], c: f64) -> Matrix {
    let d = a.len();
    let mut z = Matrix::zeros(d, d);
    for b in rho_set {
        for bp in rho_set {
            let w = (dot(a, b) - dot(a, bp)).max(0.0);
            if w == 0.0 {
                continue;
            }
            for r in 0..d {
                for col in 0..d {
                    z[(r, col)] -= c * w * b[r] * bp[col];
                }
            }
        }
    }
    z
}

/// Frobenius inner product `⟨ρ(g), Z⟩`.
pub fn hyperplane_logit(irrep: &Irrep, g: usize, z: &Matrix) -> f64 {
    dot(irrep.rho(g), z.as_slice())
}

#[derive(Clone, Debug)]
pub struct SeparationMargin {
    /// `φ(e) − max_{z≠e} φ(z)`.
    pub margin: f64,
    pub phi: Vec<f64>,
    /// Whether the ρ-set's permutation action is `ρ ⊕ trivial`, under which
    /// the margin is guaranteed nonnegative.
    pub certified: bool,
}

/// `φ(z) = ⟨ρ(z), −Σ_{i,j} relu[aᵀ(b_i − b_j)] b_j b_iᵀ⟩` over all `z`.
pub fn separation_margin(group: &Group, irrep: &Irrep, rho_set: &[Vec<f64>], a: &[f64]) -> Result<SeparationMargin> {
    let measured = RhoSet::measure(irrep, rho_set.to_vec())?;
    // φ is the circuit's hyperplane logit at z⁻¹.
    let z = hyperplane_matrix(rho_set, a, 1.0).transpose();
    let phi: Vec<f64> = group.elements().map(|g| hyperplane_logit(irrep, g, &z)).collect();
    let e = group.identity();
    let best_other = group.elements().filter(|&g| g != e).map(|g| phi[g]).fold(f64::NEG_INFINITY, f64::max);
    let margin = if group.order() == 1 { 0.0 } else { phi[e] - best_other };
    Ok(SeparationMargin { margin, phi, certified: certifies_separation(irrep, &measured) })
}

fn certifies_separation(irrep: &Irrep, set: &RhoSet) -> bool {
    if set.deviation > TOL.rho_set_exact
        || set.check_permutations().is_err()
        || !set.is_transitive()
        || set.len() != irrep.dim + 1
    {
        return false;
    }
    let fixed: Vec<f64> = set
        .action_table
        .iter()
        .map(|row| row.iter().enumerate().filter(|(i, &j)| *i == j).count() as f64)
        .collect();
    let ones = vec![1.0; fixed.len()];
    let mult_rho = character_inner(&fixed, &irrep.character) / irrep.character_norm();
    let mult_trivial = character_inner(&fixed, &ones);
    (mult_rho - 1.0).abs() < 1e-6 && (mult_trivial - 1.0).abs() < 1e-6
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivarianceMetric {
    /// Mean over `z` of `std / |mean|` of `f(z | x, y)` over `xy = z`;
    /// NaN when every denominator is degenerate.
    pub value: f64,
    /// Outputs skipped because `|mean| < 1e-12`.
    pub degenerate: usize,
    pub flagged: bool,
}

/// Correct-logit table `f(xy | x, y)`, indexed `[x·|G| + y]`.
pub fn correct_logits(group: &Group, p: &ModelParams) -> Vec<f64> {
    let n = group.order();
    let m = p.hidden;
    let left = p.left_by_input();
    let right = p.right_by_input();
    let mut out = vec![0.0; n * n];
    let mut h = vec![0.0; m];
    for x in 0..n {
        let lx = &left[x * m..(x + 1) * m];
        for y in 0..n {
            let ry = &right[y * m..(y + 1) * m];
            for i in 0..m {
                h[i] = (lx[i] + ry[i]).max(0.0);
            }
            let z = group.mul(x, y);
            out[x * n + y] = p.w_b[z] + dot(&p.w_u[z * m..(z + 1) * m], &h);
        }
    }
    out
}

pub fn equivariance_metric(group: &Group, p: &ModelParams) -> EquivarianceMetric {
    let n = group.order();
    let logits = correct_logits(group, p);
    let mut per_z: Vec<Vec<f64>> = vec![Vec::with_capacity(n); n];
    for x in 0..n {
        for y in 0..n {
            per_z[group.mul(x, y)].push(logits[x * n + y]);
        }
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut degenerate = 0usize;
    for vals in &per_z {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        if mean.abs() < TOL.equivariance_denominator {
            degenerate += 1;
            continue;
        }
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        total += var.sqrt() / mean.abs();
        counted += 1;
    }
    EquivarianceMetric {
        value: if counted == 0 { f64::NAN } else { total / counted as f64 },
        degenerate,
        flagged: degenerate > 0,
    }
}

/// Largest `|f(z | g₁x, yg₂) − f(g₁⁻¹zg₂⁻¹ | x, y)|` over random samples.
pub fn bi_equivariance_defect(group: &Group, p: &ModelParams, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = group.order();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let [g1, g2, x, y, z] = std::array::from_fn(|_| rng.random_range(0..n));
        let lhs = crate::model::forward(p, group.mul(g1, x), group.mul(y, g2))[z];
        let w = group.mul(group.mul(group.inv(g1), z), group.inv(g2));
        let rhs = crate::model::forward(p, x, y)[w];
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// A check of the interpretation that failed, and the neurons it zeroed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckFailure {
    pub check: String,
    pub partition: Option<usize>,
    pub neurons: Vec<usize>,
    pub detail: String,
}

/// Neuron-aligned idealization of a trained model.
#[derive(Clone, Debug)]
pub struct Idealization {
    pub model: IdealizedModel,
    pub failures: Vec<CheckFailure>,
    /// Neurons whose idealized weights come from the interpretation.
    pub trusted: Vec<bool>,
    /// Upper bound on how far the idealized margin at any input can fall
    /// below the margin at `(e, e)` through floating-point error in the
    /// ρ-sets.
    pub slack: f64,
}

const CONSTANCY_TOL: f64 = 1e-9;

/// Builds `θ̃` from `π`, running the interpretation checks. Neurons that
/// fail a check are zeroed rather than trusted, so `θ̃` is bi-equivariant
/// whatever `π` claims.
pub fn idealize_checked(group: &Group, table: &IrrepTable, theta: &ModelParams, pi: &IrrepInterpretation) -> Idealization {
    let n = group.order();
    let m = theta.hidden;
    let mut failures = Vec::new();
    let mut trusted = vec![false; m];
    let mut fail = |check: &str, partition: Option<usize>, neurons: Vec<usize>, detail: String| {
        failures.push(CheckFailure { check: check.into(), partition, neurons, detail });
    };
    if pi.neurons.len() != m {
        fail("shape", None, Vec::new(), format!("interpretation has {} neurons, model has {m}", pi.neurons.len()));
    }
    if pi.group != group.kind() {
        fail("shape", None, Vec::new(), format!("interpretation is for {}, model is {}", pi.group, group.kind()));
    }
    let shape_ok = pi.neurons.len() == m && pi.group == group.kind();

    // Per-neuron well-formedness.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); pi.partitions.len()];
    if shape_ok {
        for (i, label) in pi.neurons.iter().enumerate() {
            let Some(l) = label else { continue };
            let Some(part) = pi.partitions.get(l.partition) else {
                fail("label", None, vec![i], format!("partition {} does not exist", l.partition));
                continue;
            };
            let k = part.vectors.len();
            if part.irrep != l.irrep || l.b >= k || l.b_prime >= k {
                fail("label", Some(l.partition), vec![i], "irrep or ρ-set index mismatch".into());
                continue;
            }
            if !(l.scale.is_finite() && l.scale > 0.0 && l.coefficient.is_finite()) {
                fail("label", Some(l.partition), vec![i], "scale must be positive and coefficient finite".into());
                continue;
            }
            members[l.partition].push(i);
        }
    }

    let mut params = ModelParams::zeros(group.kind(), n, m, false);
    let mut origin: Vec<Option<NeuronOrigin>> = vec![None; m];
    let mut circuits = Vec::new();
    let mut slack = 0.0;
    let mut bias = vec![0.0; n];

    for (q, part) in pi.partitions.iter().enumerate() {
        let neurons = &members[q];
        if neurons.is_empty() {
            continue;
        }
        let labels: Vec<_> = neurons.iter().map(|&i| pi.neurons[i].as_ref().expect("member")).collect();
        // (1) the partition is a ρ-set.
        let Some(irrep) = table.get(&part.irrep) else {
            fail("rho_set", Some(q), neurons.clone(), format!("unknown irrep {}", part.irrep));
            continue;
        };
        let set = match RhoSet::from_vectors(irrep, part.vectors.clone(), TOL.rho_set_exact) {
            Ok(s) => s,
            Err(e) => {
                fail("rho_set", Some(q), neurons.clone(), e.to_string());
                continue;
            }
        };
        // (2) one shared unit vector a.
        let a = &labels[0].a;
        let a_ok = a.len() == irrep.dim
            && (norm2(a) - 1.0).abs() <= CONSTANCY_TOL
            && labels.iter().all(|l| l.a.len() == a.len() && crate::linalg::dist2(&l.a, a) <= CONSTANCY_TOL);
        if !a_ok {
            fail("a_constant", Some(q), neurons.clone(), "projection vectors differ or are not unit".into());
            continue;
        }
        // (3)/(4) pair coefficient sums.
        let k = set.len();
        let mut sums = vec![0.0; k * k];
        let mut covered = vec![false; k * k];
        for l in &labels {
            sums[l.b * k + l.b_prime] += l.coefficient;
            covered[l.b * k + l.b_prime] = true;
        }
        if covered.iter().any(|&c| !c) {
            let missing = covered.iter().filter(|&&c| !c).count();
            fail("coverage", Some(q), neurons.clone(), format!("{missing} of {} (b, b′) pairs have no neuron", k * k));
            continue;
        }
        let scale = sums.iter().fold(0.0f64, |acc, s| acc.max(s.abs())).max(f64::MIN_POSITIVE);
        let close = |x: f64, y: f64| (x - y).abs() <= CONSTANCY_TOL * scale;
        let spec = if irrep.dim == 1 && k == 2 {
            let (same, cross) = (sums[0], sums[1]);
            if !(close(sums[3], same) && close(sums[2], cross)) {
                fail("sign_coefficients", Some(q), neurons.clone(), "c₊ or c₋ differs between its two pairs".into());
                continue;
            }
            let spec = SignCircuitSpec { c_plus: cross, c_minus: same };
            // The pair sums carry a factor |β|³ for the ρ-set {β, −β}.
            let cube = part.vectors[0][0].abs().powi(3);
            for (z, bz) in bias.iter_mut().enumerate() {
                *bz += (spec.c_minus - spec.c_plus) * cube * irrep.character[z];
            }
            CircuitSpec::Sign(spec)
        } else {
            if !sums.iter().all(|&s| close(s, sums[0])) {
                fail("coefficients", Some(q), neurons.clone(), "pair coefficient sums are not constant".into());
                continue;
            }
            CircuitSpec::RhoSet(RhoSetCircuitSpec { irrep: irrep.name.clone(), rho_set: part.vectors.clone(), a: a.clone(), c: sums[0] })
        };
        let ci = circuits.len();
        circuits.push(spec);
        let bmax = part.vectors.iter().map(|v| norm2(v)).fold(0.0, f64::max);
        for (&i, l) in neurons.iter().zip(&labels) {
            let [wl, wr, wu] = pair_neuron(irrep, &part.vectors[l.b], &part.vectors[l.b_prime], a, l.scale, l.coefficient / l.scale);
            params.w_l[i * n..(i + 1) * n].copy_from_slice(&wl);
            params.w_r[i * n..(i + 1) * n].copy_from_slice(&wr);
            for z in 0..n {
                params.w_u[z * m + i] = wu[z];
            }
            origin[i] = Some(NeuronOrigin { circuit: ci, pair: (l.b, l.b_prime) });
            trusted[i] = true;
            // Each logit of a pair neuron moves by at most |c|·(8‖b‖²·dev)
            // when the ρ-set is only permuted up to `dev`.
            let per_logit = l.coefficient.abs() * (8.0 * (bmax + set.deviation).powi(2) * (set.deviation + 1e-12) + 1e-12);
            slack += 2.0 * per_logit;
        }
    }
    if bias.iter().any(|&b| b != 0.0) {
        params.bias_enabled = true;
        params.w_b = bias;
    }
    Idealization { model: IdealizedModel { circuits, params, neuron_origin: origin }, failures, trusted, slack }
}

/// Strict idealization: any failed check is an error naming it.
pub fn idealize_from_interpretation(
    group: &Group,
    table: &IrrepTable,
    theta: &ModelParams,
    pi: &IrrepInterpretation,
) -> Result<IdealizedModel> {
    let out = idealize_checked(group, table, theta, pi);
    if let Some(f) = out.failures.first() {
        return Err(Error::Validation(format!("check {} failed: {}", f.check, f.detail)));
    }
    Ok(out.model)
}

/// A coset label resolved against the group.
#[derive(Clone, Debug)]
pub struct ResolvedCoset {
    pub h: Subgroup,
    pub g: usize,
    pub k: Subgroup,
    /// Membership mask of `Hg⁻¹`, where the neuron is meant to be silent.
    pub target: Vec<bool>,
    /// `(H, smallest element of gH)`: labels with equal keys describe the
    /// same `(H, Hg⁻¹, K)`.
    pub key: (Vec<usize>, usize),
}

pub fn resolve_coset_label(group: &Group, label: &CosetLabel) -> Result<ResolvedCoset> {
    if label.g >= group.order() {
        return Err(Error::Validation(format!("element {} out of range", label.g)));
    }
    let h = Subgroup::new(group, label.subgroup.clone())?;
    let k = h.conjugate(group, label.g);
    let ginv = group.inv(label.g);
    let mut target = vec![false; group.order()];
    for &x in h.members() {
        target[group.mul(x, ginv)] = true;
    }
    let rep = h.members().iter().map(|&x| group.mul(label.g, x)).min().expect("nonempty");
    Ok(ResolvedCoset { key: (h.members().to_vec(), rep), h, g: label.g, k, target })
}

/// Coset-averaged weights of neuron `i`: `w_l` over `Hx`, `w_r` over `yK`,
/// and `w_u` flattened to its mean off `Hg⁻¹` and capped by it on `Hg⁻¹`.
pub fn coset_idealize_neuron(group: &Group, p: &ModelParams, i: usize, c: &ResolvedCoset) -> [Vec<f64>; 3] {
    let n = group.order();
    let wl = p.left_row(i);
    let wr = p.right_row(i);
    let wu = p.unembed_col(i);
    let hsize = c.h.order() as f64;
    let left: Vec<f64> = (0..n).map(|x| c.h.members().iter().map(|&h| wl[group.mul(h, x)]).sum::<f64>() / hsize).collect();
    let right: Vec<f64> = (0..n).map(|y| c.k.members().iter().map(|&k| wr[group.mul(y, k)]).sum::<f64>() / hsize).collect();
    let outside: Vec<f64> = (0..n).filter(|&z| !c.target[z]).map(|z| wu[z]).collect();
    let unembed = if outside.is_empty() {
        wu
    } else {
        let mean = outside.iter().sum::<f64>() / outside.len() as f64;
        (0..n).map(|z| if c.target[z] { wu[z].min(mean) } else { mean }).collect()
    };
    [left, right, unembed]
}

/// Coset idealization of every labeled neuron; unlabeled neurons are
/// zeroed and the bias is dropped.
pub fn coset_idealize(group: &Group, theta: &ModelParams, pi: &CosetInterpretation) -> Result<ModelParams> {
    if pi.neurons.len() != theta.hidden {
        return Err(Error::Validation("interpretation and model disagree on m".into()));
    }
    let n = group.order();
    let m = theta.hidden;
    let mut out = ModelParams::zeros(theta.group, n, m, theta.bias_enabled);
    for (i, label) in pi.neurons.iter().enumerate() {
        let Some(label) = label else { continue };
        let resolved = resolve_coset_label(group, label)?;
        let [wl, wr, wu] = coset_idealize_neuron(group, theta, i, &resolved);
        out.w_l[i * n..(i + 1) * n].copy_from_slice(&wl);
        out.w_r[i * n..(i + 1) * n].copy_from_slice(&wr);
        for z in 0..n {
            out.w_u[z * m + i] = wu[z];
        }
    }
    Ok(out)
}

/// The one-partition interpretation that labels a materialized circuit
/// model exactly, for round-trip checks.
pub fn interpretation_of(model: &IdealizedModel, group: GroupKind) -> IrrepInterpretation {
    use crate::interpret::{NeuronLabel, RhoSetPartition};
    let mut partitions = Vec::new();
    let mut sign = None;
    for c in &model.circuits {
        match c {
            CircuitSpec::RhoSet(s) => partitions.push(RhoSetPartition { irrep: s.irrep.clone(), vectors: s.rho_set.clone() }),
            CircuitSpec::Sign(s) => {
                sign = Some(*s);
                partitions.push(RhoSetPartition { irrep: "1d-1".into(), vectors: vec![vec![1.0], vec![-1.0]] })
            }
        }
    }
    let neurons = model
        .neuron_origin
        .iter()
        .map(|o| {
            o.map(|o| {
                let (irrep, a, coefficient) = match &model.circuits[o.circuit] {
                    CircuitSpec::RhoSet(s) => (s.irrep.clone(), s.a.clone(), s.c),
                    CircuitSpec::Sign(s) => ("1d-1".into(), vec![1.0], if o.pair.0 == o.pair.1 { s.c_minus } else { s.c_plus }),
                };
                NeuronLabel { irrep, partition: o.circuit, a, b: o.pair.0, b_prime: o.pair.1, scale: 1.0, coefficient }
            })
        })
        .collect();
    IrrepInterpretation { group, neurons, partitions, sign }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{accuracy, forward, Dataset};
    use crate::rep::{perm_rep_on_cosets, rho_set_from_action};

    fn standard(group: &Group, table: &IrrepTable) -> (String, Vec<Vec<f64>>) {
        let n = group.degree().unwrap();
        let h = group.point_stabilizer(n - 1).unwrap();
        let action = perm_rep_on_cosets(group, &h).unwrap();
        let irrep = table.irreps.iter().find(|r| r.dim == n - 1 && rho_set_from_action(&action, r).is_ok()).unwrap();
        (irrep.name.clone(), rho_set_from_action(&action, irrep).unwrap().vectors)
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        crate::linalg::normalized(&v).unwrap()
    }

    #[test]
    fn s4_circuit_is_exact() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (irrep, set) = standard(&g, &t);
        let spec = RhoSetCircuitSpec { irrep, rho_set: set, a: unit(vec![0.3, -0.7, 0.2]), c: 1.5 };
        let model = materialize(&g, &t, vec![CircuitSpec::RhoSet(spec.clone())]).unwrap();
        assert_eq!(model.params.hidden, 16);
        assert_eq!(accuracy(&model.params, &Dataset::full(&g)), 1.0);
        assert!(bi_equivariance_defect(&g, &model.params, 300, 1) < 1e-9);
        let eq = equivariance_metric(&g, &model.params);
        assert!(eq.value < 1e-6 && !eq.flagged, "{eq:?}");
        // Hyperplane form at every input.
        let z = hyperplane_matrix(&spec.rho_set, &spec.a, spec.c);
        let irrep = t.get(&spec.irrep).unwrap();
        for x in 0..24 {
            for y in [0, 5, 17] {
                let logits = forward(&model.params, x, y);
                for (w, &l) in logits.iter().enumerate() {
                    let arg = g.mul(g.mul(g.inv(x), w), g.inv(y));
                    assert!((l - hyperplane_logit(irrep, arg, &z)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn diagonal_pairs_are_silent_at_identity() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (irrep, set) = standard(&g, &t);
        let c = 2.0;
        let spec = RhoSetCircuitSpec { irrep, rho_set: set.clone(), a: unit(vec![1.0, 0.5, 0.25]), c };
        let block = build_rho_set_circuit(&spec, &t).unwrap();
        let e = g.identity();
        for (k, &(i, j)) in block.pairs.iter().enumerate() {
            if i == j {
                assert!((block.w_u[k][e] + c * dot(&set[i], &set[i])).abs() < 1e-12);
                assert!((block.w_l[k][e] + block.w_r[k][e]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_circuit_outputs() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let spec = SignCircuitSpec { c_plus: 0.7, c_minus: 1.9 };
        let model = materialize(&g, &t, vec![CircuitSpec::Sign(spec)]).unwrap();
        let sgn = |w: usize| g.sign(w).unwrap();
        let transposition = (0..24).find(|&w| sgn(w) < 0.0 && g.element_order(w) == 2).unwrap();
        for x in 0..24 {
            for y in 0..24 {
                let logits = forward(&model.params, x, y);
                let xy = g.mul(x, y);
                assert!((logits[xy] - 2.6).abs() < 1e-12);
                assert!((logits[g.mul(xy, transposition)] + 2.6).abs() < 1e-12);
            }
        }
        let zero = materialize(&g, &t, vec![CircuitSpec::Sign(SignCircuitSpec { c_plus: 0.0, c_minus: 0.0 })]).unwrap();
        assert!(zero.params.w_u.iter().chain(&zero.params.w_b).all(|&v| v == 0.0));
        let z53 = Group::new(GroupKind::Cyclic(53)).unwrap();
        let t53 = IrrepTable::new(&z53).unwrap();
        assert!(matches!(build_sign_circuit(&spec, &t53), Err(Error::Unsupported(_))));
    }

    #[test]
    fn invalid_rho_set_is_rejected() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (irrep, mut set) = standard(&g, &t);
        set.pop();
        let spec = RhoSetCircuitSpec { irrep, rho_set: set, a: vec![1.0, 0.0, 0.0], c: 1.0 };
        assert!(build_rho_set_circuit(&spec, &t).is_err());
    }

    #[test]
    fn separation_margin_cases() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (name, set) = standard(&g, &t);
        let irrep = t.get(&name).unwrap();
        let zero = separation_margin(&g, irrep, &set, &[0.0; 3]).unwrap();
        assert_eq!(zero.margin, 0.0);
        assert!(zero.phi.iter().all(|&p| p == 0.0));
        let sm = separation_margin(&g, irrep, &set, &unit(vec![0.2, 0.9, -0.4])).unwrap();
        assert!(sm.certified && sm.margin > 0.0);
        // Brute force: the circuit's logits at (e, e) have the same margin.
        let spec = RhoSetCircuitSpec { irrep: name.clone(), rho_set: set.clone(), a: unit(vec![0.2, 0.9, -0.4]), c: 1.0 };
        let model = materialize(&g, &t, vec![CircuitSpec::RhoSet(spec)]).unwrap();
        let l = forward(&model.params, 0, 0);
        let other = (1..24).map(|z| l[z]).fold(f64::NEG_INFINITY, f64::max);
        assert!((l[0] - other - sm.margin).abs() < 1e-9);
    }

    #[test]
    fn materialized_interpretation_is_a_fixed_point() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (irrep, set) = standard(&g, &t);
        let circuits = vec![
            CircuitSpec::RhoSet(RhoSetCircuitSpec { irrep, rho_set: set, a: unit(vec![0.1, 0.2, 0.3]), c: 1.0 }),
            CircuitSpec::Sign(SignCircuitSpec { c_plus: 0.4, c_minus: 0.1 }),
        ];
        let model = materialize(&g, &t, circuits).unwrap();
        let pi = interpretation_of(&model, g.kind());
        let again = idealize_from_interpretation(&g, &t, &model.params, &pi).unwrap();
        for (u, v) in [(&again.params.w_l, &model.params.w_l), (&again.params.w_r, &model.params.w_r), (&again.params.w_u, &model.params.w_u), (&again.params.w_b, &model.params.w_b)] {
            assert!(u.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let dead = IrrepInterpretation::all_dead(g.kind(), model.params.hidden);
        let zero = idealize_from_interpretation(&g, &t, &model.params, &dead).unwrap();
        assert!(zero.params.w_u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broken_coverage_zeroes_partition() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let (irrep, set) = standard(&g, &t);
        let spec = RhoSetCircuitSpec { irrep, rho_set: set, a: unit(vec![0.1, 0.2, 0.3]), c: 1.0 };
        let model = materialize(&g, &t, vec![CircuitSpec::RhoSet(spec)]).unwrap();
        let mut pi = interpretation_of(&model, g.kind());
        pi.neurons[3] = None;
        let out = idealize_checked(&g, &t, &model.params, &pi);
        assert_eq!(out.failures[0].check, "coverage");
        assert!(out.trusted.iter().all(|&t| !t));
        assert!(idealize_from_interpretation(&g, &t, &model.params, &pi).is_err());
    }

    #[test]
    fn coset_idealization_cases() {
        let g = Group::new(GroupKind::Symmetric(5)).unwrap();
        let p = ModelParams::random(&g, 4, false, 3);
        let trivial = CosetLabel { subgroup: vec![g.identity()], g: 0, name: String::new() };
        let a5 = CosetLabel { subgroup: g.even_subgroup().unwrap().members().to_vec(), g: 7, name: "A5".into() };
        let pi = CosetInterpretation { group: g.kind(), neurons: vec![Some(trivial.clone()), Some(a5), None, Some(trivial)] };
        let out = coset_idealize(&g, &p, &pi).unwrap();
        assert_eq!(out.left_row(0), p.left_row(0));
        assert_eq!(out.right_row(0), p.right_row(0));
        let mut vals: Vec<f64> = out.left_row(1).to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert!(vals.len() <= 2);
        assert!(out.left_row(2).iter().all(|&v| v == 0.0));
        // Idempotent on coset-constant weights.
        let again = coset_idealize(&g, &out, &pi).unwrap();
        assert!(again.w_l.iter().zip(&out.w_l).all(|(a, b)| (a - b).abs() < 1e-12));
        let three_cycle = g.elements().find(|&x| g.element_order(x) == 3).unwrap();
        let bad = CosetInterpretation {
            group: g.kind(),
            neurons: vec![Some(CosetLabel { subgroup: vec![0, three_cycle], g: 0, name: String::new() }), None, None, None],
        };
        assert!(coset_idealize(&g, &p, &bad).is_err());
    }

    #[test]
    fn random_model_is_not_equivariant() {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        for seed in 0..5 {
            let p = ModelParams::random(&g, 32, true, seed);
            assert!(equivariance_metric(&g, &p).value > 0.1);
        }
        let zero = ModelParams::zeros(g.kind(), 24, 4, false);
        let eq = equivariance_metric(&g, &zero);
        assert!(eq.flagged && eq.value.is_nan());
    }
}
