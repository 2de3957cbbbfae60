//! Interpretation strings and their extraction from trained weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::group::{describe_subgroup, enumerate_cosets, enumerate_subgroups, Group, GroupKind, Side, Subgroup};
use crate::idealized::{CircuitSpec, RhoSetCircuitSpec, SignCircuitSpec};
use crate::linalg::{dist2, dot, kmeans, least_squares, normalized, silhouette, svd, Matrix};
use crate::model::ModelParams;
use crate::rep::{project_onto_irrep_span, Irrep, IrrepTable, RhoSet};
use crate::verify::v_irrep;

/// The ρ-set label of one neuron: weights of the form
/// `w_l(x) = s·bᵀρ(x)a`, `w_r(y) = −s·aᵀρ(y)b′`, `w_u(z) = −(c/s)·bᵀρ(z)b′`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronLabel {
    pub irrep: String,
    /// Index into [`IrrepInterpretation::partitions`].
    pub partition: usize,
    pub a: Vec<f64>,
    /// Index of `b` in the partition's ρ-set.
    pub b: usize,
    /// Index of `b′` in the partition's ρ-set.
    pub b_prime: usize,
    /// Embedding scale `s > 0`.
    pub scale: f64,
    /// Output coefficient `c`, the neuron's share of its pair's weight.
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSetPartition {
    pub irrep: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrrepInterpretation {
    pub group: GroupKind,
    pub neurons: Vec<Option<NeuronLabel>>,
    pub partitions: Vec<RhoSetPartition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<SignCircuitSpec>,
}

impl IrrepInterpretation {
    pub fn all_dead(group: GroupKind, m: usize) -> Self {
        IrrepInterpretation { group, neurons: vec![None; m], partitions: Vec::new(), sign: None }
    }

    pub fn labeled(&self) -> usize {
        self.neurons.iter().filter(|n| n.is_some()).count()
    }
}

/// A neuron whose left embedding is constant on the right cosets of `H` and
/// whose right embedding is constant on the left cosets of `K = gHg⁻¹`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosetLabel {
    pub subgroup: Vec<usize>,
    pub g: usize,
    #[serde(default)]
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosetInterpretation {
    pub group: GroupKind,
    pub neurons: Vec<Option<CosetLabel>>,
}

impl CosetInterpretation {
    pub fn labeled(&self) -> usize {
        self.neurons.iter().filter(|n| n.is_some()).count()
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub const ASSIGN_THRESHOLD: f64 = 0.95;
/// Neurons with embedding scale below this are dead.
pub const DEAD_SCALE: f64 = 1e-10;
const CLOSURE_TOL: f64 = 0.1;
const MATCH_TOL: f64 = 0.5;
const A_BAD_THRESHOLD: f64 = 0.05;
const RANK1_THRESHOLD: f64 = 0.9;

/// One neuron's three functions `G → ℝ`.
#[derive(Clone, Debug)]
pub struct NeuronTriple {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub unembed: Vec<f64>,
}

impl NeuronTriple {
    pub fn of(p: &ModelParams, i: usize) -> Self {
        NeuronTriple { left: p.left_row(i).to_vec(), right: p.right_row(i).to_vec(), unembed: p.unembed_col(i) }
    }
}

/// Chooses the non-trivial irrep explaining the most left-embedding
/// variance, accepted only when all three functions clear `threshold`.
pub fn assign_irrep(triple: &NeuronTriple, table: &IrrepTable, threshold: f64) -> (Option<String>, [f64; 3]) {
    let mut best: Option<(&Irrep, f64)> = None;
    for irrep in table.irreps.iter().filter(|r| !r.is_trivial()) {
        let r2 = project_onto_irrep_span(&triple.left, irrep).r_squared;
        if best.is_none_or(|(_, b)| r2 > b) {
            best = Some((irrep, r2));
        }
    }
    let Some((irrep, left)) = best else { return (None, [0.0; 3]) };
    let right = project_onto_irrep_span(&triple.right, irrep).r_squared;
    let unembed = project_onto_irrep_span(&triple.unembed, irrep).r_squared;
    let r2 = [left, right, unembed];
    let ok = r2.iter().all(|&r| r > threshold);
    (ok.then(|| irrep.name.clone()), r2)
}

/// Rank-one analysis of one neuron against its irrep, with
/// `w_l(x) = s·bᵀρ(x)a`, `w_r(y) = s·aᵀρ(y)c` and `w_u = tr(ρ(z)C)`.
#[derive(Clone, Debug)]
pub struct NeuronFit {
    pub neuron: usize,
    pub irrep: Option<String>,
    pub r_squared: [f64; 3],
    pub a_mat: Matrix,
    pub b_mat: Matrix,
    pub c_mat: Matrix,
    /// Mean of the left and right singular values.
    pub s: f64,
    /// Least-squares `r` in `C ≈ r·BA`.
    pub r: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Left singular vector of `B` (so `b′ = −c`).
    pub c: Vec<f64>,
    /// Right singular vector of `B`, oriented towards `a`.
    pub d: Vec<f64>,
    /// Output scale `t = ⟨C, c bᵀ⟩`.
    pub t: f64,
    /// `‖C − r·BA‖²/‖C‖²`.
    pub residual_c: f64,
    /// `‖a − d‖²`.
    pub residual_ad: f64,
    /// Share of `‖A‖²` in the top singular value.
    pub rank1_explained: f64,
    pub dead: bool,
}

impl NeuronFit {
    /// `r < 0` or a poor rank-one fit; such neurons are not expected from
    /// a learned ρ-set circuit.
    pub fn flagged(&self) -> bool {
        self.r < 0.0 || self.rank1_explained < RANK1_THRESHOLD
    }

    pub fn b_prime(&self) -> Vec<f64> {
        self.c.iter().map(|v| -v).collect()
    }

    /// `s·t`, the neuron's contribution to its pair's coefficient.
    pub fn coefficient(&self) -> f64 {
        self.s * self.t
    }

    /// Flips the signs of `a`, `b`, `c`, `d`, which leaves the neuron's
    /// functions unchanged.
    fn flip(&mut self) {
        for v in [&mut self.a, &mut self.b, &mut self.c, &mut self.d] {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn top_pair(m: &Matrix) -> Result<(Vec<f64>, f64, Vec<f64>, f64)> {
    let dec = svd(m)?;
    let total: f64 = dec.s.iter().map(|s| s * s).sum();
    let explained = if total > 0.0 { dec.s[0] * dec.s[0] / total } else { 0.0 };
    Ok((dec.u.col(0), dec.s[0], dec.v.col(0), explained))
}

pub fn fit_neuron(neuron: usize, triple: &NeuronTriple, irrep: &Irrep, r_squared: [f64; 3]) -> Result<NeuronFit> {
    let a_mat = project_onto_irrep_span(&triple.left, irrep).a;
    let b_mat = project_onto_irrep_span(&triple.right, irrep).a;
    let c_mat = project_onto_irrep_span(&triple.unembed, irrep).a;
    // A = s·a bᵀ.
    let (mut a, s_l, mut b, rank1_explained) = top_pair(&a_mat)?;
    if let Some(&first) = a.iter().find(|v| v.abs() > 1e-12) {
        if first < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            b.iter_mut().for_each(|v| *v = -*v);
        }
    }
    // B = s·c dᵀ, with d ≈ a.
    let (mut c, s_r, mut d, _) = top_pair(&b_mat)?;
    if dot(&d, &a) < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
        d.iter_mut().for_each(|v| *v = -*v);
    }
    let s = 0.5 * (s_l + s_r);
    let dead = !(s >= DEAD_SCALE) || s_l < DEAD_SCALE || s_r < DEAD_SCALE;
    let dim = irrep.dim;
    let t: f64 = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| c_mat[(i, j)] * c[i] * b[j]).sum();
    let ba = b_mat.matmul(&a_mat);
    let (r, residual_c) = {
        let denom = ba.frob_dot(&ba);
        let c_norm = c_mat.frob_dot(&c_mat);
        if denom > 0.0 && c_norm > 0.0 {
            let r = ba.frob_dot(&c_mat) / denom;
            let res = c_mat.sub(&ba.scale(r));
            (r, res.frob_dot(&res) / c_norm)
        } else {
            (0.0, 1.0)
        }
    };
    let residual_ad = dist2(&a, &d).powi(2);
    Ok(NeuronFit {
        neuron,
        irrep: Some(irrep.name.clone()),
        r_squared,
        a_mat,
        b_mat,
        c_mat,
        s,
        r,
        a,
        b,
        c,
        d,
        t,
        residual_c,
        residual_ad,
        rank1_explained,
        dead,
    })
}

/// Least-squares coefficients of `f` on the entries of `ρ` (reference for
/// the Fourier projection). Returned in the same layout as
/// [`crate::rep::IrrepProjection::a`].
pub fn least_squares_projection(f: &[f64], irrep: &Irrep) -> Result<Matrix> {
    let d = irrep.dim;
    let design = Matrix::from_fn(f.len(), d * d, |g, k| {
        let (r, c) = (k / d, k % d);
        // tr(ρ(g)A) = Σ ρ(g)[r][c]·A[c][r].
        irrep.rho(g)[r * d + c]
    });
    let fit = least_squares(&design, f)?;
    Ok(Matrix::from_fn(d, d, |c, r| fit.coefficients[r * d + c]))
}

/// One ρ-set and the neurons whose `(b, b′)` land in it.
#[derive(Clone, Debug)]
pub struct ClusteredPartition {
    pub irrep: String,
    pub vectors: Vec<Vec<f64>>,
    /// `(neuron, b index, b′ index)`.
    pub members: Vec<(usize, usize, usize)>,
    /// Summed coefficient per `(b, b′)`, indexed `b·k + b′`.
    pub pair_sums: Vec<f64>,
    pub coverage: f64,
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub k: usize,
    pub silhouette: f64,
    pub partitions: Vec<ClusteredPartition>,
    pub unexplained: Vec<usize>,
}

fn closure_error(irrep: &Irrep, centroids: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for g in 0..irrep.order() {
        for c in centroids {
            let image = irrep.apply(g, c);
            let best = centroids.iter().map(|o| dist2(&image, o)).fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
            if worst > CLOSURE_TOL {
                return worst;
            }
        }
    }
    worst
}

fn divisors_up_to(n: usize, max: usize) -> Vec<usize> {
    (1..=max.min(n)).filter(|k| n % k == 0).collect()
}

/// Exact ρ-set through `seed_vec`: average over its measured stabilizer,
/// then take the orbit.
fn exact_orbit(group: &Group, irrep: &Irrep, seed_vec: &[f64]) -> Option<Vec<Vec<f64>>> {
    let stab: Vec<usize> = group.elements().filter(|&g| dist2(&irrep.apply(g, seed_vec), seed_vec) <= CLOSURE_TOL).collect();
    let h = Subgroup::new(group, stab).ok()?;
    let mut avg = vec![0.0; irrep.dim];
    for &g in h.members() {
        crate::linalg::axpy(1.0, &irrep.apply(g, seed_vec), &mut avg);
    }
    let center = normalized(&avg)?;
    let cosets = enumerate_cosets(group, &h, Side::Left).ok()?;
    let orbit: Vec<Vec<f64>> = cosets.blocks.iter().map(|block| irrep.apply(block[0], &center)).collect();
    let set = RhoSet::from_vectors(irrep, orbit, crate::linalg::TOL.rho_set_exact).ok()?;
    Some(set.vectors)
}

/// Clusters `{b_i} ∪ {b′_i}` of the fits assigned to one irrep into ρ-sets.
/// Returns `None` when no candidate `k` gives ρ-closed centroids.
pub fn cluster_rho_sets(group: &Group, irrep: &Irrep, fits: &[NeuronFit], seed: u64) -> Option<Clustering> {
    if fits.is_empty() {
        return None;
    }
    let points: Vec<Vec<f64>> = fits.iter().flat_map(|f| [f.b.clone(), f.b_prime()]).collect();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    for k in divisors_up_to(group.order(), points.len()) {
        let Ok(km) = kmeans(&points, k, seed.wrapping_add(k as u64), 4) else { continue };
        let mut used = vec![false; k];
        km.assignment.iter().for_each(|&a| used[a] = true);
        let centroids: Vec<Vec<f64>> =
            km.centroids.iter().zip(&used).filter(|(_, &u)| u).filter_map(|(c, _)| normalized(c)).collect();
        if centroids.is_empty() || closure_error(irrep, &centroids) > CLOSURE_TOL {
            continue;
        }
        let score = if k == 1 { 1.0 } else { silhouette(&points, &km.assignment, k) };
        if best.as_ref().is_none_or(|(_, s, _)| score > *s + 1e-12) {
            best = Some((k, score, centroids));
        }
    }
    let (k, score, centroids) = best?;
    // Orbits of the centroids become the partitions.
    let mut sets: Vec<Vec<Vec<f64>>> = Vec::new();
    for c in &centroids {
        let covered = sets.iter().any(|s| s.iter().any(|v| dist2(v, c) <= MATCH_TOL));
        if covered {
            continue;
        }
        if let Some(orbit) = exact_orbit(group, irrep, c) {
            sets.push(orbit);
        }
    }
    if sets.is_empty() {
        return None;
    }
    let nearest = |v: &[f64]| -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for (q, set) in sets.iter().enumerate() {
            for (j, u) in set.iter().enumerate() {
                let d = dist2(u, v);
                if d < best.2 {
                    best = (q, j, d);
                }
            }
        }
        best
    };
    let mut partitions: Vec<ClusteredPartition> = sets
        .iter()
        .map(|s| ClusteredPartition {
            irrep: irrep.name.clone(),
            vectors: s.clone(),
            members: Vec::new(),
            pair_sums: vec![0.0; s.len() * s.len()],
            coverage: 0.0,
        })
        .collect();
    let mut unexplained = Vec::new();
    for f in fits {
        let (qb, jb, db) = nearest(&f.b);
        let (qc, jc, dc) = nearest(&f.b_prime());
        if qb != qc || db > MATCH_TOL || dc > MATCH_TOL {
            unexplained.push(f.neuron);
            continue;
        }
        let part = &mut partitions[qb];
        let kk = part.vectors.len();
        part.members.push((f.neuron, jb, jc));
        part.pair_sums[jb * kk + jc] += f.coefficient();
    }
    for part in &mut partitions {
        let kk = part.vectors.len();
        let mut covered = vec![false; kk * kk];
        part.members.iter().for_each(|&(_, b, bp)| covered[b * kk + bp] = true);
        part.coverage = covered.iter().filter(|&&c| c).count() as f64 / (kk * kk) as f64;
    }
    partitions.retain(|p| !p.members.is_empty());
    Some(Clustering { k, silhouette: score, partitions, unexplained })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IrrepDiagnostic {
    pub irrep: String,
    pub neurons: usize,
    /// `E‖a_i − ā‖² / E‖a_i‖²`.
    pub a_variance: f64,
    pub clustering_failed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionDiagnostic {
    pub irrep: String,
    pub size: usize,
    pub neurons: usize,
    /// Fraction of `B × B` pairs with at least one neuron.
    pub coverage: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub a_bad: bool,
    pub rho_bad: bool,
    pub irreps: Vec<IrrepDiagnostic>,
    pub partitions: Vec<PartitionDiagnostic>,
    pub assigned: usize,
    pub labeled: usize,
    pub dead: usize,
    pub flagged_fits: usize,
    /// Interpretation attempts run and the V_irrep bound of the kept one.
    pub attempts: usize,
    pub bound: f64,
}

impl Diagnostics {
    fn finish_flags(&mut self) {
        self.a_bad = self.irreps.iter().any(|d| d.a_variance > A_BAD_THRESHOLD);
        self.rho_bad = self.irreps.iter().any(|d| d.clustering_failed) || self.partitions.iter().any(|p| p.coverage < 1.0);
    }

    /// Neither failure mode applies.
    pub fn explained(&self) -> bool {
        !self.a_bad && !self.rho_bad
    }
}

/// Per-neuron assignment and fitting, shared by all attempts.
pub fn fit_all(table: &IrrepTable, theta: &ModelParams) -> Vec<Option<NeuronFit>> {
    (0..theta.hidden)
        .map(|i| {
            let triple = NeuronTriple::of(theta, i);
            let (name, r2) = assign_irrep(&triple, table, ASSIGN_THRESHOLD);
            let irrep = table.get(name.as_deref()?)?;
            fit_neuron(i, &triple, irrep, r2).ok()
        })
        .collect()
}

/// Normalized variance of unit vectors around their normalized mean.
fn normalized_variance(vs: &[Vec<f64>]) -> f64 {
    if vs.len() < 2 {
        return 0.0;
    }
    let d = vs[0].len();
    let mut mean = vec![0.0; d];
    vs.iter().for_each(|v| crate::linalg::axpy(1.0 / vs.len() as f64, v, &mut mean));
    let spread: f64 = vs.iter().map(|v| dist2(v, &mean).powi(2)).sum();
    let scale: f64 = vs.iter().map(|v| dot(v, v)).sum();
    if scale > 0.0 { spread / scale } else { 0.0 }
}

/// Orients the fits of one irrep so their `a` vectors agree in sign with
/// the dominant direction.
fn orient(fits: &mut [NeuronFit]) {
    let Some(d) = fits.first().map(|f| f.a.len()) else { return };
    let mut scatter = Matrix::zeros(d, d);
    for f in fits.iter() {
        for i in 0..d {
            for j in 0..d {
                scatter[(i, j)] += f.a[i] * f.a[j];
            }
        }
    }
    let Ok(dec) = svd(&scatter) else { return };
    let reference = dec.u.col(0);
    for f in fits.iter_mut() {
        if dot(&f.a, &reference) < 0.0 {
            f.flip();
        }
    }
}

/// One attempt of the ρ-set pipeline.
fn interpret_once(group: &Group, table: &IrrepTable, theta: &ModelParams, fits: &[Option<NeuronFit>], seed: u64) -> (IrrepInterpretation, Diagnostics) {
    let m = theta.hidden;
    let mut pi = IrrepInterpretation::all_dead(group.kind(), m);
    let mut diag = Diagnostics { assigned: fits.iter().flatten().count(), ..Default::default() };
    for irrep in &table.irreps {
        let mut group_fits: Vec<NeuronFit> =
            fits.iter().flatten().filter(|f| f.irrep.as_deref() == Some(irrep.name.as_str())).cloned().collect();
        diag.dead += group_fits.iter().filter(|f| f.dead).count();
        diag.flagged_fits += group_fits.iter().filter(|f| !f.dead && f.flagged()).count();
        group_fits.retain(|f| !f.dead);
        if group_fits.is_empty() {
            continue;
        }
        orient(&mut group_fits);
        let a_vectors: Vec<Vec<f64>> = group_fits.iter().map(|f| f.a.clone()).collect();
        let mut idiag =
            IrrepDiagnostic { irrep: irrep.name.clone(), neurons: group_fits.len(), a_variance: normalized_variance(&a_vectors), clustering_failed: false };
        let Some(clustering) = cluster_rho_sets(group, irrep, &group_fits, seed) else {
            idiag.clustering_failed = true;
            diag.irreps.push(idiag);
            continue;
        };
        diag.irreps.push(idiag);
        for part in clustering.partitions {
            diag.partitions.push(PartitionDiagnostic {
                irrep: irrep.name.clone(),
                size: part.vectors.len(),
                neurons: part.members.len(),
                coverage: part.coverage,
            });
            let q = pi.partitions.len();
            let k = part.vectors.len();
            // Shared projection vector.
            let mut mean = vec![0.0; irrep.dim];
            for &(i, _, _) in &part.members {
                let f = group_fits.iter().find(|f| f.neuron == i).expect("member fit");
                crate::linalg::axpy(1.0, &f.a, &mut mean);
            }
            let Some(a) = normalized(&mean) else { continue };
            // Equalize pair sums to their common target.
            let is_sign = irrep.dim == 1 && k == 2;
            let target = |b: usize, bp: usize| -> f64 {
                let s = &part.pair_sums;
                if is_sign {
                    if b == bp { 0.5 * (s[0] + s[3]) } else { 0.5 * (s[1] + s[2]) }
                } else {
                    s.iter().sum::<f64>() / s.len() as f64
                }
            };
            let mut counts = vec![0usize; k * k];
            part.members.iter().for_each(|&(_, b, bp)| counts[b * k + bp] += 1);
            let scales: Vec<f64> =
                part.members.iter().map(|&(i, _, _)| group_fits.iter().find(|f| f.neuron == i).expect("member fit").s).collect();
            let fitted = if is_sign { None } else { equal_sum_coefficients(group, irrep, theta, &part.vectors, &part.members, &scales) };
            for (j, &(i, b, bp)) in part.members.iter().enumerate() {
                let f = group_fits.iter().find(|f| f.neuron == i).expect("member fit");
                let sum = part.pair_sums[b * k + bp];
                let goal = target(b, bp);
                let coefficient = if let Some(c) = &fitted {
                    c[j]
                } else if sum.abs() > 1e-12 * goal.abs().max(1e-300) {
                    f.coefficient() * goal / sum
                } else {
                    goal / counts[b * k + bp] as f64
                };
                pi.neurons[i] = Some(NeuronLabel {
                    irrep: irrep.name.clone(),
                    partition: q,
                    a: a.clone(),
                    b,
                    b_prime: bp,
                    scale: f.s,
                    coefficient,
                });
            }
            if is_sign {
                pi.sign = Some(SignCircuitSpec { c_plus: target(0, 1), c_minus: target(0, 0) });
            }
            pi.partitions.push(RhoSetPartition { irrep: irrep.name.clone(), vectors: part.vectors });
        }
    }
    diag.labeled = pi.labeled();
    diag.finish_flags();
    (pi, diag)
}

/// Coefficients `c_i = s_i·t_i` whose unembeddings `−t_i·bᵀρ(z)b′` are
/// closest in least squares to the model's, subject to every `(b, b′)`
/// pair summing to one shared value.
fn equal_sum_coefficients(
    group: &Group,
    irrep: &Irrep,
    theta: &ModelParams,
    vectors: &[Vec<f64>],
    members: &[(usize, usize, usize)],
    scales: &[f64],
) -> Option<Vec<f64>> {
    let (n, m, k) = (group.order(), theta.hidden, vectors.len());
    let mut phi: Vec<Option<Vec<f64>>> = vec![None; k * k];
    let (mut best, mut weight) = (Vec::with_capacity(members.len()), Vec::with_capacity(members.len()));
    for (&(i, b, bp), &s) in members.iter().zip(scales) {
        let f = phi[b * k + bp].get_or_insert_with(|| group.elements().map(|z| -dot(&vectors[b], &irrep.apply(z, &vectors[bp]))).collect());
        let ff = dot(f, f);
        if !(ff > 0.0 && s > 0.0) {
            return None;
        }
        let uf: f64 = (0..n).map(|z| theta.w_u[z * m + i] * f[z]).sum();
        best.push(s * uf / ff);
        weight.push(s * s / ff);
    }
    // Per pair: unconstrained sum and total inverse weight.
    let (mut sum, mut spread) = (vec![0.0; k * k], vec![0.0; k * k]);
    for (j, &(_, b, bp)) in members.iter().enumerate() {
        sum[b * k + bp] += best[j];
        spread[b * k + bp] += weight[j];
    }
    if spread.iter().any(|&w| w <= 0.0) {
        return None;
    }
    let target = (0..k * k).map(|p| sum[p] / spread[p]).sum::<f64>() / spread.iter().map(|w| 1.0 / w).sum::<f64>();
    Some(
        members
            .iter()
            .enumerate()
            .map(|(j, &(_, b, bp))| {
                let p = b * k + bp;
                best[j] + (target - sum[p]) * weight[j] / spread[p]
            })
            .collect(),
    )
}

/// The ρ-set pipeline, run `attempts` times with different clustering
/// seeds; keeps the interpretation with the highest V_irrep bound.
pub fn build_irrep_interpretation(
    group: &Group,
    table: &IrrepTable,
    theta: &ModelParams,
    seed: u64,
    attempts: usize,
) -> (IrrepInterpretation, Diagnostics) {
    let fits = fit_all(table, theta);
    let mut best: Option<(IrrepInterpretation, Diagnostics)> = None;
    for attempt in 0..attempts.max(1) {
        let (pi, mut diag) = interpret_once(group, table, theta, &fits, seed.wrapping_add(attempt as u64 * 7919));
        diag.bound = v_irrep(group, table, theta, &pi).bound;
        diag.attempts = attempts.max(1);
        if best.as_ref().is_none_or(|(_, d)| diag.bound > d.bound) {
            best = Some((pi, diag));
        }
    }
    best.expect("at least one attempt")
}

/// Circuits described by an interpretation, with each ρ-set circuit's
/// coefficient the (common) pair sum.
pub fn circuits_of(pi: &IrrepInterpretation) -> Vec<CircuitSpec> {
    let mut out = Vec::new();
    for (q, part) in pi.partitions.iter().enumerate() {
        let labels: Vec<&NeuronLabel> = pi.neurons.iter().flatten().filter(|l| l.partition == q).collect();
        let Some(first) = labels.first() else { continue };
        let k = part.vectors.len();
        let mut sums = vec![0.0; k * k];
        labels.iter().for_each(|l| sums[l.b * k + l.b_prime] += l.coefficient);
        if part.vectors[0].len() == 1 && k == 2 {
            out.push(CircuitSpec::Sign(SignCircuitSpec { c_plus: sums[1], c_minus: sums[0] }));
        } else {
            out.push(CircuitSpec::RhoSet(RhoSetCircuitSpec {
                irrep: part.irrep.clone(),
                rho_set: part.vectors.clone(),
                a: first.a.clone(),
                c: sums[0],
            }));
        }
    }
    out
}

/// Share of `var(f)` left within the blocks of a partition.
fn within_block_variance(f: &[f64], blocks: &[Vec<usize>]) -> f64 {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let total: f64 = f.iter().map(|v| (v - mean) * (v - mean)).sum();
    let scale: f64 = f.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if total <= 1e-24 * scale {
        return 0.0;
    }
    let within: f64 = blocks
        .iter()
        .map(|b| {
            let m = b.iter().map(|&g| f[g]).sum::<f64>() / b.len() as f64;
            b.iter().map(|&g| (f[g] - m) * (f[g] - m)).sum::<f64>()
        })
        .sum();
    within / total
}

const COSET_VARIANCE: f64 = 0.01;

/// Per neuron: the largest `H` with `w_l` nearly constant on right cosets
/// `Hx`, and a `g` making `w_r` nearly constant on left cosets of `gHg⁻¹`,
/// chosen to best separate `w_u` on `Hg⁻¹` from the rest.
pub fn build_coset_interpretation(group: &Group, theta: &ModelParams) -> Result<CosetInterpretation> {
    let classes = enumerate_subgroups(group, group.order())?;
    let subgroups: Vec<&Subgroup> = classes.iter().flat_map(|c| c.conjugates.iter()).collect();
    let right: Vec<Vec<Vec<usize>>> =
        subgroups.iter().map(|h| enumerate_cosets(group, h, Side::Right).map(|c| c.blocks)).collect::<Result<_>>()?;
    let left: Vec<Vec<Vec<usize>>> =
        subgroups.iter().map(|h| enumerate_cosets(group, h, Side::Left).map(|c| c.blocks)).collect::<Result<_>>()?;
    let index_of = |members: &[usize]| subgroups.iter().position(|s| s.members() == members);
    let mut neurons = Vec::with_capacity(theta.hidden);
    for i in 0..theta.hidden {
        let wl = theta.left_row(i);
        let wr = theta.right_row(i);
        let wu = theta.unembed_col(i);
        // Subgroups are sorted by decreasing order within the enumeration.
        let mut candidates: Vec<usize> = (0..subgroups.len()).filter(|&j| within_block_variance(wl, &right[j]) < COSET_VARIANCE).collect();
        candidates.sort_by_key(|&j| std::cmp::Reverse(subgroups[j].order()));
        let mut label = None;
        for &hj in &candidates {
            let h = subgroups[hj];
            let reps = enumerate_cosets(group, h, Side::Left)?;
            let mut best: Option<(usize, f64)> = None;
            for block in &reps.blocks {
                let g = block[0];
                let k = h.conjugate(group, g);
                let Some(kj) = index_of(k.members()) else { continue };
                if within_block_variance(wr, &left[kj]) >= COSET_VARIANCE {
                    continue;
                }
                let gi = group.inv(g);
                let inside: Vec<bool> = {
                    let mut mask = vec![false; group.order()];
                    h.members().iter().for_each(|&x| mask[group.mul(x, gi)] = true);
                    mask
                };
                let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0, 0.0, 0);
                for (z, &w) in wu.iter().enumerate() {
                    if inside[z] {
                        sin += w;
                        nin += 1;
                    } else {
                        sout += w;
                        nout += 1;
                    }
                }
                let sep = if nout == 0 { 0.0 } else { sout / nout as f64 } - sin / nin as f64;
                if best.is_none_or(|(_, s)| sep > s) {
                    best = Some((g, sep));
                }
            }
            if let Some((g, _)) = best {
                label = Some(CosetLabel { subgroup: h.members().to_vec(), g, name: describe_subgroup(group, h) });
                break;
            }
        }
        neurons.push(label);
    }
    Ok(CosetInterpretation { group: group.kind(), neurons })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedWitness {
    pub irrep: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub stabilizer_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronClass {
    /// Irrep whose span contains `f`.
    pub irrep_sparse: Option<String>,
    /// Nontrivial subgroup on whose (left or right) cosets `f` is constant.
    pub coset_concentrated: Option<(Vec<usize>, Side)>,
    pub projected_rho_set: Option<ProjectedWitness>,
}

/// Tests the three structural predicates on `f : G → ℝ` at tolerance `tol`
/// (relative to `f`'s scale).
pub fn classify_neuron(group: &Group, table: &IrrepTable, f: &[f64], tol: f64) -> Result<NeuronClass> {
    let scale = f.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut irrep_sparse = None;
    let mut a_mat = None;
    for irrep in &table.irreps {
        let proj = project_onto_irrep_span(f, irrep);
        let residual: f64 = f.iter().zip(&proj.fitted).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / scale;
        if residual <= tol {
            irrep_sparse = Some(irrep.name.clone());
            a_mat = Some((irrep, proj.a));
            break;
        }
    }
    let classes = enumerate_subgroups(group, group.order())?;
    let mut coset_concentrated = None;
    let amp = scale.sqrt();
    'outer: for class in classes.iter().filter(|c| c.order > 1) {
        for h in &class.conjugates {
            for side in [Side::Left, Side::Right] {
                let blocks = enumerate_cosets(group, h, side)?;
                let constant = blocks.blocks.iter().all(|b| b.iter().all(|&g| (f[g] - f[b[0]]).abs() <= tol * amp));
                if constant {
                    coset_concentrated = Some((h.members().to_vec(), side));
                    break 'outer;
                }
            }
        }
    }
    let mut projected_rho_set = None;
    if let Some((irrep, a)) = a_mat {
        let dec = svd(&a)?;
        let rank_one = dec.s.iter().skip(1).all(|&s| s <= tol.sqrt() * dec.s[0].max(f64::MIN_POSITIVE));
        if rank_one && dec.s[0] > 0.0 {
            // f(g) = tr(ρ(g)·σ u vᵀ) = σ vᵀρ(g)u. Constancy on left cosets gH
            // puts the stabilized vector in u, on right cosets Hg in v.
            let (u, v) = (dec.u.col(0), dec.v.col(0));
            let stab = |w: &[f64]| group.elements().filter(|&g| dist2(&irrep.apply(g, w), w) <= tol.sqrt().max(1e-9)).count();
            let (su, sv) = (stab(&u), stab(&v));
            let (b, other, order) = if su >= sv { (u, v, su) } else { (v, u, sv) };
            if order > 1 {
                let a_vec: Vec<f64> = other.iter().map(|x| x * dec.s[0]).collect();
                projected_rho_set = Some(ProjectedWitness { irrep: irrep.name.clone(), a: a_vec, b, stabilizer_order: order });
            }
        }
    }
    Ok(NeuronClass { irrep_sparse, coset_concentrated, projected_rho_set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idealized::pair_neuron;
    use crate::rep::{perm_rep_on_cosets, rho_set_from_action};

    /// Two neurons per tetrahedron pair, unequal shares of a common sum.
    fn tetra_model(noise: f64) -> (Group, Irrep, Vec<Vec<f64>>, ModelParams, Vec<(usize, usize, usize)>, Vec<f64>, Vec<f64>) {
        let g = Group::new(GroupKind::Symmetric(4)).unwrap();
        let t = IrrepTable::new(&g).unwrap();
        let action = perm_rep_on_cosets(&g, &g.point_stabilizer(3).unwrap()).unwrap();
        let irrep = t.irreps.iter().find(|r| r.dim == 3 && rho_set_from_action(&action, r).is_ok()).unwrap().clone();
        let set = rho_set_from_action(&action, &irrep).unwrap().vectors;
        let (n, m) = (g.order(), 32);
        let a = normalized(&[0.3, -0.5, 0.8]).unwrap();
        let mut p = ModelParams::zeros(g.kind(), n, m, false);
        let (mut members, mut scales, mut coefficients) = (Vec::new(), Vec::new(), Vec::new());
        for b in 0..4 {
            for bp in 0..4 {
                for (share, s) in [(0.3, 1.0), (0.7, 2.5)] {
                    let i = members.len();
                    let c = 2.0 * share;
                    let [wl, wr, wu] = pair_neuron(&irrep, &set[b], &set[bp], &a, s, c / s);
                    p.w_l[i * n..(i + 1) * n].copy_from_slice(&wl);
                    p.w_r[i * n..(i + 1) * n].copy_from_slice(&wr);
                    for z in 0..n {
                        p.w_u[z * m + i] = wu[z] + noise * ((7 * i + 3 * z) % 11) as f64;
                    }
                    members.push((i, b, bp));
                    scales.push(s);
                    coefficients.push(c);
                }
            }
        }
        (g, irrep, set, p, members, scales, coefficients)
    }

    #[test]
    fn equal_sum_coefficients_recover_exact_shares() {
        let (g, irrep, set, p, members, scales, want) = tetra_model(0.0);
        let got = equal_sum_coefficients(&g, &irrep, &p, &set, &members, &scales).unwrap();
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn equal_sum_coefficients_equalize_noisy_pairs() {
        let (g, irrep, set, p, members, scales, _) = tetra_model(0.05);
        let got = equal_sum_coefficients(&g, &irrep, &p, &set, &members, &scales).unwrap();
        let mut sums = vec![0.0; 16];
        for (c, &(_, b, bp)) in got.iter().zip(&members) {
            sums[b * 4 + bp] += c;
        }
        assert!(sums.iter().all(|s| (s - sums[0]).abs() < 1e-9), "{sums:?}");
        assert!((sums[0] - 2.0).abs() < 0.2, "{}", sums[0]);
    }
}
