//! Real irreducible representations, permutation actions, isotypic
//! decomposition and ρ-sets.
//!
//! Every irrep is stored as one real orthogonal `d x d` matrix per group
//! element. Complex-type irreps of cyclic groups are realified to 2x2
//! rotation blocks, so their characters have norm 2 instead of 1.

mod icosahedral;
pub mod young;

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{enumerate_cosets, enumerate_subgroups, Group, GroupKind, Side, Subgroup, SubgroupClass};
use crate::linalg::{axpy, dot, norm2, Matrix, TOL};

#[derive(Clone, Debug)]
pub struct Irrep {
    pub name: String,
    pub dim: usize,
    /// Human-readable origin: a partition, a frequency, or a construction.
    pub label: String,
    /// 1 for real type, 0 for realified complex type.
    pub frobenius_schur: i8,
    pub character: Vec<f64>,
    data: Vec<f64>,
}

impl Irrep {
    fn from_matrices(label: String, dim: usize, frobenius_schur: i8, mats: &[Matrix]) -> Self {
        let mut data = Vec::with_capacity(mats.len() * dim * dim);
        for m in mats {
            data.extend_from_slice(m.as_slice());
        }
        let character = mats.iter().map(Matrix::trace).collect();
        Irrep { name: String::new(), dim, label, frobenius_schur, character, data }
    }

    /// Row-major `ρ(g)`.
    #[inline]
    pub fn rho(&self, g: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.data[g * s..(g + 1) * s]
    }

    pub fn matrix(&self, g: usize) -> Matrix {
        Matrix::from_vec(self.dim, self.dim, self.rho(g).to_vec()).expect("square")
    }

    /// `ρ(g) v`
    pub fn apply(&self, g: usize, v: &[f64]) -> Vec<f64> {
        let m = self.rho(g);
        (0..self.dim).map(|r| dot(&m[r * self.dim..(r + 1) * self.dim], v)).collect()
    }

    /// `ρ(g)ᵀ v`
    pub fn apply_transpose(&self, g: usize, v: &[f64]) -> Vec<f64> {
        let m = self.rho(g);
        let mut out = vec![0.0; self.dim];
        for (r, &vr) in v.iter().enumerate() {
            axpy(vr, &m[r * self.dim..(r + 1) * self.dim], &mut out);
        }
        out
    }

    /// `uᵀ ρ(g) v`
    pub fn bilinear(&self, u: &[f64], g: usize, v: &[f64]) -> f64 {
        let m = self.rho(g);
        let d = self.dim;
        let mut total = 0.0;
        for r in 0..d {
            total += u[r] * dot(&m[r * d..(r + 1) * d], v);
        }
        total
    }

    /// `⟨χ, χ⟩`: 1 for real type, 2 for realified complex type.
    pub fn character_norm(&self) -> f64 {
        character_inner(&self.character, &self.character)
    }

    pub fn is_trivial(&self) -> bool {
        self.dim == 1 && self.character.iter().all(|&c| (c - 1.0).abs() < 1e-12)
    }

    pub fn order(&self) -> usize {
        self.character.len()
    }
}

pub fn character_inner(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / a.len() as f64
}

#[derive(Clone, Debug)]
pub struct IrrepTable {
    pub kind: GroupKind,
    pub irreps: Vec<Irrep>,
}

impl IrrepTable {
    /// Builds and validates the complete table of real irreps.
    pub fn new(group: &Group) -> Result<Self> {
        let raw = match group.kind() {
            GroupKind::Symmetric(n) if n <= 7 => symmetric_irreps(group, n)?,
            GroupKind::Alternating(5) => alternating5_irreps(group)?,
            GroupKind::Cyclic(p) => cyclic_irreps(p),
            other => return Err(Error::Unsupported(format!("no irrep table for {other}"))),
        };
        let mut table = IrrepTable { kind: group.kind(), irreps: raw };
        table.assign_names(group)?;
        table.validate(group)?;
        Ok(table)
    }

    fn assign_names(&mut self, group: &Group) -> Result<()> {
        // Within each dimension, order by minimum ρ-set size when the
        // subgroup lattice is cheap, keeping construction order for ties.
        let sizes: Vec<usize> = if matches!(group.kind(), GroupKind::Symmetric(_)) && group.order() <= 120 {
            let classes = enumerate_subgroups(group, group.order())?;
            self.irreps.iter().map(|r| minimum_rho_set_size_in(r, &classes).0).collect()
        } else {
            vec![0; self.irreps.len()]
        };
        let mut order: Vec<usize> = (0..self.irreps.len()).collect();
        order.sort_by_key(|&i| (self.irreps[i].dim, sizes[i], i));
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let mut sorted = Vec::with_capacity(order.len());
        for i in order {
            let mut irrep = self.irreps[i].clone();
            let k = counts.entry(irrep.dim).or_default();
            irrep.name = format!("{}d-{}", irrep.dim, k);
            *k += 1;
            sorted.push(irrep);
        }
        self.irreps = sorted;
        Ok(())
    }

    /// Checks the homomorphism, orthogonality and character relations.
    pub fn validate(&self, group: &Group) -> Result<()> {
        let n = group.order();
        let tol = TOL.irrep_check;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for irrep in &self.irreps {
            let d = irrep.dim;
            let id = Matrix::identity(d);
            if irrep.matrix(group.identity()).sub(&id).frobenius() > tol {
                return Err(Error::Validation(format!("{}: ρ(e) ≠ I", irrep.name)));
            }
            for g in 0..n {
                let m = irrep.matrix(g);
                if m.transpose().matmul(&m).sub(&id).frobenius() > tol {
                    return Err(Error::Validation(format!("{}: ρ({}) not orthogonal", irrep.name, group.label(g))));
                }
            }
            let pairs: Vec<(usize, usize)> = if n <= 24 {
                (0..n).flat_map(|g| (0..n).map(move |h| (g, h))).collect()
            } else {
                (0..10_000).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect()
            };
            for (g, h) in pairs {
                let lhs = irrep.matrix(group.mul(g, h));
                let rhs = irrep.matrix(g).matmul(&irrep.matrix(h));
                if lhs.sub(&rhs).frobenius() > tol {
                    return Err(Error::Validation(format!("{}: not a homomorphism", irrep.name)));
                }
            }
            let want = if irrep.frobenius_schur == 1 { 1.0 } else { 2.0 };
            if (irrep.character_norm() - want).abs() > TOL.character_rounding {
                return Err(Error::Validation(format!(
                    "{}: ⟨χ,χ⟩ = {} (want {want})",
                    irrep.name,
                    irrep.character_norm()
                )));
            }
        }
        for (i, a) in self.irreps.iter().enumerate() {
            for b in &self.irreps[i + 1..] {
                let ip = character_inner(&a.character, &b.character);
                if ip.abs() > TOL.character_rounding {
                    return Err(Error::Validation(format!("{} and {} are not orthogonal ({ip})", a.name, b.name)));
                }
            }
        }
        // Σ d² over real irreps plus (d/2)²·2 per realified pair equals |G|.
        let total: usize = self
            .irreps
            .iter()
            .map(|r| if r.frobenius_schur == 1 { r.dim * r.dim } else { 2 * (r.dim / 2) * (r.dim / 2) })
            .sum();
        if total != n {
            return Err(Error::Validation(format!("dimension count {total} ≠ |G| = {n}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Irrep> {
        self.irreps.iter().find(|r| r.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.irreps.iter().position(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.irreps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.irreps.is_empty()
    }

    pub fn trivial(&self) -> &Irrep {
        &self.irreps[0]
    }

    /// The one-dimensional sign irrep of a symmetric group.
    pub fn sign(&self) -> Option<&Irrep> {
        match self.kind {
            GroupKind::Symmetric(n) if n >= 2 => self.get("1d-1"),
            _ => None,
        }
    }
}

/// Young matrices for every permutation of `0..n`, indexed by lexicographic
/// rank.
fn young_matrices_by_rank(shape: &[usize], n: usize) -> Vec<Matrix> {
    let gens = young::adjacent_transposition_matrices(shape);
    let d = young::hook_length_dim(shape);
    let total: usize = (1..=n).product();
    let mut mats: Vec<Option<Matrix>> = vec![None; total];
    let id: Vec<u8> = (0..n as u8).collect();
    mats[crate::group::perm_rank(&id)] = Some(Matrix::identity(d));
    let mut queue = VecDeque::from([id]);
    while let Some(w) = queue.pop_front() {
        let mw = mats[crate::group::perm_rank(&w)].clone().expect("visited");
        for (k, s) in gens.iter().enumerate() {
            // w ∘ s_k swaps positions k and k+1 of the word.
            let mut next = w.clone();
            next.swap(k, k + 1);
            let r = crate::group::perm_rank(&next);
            if mats[r].is_none() {
                mats[r] = Some(mw.matmul(s));
                queue.push_back(next);
            }
        }
    }
    mats.into_iter().map(|m| m.expect("adjacent transpositions generate S_n")).collect()
}

fn partition_label(p: &[usize]) -> String {
    let parts: Vec<String> = p.iter().map(usize::to_string).collect();
    format!("({})", parts.join(","))
}

fn symmetric_irreps(group: &Group, n: usize) -> Result<Vec<Irrep>> {
    Ok(young::partitions(n)
        .into_iter()
        .map(|p| {
            let mats = young_matrices_by_rank(&p, n);
            Irrep::from_matrices(partition_label(&p), mats[0].rows(), 1, &mats[..group.order()])
        })
        .collect())
}

fn alternating5_irreps(group: &Group) -> Result<Vec<Irrep>> {
    let restrict = |shape: &[usize]| -> Irrep {
        let all = young_matrices_by_rank(shape, 5);
        let mats: Vec<Matrix> = group
            .elements()
            .map(|g| all[crate::group::perm_rank(group.perm(g).expect("permutation group"))].clone())
            .collect();
        Irrep::from_matrices(format!("{} restricted", partition_label(shape)), mats[0].rows(), 1, &mats)
    };
    let trivial: Vec<Matrix> = group.elements().map(|_| Matrix::identity(1)).collect();
    let mut out = vec![Irrep::from_matrices("trivial".into(), 1, 1, &trivial)];
    for (i, phi) in icosahedral::golden_ratio_roots().into_iter().enumerate() {
        let mats = icosahedral::icosahedral_matrices(group, phi)?;
        let label = if i == 0 { "icosahedral" } else { "icosahedral (conjugate)" };
        out.push(Irrep::from_matrices(label.into(), 3, 1, &mats));
    }
    out.push(restrict(&[4, 1]));
    out.push(restrict(&[3, 2]));
    Ok(out)
}

fn cyclic_irreps(p: usize) -> Vec<Irrep> {
    let ones: Vec<Matrix> = (0..p).map(|_| Matrix::identity(1)).collect();
    let mut out = vec![Irrep::from_matrices("trivial".into(), 1, 1, &ones)];
    if p % 2 == 0 {
        let alt: Vec<Matrix> = (0..p)
            .map(|x| Matrix::from_vec(1, 1, vec![if x % 2 == 0 { 1.0 } else { -1.0 }]).expect("1x1"))
            .collect();
        out.push(Irrep::from_matrices("alternating sign".into(), 1, 1, &alt));
    }
    for k in 1..=(p - 1) / 2 {
        let mats: Vec<Matrix> = (0..p)
            .map(|x| {
                let t = 2.0 * std::f64::consts::PI * ((k * x) % p) as f64 / p as f64;
                let (s, c) = t.sin_cos();
                Matrix::from_vec(2, 2, vec![c, -s, s, c]).expect("2x2")
            })
            .collect();
        out.push(Irrep::from_matrices(format!("frequency {k}"), 2, 0, &mats));
    }
    out
}

/// A transitive action of the group on `0..size`.
#[derive(Clone, Debug)]
pub struct PermAction {
    pub size: usize,
    /// `table[g][i]` is the image of point `i` under `g`.
    pub table: Vec<Vec<usize>>,
    /// Stabilizer of point 0.
    pub stabilizer: Subgroup,
    /// `coset_reps[i]` maps point 0 to point `i`.
    pub coset_reps: Vec<usize>,
}

impl PermAction {
    /// Number of fixed points of each element.
    pub fn character(&self) -> Vec<f64> {
        self.table.iter().map(|p| p.iter().enumerate().filter(|(i, &j)| *i == j).count() as f64).collect()
    }

    pub fn validate(&self, group: &Group) -> Result<()> {
        for g in group.elements() {
            let mut seen = vec![false; self.size];
            for &j in &self.table[g] {
                seen[j] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Validation("action is not a permutation".into()));
            }
        }
        for g in group.elements().step_by(1.max(group.order() / 60)) {
            for h in group.elements().step_by(1.max(group.order() / 60)) {
                let gh = group.mul(g, h);
                if (0..self.size).any(|i| self.table[gh][i] != self.table[g][self.table[h][i]]) {
                    return Err(Error::Validation("action is not a homomorphism".into()));
                }
            }
        }
        if self.size * self.stabilizer.order() != group.order() {
            return Err(Error::Validation("orbit-stabilizer fails".into()));
        }
        Ok(())
    }
}

/// Left action of the group on the left cosets `gH`.
pub fn perm_rep_on_cosets(group: &Group, h: &Subgroup) -> Result<PermAction> {
    let cosets = enumerate_cosets(group, h, Side::Left)?;
    let coset_reps: Vec<usize> = cosets.blocks.iter().map(|b| b[0]).collect();
    let table = group
        .elements()
        .map(|g| coset_reps.iter().map(|&r| cosets.block_of[group.mul(g, r)]).collect())
        .collect();
    Ok(PermAction { size: cosets.len(), table, stabilizer: h.clone(), coset_reps })
}

/// Multiplicity of each irrep of the table in the action.
pub fn decompose_action(action: &PermAction, table: &IrrepTable) -> Result<Vec<usize>> {
    let chi = action.character();
    let mut out = Vec::with_capacity(table.len());
    for irrep in &table.irreps {
        let m = character_inner(&chi, &irrep.character) / irrep.character_norm();
        let rounded = m.round();
        if (m - rounded).abs() > TOL.character_rounding || rounded < 0.0 {
            return Err(Error::Inconsistent(format!("multiplicity of {} is {m}", irrep.name)));
        }
        out.push(rounded as usize);
    }
    let total: usize = out.iter().zip(&table.irreps).map(|(m, r)| m * r.dim).sum();
    if total != action.size {
        return Err(Error::Inconsistent(format!("Σ m·d = {total} but the action has size {}", action.size)));
    }
    Ok(out)
}

/// A finite set of unit vectors permuted by an irrep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoSet {
    pub irrep: String,
    pub vectors: Vec<Vec<f64>>,
    /// `action_table[g][i] = j` when `ρ(g) b_i ≈ b_j`.
    pub action_table: Vec<Vec<usize>>,
    /// `max ‖ρ(g) b_i − b_{action_table[g][i]}‖₂` over all `g, i`.
    pub deviation: f64,
}

impl RhoSet {
    /// Matches each `ρ(g) b_i` to its nearest vector and checks the result
    /// is a transitive action within `tol`.
    pub fn from_vectors(irrep: &Irrep, vectors: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        let set = Self::measure(irrep, vectors)?;
        if set.deviation > tol {
            return Err(Error::Validation(format!(
                "{}: vectors are not permuted by ρ (deviation {:.3e} > {tol:.1e})",
                irrep.name, set.deviation
            )));
        }
        set.check_permutations()?;
        if !set.is_transitive() {
            return Err(Error::Validation(format!("{}: action on the ρ-set is not transitive", irrep.name)));
        }
        Ok(set)
    }

    /// Nearest-vector action table and its deviation, without any threshold.
    pub fn measure(irrep: &Irrep, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() || vectors.iter().any(|v| v.len() != irrep.dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Validation("ρ-set vectors must be finite with the irrep's dimension".into()));
        }
        let mut deviation: f64 = 0.0;
        let mut action_table = Vec::with_capacity(irrep.order());
        for g in 0..irrep.order() {
            let mut row = Vec::with_capacity(vectors.len());
            for b in &vectors {
                let image = irrep.apply(g, b);
                let (j, dist) = vectors
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, crate::linalg::dist2(&image, c)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty");
                deviation = deviation.max(dist);
                row.push(j);
            }
            action_table.push(row);
        }
        Ok(RhoSet { irrep: irrep.name.clone(), vectors, action_table, deviation })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Every row of the action table is a permutation.
    pub fn check_permutations(&self) -> Result<()> {
        for row in &self.action_table {
            let mut seen = vec![false; row.len()];
            for &j in row {
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Validation("ρ-set action is not a permutation".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_transitive(&self) -> bool {
        let mut seen = vec![false; self.len()];
        seen[0] = true;
        for row in &self.action_table {
            seen[row[0]] = true;
        }
        seen.iter().all(|&s| s)
    }

    /// Elements fixing vector `i`.
    pub fn stabilizer(&self, group: &Group, i: usize) -> Result<Subgroup> {
        Subgroup::new(group, group.elements().filter(|&g| self.action_table[g][i] == i).collect())
    }

    /// Whether the action table is a homomorphism into the symmetric group
    /// on the vector indices.
    pub fn is_homomorphism(&self, group: &Group) -> bool {
        group.elements().all(|g| {
            group.elements().all(|h| {
                let gh = group.mul(g, h);
                (0..self.len()).all(|i| self.action_table[gh][i] == self.action_table[g][self.action_table[h][i]])
            })
        })
    }

    pub fn gram(&self) -> Matrix {
        let k = self.len();
        Matrix::from_fn(k, k, |i, j| dot(&self.vectors[i], &self.vectors[j]))
    }
}

/// ρ-set from the orbit of the normalized projection of a basis vector of
/// the action space onto its ρ-isotypic component.
pub fn rho_set_from_action(action: &PermAction, irrep: &Irrep) -> Result<RhoSet> {
    let m = character_inner(&action.character(), &irrep.character) / irrep.character_norm();
    let m = m.round() as usize;
    if m == 0 {
        return Err(Error::Degenerate(format!("{} does not occur in the action", irrep.name)));
    }
    if m >= 2 {
        return Err(Error::Ambiguous(format!("{} occurs {m} times in the action", irrep.name)));
    }
    // The basis vector of point 0 projects onto the stabilizer-fixed vectors
    // of ρ; average ρ(h) over the stabilizer to land there.
    let d = irrep.dim;
    let mut b0 = None;
    for e in 0..d {
        let mut v = vec![0.0; d];
        for &h in action.stabilizer.members() {
            let col: Vec<f64> = (0..d).map(|r| irrep.rho(h)[r * d + e]).collect();
            axpy(1.0, &col, &mut v);
        }
        if norm2(&v) > 1e-8 * action.stabilizer.order() as f64 {
            b0 = crate::linalg::normalized(&v);
            break;
        }
    }
    let b0 = b0.ok_or_else(|| Error::Degenerate(format!("{} has no stabilizer-fixed vector", irrep.name)))?;
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for &g in &action.coset_reps {
        let v = irrep.apply(g, &b0);
        if !vectors.iter().any(|u| dot(u, &v) >= 1.0 - TOL.rho_set_dedup) {
            vectors.push(v);
        }
    }
    RhoSet::from_vectors(irrep, vectors, TOL.rho_set_exact)
}

/// Smallest index of a subgroup with a nonzero fixed vector in `ρ`, with
/// that subgroup's class name.
pub fn minimum_rho_set_size(group: &Group, irrep: &Irrep) -> Result<(usize, String)> {
    let classes = enumerate_subgroups(group, group.order())?;
    Ok(minimum_rho_set_size_in(irrep, &classes))
}

pub fn minimum_rho_set_size_in(irrep: &Irrep, classes: &[SubgroupClass]) -> (usize, String) {
    classes
        .iter()
        .filter(|c| c.representative.members().iter().map(|&h| irrep.character[h]).sum::<f64>() > 0.5)
        .map(|c| (c.index, c.name.clone()))
        .min_by_key(|(i, _)| *i)
        .expect("the trivial subgroup fixes every vector")
}

#[derive(Clone, Debug)]
pub struct IrrepProjection {
    /// Coefficient matrix with `f(g) ≈ tr(ρ(g) A)`.
    pub a: Matrix,
    pub r_squared: f64,
    pub fitted: Vec<f64>,
}

/// Group-Fourier projection of `f` onto the span of `ρ`'s matrix entries.
///
/// `A = d / (|G| ⟨χ,χ⟩) Σ_g f(g) ρ(g)ᵀ`, which is the minimum-norm
/// least-squares solution of `tr(ρ(g) A) = f(g)`.
pub fn project_onto_irrep_span(f: &[f64], irrep: &Irrep) -> IrrepProjection {
    let n = f.len();
    let d = irrep.dim;
    let mut a = Matrix::zeros(d, d);
    for (g, &fg) in f.iter().enumerate() {
        let m = irrep.rho(g);
        for r in 0..d {
            for c in 0..d {
                a[(c, r)] += fg * m[r * d + c];
            }
        }
    }
    let scale = d as f64 / (n as f64 * if irrep.frobenius_schur == 1 { 1.0 } else { 2.0 });
    let a = a.scale(scale);
    let fitted: Vec<f64> = (0..n).map(|g| trace_product(irrep.rho(g), a.as_slice(), d)).collect();
    IrrepProjection { r_squared: r_squared(f, &fitted), a, fitted }
}

/// `tr(M A)` for row-major `d x d` matrices.
#[inline]
pub fn trace_product(m: &[f64], a: &[f64], d: usize) -> f64 {
    let mut t = 0.0;
    for r in 0..d {
        for c in 0..d {
            t += m[r * d + c] * a[c * d + r];
        }
    }
    t
}

/// Centered coefficient of determination; 0 for (near-)constant targets.
pub fn r_squared(f: &[f64], fitted: &[f64]) -> f64 {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let total: f64 = f.iter().map(|x| (x - mean) * (x - mean)).sum();
    let scale: f64 = f.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if total <= 1e-24 * scale || total == 0.0 {
        return 0.0;
    }
    let resid: f64 = f.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - resid / total
}
