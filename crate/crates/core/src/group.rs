//! Finite groups as indexed element sets with multiplication and inverse
//! tables, plus subgroup, coset and conjugation machinery.
//!
//! Permutations are stored as one-line words `w` with `w[i]` the image of
//! `i`, and composed right to left: `(g * h)(i) = g(h(i))`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PERM_DEGREE: usize = 8;
pub const MAX_CYCLIC_ORDER: usize = 256;
/// Largest order for which the full Cayley table is materialized.
pub const CAYLEY_TABLE_LIMIT: usize = 5040;
/// Largest order accepted by subgroup enumeration.
pub const SUBGROUP_ENUMERATION_LIMIT: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "lowercase")]
pub enum GroupKind {
    Symmetric(usize),
    Alternating(usize),
    Cyclic(usize),
}

impl GroupKind {
    pub fn short_name(&self) -> String {
        match self {
            GroupKind::Symmetric(n) => format!("S{n}"),
            GroupKind::Alternating(n) => format!("A{n}"),
            GroupKind::Cyclic(p) => format!("Z{p}"),
        }
    }

    /// Parses `S5`, `A5`, `Z53`, `C53`, `symmetric:5`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h.to_ascii_lowercase(), t.to_string()),
            None => {
                let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
                (s[..split].to_ascii_lowercase(), s[split..].to_string())
            }
        };
        let n: usize = tail
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("cannot parse group '{s}'")))?;
        match head.as_str() {
            "s" | "sym" | "symmetric" => Ok(GroupKind::Symmetric(n)),
            "a" | "alt" | "alternating" => Ok(GroupKind::Alternating(n)),
            "z" | "c" | "cyclic" => Ok(GroupKind::Cyclic(n)),
            _ => Err(Error::Validation(format!("unknown group kind in '{s}'"))),
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

/// Lexicographic rank of a permutation word.
pub fn perm_rank(w: &[u8]) -> usize {
    let n = w.len();
    let mut rank = 0;
    let mut used = 0u32;
    for (i, &v) in w.iter().enumerate() {
        let smaller_unused = (0..v).filter(|&u| used & (1 << u) == 0).count();
        rank = rank * (n - i) + smaller_unused;
        used |= 1 << v;
    }
    rank
}

/// Inverse of [`perm_rank`].
pub fn perm_unrank(mut rank: usize, n: usize) -> Vec<u8> {
    let mut fact = vec![1usize; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i;
    }
    let mut pool: Vec<u8> = (0..n as u8).collect();
    let mut w = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let q = rank / fact[i];
        rank %= fact[i];
        w.push(pool.remove(q));
    }
    w
}

pub fn perm_parity(w: &[u8]) -> bool {
    let mut seen = 0u32;
    let mut odd = false;
    for start in 0..w.len() {
        if seen & (1 << start) != 0 {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while seen & (1 << i) == 0 {
            seen |= 1 << i;
            i = w[i] as usize;
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

#[derive(Clone)]
pub struct Group {
    kind: GroupKind,
    order: usize,
    /// Permutation words for permutation groups.
    perms: Vec<Vec<u8>>,
    /// Lexicographic S_n rank -> element index (alternating groups only).
    rank_to_index: Vec<u32>,
    cayley: Option<Vec<u32>>,
    inverse: Vec<usize>,
    labels: Vec<String>,
}

impl fmt::Debug for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Group({}, order {})", self.kind, self.order)
    }
}

impl PartialEq for Group {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Group {
    pub fn new(kind: GroupKind) -> Result<Self> {
        match kind {
            GroupKind::Symmetric(n) | GroupKind::Alternating(n) => {
                if n == 0 || n > MAX_PERM_DEGREE {
                    return Err(Error::Capacity(format!(
                        "permutation degree {n} outside 1..={MAX_PERM_DEGREE}"
                    )));
                }
                let total = factorial(n);
                let alternating = matches!(kind, GroupKind::Alternating(_));
                let mut perms = Vec::new();
                let mut rank_to_index = Vec::new();
                if alternating {
                    rank_to_index = vec![u32::MAX; total];
                }
                for r in 0..total {
                    let w = perm_unrank(r, n);
                    if alternating {
                        if perm_parity(&w) {
                            continue;
                        }
                        rank_to_index[r] = perms.len() as u32;
                    }
                    perms.push(w);
                }
                let order = perms.len();
                let labels = perms.iter().map(|w| w.iter().map(|d| char::from(b'0' + d)).collect()).collect();
                let mut g = Group { kind, order, perms, rank_to_index, cayley: None, inverse: Vec::new(), labels };
                g.inverse = (0..order)
                    .map(|i| {
                        let w = &g.perms[i];
                        let mut inv = vec![0u8; n];
                        for (a, &b) in w.iter().enumerate() {
                            inv[b as usize] = a as u8;
                        }
                        g.index_of_perm(&inv).expect("inverse stays in the group")
                    })
                    .collect();
                g.build_table();
                Ok(g)
            }
            GroupKind::Cyclic(p) => {
                if p == 0 || p > MAX_CYCLIC_ORDER {
                    return Err(Error::Capacity(format!("cyclic order {p} outside 1..={MAX_CYCLIC_ORDER}")));
                }
                let mut g = Group {
                    kind,
                    order: p,
                    perms: Vec::new(),
                    rank_to_index: Vec::new(),
                    cayley: None,
                    inverse: (0..p).map(|x| (p - x) % p).collect(),
                    labels: (0..p).map(|x| x.to_string()).collect(),
                };
                g.build_table();
                Ok(g)
            }
        }
    }

    fn build_table(&mut self) {
        if self.order > CAYLEY_TABLE_LIMIT {
            return;
        }
        let n = self.order;
        let mut t = vec![0u32; n * n];
        for g in 0..n {
            for h in 0..n {
                t[g * n + h] = self.compute_mul(g, h) as u32;
            }
        }
        self.cayley = Some(t);
    }

    fn compute_mul(&self, g: usize, h: usize) -> usize {
        match self.kind {
            GroupKind::Cyclic(p) => (g + h) % p,
            _ => {
                let (a, b) = (&self.perms[g], &self.perms[h]);
                let w: Vec<u8> = b.iter().map(|&i| a[i as usize]).collect();
                self.index_of_perm(&w).expect("closed under composition")
            }
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn identity(&self) -> usize {
        0
    }

    #[inline]
    pub fn mul(&self, g: usize, h: usize) -> usize {
        match &self.cayley {
            Some(t) => t[g * self.order + h] as usize,
            None => self.compute_mul(g, h),
        }
    }

    #[inline]
    pub fn inv(&self, g: usize) -> usize {
        self.inverse[g]
    }

    /// `g h g⁻¹`
    pub fn conj(&self, g: usize, h: usize) -> usize {
        self.mul(self.mul(g, h), self.inv(g))
    }

    pub fn cayley(&self) -> Option<&[u32]> {
        self.cayley.as_deref()
    }

    pub fn inverse_table(&self) -> &[usize] {
        &self.inverse
    }

    pub fn label(&self, g: usize) -> &str {
        &self.labels[g]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn elements(&self) -> std::ops::Range<usize> {
        0..self.order
    }

    /// Degree of the natural permutation action, if any.
    pub fn degree(&self) -> Option<usize> {
        match self.kind {
            GroupKind::Symmetric(n) | GroupKind::Alternating(n) => Some(n),
            GroupKind::Cyclic(_) => None,
        }
    }

    pub fn perm(&self, g: usize) -> Option<&[u8]> {
        self.perms.get(g).map(Vec::as_slice)
    }

    pub fn index_of_perm(&self, w: &[u8]) -> Option<usize> {
        let n = self.degree()?;
        if w.len() != n {
            return None;
        }
        let r = perm_rank(w);
        match self.kind {
            GroupKind::Symmetric(_) => Some(r),
            _ => {
                let i = self.rank_to_index[r];
                (i != u32::MAX).then_some(i as usize)
            }
        }
    }

    /// Sign of the element as +1/-1; `None` for cyclic groups.
    pub fn sign(&self, g: usize) -> Option<f64> {
        self.perm(g).map(|w| if perm_parity(w) { -1.0 } else { 1.0 })
    }

    pub fn element_order(&self, g: usize) -> usize {
        let mut k = 1;
        let mut x = g;
        while x != self.identity() {
            x = self.mul(x, g);
            k += 1;
        }
        k
    }

    /// Checks the group-table invariants; associativity is checked in full for
    /// order ≤ 60 and on `samples` random triples otherwise.
    pub fn validate(&self, samples: usize, seed: u64) -> Result<()> {
        let n = self.order;
        let e = self.identity();
        for g in 0..n {
            if self.mul(e, g) != g || self.mul(g, e) != g {
                return Err(Error::Validation(format!("identity law fails at {g}")));
            }
            if self.mul(g, self.inv(g)) != e {
                return Err(Error::Validation(format!("inverse law fails at {g}")));
            }
        }
        if n <= CAYLEY_TABLE_LIMIT {
            for g in 0..n {
                let mut row = vec![false; n];
                let mut col = vec![false; n];
                for h in 0..n {
                    row[self.mul(g, h)] = true;
                    col[self.mul(h, g)] = true;
                }
                if row.iter().chain(&col).any(|b| !b) {
                    return Err(Error::Validation(format!("row/column {g} is not a permutation")));
                }
            }
        }
        let assoc = |a: usize, b: usize, c: usize| self.mul(self.mul(a, b), c) == self.mul(a, self.mul(b, c));
        if n <= 60 {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        if !assoc(a, b, c) {
                            return Err(Error::Validation("associativity fails".into()));
                        }
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                if !assoc(a, b, c) {
                    return Err(Error::Validation("associativity fails".into()));
                }
            }
        }
        Ok(())
    }

    /// Subgroup generated by `gens`.
    pub fn generate(&self, gens: &[usize]) -> Subgroup {
        let mut mask = vec![false; self.order];
        mask[self.identity()] = true;
        let mut members = vec![self.identity()];
        let mut queue = VecDeque::from([self.identity()]);
        while let Some(x) = queue.pop_front() {
            for &s in gens {
                let y = self.mul(x, s);
                if !mask[y] {
                    mask[y] = true;
                    members.push(y);
                    queue.push_back(y);
                }
            }
        }
        members.sort_unstable();
        Subgroup { members, mask }
    }

    pub fn trivial_subgroup(&self) -> Subgroup {
        self.generate(&[])
    }

    pub fn whole(&self) -> Subgroup {
        Subgroup::from_members_unchecked(self.order, (0..self.order).collect())
    }

    /// Point stabilizer of `point` in the natural action.
    pub fn point_stabilizer(&self, point: usize) -> Option<Subgroup> {
        self.degree()?;
        let members = (0..self.order).filter(|&g| self.perms[g][point] as usize == point).collect();
        Some(Subgroup::from_members_unchecked(self.order, members))
    }

    /// The even elements of a permutation group.
    pub fn even_subgroup(&self) -> Option<Subgroup> {
        self.degree()?;
        let members = (0..self.order).filter(|&g| !perm_parity(&self.perms[g])).collect();
        Some(Subgroup::from_members_unchecked(self.order, members))
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Subgroup {
    members: Vec<usize>,
    mask: Vec<bool>,
}

impl fmt::Debug for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Subgroup(order {}, {:?})", self.members.len(), self.members)
    }
}

impl Subgroup {
    /// Validates membership closure and returns the subgroup.
    pub fn new(group: &Group, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.iter().any(|&g| g >= group.order()) {
            return Err(Error::Validation("subgroup member out of range".into()));
        }
        let s = Self::from_members_unchecked(group.order(), members);
        if !s.contains(group.identity()) {
            return Err(Error::Validation("subgroup lacks the identity".into()));
        }
        for &a in &s.members {
            if !s.contains(group.inv(a)) {
                return Err(Error::Validation("subgroup not closed under inverse".into()));
            }
            for &b in &s.members {
                if !s.contains(group.mul(a, b)) {
                    return Err(Error::Validation("subgroup not closed under multiplication".into()));
                }
            }
        }
        Ok(s)
    }

    fn from_members_unchecked(order: usize, members: Vec<usize>) -> Self {
        let mut mask = vec![false; order];
        for &m in &members {
            mask[m] = true;
        }
        Self { members, mask }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn contains(&self, g: usize) -> bool {
        self.mask[g]
    }

    pub fn index_in(&self, group: &Group) -> usize {
        group.order() / self.order()
    }

    /// `g H g⁻¹`
    pub fn conjugate(&self, group: &Group, g: usize) -> Subgroup {
        let mut members: Vec<usize> = self.members.iter().map(|&h| group.conj(g, h)).collect();
        members.sort_unstable();
        Self::from_members_unchecked(group.order(), members)
    }

    pub fn is_normal(&self, group: &Group) -> bool {
        group.elements().all(|g| self.members.iter().all(|&h| self.contains(group.conj(g, h))))
    }

    pub fn is_abelian(&self, group: &Group) -> bool {
        self.members.iter().all(|&a| self.members.iter().all(|&b| group.mul(a, b) == group.mul(b, a)))
    }

    pub fn is_cyclic(&self, group: &Group) -> bool {
        self.members.iter().any(|&g| group.element_order(g) == self.order())
    }

    fn key(&self) -> Vec<u64> {
        let mut k = vec![0u64; self.mask.len().div_ceil(64)];
        for &m in &self.members {
            k[m / 64] |= 1 << (m % 64);
        }
        k
    }
}

/// Conjugates a subgroup: `{g h g⁻¹ : h ∈ H}`.
pub fn conjugate_subgroup(group: &Group, h: &Subgroup, g: usize) -> Subgroup {
    h.conjugate(group, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Blocks `gH`.
    Left,
    /// Blocks `Hg`.
    Right,
}

#[derive(Clone, Debug)]
pub struct CosetPartition {
    pub side: Side,
    pub blocks: Vec<Vec<usize>>,
    pub block_of: Vec<usize>,
}

impl CosetPartition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Partitions the group into left (`gH`) or right (`Hg`) cosets. Blocks are
/// ordered by their smallest element, so block 0 is `H` itself.
pub fn enumerate_cosets(group: &Group, h: &Subgroup, side: Side) -> Result<CosetPartition> {
    if h.mask.len() != group.order() || !h.contains(group.identity()) {
        return Err(Error::Validation("subgroup does not belong to this group".into()));
    }
    for &a in h.members() {
        for &b in h.members() {
            if !h.contains(group.mul(a, b)) {
                return Err(Error::Validation("subgroup not closed".into()));
            }
        }
    }
    let mut block_of = vec![usize::MAX; group.order()];
    let mut blocks = Vec::new();
    for g in group.elements() {
        if block_of[g] != usize::MAX {
            continue;
        }
        let mut block: Vec<usize> = h
            .members()
            .iter()
            .map(|&x| match side {
                Side::Left => group.mul(g, x),
                Side::Right => group.mul(x, g),
            })
            .collect();
        block.sort_unstable();
        for &x in &block {
            block_of[x] = blocks.len();
        }
        blocks.push(block);
    }
    Ok(CosetPartition { side, blocks, block_of })
}

/// One conjugacy class of subgroups.
#[derive(Clone, Debug)]
pub struct SubgroupClass {
    pub representative: Subgroup,
    pub conjugates: Vec<Subgroup>,
    pub order: usize,
    pub index: usize,
    pub name: String,
}

/// Enumerates all subgroups of index at most `max_index`, one class per
/// conjugacy class. Classes are sorted by decreasing order, then by a
/// canonical member key.
pub fn enumerate_subgroups(group: &Group, max_index: usize) -> Result<Vec<SubgroupClass>> {
    if group.order() > SUBGROUP_ENUMERATION_LIMIT {
        return Err(Error::Capacity(format!(
            "subgroup enumeration supports order ≤ {SUBGROUP_ENUMERATION_LIMIT}, got {}",
            group.order()
        )));
    }
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut all: Vec<Subgroup> = Vec::new();
    let mut cyclic: Vec<Subgroup> = Vec::new();
    for g in group.elements() {
        let c = group.generate(&[g]);
        if seen.insert(c.key()) {
            cyclic.push(c.clone());
            all.push(c);
        }
    }
    // Every subgroup is the join of its cyclic subgroups, so closing under
    // joins with cyclic subgroups reaches all of them.
    let mut frontier: Vec<usize> = (0..all.len()).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &i in &frontier {
            for c in &cyclic {
                if c.members().iter().all(|&x| all[i].contains(x)) {
                    continue;
                }
                let gens: Vec<usize> = generators_of(group, &all[i]).into_iter().chain(generators_of(group, c)).collect();
                let j = group.generate(&gens);
                if seen.insert(j.key()) {
                    all.push(j);
                    next.push(all.len() - 1);
                }
            }
        }
        frontier = next;
    }

    let mut class_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut classes: Vec<SubgroupClass> = Vec::new();
    for s in &all {
        if s.index_in(group) > max_index || class_of.contains_key(&s.key()) {
            continue;
        }
        let mut conjugates: Vec<Subgroup> = Vec::new();
        let mut keys = HashSet::new();
        for g in group.elements() {
            let c = s.conjugate(group, g);
            if keys.insert(c.key()) {
                conjugates.push(c);
            }
        }
        conjugates.sort_by_key(|c| c.key());
        for c in &conjugates {
            class_of.insert(c.key(), classes.len());
        }
        let representative = conjugates[0].clone();
        let order = representative.order();
        classes.push(SubgroupClass {
            name: String::new(),
            index: group.order() / order,
            order,
            representative,
            conjugates,
        });
    }
    classes.sort_by(|a, b| b.order.cmp(&a.order).then_with(|| a.representative.key().cmp(&b.representative.key())));
    for i in 0..classes.len() {
        classes[i].name = describe_subgroup(group, &classes[i].representative);
    }
    disambiguate_names(&mut classes);
    Ok(classes)
}

fn generators_of(group: &Group, s: &Subgroup) -> Vec<usize> {
    // Greedy: add an element whenever it is not in the span so far.
    let mut gens = Vec::new();
    let mut span = group.trivial_subgroup();
    for &x in s.members() {
        if !span.contains(x) {
            gens.push(x);
            span = group.generate(&gens);
            if span.order() == s.order() {
                break;
            }
        }
    }
    gens
}

/// Isomorphism-type name for small subgroups; `G<order>` when unknown.
pub fn describe_subgroup(group: &Group, s: &Subgroup) -> String {
    let n = s.order();
    if n == 1 {
        return "1".into();
    }
    if n == group.order() {
        return group.kind().short_name();
    }
    if s.is_cyclic(group) {
        return format!("Z{n}");
    }
    let abelian = s.is_abelian(group);
    let involutions = s.members().iter().filter(|&&g| group.element_order(g) == 2).count();
    match (n, abelian) {
        (4, true) => "V4".into(),
        (6, false) => "S3".into(),
        (8, false) if involutions == 5 => "D8".into(),
        (8, false) => "Q8".into(),
        (12, false) if !s.members().iter().any(|&g| group.element_order(g) == 6) && involutions == 3 => "A4".into(),
        (12, false) => "D12".into(),
        (10, false) => "D10".into(),
        (20, false) => "F20".into(),
        (24, false) => "S4".into(),
        (60, false) => "A5".into(),
        _ => format!("G{n}"),
    }
}

fn disambiguate_names(classes: &mut [SubgroupClass]) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in classes.iter() {
        *counts.entry(c.name.clone()).or_default() += 1;
    }
    let mut next: HashMap<String, usize> = HashMap::new();
    for c in classes.iter_mut() {
        if counts[&c.name] > 1 {
            let k = next.entry(c.name.clone()).or_default();
            c.name = format!("{}^{}", c.name, k);
            *k += 1;
        }
    }
}

/// Double-coset representatives of `H \ G / K`, with each double coset's
/// members.
pub fn double_cosets(group: &Group, h: &Subgroup, k: &Subgroup) -> Vec<Vec<usize>> {
    let mut seen = vec![false; group.order()];
    let mut out = Vec::new();
    for g in group.elements() {
        if seen[g] {
            continue;
        }
        let mut block = Vec::new();
        for &a in h.members() {
            let ag = group.mul(a, g);
            for &b in k.members() {
                let x = group.mul(ag, b);
                if !seen[x] {
                    seen[x] = true;
                    block.push(x);
                }
            }
        }
        block.sort_unstable();
        out.push(block);
    }
    out
}
