//! Interpretation fuzzers and brute-force oracles shared by test targets.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rhoset::group::{Group, Subgroup};
use rhoset::idealized::SignCircuitSpec;
use rhoset::interpret::{CosetInterpretation, CosetLabel, IrrepInterpretation, NeuronLabel, RhoSetPartition};
use rhoset::linalg::norm2;
use rhoset::model::{forward, ModelParams};
use rhoset::rep::{perm_rep_on_cosets, rho_set_from_action, IrrepTable};
use rhoset::verify::{logit_distance_quadratic, v_brute, v_coset, v_irrep};

pub struct FuzzContext<'a> {
    pub group: &'a Group,
    pub table: &'a IrrepTable,
    pub subgroups: &'a [Subgroup],
}

pub fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm2(&v).max(1e-300);
    v.into_iter().map(|x| x / n).collect()
}

/// A genuine ρ-set of a random irrep, from the coset action of a random subgroup.
pub fn some_rho_set(fx: &FuzzContext, rng: &mut ChaCha8Rng) -> Option<(String, Vec<Vec<f64>>)> {
    let h = fx.subgroups.choose(rng).unwrap();
    let irrep = fx.table.irreps.choose(rng).unwrap();
    let action = perm_rep_on_cosets(&fx.group, h).ok()?;
    rho_set_from_action(&action, irrep).ok().map(|s| (irrep.name.clone(), s.vectors))
}

pub fn fuzz_irrep(fx: &FuzzContext, m: usize, honest: &IrrepInterpretation, other: &IrrepInterpretation, rng: &mut ChaCha8Rng) -> IrrepInterpretation {
    let mut pi = honest.clone();
    let irrep_names: Vec<String> = fx.table.irreps.iter().map(|r| r.name.clone()).collect();
    match rng.random_range(0..9) {
        0 => {}
        1 => {
            for l in pi.neurons.iter_mut().flatten() {
                l.coefficient *= rng.random_range(-3.0..20.0);
                l.scale *= rng.random_range(0.0..5.0);
            }
        }
        2 => {
            for l in pi.neurons.iter_mut().flatten() {
                let k = pi.partitions.get(l.partition).map_or(1, |p| p.vectors.len().max(1));
                l.b = rng.random_range(0..k);
                l.b_prime = rng.random_range(0..k);
            }
        }
        3 => {
            for l in pi.neurons.iter_mut().flatten() {
                l.a = unit(random_vec(l.a.len(), rng));
            }
        }
        4 => {
            let eps = [1e-12, 1e-6, 1e-3, 0.3][rng.random_range(0..4)];
            for p in &mut pi.partitions {
                for v in &mut p.vectors {
                    v.iter_mut().for_each(|x| *x += eps * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        5 => {
            // Entirely invented: genuine ρ-sets, arbitrary labels.
            let mut partitions = Vec::new();
            for _ in 0..rng.random_range(1..4) {
                if let Some((irrep, vectors)) = some_rho_set(fx, rng) {
                    partitions.push(RhoSetPartition { irrep, vectors });
                }
            }
            if partitions.is_empty() {
                partitions.push(RhoSetPartition { irrep: "3d-0".into(), vectors: vec![vec![1.0, 0.0, 0.0]] });
            }
            let neurons = (0..m)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        return None;
                    }
                    let q = rng.random_range(0..partitions.len());
                    let part = &partitions[q];
                    let d = part.vectors[0].len();
                    Some(NeuronLabel {
                        irrep: part.irrep.clone(),
                        partition: q,
                        a: unit(random_vec(d, rng)),
                        b: rng.random_range(0..part.vectors.len()),
                        b_prime: rng.random_range(0..part.vectors.len()),
                        scale: rng.random_range(0.0..3.0),
                        coefficient: rng.random_range(-2.0..10.0),
                    })
                })
                .collect();
            let sign = rng.random_bool(0.3).then(|| SignCircuitSpec { c_plus: rng.random_range(-1.0..5.0), c_minus: rng.random_range(-1.0..5.0) });
            pi = IrrepInterpretation { group: fx.group.kind(), neurons, partitions, sign };
        }
        6 => {
            // Malformed entries.
            for l in pi.neurons.iter_mut().flatten() {
                match rng.random_range(0..6) {
                    0 => l.b = 1000,
                    1 => l.partition = 99,
                    2 => l.a = vec![1.0; 7],
                    3 => l.irrep = irrep_names.choose(rng).unwrap().clone(),
                    4 => l.coefficient = f64::NAN,
                    _ => l.irrep = "no-such-irrep".into(),
                }
            }
            if rng.random_bool(0.5) {
                pi.neurons.truncate(m / 2);
            }
            if rng.random_bool(0.3) {
                pi.partitions.clear();
            }
        }
        7 => {
            // Another model's (possibly exact) interpretation.
            pi = other.clone();
            pi.neurons.resize(m, None);
        }
        _ => {
            // Random vectors posing as ρ-sets, plus an arbitrary sign circuit.
            for p in &mut pi.partitions {
                let d = p.vectors.first().map_or(3, Vec::len);
                for v in &mut p.vectors {
                    *v = unit(random_vec(d, rng));
                }
            }
            pi.sign = Some(SignCircuitSpec { c_plus: rng.random_range(0.0..50.0), c_minus: rng.random_range(0.0..50.0) });
        }
    }
    pi
}

pub fn fuzz_coset(fx: &FuzzContext, m: usize, honest: &CosetInterpretation, rng: &mut ChaCha8Rng) -> CosetInterpretation {
    let n = fx.group.order();
    let mut pi = honest.clone();
    let label = |h: &Subgroup, g: usize| CosetLabel { subgroup: h.members().to_vec(), g, name: String::new() };
    match rng.random_range(0..5) {
        0 => {}
        1 => {
            for slot in pi.neurons.iter_mut() {
                let h = fx.subgroups.choose(rng).unwrap();
                *slot = Some(label(h, rng.random_range(0..n)));
            }
        }
        2 => {
            let whole = fx.group.whole();
            pi.neurons = (0..m).map(|_| Some(label(&whole, rng.random_range(0..n)))).collect();
        }
        3 => {
            for slot in pi.neurons.iter_mut() {
                *slot = Some(match rng.random_range(0..4) {
                    0 => CosetLabel { subgroup: vec![0, 1, 2], g: 0, name: "bogus".into() },
                    1 => CosetLabel { subgroup: vec![], g: 3, name: "empty".into() },
                    2 => CosetLabel { subgroup: fx.group.whole().members().to_vec(), g: 5000, name: "far".into() },
                    _ => CosetLabel { subgroup: vec![0, 0, 99], g: 1, name: "dup".into() },
                });
            }
            if rng.random_bool(0.5) {
                pi.neurons.truncate(m / 3);
            }
        }
        _ => {
            for slot in pi.neurons.iter_mut() {
                if let Some(l) = slot {
                    l.g = rng.random_range(0..n);
                }
            }
        }
    }
    pi
}

pub fn margin_at(group: &Group, p: &ModelParams, x: usize, y: usize) -> f64 {
    let z = group.mul(x, y);
    let f = forward(p, x, y);
    f[z] - (0..group.order()).filter(|&k| k != z).map(|k| f[k]).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest drop of the margin at `(x, y)` from `ideal` to `theta`.
pub fn margin_drop(group: &Group, theta: &ModelParams, ideal: &ModelParams, x: usize, y: usize) -> f64 {
    let z = group.mul(x, y);
    let a = forward(theta, x, y);
    let b = forward(ideal, x, y);
    let worst = (0..group.order()).filter(|&k| k != z).map(|k| a[k] - b[k]).fold(f64::NEG_INFINITY, f64::max);
    worst + (b[z] - a[z])
}


/// Runs `trials` fuzzed strings per verifier against one model; returns the
/// violations and the number of irrep strings that earned a nonzero bound.
pub fn fuzz_model(
    fx: &FuzzContext,
    p: &ModelParams,
    honest: &IrrepInterpretation,
    other: &IrrepInterpretation,
    coset: &CosetInterpretation,
    trials: usize,
    seed: u64,
) -> (Vec<String>, usize) {
    let acc = v_brute(fx.group, p).bound;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut nonzero = 0;
    for trial in 0..trials {
        let pi = fuzz_irrep(fx, p.hidden, honest, other, &mut rng);
        let b = v_irrep(fx.group, fx.table, p, &pi).bound;
        nonzero += usize::from(b > 0.0);
        if !(b <= acc) {
            violations.push(format!("irrep trial {trial}: {b} > {acc}"));
        }
        let cpi = fuzz_coset(fx, p.hidden, coset, &mut rng);
        let b = v_coset(fx.group, p, &cpi).bound;
        if !(b <= acc) {
            violations.push(format!("coset trial {trial}: {b} > {acc}"));
        }
    }
    (violations, nonzero)
}

/// Random `(θ, θ̃)` pairs on `group`; counts input pairs where the
/// quadratic logit distance falls below the true margin drop.
pub fn logit_distance_violations(group: &Group, pairs: u64) -> usize {
    let n = group.order();
    let mut violations = 0;
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..40);
        let bias = rng.random_bool(0.5);
        let theta = ModelParams::random(group, m, bias, seed);
        let ideal = if rng.random_bool(0.5) {
            ModelParams::random(group, m, bias, seed + 1000)
        } else {
            let eps = [1e-6, 1e-2, 0.5][rng.random_range(0..3)];
            let mut q = theta.clone();
            for w in [&mut q.w_l, &mut q.w_r, &mut q.w_u, &mut q.w_b] {
                w.iter_mut().for_each(|v| *v += eps * rng.sample::<f64, _>(StandardNormal));
            }
            q
        };
        let d = logit_distance_quadratic(group, &theta, &ideal).unwrap();
        for x in 0..n {
            for y in 0..n {
                if margin_drop(group, &theta, &ideal, x, y) > d.l(x * n + y) + 1e-9 {
                    violations += 1;
                }
            }
        }
    }
    violations
}
