//! Causal interventions on trained models: embedding swaps, sign flips, a
//! changed nonlinearity and noise on hidden preactivations.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::Group;
use crate::model::{evaluate_with, Activation, Dataset, EmbeddingFactors, EvalOptions, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Intervention {
    SwapEmbeddings,
    NegateLeft,
    NegateRight,
    NegateBoth,
    AbsNonlinearity,
    /// Adds `N(mean, std²)` noise to every hidden preactivation, or subtracts
    /// it when `subtract` is set (the table's "N(1, −1)").
    Perturb { mean: f64, std: f64, subtract: bool },
}

impl Intervention {
    pub fn label(&self) -> String {
        match *self {
            Intervention::SwapEmbeddings => "Embedding swap".into(),
            Intervention::NegateLeft => "Switch left sign".into(),
            Intervention::NegateRight => "Switch right sign".into(),
            Intervention::NegateBoth => "Switch left and right sign".into(),
            Intervention::AbsNonlinearity => "Absolute value nonlinearity".into(),
            Intervention::Perturb { mean, std, subtract } => {
                let s = if subtract { -std } else { std };
                format!("Perturb N({mean},{s})")
            }
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Intervention::Perturb { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let Intervention::Perturb { mean, std, .. } = *self {
            if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
                return Err(Error::Validation(format!("perturbation needs finite mean and std ≥ 0, got N({mean}, {std})")));
            }
        }
        Ok(())
    }

    /// The nine interventions of the comparison table, in table order.
    pub fn suite() -> Vec<Intervention> {
        let p = |mean, std, subtract| Intervention::Perturb { mean, std, subtract };
        vec![
            Intervention::SwapEmbeddings,
            Intervention::NegateBoth,
            Intervention::NegateLeft,
            Intervention::NegateRight,
            Intervention::AbsNonlinearity,
            p(0.0, 1.0, false),
            p(0.0, 0.1, false),
            p(1.0, 1.0, false),
            p(1.0, 1.0, true),
        ]
    }
}

/// Weights and evaluation mode after an intervention.
#[derive(Clone, Debug)]
pub struct Intervened {
    pub params: ModelParams,
    pub activation: Activation,
}

/// Applies the weight-level part of `iv`. Embedding swaps exchange `E_l`
/// and `E_r` under fixed linearities when `factors` are known, and the
/// collapsed embeddings otherwise.
pub fn apply(theta: &ModelParams, factors: Option<&EmbeddingFactors>, iv: Intervention) -> Result<Intervened> {
    iv.validate()?;
    let mut params = theta.clone();
    let mut activation = Activation::Relu;
    match iv {
        Intervention::SwapEmbeddings => match factors {
            Some(f) => {
                let swapped = EmbeddingFactors { emb_l: f.emb_r.clone(), emb_r: f.emb_l.clone(), ..f.clone() };
                params = swapped.collapse_onto(theta)?;
            }
            None => std::mem::swap(&mut params.w_l, &mut params.w_r),
        },
        Intervention::NegateLeft => params.w_l.iter_mut().for_each(|v| *v = -*v),
        Intervention::NegateRight => params.w_r.iter_mut().for_each(|v| *v = -*v),
        Intervention::NegateBoth => {
            params.w_l.iter_mut().chain(params.w_r.iter_mut()).for_each(|v| *v = -*v);
        }
        Intervention::AbsNonlinearity => activation = Activation::Abs,
        Intervention::Perturb { .. } => {}
    }
    Ok(Intervened { params, activation })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterventionRow {
    pub intervention: String,
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    pub n_runs: usize,
}

/// Accuracy and loss over all `|G|²` inputs for one run of `iv`.
pub fn run_once(group: &Group, theta: &ModelParams, factors: Option<&EmbeddingFactors>, iv: Intervention, seed: u64) -> Result<(f64, f64)> {
    let data = Dataset::full(group);
    let out = apply(theta, factors, iv)?;
    let noise = match iv {
        Intervention::Perturb { mean, std, subtract } => {
            let dist = Normal::new(mean, std).map_err(|e| Error::Validation(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sign = if subtract { -1.0 } else { 1.0 };
            Some((0..data.len() * theta.hidden).map(|_| sign * dist.sample(&mut rng)).collect::<Vec<f64>>())
        }
        _ => None,
    };
    let opts = EvalOptions { activation: out.activation, preact_noise: noise.as_deref() };
    let e = evaluate_with(&out.params, &data, opts);
    Ok((e.accuracy, e.loss))
}

/// The base model followed by every intervention of the suite, each
/// averaged over `n_runs` (deterministic interventions are evaluated once,
/// as every run would agree).
pub fn run_suite(group: &Group, theta: &ModelParams, factors: Option<&EmbeddingFactors>, n_runs: usize, seed: u64) -> Result<Vec<InterventionRow>> {
    let n_runs = n_runs.max(1);
    let data = Dataset::full(group);
    let base = evaluate_with(theta, &data, EvalOptions::default());
    let mut rows = vec![InterventionRow { intervention: "Base model".into(), mean_accuracy: base.accuracy, mean_loss: base.loss, n_runs }];
    for (k, iv) in Intervention::suite().into_iter().enumerate() {
        let runs = if iv.is_random() { n_runs } else { 1 };
        let (mut acc, mut loss) = (0.0, 0.0);
        for r in 0..runs {
            let (a, l) = run_once(group, theta, factors, iv, seed.wrapping_add((k * 1_000_003 + r) as u64))?;
            acc += a;
            loss += l;
        }
        rows.push(InterventionRow { intervention: iv.label(), mean_accuracy: acc / runs as f64, mean_loss: loss / runs as f64, n_runs });
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(out: W, rows: &[InterventionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupKind;

    fn model() -> (Group, ModelParams) {
        let g = Group::new(GroupKind::Symmetric(3)).unwrap();
        let p = ModelParams::random(&g, 6, true, 1);
        (g, p)
    }

    #[test]
    fn negate_both_is_an_involution() {
        let (_, p) = model();
        let once = apply(&p, None, Intervention::NegateBoth).unwrap().params;
        let twice = apply(&once, None, Intervention::NegateBoth).unwrap().params;
        assert_eq!(twice, p);
    }

    #[test]
    fn swap_on_symmetric_embeddings_keeps_logits() {
        let (g, mut p) = model();
        p.w_r = p.w_l.clone();
        let q = apply(&p, None, Intervention::SwapEmbeddings).unwrap().params;
        for x in 0..6 {
            for y in 0..6 {
                assert_eq!(crate::model::forward(&p, x, y), crate::model::forward(&q, x, y));
            }
        }
        let _ = g;
    }

    #[test]
    fn factored_swap_keeps_linearities() {
        let (_, p) = model();
        let n = p.order;
        let m = p.hidden;
        let mut lin_l = vec![0.0; m * m];
        let mut lin_r = vec![0.0; m * m];
        for i in 0..m {
            lin_l[i * m + i] = 1.0;
            lin_r[i * m + i] = 2.0;
        }
        let f = EmbeddingFactors { order: n, hidden: m, emb_l: p.left_by_input(), emb_r: p.right_by_input(), lin_l, lin_r };
        let base = f.collapse_onto(&p).unwrap();
        let q = apply(&base, Some(&f), Intervention::SwapEmbeddings).unwrap().params;
        // w_l' = W_l E_r = w_r(orig), w_r' = W_r E_l = 2 w_l(orig).
        for k in 0..n * m {
            assert!((q.w_l[k] - p.w_r[k]).abs() < 1e-12);
            assert!((q.w_r[k] - 2.0 * p.w_l[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_std_is_rejected() {
        let (_, p) = model();
        assert!(apply(&p, None, Intervention::Perturb { mean: 0.0, std: -1.0, subtract: false }).is_err());
    }

    #[test]
    fn suite_is_deterministic() {
        let (g, p) = model();
        let a = run_suite(&g, &p, None, 3, 7).unwrap();
        let b = run_suite(&g, &p, None, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.mean_accuracy)));
    }
}
