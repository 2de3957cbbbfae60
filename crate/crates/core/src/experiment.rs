//! Batch experiments: train a model pool, interpret and verify every model,
//! and write report CSVs.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Group, GroupKind};
use crate::idealized::{interpretation_of, materialize, CircuitSpec, RhoSetCircuitSpec};
use crate::interpret::{build_coset_interpretation, build_irrep_interpretation, CosetInterpretation, Diagnostics, IrrepInterpretation};
use crate::model::{accuracy, cross_entropy, train, CurvePoint, Dataset, EmbeddingFactors, ModelParams, TrainConfig};
use crate::rep::{perm_rep_on_cosets, rho_set_from_action, IrrepTable};
use crate::verify::{ce_bound_margin, ce_bound_smooth, v_brute, v_coset, v_irrep_certificate, LossMethod, VerifierReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Brute,
    Irrep,
    Coset,
}

impl VerifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            VerifierKind::Brute => "brute",
            VerifierKind::Irrep => "irrep",
            VerifierKind::Coset => "coset",
        }
    }
}

impl FromStr for VerifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "brute" => Ok(VerifierKind::Brute),
            "irrep" => Ok(VerifierKind::Irrep),
            "coset" => Ok(VerifierKind::Coset),
            other => Err(Error::Validation(format!("unknown verifier {other:?} (expected brute, irrep or coset)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub group: GroupKind,
    pub models: usize,
    pub train: TrainConfig,
    pub verifiers: Vec<VerifierKind>,
    pub attempts: usize,
    pub out: PathBuf,
    pub single_thread: bool,
    /// Base seed; model `i` trains with `seed + i`.
    pub seed: u64,
    /// Timing repetitions per verifier (the median is reported).
    pub timing_reps: usize,
    /// Runs per random intervention; 0 skips the intervention suite.
    #[serde(default)]
    pub intervention_runs: usize,
}

impl ExperimentConfig {
    pub fn defaults_for(group: GroupKind) -> Self {
        ExperimentConfig {
            group,
            models: 10,
            train: TrainConfig::defaults_for(group),
            verifiers: vec![VerifierKind::Brute, VerifierKind::Irrep, VerifierKind::Coset],
            attempts: 5,
            out: PathBuf::from("rhoset-out"),
            single_thread: true,
            seed: 0,
            timing_reps: 3,
            intervention_runs: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub id: usize,
    pub params: ModelParams,
    pub factors: Option<EmbeddingFactors>,
    pub curve: Vec<CurvePoint>,
    pub test_accuracy: f64,
}

/// Trains `cfg.models` models with seeds `cfg.seed + i`.
pub fn train_pool(group: &Group, cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    (0..cfg.models)
        .map(|id| {
            let tc = TrainConfig { seed: cfg.seed + id as u64, ..cfg.train.clone() };
            let out = train(group, &tc)?;
            let test_accuracy = if out.test.is_empty() { 1.0 } else { accuracy(&out.params, &out.test) };
            log::info!("model {id}: test accuracy {test_accuracy:.4}");
            Ok(TrainedModel { id, params: out.params, factors: out.factors, curve: out.curve, test_accuracy })
        })
        .collect()
}

/// One row of the verifier report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_id: String,
    pub verifier: String,
    pub bound: f64,
    pub wall_time_s: f64,
    pub margin: f64,
    #[serde(rename = "max_L")]
    pub max_l: f64,
    pub a_bad: bool,
    pub rho_bad: bool,
    pub n_certified_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub model_id: String,
    pub method: String,
    pub bound: f64,
    pub finite: bool,
    pub true_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterRow {
    pub x: usize,
    pub y: usize,
    pub margin: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

#[derive(Clone, Debug)]
pub struct ModelEvaluation {
    pub model_id: String,
    pub accuracy: f64,
    pub loss: f64,
    pub rows: Vec<ReportRow>,
    pub reports: Vec<VerifierReport>,
    pub loss_rows: Vec<LossRow>,
    pub irrep: Option<(IrrepInterpretation, Diagnostics)>,
    pub coset: Option<CosetInterpretation>,
    pub scatter: Vec<ScatterRow>,
    /// Verifiers whose bound exceeded the exact accuracy.
    pub violations: Vec<String>,
}

/// Runs `f` `reps` times and returns the last result with the median time.
pub fn median_time<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let mut times = Vec::with_capacity(reps.max(1));
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        last = Some(f());
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    (last.expect("at least one repetition"), times[times.len() / 2])
}

/// Interpretations to use; either supplied or built from the weights.
#[derive(Clone, Debug, Default)]
pub struct Interpretations {
    pub irrep: Option<(IrrepInterpretation, Diagnostics)>,
    pub coset: Option<CosetInterpretation>,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    group: &Group,
    table: &IrrepTable,
    model_id: &str,
    theta: &ModelParams,
    verifiers: &[VerifierKind],
    attempts: usize,
    seed: u64,
    timing_reps: usize,
    given: Interpretations,
) -> Result<ModelEvaluation> {
    let data = Dataset::full(group);
    let exact = accuracy(theta, &data);
    let loss = cross_entropy(theta, &data);
    let want = |k: VerifierKind| verifiers.contains(&k);
    let irrep = match given.irrep {
        Some(i) => Some(i),
        None if want(VerifierKind::Irrep) => Some(build_irrep_interpretation(group, table, theta, seed, attempts)),
        None => None,
    };
    let coset = match given.coset {
        Some(c) => Some(c),
        None if want(VerifierKind::Coset) => Some(build_coset_interpretation(group, theta)?),
        None => None,
    };
    let (a_bad, rho_bad) = irrep.as_ref().map_or((false, false), |(_, d)| (d.a_bad, d.rho_bad));
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut loss_rows = Vec::new();
    let mut scatter = Vec::new();
    let mut violations = Vec::new();
    let mut push = |report: VerifierReport, time: f64, rows: &mut Vec<ReportRow>| {
        if report.bound > exact {
            violations.push(format!("{model_id}: {} bound {} exceeds accuracy {exact}", report.verifier, report.bound));
        }
        rows.push(ReportRow {
            model_id: model_id.to_string(),
            verifier: report.verifier.clone(),
            bound: report.bound,
            wall_time_s: time,
            margin: report.margin,
            max_l: report.max_l,
            a_bad,
            rho_bad,
            n_certified_pairs: report.n_certified_pairs,
        });
        reports.push(report);
    };
    for &kind in verifiers {
        match kind {
            VerifierKind::Brute => {
                let (r, t) = median_time(timing_reps, || v_brute(group, theta));
                push(r, t, &mut rows);
            }
            VerifierKind::Irrep => {
                let (pi, _) = irrep.as_ref().expect("built above");
                let (cert, t) = median_time(timing_reps, || v_irrep_certificate(group, table, theta, pi));
                let n = group.order();
                let margins = cert.pair_margins();
                for x in 0..n {
                    for y in 0..n {
                        scatter.push(ScatterRow { x, y, margin: cert.margin, l: cert.distance.l(x * n + y) });
                    }
                }
                let m = ce_bound_margin(&margins, n);
                loss_rows.push(LossRow { model_id: model_id.into(), method: "margin".into(), bound: m.bound, finite: m.finite, true_loss: loss });
                let s = ce_bound_smooth(group, theta, &cert.ideal, cert.slack)?;
                let method = if s.method == LossMethod::Smooth { "smooth" } else { "lipschitz" };
                loss_rows.push(LossRow { model_id: model_id.into(), method: method.into(), bound: s.bound, finite: s.finite, true_loss: loss });
                push(cert.report, t, &mut rows);
            }
            VerifierKind::Coset => {
                let pi = coset.as_ref().expect("built above");
                let (r, t) = median_time(timing_reps, || v_coset(group, theta, pi));
                push(r, t, &mut rows);
            }
        }
    }
    Ok(ModelEvaluation { model_id: model_id.into(), accuracy: exact, loss, rows, reports, loss_rows, irrep, coset, scatter, violations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub verifier: String,
    pub n_models: usize,
    pub mean_bound: f64,
    pub mean_wall_time_s: f64,
    /// Share of models with bound ≥ 0.95.
    pub frac_bound_ge_095: f64,
}

pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.verifier.as_str()) {
            names.push(&r.verifier);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.verifier == name).collect();
            let k = sel.len() as f64;
            SummaryRow {
                verifier: name.to_string(),
                n_models: sel.len(),
                mean_bound: sel.iter().map(|r| r.bound).sum::<f64>() / k,
                mean_wall_time_s: sel.iter().map(|r| r.wall_time_s).sum::<f64>() / k,
                frac_bound_ge_095: sel.iter().filter(|r| r.bound >= 0.95).count() as f64 / k,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV with only a header when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush()?;
        return Ok(());
    }
    write_csv(path, rows)
}

pub const REPORT_HEADER: [&str; 9] = ["model_id", "verifier", "bound", "wall_time_s", "margin", "max_L", "a_bad", "rho_bad", "n_certified_pairs"];

/// One ρ-set vector, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoSetPoint {
    pub source: String,
    pub irrep: String,
    pub partition: usize,
    pub index: usize,
    pub coordinates: String,
}

pub fn rho_set_points(source: &str, pi: &IrrepInterpretation) -> Vec<RhoSetPoint> {
    let mut out = Vec::new();
    for (q, part) in pi.partitions.iter().enumerate() {
        for (j, v) in part.vectors.iter().enumerate() {
            out.push(RhoSetPoint {
                source: source.into(),
                irrep: part.irrep.clone(),
                partition: q,
                index: j,
                coordinates: v.iter().map(|c| format!("{c:.12}")).collect::<Vec<_>>().join(" "),
            });
        }
    }
    out
}

/// A smallest ρ-set of every non-trivial irrep, built from the coset action
/// of a largest subgroup that fixes a vector.
pub fn minimal_rho_sets(group: &Group, table: &IrrepTable) -> Result<Vec<RhoSetPoint>> {
    let classes = crate::group::enumerate_subgroups(group, group.order())?;
    let mut out = Vec::new();
    for irrep in table.irreps.iter().filter(|r| !r.is_trivial()) {
        // Classes come sorted by decreasing order, so the first that works
        // gives the smallest orbit.
        for class in &classes {
            let Ok(action) = perm_rep_on_cosets(group, &class.representative) else { continue };
            if let Ok(set) = rho_set_from_action(&action, irrep) {
                for (j, v) in set.vectors.iter().enumerate() {
                    out.push(RhoSetPoint {
                        source: format!("{} / {}", group.kind(), class.name),
                        irrep: irrep.name.clone(),
                        partition: 0,
                        index: j,
                        coordinates: v.iter().map(|c| format!("{c:.12}")).collect::<Vec<_>>().join(" "),
                    });
                }
                break;
            }
        }
    }
    Ok(out)
}

/// Arithmetic-operation counts of one verifier on one group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpsPoint {
    pub group: String,
    pub order: usize,
    pub hidden: usize,
    pub verifier: String,
    pub ops: u64,
    pub wall_time_s: f64,
}

/// The standard-irrep ρ-set circuit of `S_n`, padded with dead neurons to
/// `hidden`, with its exact interpretation.
pub fn padded_standard_circuit(group: &Group, table: &IrrepTable, hidden: usize) -> Result<(ModelParams, IrrepInterpretation)> {
    let n = group.degree().ok_or_else(|| Error::Unsupported("standard circuits need a symmetric group".into()))?;
    let h = group.point_stabilizer(n - 1).ok_or_else(|| Error::Unsupported("no point stabilizer".into()))?;
    let action = perm_rep_on_cosets(group, &h)?;
    let irrep = table
        .irreps
        .iter()
        .find(|r| r.dim == n - 1 && rho_set_from_action(&action, r).is_ok())
        .ok_or_else(|| Error::Unsupported("no standard irrep".into()))?;
    let set = rho_set_from_action(&action, irrep)?;
    let mut a: Vec<f64> = (0..irrep.dim).map(|i| 1.0 + 0.37 * i as f64).collect();
    let norm = crate::linalg::norm2(&a);
    a.iter_mut().for_each(|v| *v /= norm);
    let model = materialize(group, table, vec![CircuitSpec::RhoSet(RhoSetCircuitSpec { irrep: irrep.name.clone(), rho_set: set.vectors, a, c: 1.0 })])?;
    let used = model.params.hidden;
    if used > hidden {
        return Err(Error::Capacity(format!("circuit needs {used} neurons, only {hidden} available")));
    }
    let mut pi = interpretation_of(&model, group.kind());
    pi.neurons.resize(hidden, None);
    let order = group.order();
    let mut p = ModelParams::zeros(group.kind(), order, hidden, model.params.bias_enabled);
    p.w_b.clone_from(&model.params.w_b);
    p.w_l[..used * order].copy_from_slice(&model.params.w_l);
    p.w_r[..used * order].copy_from_slice(&model.params.w_r);
    for z in 0..order {
        for i in 0..used {
            p.w_u[z * hidden + i] = model.params.w_u[z * used + i];
        }
    }
    Ok((p, pi))
}

/// V_brute and V_irrep operation counts and times on the padded standard
/// circuit of each group at a fixed hidden size.
pub fn ops_scaling(groups: &[GroupKind], hidden: usize, timing_reps: usize) -> Result<Vec<OpsPoint>> {
    let mut out = Vec::new();
    for &kind in groups {
        let group = Group::new(kind)?;
        let table = IrrepTable::new(&group)?;
        let (p, pi) = padded_standard_circuit(&group, &table, hidden)?;
        let (b, tb) = median_time(timing_reps, || v_brute(&group, &p));
        let (c, ti) = median_time(timing_reps, || v_irrep_certificate(&group, &table, &p, &pi));
        for (name, ops, t) in [("brute", b.ops, tb), ("irrep", c.report.ops, ti)] {
            out.push(OpsPoint { group: kind.to_string(), order: group.order(), hidden, verifier: name.into(), ops, wall_time_s: t });
        }
    }
    Ok(out)
}

/// Least-squares slope of `log ops` against `log |G|` for one verifier.
pub fn loglog_slope(points: &[OpsPoint], verifier: &str) -> f64 {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|p| p.verifier == verifier).map(|p| ((p.order as f64).ln(), (p.ops as f64).ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutcome {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    pub violations: Vec<String>,
}

/// Trains the pool, evaluates every model, and writes `report.csv`,
/// `summary.csv`, `loss_bounds.csv`, `rhosets.csv`, per-model weights,
/// curves, interpretations, interventions and margin-vs-L scatter data
/// under `cfg.out`.
pub fn run_experiment_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let group = Group::new(cfg.group)?;
    let table = IrrepTable::new(&group)?;
    std::fs::create_dir_all(&cfg.out)?;
    let models = train_pool(&group, cfg)?;
    let mut outcome = SuiteOutcome::default();
    let mut loss_rows = Vec::new();
    let mut points = Vec::new();
    for model in &models {
        let id = format!("{}-{}", cfg.group.short_name(), model.id);
        let mut wf = crate::model::WeightFile::from_params(&model.params);
        wf.factors.clone_from(&model.factors);
        crate::model::save_weight_file(&cfg.out.join(format!("{id}.weights.json")), &wf)?;
        crate::model::write_curve_csv(&cfg.out.join(format!("{id}.curve.csv")), &model.curve)?;
        let eval = evaluate_model(&group, &table, &id, &model.params, &cfg.verifiers, cfg.attempts, cfg.seed, cfg.timing_reps, Interpretations::default())?;
        if let Some((pi, diag)) = &eval.irrep {
            crate::interpret::save_json(pi, &cfg.out.join(format!("{id}.irrep.json")))?;
            crate::interpret::save_json(diag, &cfg.out.join(format!("{id}.diagnostics.json")))?;
            points.extend(rho_set_points(&id, pi));
        }
        if let Some(pi) = &eval.coset {
            crate::interpret::save_json(pi, &cfg.out.join(format!("{id}.coset.json")))?;
        }
        if cfg.intervention_runs > 0 {
            let rows = crate::interventions::run_suite(&group, &model.params, model.factors.as_ref(), cfg.intervention_runs, cfg.seed)?;
            crate::interventions::write_rows(std::fs::File::create(cfg.out.join(format!("{id}.interventions.csv")))?, &rows)?;
        }
        if !eval.scatter.is_empty() {
            write_csv(&cfg.out.join(format!("{id}.margin_vs_L.csv")), &eval.scatter)?;
        }
        outcome.rows.extend(eval.rows);
        loss_rows.extend(eval.loss_rows);
        outcome.violations.extend(eval.violations);
    }
    outcome.summary = summarize(&outcome.rows);
    write_csv_with_header(&cfg.out.join("report.csv"), &REPORT_HEADER, &outcome.rows)?;
    write_csv_with_header(&cfg.out.join("summary.csv"), &["verifier", "n_models", "mean_bound", "mean_wall_time_s", "frac_bound_ge_095"], &outcome.summary)?;
    write_csv_with_header(&cfg.out.join("loss_bounds.csv"), &["model_id", "method", "bound", "finite", "true_loss"], &loss_rows)?;
    write_csv_with_header(&cfg.out.join("rhosets.csv"), &["source", "irrep", "partition", "index", "coordinates"], &points)?;
    if !outcome.violations.is_empty() {
        std::fs::write(cfg.out.join("violations.txt"), outcome.violations.join("\n"))?;
    }
    Ok(outcome)
}
