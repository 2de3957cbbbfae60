use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rhoset::experiment::{
    evaluate_model, loglog_slope, minimal_rho_sets, ops_scaling, rho_set_points, run_experiment_suite, summarize, train_pool,
    write_csv, write_csv_with_header, ExperimentConfig, Interpretations, VerifierKind, REPORT_HEADER,
};
use rhoset::group::{Group, GroupKind};
use rhoset::interpret::{build_coset_interpretation, build_irrep_interpretation, load_json, save_json};
use rhoset::interventions::{run_suite, write_rows};
use rhoset::model::{load_weight_file, save_weight_file, write_curve_csv, TrainConfig, WeightFile};
use rhoset::rep::IrrepTable;

/// Exit status when a verifier bound exceeds the exact accuracy.
const SOUNDNESS_EXIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rhoset", version, about = "Train, interpret and verify group-composition networks")]
struct Cli {
    /// JSON experiment config; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "RHOSET_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Group, e.g. S4, S5, A5, Z53.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run everything on the calling thread.
    #[arg(long)]
    single_thread: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    /// Number of models in the pool.
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, overrides_with = "no_bias")]
    bias: bool,
    #[arg(long, overrides_with = "bias")]
    no_bias: bool,
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    /// Weight files, or directories holding `*.weights.json`.
    #[arg(long, required = true, num_args = 1..)]
    weights: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a pool of models and save weights and curves.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Build irrep and coset interpretations for saved models.
    Interpret {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        attempts: Option<usize>,
    },
    /// Run verifiers on saved models and write the report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated subset of brute, irrep, coset.
        #[arg(long, value_delimiter = ',')]
        verifiers: Option<Vec<String>>,
        #[arg(long)]
        attempts: Option<usize>,
        /// Directory with `<id>.irrep.json` / `<id>.coset.json` to reuse.
        #[arg(long)]
        interpretations: Option<PathBuf>,
    },
    /// Operation counts and timings of the verifiers across groups.
    Bench {
        /// Comma-separated symmetric groups.
        #[arg(long, value_delimiter = ',', default_value = "S3,S4,S5")]
        groups: Vec<String>,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Run the intervention suite on one model (trained on the fly if no
    /// weights are given).
    Intervene {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        runs: usize,
    },
    /// Write ρ-set coordinates: the smallest ρ-set of every irrep of the
    /// group, plus those of any given interpretations.
    ExportRhoset {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 0..)]
        interpretations: Vec<PathBuf>,
    },
    /// Train, interpret and verify a pool end to end.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',')]
        verifiers: Option<Vec<String>>,
        #[arg(long)]
        attempts: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn base_config(cli: &Cli, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let kind = GroupKind::parse(common.group.as_deref().unwrap_or("S5"))?;
            ExperimentConfig::defaults_for(kind)
        }
    };
    if let Some(g) = &common.group {
        let kind = GroupKind::parse(g)?;
        if kind != cfg.group {
            cfg.group = kind;
            cfg.train = TrainConfig { epochs: cfg.train.epochs, ..TrainConfig::defaults_for(kind) };
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.single_thread {
        cfg.single_thread = true;
    }
    if let Some(out) = &cli.out {
        cfg.out.clone_from(out);
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut ExperimentConfig, t: &TrainArgs) {
    if let Some(n) = t.models {
        cfg.models = n;
    }
    if let Some(e) = t.epochs {
        cfg.train.epochs = e;
    }
    if let Some(h) = t.hidden {
        cfg.train.hidden = h;
    }
    if t.bias {
        cfg.train.bias_enabled = true;
    }
    if t.no_bias {
        cfg.train.bias_enabled = false;
    }
}

fn parse_verifiers(v: &[String]) -> Result<Vec<VerifierKind>> {
    Ok(v.iter().map(|s| s.parse()).collect::<rhoset::Result<Vec<_>>>()?)
}

fn weight_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".weights.json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no weight files found");
    }
    Ok(out)
}

fn model_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".weights.json").or_else(|| name.strip_suffix(".json")).unwrap_or(&name).to_string()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Train { common, train } => {
            let mut cfg = base_config(&cli, common)?;
            apply_train(&mut cfg, train);
            cfg.validate()?;
            let group = Group::new(cfg.group)?;
            std::fs::create_dir_all(&cfg.out)?;
            for model in train_pool(&group, &cfg)? {
                let id = format!("{}-{}", cfg.group.short_name(), model.id);
                let mut wf = WeightFile::from_params(&model.params);
                wf.factors = model.factors;
                save_weight_file(&cfg.out.join(format!("{id}.weights.json")), &wf)?;
                write_curve_csv(&cfg.out.join(format!("{id}.curve.csv")), &model.curve)?;
                println!("{id}: test accuracy {:.4}", model.test_accuracy);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Interpret { common, inputs, attempts } => {
            let cfg = base_config(&cli, common)?;
            std::fs::create_dir_all(&cfg.out)?;
            for path in weight_paths(&inputs.weights)? {
                let id = model_id(&path);
                let theta = load_weight_file(&path)?.into_params()?;
                let group = Group::new(theta.group)?;
                let table = IrrepTable::new(&group)?;
                let (pi, diag) = build_irrep_interpretation(&group, &table, &theta, cfg.seed, attempts.unwrap_or(cfg.attempts));
                save_json(&pi, &cfg.out.join(format!("{id}.irrep.json")))?;
                save_json(&diag, &cfg.out.join(format!("{id}.diagnostics.json")))?;
                let coset = build_coset_interpretation(&group, &theta)?;
                save_json(&coset, &cfg.out.join(format!("{id}.coset.json")))?;
                println!(
                    "{id}: {} partitions, {}/{} neurons labeled, a_bad={}, rho_bad={}",
                    pi.partitions.len(),
                    pi.labeled(),
                    theta.hidden,
                    diag.a_bad,
                    diag.rho_bad
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, inputs, verifiers, attempts, interpretations } => {
            let cfg = base_config(&cli, common)?;
            let kinds = match verifiers {
                Some(v) => parse_verifiers(v)?,
                None => cfg.verifiers.clone(),
            };
            std::fs::create_dir_all(&cfg.out)?;
            let mut rows = Vec::new();
            let mut loss_rows = Vec::new();
            let mut violations = Vec::new();
            for path in weight_paths(&inputs.weights)? {
                let id = model_id(&path);
                let theta = load_weight_file(&path)?.into_params()?;
                let group = Group::new(theta.group)?;
                let table = IrrepTable::new(&group)?;
                let mut given = Interpretations::default();
                if let Some(dir) = interpretations {
                    let irrep = dir.join(format!("{id}.irrep.json"));
                    let diag = dir.join(format!("{id}.diagnostics.json"));
                    if irrep.exists() && diag.exists() {
                        given.irrep = Some((load_json(&irrep)?, load_json(&diag)?));
                    }
                    let coset = dir.join(format!("{id}.coset.json"));
                    if coset.exists() {
                        given.coset = Some(load_json(&coset)?);
                    }
                }
                let eval = evaluate_model(&group, &table, &id, &theta, &kinds, attempts.unwrap_or(cfg.attempts), cfg.seed, cfg.timing_reps, given)?;
                for r in &eval.rows {
                    println!("{id} {:<6} bound {:.4}  time {:.4}s", r.verifier, r.bound, r.wall_time_s);
                }
                rows.extend(eval.rows);
                loss_rows.extend(eval.loss_rows);
                violations.extend(eval.violations);
            }
            write_csv_with_header(&cfg.out.join("report.csv"), &REPORT_HEADER, &rows)?;
            write_csv(&cfg.out.join("summary.csv"), &summarize(&rows))?;
            write_csv_with_header(&cfg.out.join("loss_bounds.csv"), &["model_id", "method", "bound", "finite", "true_loss"], &loss_rows)?;
            finish(&violations)
        }
        Command::Bench { groups, hidden, reps } => {
            let kinds = groups.iter().map(|g| GroupKind::parse(g)).collect::<rhoset::Result<Vec<_>>>()?;
            let points = ops_scaling(&kinds, *hidden, *reps)?;
            for p in &points {
                println!("{:<4} |G|={:<4} {:<6} ops {:>12}  time {:.6}s", p.group, p.order, p.verifier, p.ops, p.wall_time_s);
            }
            if kinds.len() >= 2 {
                println!("log-log slope: brute {:.3}, irrep {:.3}", loglog_slope(&points, "brute"), loglog_slope(&points, "irrep"));
            }
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                write_csv(&out.join("ops.csv"), &points)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Intervene { common, train, weights, runs } => {
            let mut cfg = base_config(&cli, &Common { group: common.group.clone().or(Some("Z53".into())), ..common.clone() })?;
            apply_train(&mut cfg, train);
            let (theta, factors) = match weights {
                Some(path) => {
                    let wf = load_weight_file(path)?;
                    let factors = wf.factors.clone();
                    (wf.into_params()?, factors)
                }
                None => {
                    cfg.models = 1;
                    cfg.validate()?;
                    let group = Group::new(cfg.group)?;
                    let model = train_pool(&group, &cfg)?.remove(0);
                    (model.params, model.factors)
                }
            };
            let group = Group::new(theta.group)?;
            let rows = run_suite(&group, &theta, factors.as_ref(), *runs, cfg.seed)?;
            for r in &rows {
                println!("{:<28} accuracy {:.4}  loss {:.4}", r.intervention, r.mean_accuracy, r.mean_loss);
            }
            std::fs::create_dir_all(&cfg.out)?;
            write_rows(std::fs::File::create(cfg.out.join("interventions.csv"))?, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportRhoset { common, interpretations } => {
            let cfg = base_config(&cli, common)?;
            let group = Group::new(cfg.group)?;
            let table = IrrepTable::new(&group)?;
            let mut points = minimal_rho_sets(&group, &table)?;
            for path in interpretations {
                let pi = load_json(path)?;
                points.extend(rho_set_points(&model_id(path).replace(".irrep", ""), &pi));
            }
            std::fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join("rhosets.csv");
            write_csv(&path, &points)?;
            println!("wrote {} vectors to {}", points.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { common, train, verifiers, attempts } => {
            let mut cfg = base_config(&cli, common)?;
            apply_train(&mut cfg, train);
            if let Some(v) = verifiers {
                cfg.verifiers = parse_verifiers(v)?;
            }
            if let Some(a) = attempts {
                cfg.attempts = *a;
            }
            let outcome = run_experiment_suite(&cfg)?;
            for s in &outcome.summary {
                println!(
                    "{:<6} models {:>3}  mean bound {:.4}  mean time {:.4}s  bound≥0.95: {:.0}%",
                    s.verifier,
                    s.n_models,
                    s.mean_bound,
                    s.mean_wall_time_s,
                    100.0 * s.frac_bound_ge_095
                );
            }
            finish(&outcome.violations)
        }
    }
}

fn finish(violations: &[String]) -> Result<ExitCode> {
    if violations.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for v in violations {
        eprintln!("soundness violation: {v}");
    }
    Ok(ExitCode::from(SOUNDNESS_EXIT))
}
