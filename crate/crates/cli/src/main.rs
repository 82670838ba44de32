//! `triarm`: simulate trials, learn assignment trees, evaluate them and
//! explain what drives their welfare.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
//! degeneracy error.

mod config;
mod report;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use triarm::data::{load_csv, sample_propensities, Arm, RctDataset};
use triarm::effects::mechanism_report;
use triarm::panel::{load_panel_csv, panel_itt, panel_itt_median_split};
use triarm::policy::{
    exhaustive_search, render_dot, render_text, tree_from_json, tree_to_json, two_step_search,
    AssignmentPolicy, DecisionTree,
};
use triarm::stats;
use triarm::synthetic::{generate, load_truth_csv, save_truth_csv, sidecar_welfare, DgpSpec, PRESETS};
use triarm::testdata::{corrected_estimate_with, fit_cond_means, CorrectionConfig};
use triarm::welfare::{build_welfare, welfare_gain, WelfareGain, WelfareOutcome};

use config::{Mode, RunConfig};
use report::{GainRow, GainTable};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

#[derive(Parser, Debug)]
#[command(name = "triarm", version, about = "Welfare-maximizing mixes of compulsory and opt-in treatment")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to POLICY_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct DataArgs {
    /// Dataset CSV (id,arm,choice,y_treat,y_base,<covariates>).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic trial and its hidden potential outcomes.
    Simulate {
        /// Preset process name.
        #[arg(long)]
        dgp: Option<String>,
        /// TOML process description.
        #[arg(long)]
        dgp_file: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Learn an assignment tree and report its welfare gains.
    Learn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        /// Replications for the bias-corrected estimates.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Estimate the welfare of a given tree.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Tree document to evaluate.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Uniform arm to evaluate instead of a tree.
        #[arg(long, conflicts_with = "tree")]
        uniform: Option<Arm>,
        /// Benchmark: an arm name (uniform), `none`, or a tree document.
        #[arg(long, default_value = "NT")]
        reference: String,
        /// Hidden-truth sidecar of a simulated dataset.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Mechanism table for a tree, and/or the panel ITT regression.
    Effects {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Long-format panel CSV (household,interval,log_y,arm,post).
        #[arg(long)]
        panel: Option<PathBuf>,
        /// CSV `household,value` for a median-split panel regression.
        #[arg(long, requires = "panel")]
        split: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::Config(_) => 2,
                CliError::Data(_) => 3,
            };
        }
        if let Some(t) = cause.downcast_ref::<triarm::Error>() {
            use triarm::Error::*;
            return match t {
                Config(_) | InvalidArgument(_) => 2,
                Degenerate(_) | Invariant(_) => 4,
                _ => 3,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.out = cli.out.or(cfg.out.take());
    cfg.threads = cli.threads.or(cfg.threads).or(threads_from_env()?);
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate { dgp, dgp_file, n } => {
            if dgp_file.is_some() {
                cfg.simulate.dgp_file = dgp_file;
            } else if dgp.is_some() {
                cfg.simulate.dgp = dgp;
                cfg.simulate.dgp_file = None;
            }
            cfg.simulate.n = n.or(cfg.simulate.n);
            cmd_simulate(&cfg)
        }
        Command::Learn {
            data,
            mode,
            depth,
            min_leaf,
            reps,
        } => {
            apply_data(&mut cfg, data);
            cfg.search.mode = mode.unwrap_or(cfg.search.mode);
            cfg.search.depth = depth.unwrap_or(cfg.search.depth);
            cfg.search.min_leaf = min_leaf.unwrap_or(cfg.search.min_leaf);
            cfg.correction.reps = reps.unwrap_or(cfg.correction.reps);
            cmd_learn(&cfg)
        }
        Command::Evaluate {
            data,
            tree,
            uniform,
            reference,
            truth,
            reps,
        } => {
            apply_data(&mut cfg, data);
            cfg.data.tree = tree.or(cfg.data.tree.take());
            cfg.data.truth = truth.or(cfg.data.truth.take());
            cfg.correction.reps = reps.unwrap_or(cfg.correction.reps);
            cmd_evaluate(&cfg, uniform, &reference)
        }
        Command::Effects {
            data,
            tree,
            panel,
            split,
        } => {
            apply_data(&mut cfg, data);
            cfg.data.tree = tree.or(cfg.data.tree.take());
            cfg.data.panel = panel.or(cfg.data.panel.take());
            cmd_effects(&cfg, split.as_deref())
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("POLICY_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("POLICY_THREADS must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

fn apply_data(cfg: &mut RunConfig, args: DataArgs) {
    if args.data.is_some() {
        cfg.data.input = args.data;
    }
    if args.covariates.is_some() {
        cfg.data.covariates = args.covariates;
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

const CANONICAL: [&str; 5] = ["id", "arm", "choice", "y_treat", "y_base"];

/// Loads the dataset, taking covariate names from (in order) the config,
/// the tree document, or every non-canonical column of the file.
fn load_dataset(cfg: &RunConfig, tree_covariates: Option<&[String]>) -> anyhow::Result<RctDataset> {
    let path = cfg.input()?;
    let schema = match (&cfg.data.covariates, tree_covariates) {
        (Some(c), Some(t)) if c.as_slice() != t => {
            return Err(CliError::Data(format!(
                "tree covariates {t:?} differ from configured covariates {c:?}"
            ))
            .into())
        }
        (Some(c), _) => c.clone(),
        (None, Some(t)) => t.to_vec(),
        (None, None) => {
            let mut rdr = csv::Reader::from_path(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            rdr.headers()
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
                .iter()
                .map(|h| h.trim().to_string())
                .filter(|h| !CANONICAL.contains(&h.as_str()))
                .collect()
        }
    };
    Ok(load_csv(path, &schema)?)
}

fn load_tree(path: &Path) -> anyhow::Result<DecisionTree> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read tree {}: {e}", path.display())))?;
    Ok(tree_from_json(&text)?)
}

fn correction(cfg: &RunConfig, seed: u64) -> anyhow::Result<CorrectionConfig> {
    Ok(CorrectionConfig {
        params: cfg.welfare.resolve().params()?,
        outcome: cfg.outcome.resolve(),
        method: cfg.correction.method,
        n_reps: cfg.correction.reps,
        seed,
    })
}

fn welfare_of(cfg: &RunConfig, ds: &RctDataset) -> anyhow::Result<WelfareOutcome> {
    let params = cfg.welfare.resolve().params()?;
    Ok(build_welfare(ds, &params, cfg.outcome.resolve()))
}

fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = cfg.require_seed()?;
    let spec = match (&cfg.simulate.dgp_file, &cfg.simulate.dgp) {
        (Some(p), _) => DgpSpec::load(p)?,
        (None, Some(name)) => DgpSpec::preset(name)?,
        (None, None) => {
            return Err(CliError::Config(format!(
                "simulate needs --dgp ({}) or --dgp-file",
                PRESETS.join(", ")
            ))
            .into())
        }
    };
    let n = cfg
        .simulate
        .n
        .ok_or_else(|| CliError::Config("simulate needs --n".into()))?;
    let out = cfg.out_dir()?;
    let g = generate(&spec, n, seed)?;
    g.dataset.save_csv(out.join("data.csv"))?;
    save_truth_csv(&g.truth, out.join("truth.csv"))?;
    write(
        &out.join("dgp.toml"),
        toml::to_string(&spec).context("serializing process description")?,
    )?;
    let counts = g.dataset.arm_counts();
    println!("process: {}", spec.summary());
    println!("rows: {n}, seed: {seed}");
    for (arm, c) in counts {
        println!("  arm {arm}: {c} ({:.3})", c as f64 / n as f64);
    }
    let o_rows: Vec<_> = g.dataset.rows().iter().filter(|r| r.d == Arm::O).collect();
    if !o_rows.is_empty() {
        let taken = o_rows.iter().filter(|r| r.z.is_taken()).count();
        println!("  opt-in take-up: {taken}/{} ({:.3})", o_rows.len(), taken as f64 / o_rows.len() as f64);
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct LearnReport<'a> {
    mode: Mode,
    depth: usize,
    min_leaf: usize,
    reps: usize,
    seed: u64,
    in_sample_welfare: f64,
    table: &'a GainTable,
}

fn cmd_learn(cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = cfg.require_seed()?;
    let ds = load_dataset(cfg, None)?;
    let w = welfare_of(cfg, &ds)?;
    let props = sample_propensities(&ds)?;
    let s = &cfg.search;
    let out = cfg.out_dir()?;

    let pat = exhaustive_search(&w, &ds, &props, &[Arm::T, Arm::NT], s.depth, s.min_leaf)?;
    let mix = match s.mode {
        Mode::Mixed => Some(two_step_search(&w, &ds, &props, s.depth, s.min_leaf)?),
        Mode::Paternalistic => None,
    };
    let (main_tree, main_policy, in_sample) = match &mix {
        Some(m) => (&m.tree, &m.policy, m.welfare),
        None => (&pat.tree, &pat.policy, pat.welfare),
    };

    let nt = AssignmentPolicy::Uniform(Arm::NT);
    let t = AssignmentPolicy::Uniform(Arm::T);
    let o = AssignmentPolicy::Uniform(Arm::O);
    let mut candidates: Vec<(String, &AssignmentPolicy, &AssignmentPolicy)> = vec![
        ("Uniform treatment (100% T)".into(), &t, &nt),
        ("The purely autonomous policy (100% O)".into(), &o, &nt),
        ("The paternalistic assignment (G_pat)".into(), &pat.policy, &nt),
    ];
    let comparisons: Vec<(String, &AssignmentPolicy, &AssignmentPolicy)> = match &mix {
        Some(m) => {
            candidates.push(("The mix of paternalism and autonomy (G_mix)".into(), &m.policy, &nt));
            vec![
                ("G_mix vs 100% T".into(), &m.policy, &t),
                ("G_mix vs 100% O".into(), &m.policy, &o),
                ("G_mix vs G_pat".into(), &m.policy, &pat.policy),
            ]
        }
        None => vec![
            ("G_pat vs 100% T".into(), &pat.policy, &t),
            ("G_pat vs 100% O".into(), &pat.policy, &o),
        ],
    };
    let comparisons_from = candidates.len() + 1;
    candidates.extend(comparisons);

    let base = correction(cfg, seed)?;
    let model = fit_cond_means(&ds, base.outcome, base.method)?;
    let mut rows = vec![GainRow::reference("Uniform no-treatment (100% NT)")];
    let mut main_log = None;
    for (i, (label, policy, reference)) in candidates.iter().enumerate() {
        let naive = welfare_gain(&w, &ds, policy, reference, &props)?;
        let rc = CorrectionConfig {
            seed: stats::derive_seed(seed, i as u64),
            ..base
        };
        let corrected = corrected_estimate_with(&ds, &model, policy, Some(reference), &rc)?;
        if std::ptr::eq(*policy, main_policy) && std::ptr::eq(*reference, &nt) {
            main_log = Some(corrected.clone());
        }
        rows.push(GainRow {
            policy: label.clone(),
            corrected: Some(corrected.as_gain()),
            naive: Some(naive),
        });
    }
    let mut shares = vec![("G_pat".to_string(), pat.policy.shares(&ds)?.to_string())];
    if let Some(m) = &mix {
        shares.push(("G_mix".into(), m.policy.shares(&ds)?.to_string()));
    }
    let title = match s.mode {
        Mode::Paternalistic => "Welfare performance of the best paternalistic assignment",
        Mode::Mixed => "Welfare performance of the best mixture of the paternalistic and autonomous approaches",
    };
    let table = GainTable {
        title: title.into(),
        rows,
        comparisons_from,
        shares,
    };

    write(&out.join("tree.json"), tree_to_json(main_tree))?;
    write(&out.join("tree.txt"), render_text(main_tree))?;
    write(&out.join("tree.dot"), render_dot(main_tree))?;
    if mix.is_some() {
        write(&out.join("tree_pat.json"), tree_to_json(&pat.tree))?;
    }
    write(&out.join("report.tsv"), table.to_tsv())?;
    write(&out.join("report.txt"), table.to_text())?;
    let json = LearnReport {
        mode: s.mode,
        depth: s.depth,
        min_leaf: s.min_leaf,
        reps: base.n_reps,
        seed,
        in_sample_welfare: in_sample,
        table: &table,
    };
    write(&out.join("report.json"), serde_json::to_string_pretty(&json)?)?;
    if let Some(log) = main_log {
        log.save_log(out.join("replications.csv"))?;
    }
    print!("{}", render_text(main_tree));
    println!();
    print!("{}", table.to_text());
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    policy: String,
    reference: String,
    shares: String,
    naive: WelfareGain,
    naive_ci95: (f64, f64),
    corrected: WelfareGain,
    corrected_ci95: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<WelfareGain>,
    seed: u64,
    reps: usize,
}

fn parse_reference(text: &str, covariates: &[String]) -> anyhow::Result<Option<AssignmentPolicy>> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    if let Ok(arm) = text.parse::<Arm>() {
        return Ok(Some(AssignmentPolicy::Uniform(arm)));
    }
    let tree = load_tree(Path::new(text))?;
    if tree.covariates != covariates {
        return Err(CliError::Data(format!(
            "reference tree covariates {:?} differ from {covariates:?}",
            tree.covariates
        ))
        .into());
    }
    Ok(Some(AssignmentPolicy::from_tree(tree)))
}

fn cmd_evaluate(cfg: &RunConfig, uniform: Option<Arm>, reference: &str) -> anyhow::Result<()> {
    let seed = cfg.require_seed()?;
    let (policy, label, ds) = match (uniform, &cfg.data.tree) {
        (Some(arm), _) => {
            let ds = load_dataset(cfg, None)?;
            (AssignmentPolicy::Uniform(arm), format!("uniform {arm}"), ds)
        }
        (None, Some(path)) => {
            let tree = load_tree(path)?;
            let ds = load_dataset(cfg, Some(&tree.covariates))?;
            (AssignmentPolicy::from_tree(tree), path.display().to_string(), ds)
        }
        (None, None) => {
            return Err(CliError::Config("evaluate needs --tree or --uniform".into()).into())
        }
    };
    let reference_policy = parse_reference(reference, ds.schema())?;
    let w = welfare_of(cfg, &ds)?;
    let props = sample_propensities(&ds)?;
    let arms = ds.arms();
    let assigned = policy.assign_all(&ds)?;
    let naive = match &reference_policy {
        Some(r) => welfare_gain(&w, &ds, &policy, r, &props)?,
        None => triarm::welfare::assignment_welfare(&w.w, &arms, &assigned, &props)?,
    };
    let cc = correction(cfg, seed)?;
    let model = fit_cond_means(&ds, cc.outcome, cc.method)?;
    let corrected = corrected_estimate_with(&ds, &model, &policy, reference_policy.as_ref(), &cc)?;

    let truth = match &cfg.data.truth {
        None => None,
        Some(path) => {
            let truth = load_truth_csv(path)?;
            let own = sidecar_welfare(&ds, &truth, &policy)?;
            Some(match &reference_policy {
                None => WelfareGain {
                    gain: own.mean,
                    se: own.se,
                },
                Some(r) => {
                    let other = r.assign_all(&ds)?;
                    let diff: Vec<f64> = truth
                        .iter()
                        .zip(assigned.iter().zip(&other))
                        .map(|(t, (&a, &b))| t.welfare(a) - t.welfare(b))
                        .collect();
                    WelfareGain {
                        gain: stats::mean(&diff),
                        se: stats::std_error(&diff),
                    }
                }
            })
        }
    };
    let eval = Evaluation {
        policy: label,
        reference: reference.to_string(),
        shares: policy.shares(&ds)?.to_string(),
        naive,
        naive_ci95: naive.ci95(),
        corrected: corrected.as_gain(),
        corrected_ci95: corrected.ci95(),
        truth,
        seed,
        reps: cc.n_reps,
    };
    let out = cfg.out_dir()?;
    write(&out.join("evaluation.json"), serde_json::to_string_pretty(&eval)?)?;
    corrected.save_log(out.join("replications.csv"))?;
    let line = |name: &str, g: &WelfareGain| {
        let (lo, hi) = g.ci95();
        println!("{name:<10} {:>10.1}  ( {lo:.1} , {hi:.1} )", g.gain);
    };
    println!("policy: {} ({})", eval.policy, eval.shares);
    println!("reference: {}", eval.reference);
    line("naive", &naive);
    line("corrected", &corrected.as_gain());
    if let Some(t) = &truth {
        line("truth", t);
    }
    Ok(())
}

fn load_split(path: &Path) -> anyhow::Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let (h, v) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}: bad value `{v}` for household {h}", path.display())))?;
        out.insert(h.trim().to_string(), v);
    }
    Ok(out)
}

fn cmd_effects(cfg: &RunConfig, split: Option<&Path>) -> anyhow::Result<()> {
    if cfg.data.tree.is_none() && cfg.data.panel.is_none() {
        return Err(CliError::Config("effects needs --tree (with --data) and/or --panel".into()).into());
    }
    let out = cfg.out_dir()?;
    if let Some(path) = &cfg.data.tree {
        let tree = load_tree(path)?;
        let ds = load_dataset(cfg, Some(&tree.covariates))?;
        let policy = AssignmentPolicy::from_tree(tree);
        let w = welfare_of(cfg, &ds)?;
        let report = mechanism_report(&ds, &w, &policy)?;
        write(&out.join("mechanism.tsv"), report.to_tsv())?;
        write(&out.join("mechanism.json"), report.to_json())?;
        print!("{}", report.to_tsv());
    }
    if let Some(path) = &cfg.data.panel {
        let panel = load_panel_csv(path)?;
        let fit = panel_itt(&panel)?;
        let mut tsv = String::from("sample\ttau_T\tse_T\ttau_O\tse_O\thouseholds\tobservations\n");
        let row = |name: &str, f: &triarm::panel::PanelItt| {
            format!(
                "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\n",
                f.tau_t, f.se_t, f.tau_o, f.se_o, f.n_households, f.n_obs
            )
        };
        tsv.push_str(&row("all", &fit));
        let mut json = serde_json::json!({ "all": fit });
        if let Some(split_path) = split {
            let cov = load_split(split_path)?;
            let (lo, hi) = panel_itt_median_split(&panel, &cov)?;
            tsv.push_str(&row("below_median", &lo));
            tsv.push_str(&row("above_median", &hi));
            json["below_median"] = serde_json::to_value(lo)?;
            json["above_median"] = serde_json::to_value(hi)?;
        }
        write(&out.join("panel.tsv"), &tsv)?;
        write(&out.join("panel.json"), serde_json::to_string_pretty(&json)?)?;
        print!("{tsv}");
    }
    Ok(())
}
