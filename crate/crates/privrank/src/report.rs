//! The `privrank` command line: `run` collects submissions, `eval` turns a
//! completed store into tables, `calibrate` builds a synthetic corpus and
//! simulator profile from target metrics.
//!
//! The workflow is staged on purpose: submissions are collected once and
//! analyzed many ways. Exit codes: 0 success, 2 configuration error,
//! 3 store I/O failure, 4 incomplete store, 5 infeasible calibration
//! targets.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analytics::{
    aggregate, calibrate_profile, per_setting_averages, table, threshold_sweep,
    variability_counts, AnalyticsError, CalibrateError, CalibrationTargets,
};
use crate::campaign::{run_campaign, CampaignPlan, ResultStore};
use crate::corpus::load_corpus;
use crate::gateway::{
    HttpConfig, HttpProvider, Provider, RetryPolicy, SamplingParams, SimProfile, SimulatorConfig,
    SimulatorProvider,
};
use crate::prompting::PromptTemplate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STORE: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;

#[derive(Parser)]
#[command(
    name = "privrank",
    about = "Repeated-submission document classification with confidence ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the submission matrix against a provider, resuming from the
    /// store.
    Run(RunArgs),
    /// Produce evaluation tables from a completed store.
    Eval(EvalArgs),
    /// Solve a simulator profile and synthetic corpus for target metrics.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Sim,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Md,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Settings,
    Sweep,
    Variability,
}

#[derive(Parser, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long = "sim-profile")]
    sim_profile: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "api-key-env")]
    api_key_env: Option<String>,
    /// Comma-separated list, e.g. `0,0.5,1,1.5,2`.
    #[arg(long)]
    temperatures: Option<String>,
    /// Comma-separated list, e.g. `0.2,0.5,0.9`.
    #[arg(long = "top-ps")]
    top_ps: Option<String>,
    #[arg(long = "top-k")]
    top_k: Option<u32>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-in-flight")]
    max_in_flight: Option<usize>,
    /// Include top_k in requests (only for providers that accept it).
    #[arg(long = "send-top-k")]
    send_top_k: bool,
    #[arg(long = "timeout-ms")]
    timeout_ms: Option<u64>,
    #[arg(long = "retry-max-attempts")]
    retry_max_attempts: Option<u32>,
    #[arg(long = "retry-base-backoff-ms")]
    retry_base_backoff_ms: Option<u64>,
    /// Flat key=value file supplying defaults for any flag above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    mode: EvalMode,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Output formats; defaults to both.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<OutputFormat>,
    /// Restrict to these temperatures (default: all in the store).
    #[arg(long)]
    temperatures: Option<String>,
    /// Restrict to these top-p values (default: all in the store).
    #[arg(long = "top-ps")]
    top_ps: Option<String>,
    /// Trials per setting (default: inferred from the store).
    #[arg(long)]
    trials: Option<u32>,
    /// Model name (default: the single model in the store).
    #[arg(long)]
    model: Option<String>,
    /// Template to pin the digest (default: the single digest in the store).
    #[arg(long)]
    template: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    docs: usize,
    #[arg(long)]
    privileged: usize,
    #[arg(long)]
    precision: f64,
    #[arg(long)]
    recall: f64,
    #[arg(long)]
    inconsistency: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

/// Fully resolved `run` configuration: flags override the config file,
/// which overrides built-in defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub store: PathBuf,
    pub provider: ProviderChoice,
    pub model: String,
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    pub top_k: u32,
    pub trials: u32,
    pub template: Option<PathBuf>,
    pub seed: u64,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone)]
pub enum ProviderChoice {
    Simulator {
        profile: PathBuf,
    },
    Http {
        endpoint: String,
        api_key_env: String,
        send_top_k: bool,
        timeout: Duration,
        retry: RetryPolicy,
    },
}

/// Entry point; returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn config_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_CONFIG
}

fn store_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("store error: {msg}");
    EXIT_STORE
}

// ---------------------------------------------------------------------------
// Config file merging
// ---------------------------------------------------------------------------

/// Parse a flat `key = value` file (one pair per line, `#` comments).
fn load_config_file(path: &Path) -> Result<HashMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {} is not key=value: {line:?}", idx + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn merge<T, F>(flag: Option<T>, file: &HashMap<String, String>, key: &str, parse: F) -> Result<Option<T>, String>
where
    F: Fn(&str) -> Result<T, String>,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(raw) => parse(raw).map(Some).map_err(|e| format!("config key {key}: {e}")),
        None => Ok(None),
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("{e}"))
}

fn dedupe_in_order(values: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn resolve_run_config(args: RunArgs) -> Result<RunConfig, String> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?,
        None => HashMap::new(),
    };

    let corpus = merge(args.corpus, &file, "corpus", |s| Ok(PathBuf::from(s)))?
        .ok_or("missing --corpus")?;
    let store = merge(args.store, &file, "store", |s| Ok(PathBuf::from(s)))?
        .ok_or("missing --store")?;
    let provider_kind = merge(args.provider, &file, "provider", |s| match s {
        "sim" => Ok(ProviderKind::Sim),
        "http" => Ok(ProviderKind::Http),
        other => Err(format!("unknown provider {other:?} (expected sim or http)")),
    })?
    .ok_or("missing --provider (sim or http)")?;

    let model = merge(args.model, &file, "model", |s| Ok(s.to_string()))?
        .unwrap_or_else(|| "gpt-4.1".to_string());
    let temperatures = merge(args.temperatures.map(|s| parse_f64_list(&s)).transpose()?, &file, "temperatures", parse_f64_list)?
        .unwrap_or_else(|| vec![0.0]);
    let top_ps = merge(args.top_ps.map(|s| parse_f64_list(&s)).transpose()?, &file, "top-ps", parse_f64_list)?
        .unwrap_or_else(|| vec![0.9]);
    let top_k = merge(args.top_k, &file, "top-k", parse_scalar::<u32>)?.unwrap_or(50);
    let trials = merge(args.trials, &file, "trials", parse_scalar::<u32>)?.unwrap_or(5);
    let template = merge(args.template, &file, "template", |s| Ok(PathBuf::from(s)))?;
    let seed = merge(args.seed, &file, "seed", parse_scalar::<u64>)?.unwrap_or(0);
    let max_in_flight =
        merge(args.max_in_flight, &file, "max-in-flight", parse_scalar::<usize>)?.unwrap_or(8);

    let provider = match provider_kind {
        ProviderKind::Sim => {
            let profile = merge(args.sim_profile, &file, "sim-profile", |s| Ok(PathBuf::from(s)))?
                .ok_or("simulator provider requires --sim-profile")?;
            ProviderChoice::Simulator { profile }
        }
        ProviderKind::Http => {
            let endpoint = merge(args.endpoint, &file, "endpoint", |s| Ok(s.to_string()))?
                .ok_or("http provider requires --endpoint")?;
            let api_key_env = merge(args.api_key_env, &file, "api-key-env", |s| Ok(s.to_string()))?
                .unwrap_or_else(|| "PRIVRANK_API_KEY".to_string());
            let send_top_k = args.send_top_k
                || file
                    .get("send-top-k")
                    .map(|v| v == "true" || v == "1")
                    .unwrap_or(false);
            let timeout_ms =
                merge(args.timeout_ms, &file, "timeout-ms", parse_scalar::<u64>)?.unwrap_or(60_000);
            let max_attempts = merge(
                args.retry_max_attempts,
                &file,
                "retry-max-attempts",
                parse_scalar::<u32>,
            )?
            .unwrap_or(4);
            let base_backoff_ms = merge(
                args.retry_base_backoff_ms,
                &file,
                "retry-base-backoff-ms",
                parse_scalar::<u64>,
            )?
            .unwrap_or(500);
            ProviderChoice::Http {
                endpoint,
                api_key_env,
                send_top_k,
                timeout: Duration::from_millis(timeout_ms),
                retry: RetryPolicy {
                    max_attempts,
                    base_backoff: Duration::from_millis(base_backoff_ms),
                },
            }
        }
    };

    Ok(RunConfig {
        corpus,
        store,
        provider,
        model,
        temperatures,
        top_ps,
        top_k,
        trials,
        template,
        seed,
        max_in_flight,
    })
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn load_template(path: &Option<PathBuf>) -> Result<PromptTemplate, String> {
    match path {
        Some(p) => PromptTemplate::from_file(p).map_err(|e| e.to_string()),
        None => Ok(PromptTemplate::default_privilege()),
    }
}

fn cmd_run(args: RunArgs) -> i32 {
    let config = match resolve_run_config(args) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };

    let corpus = match load_corpus(&config.corpus) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let template = match load_template(&config.template) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let plan = match CampaignPlan::new(
        config.temperatures.clone(),
        config.top_ps.clone(),
        config.top_k,
        config.trials,
        &template,
        config.model.clone(),
    ) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };

    let provider: Box<dyn Provider> = match &config.provider {
        ProviderChoice::Simulator { profile } => {
            let profile = match SimProfile::load(profile) {
                Ok(p) => p,
                Err(e) => return config_error(e),
            };
            if let Err(e) = profile.validate_covers(corpus.documents.iter().map(|d| d.id.as_str()))
            {
                return config_error(e);
            }
            Box::new(SimulatorProvider::new(SimulatorConfig {
                profile,
                seed: config.seed,
                model_name: config.model.clone(),
            }))
        }
        ProviderChoice::Http {
            endpoint,
            api_key_env,
            send_top_k,
            timeout,
            retry,
        } => match HttpProvider::new(HttpConfig {
            endpoint_url: endpoint.clone(),
            model_name: config.model.clone(),
            api_key_env: api_key_env.clone(),
            max_in_flight: config.max_in_flight,
            retry: retry.clone(),
            send_top_k: *send_top_k,
            timeout: *timeout,
        }) {
            Ok(p) => Box::new(p),
            Err(e) => return config_error(e),
        },
    };

    let mut store = match ResultStore::open(&config.store) {
        Ok(s) => s,
        Err(e) => return store_error(e),
    };

    match run_campaign(
        &plan,
        &corpus,
        provider.as_ref(),
        &mut store,
        &template,
        config.max_in_flight,
    ) {
        Ok(summary) => {
            if summary.executed == 0 {
                println!(
                    "0 new submissions ({} already stored); store unchanged",
                    summary.skipped
                );
            } else {
                println!(
                    "completed {}/{} submissions ({} cached, {} abstains, {} provider errors)",
                    summary.executed, summary.total, summary.skipped, summary.abstains,
                    summary.errors
                );
            }
            println!("store: {}", config.store.display());
            EXIT_OK
        }
        Err(e) => store_error(e),
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Reconstruct the plan axes from a store, unless flags pin them.
fn infer_plan(
    store: &ResultStore,
    args: &EvalArgs,
) -> Result<(CampaignPlan, bool), String> {
    if store.is_empty() {
        return Err("store holds no records".into());
    }
    let records = store.records();

    let digest = match &args.template {
        Some(path) => PromptTemplate::from_file(path)
            .map_err(|e| e.to_string())?
            .version_digest()
            .to_string(),
        None => {
            let digests: BTreeSet<&str> =
                records.iter().map(|r| r.template_digest.as_str()).collect();
            if digests.len() > 1 {
                return Err(format!(
                    "store mixes {} template digests; pass --template to select one",
                    digests.len()
                ));
            }
            digests.iter().next().unwrap().to_string()
        }
    };
    let model = match &args.model {
        Some(m) => m.clone(),
        None => {
            let models: BTreeSet<&str> = records.iter().map(|r| r.model_name.as_str()).collect();
            if models.len() > 1 {
                return Err(format!(
                    "store mixes {} model names; pass --model to select one",
                    models.len()
                ));
            }
            models.iter().next().unwrap().to_string()
        }
    };

    let in_scope: Vec<_> = records
        .iter()
        .filter(|r| r.template_digest == digest && r.model_name == model)
        .collect();
    if in_scope.is_empty() {
        return Err("no store records match the selected template/model".into());
    }

    let store_temps: BTreeSet<u64> = in_scope.iter().map(|r| r.temperature.to_bits()).collect();
    let store_tops: BTreeSet<u64> = in_scope.iter().map(|r| r.top_p.to_bits()).collect();
    let top_ks: BTreeSet<u32> = in_scope.iter().map(|r| r.top_k).collect();
    if top_ks.len() > 1 {
        return Err("store mixes top_k values; cannot infer a single plan".into());
    }
    let top_k = *top_ks.iter().next().unwrap();

    let temperatures = match &args.temperatures {
        Some(list) => dedupe_in_order(parse_f64_list(list)?),
        None => store_temps.iter().map(|b| f64::from_bits(*b)).collect(),
    };
    let top_ps = match &args.top_ps {
        Some(list) => dedupe_in_order(parse_f64_list(list)?),
        None => store_tops.iter().map(|b| f64::from_bits(*b)).collect(),
    };
    let trials = match args.trials {
        Some(t) => t,
        None => in_scope.iter().map(|r| r.trial).max().unwrap() + 1,
    };

    // Filters narrow the pool; axes themselves came from the store, so a
    // single top-p filter still reflects a single-axis table shape.
    let single_top_p = top_ps.len() == 1;
    Ok((
        CampaignPlan {
            temperatures,
            top_ps,
            top_k,
            trials_per_setting: trials,
            template_digest: digest,
            model_name: model,
        },
        single_top_p,
    ))
}

fn write_table(
    t: &table::EvalTable,
    out_dir: &Path,
    stem: &str,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>, String> {
    let mut written = Vec::new();
    for f in formats {
        let (ext, content) = match f {
            OutputFormat::Csv => ("csv", t.render_csv()),
            OutputFormat::Md => ("md", t.render_markdown()),
        };
        let path = out_dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

enum EvalFailure {
    Analytics(AnalyticsError),
    Io(String),
}

impl From<AnalyticsError> for EvalFailure {
    fn from(e: AnalyticsError) -> Self {
        EvalFailure::Analytics(e)
    }
}

fn eval_failure_exit(e: EvalFailure) -> i32 {
    match e {
        EvalFailure::Analytics(AnalyticsError::IncompleteStore { missing, total_missing }) => {
            eprintln!("store is incomplete: {total_missing} expected records missing");
            let shown = missing.len();
            for m in missing {
                eprintln!("  missing: {m}");
            }
            if total_missing > shown {
                eprintln!("  ... and {} more", total_missing - shown);
            }
            EXIT_INCOMPLETE
        }
        EvalFailure::Analytics(other) => config_error(other),
        EvalFailure::Io(msg) => store_error(msg),
    }
}

fn setting_stem(s: &SamplingParams) -> String {
    format!(
        "t{}_p{}",
        table::format_setting(s.temperature()),
        table::format_setting(s.top_p())
    )
}

fn cmd_eval(args: EvalArgs) -> i32 {
    let corpus = match load_corpus(&args.corpus) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let store = match ResultStore::open(&args.store) {
        Ok(s) => s,
        Err(e) => return store_error(e),
    };
    let (plan, single_top_p) = match infer_plan(&store, &args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return if store.is_empty() { EXIT_INCOMPLETE } else { EXIT_CONFIG };
        }
    };
    let formats = if args.format.is_empty() {
        vec![OutputFormat::Csv, OutputFormat::Md]
    } else {
        args.format.clone()
    };
    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        return config_error(format!("cannot create {}: {e}", args.out_dir.display()));
    }

    let settings = plan.settings();
    let mut written: Vec<PathBuf> = Vec::new();
    let result: Result<(), EvalFailure> = (|| {
        match args.mode {
            EvalMode::Settings => {
                let averages = per_setting_averages(store.records(), &plan, &corpus)?;
                let t = table::settings_table(&averages, plan.trials_per_setting, single_top_p);
                written.extend(write_table(&t, &args.out_dir, "settings", &formats).map_err(EvalFailure::Io)?);
            }
            EvalMode::Variability => {
                let counts = variability_counts(store.records(), &plan, &corpus, &settings)?;
                let t = table::variability_table(&counts, plan.trials_per_setting, single_top_p);
                written.extend(write_table(&t, &args.out_dir, "variability", &formats).map_err(EvalFailure::Io)?);
            }
            EvalMode::Sweep => {
                // One table per setting, plus the combined pool when more
                // than one setting is selected.
                for s in &settings {
                    let pool = vec![*s];
                    let records = aggregate(store.records(), &plan, &corpus, &pool)?;
                    let fully_abstained =
                        records.iter().filter(|r| r.score.is_none()).count() as u64;
                    let rows = threshold_sweep(&records, &corpus)?;
                    let submissions = plan.trials_per_setting as usize;
                    let label = format!(
                        "{submissions} submissions, temperature {}, top-p {}",
                        table::format_setting(s.temperature()),
                        table::format_setting(s.top_p())
                    );
                    let t = table::sweep_table(&rows, &label, submissions, fully_abstained);
                    written.extend(
                        write_table(&t, &args.out_dir, &format!("sweep_{}", setting_stem(s)), &formats)
                            .map_err(EvalFailure::Io)?,
                    );
                }
                if settings.len() > 1 {
                    let records = aggregate(store.records(), &plan, &corpus, &settings)?;
                    let fully_abstained =
                        records.iter().filter(|r| r.score.is_none()).count() as u64;
                    let rows = threshold_sweep(&records, &corpus)?;
                    let submissions = settings.len() * plan.trials_per_setting as usize;
                    let label = format!(
                        "{submissions} submissions across {} settings",
                        settings.len()
                    );
                    let t = table::sweep_table(&rows, &label, submissions, fully_abstained);
                    written.extend(
                        write_table(&t, &args.out_dir, "sweep_combined", &formats)
                            .map_err(EvalFailure::Io)?,
                    );
                }
            }
        }
        Ok(())
    })();

    match result {
        Ok(()) => {
            for p in &written {
                println!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => eval_failure_exit(e),
    }
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn cmd_calibrate(args: CalibrateArgs) -> i32 {
    let targets = CalibrationTargets {
        n_docs: args.docs,
        n_privileged: args.privileged,
        precision: args.precision,
        recall: args.recall,
        inconsistency: args.inconsistency,
    };
    let calibration = match calibrate_profile(&targets, args.seed) {
        Ok(c) => c,
        Err(CalibrateError::InfeasibleTargets(msg)) => {
            eprintln!("infeasible targets: {msg}");
            return EXIT_INFEASIBLE;
        }
    };

    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        return store_error(format!("cannot create {}: {e}", args.out_dir.display()));
    }
    let corpus_path = args.out_dir.join("corpus.jsonl");
    let profile_path = args.out_dir.join("profile.jsonl");
    let report_path = args.out_dir.join("calibration_report.md");

    if let Err(e) = crate::corpus::save_corpus(&calibration.corpus, &corpus_path) {
        return store_error(e);
    }
    if let Err(e) = calibration.profile.save(&profile_path) {
        return store_error(e);
    }
    if let Err(e) = std::fs::write(&report_path, &calibration.report) {
        return store_error(format!("cannot write {}: {e}", report_path.display()));
    }

    println!("wrote {}", corpus_path.display());
    println!("wrote {}", profile_path.display());
    println!("wrote {}", report_path.display());
    let pools = &calibration.pools;
    println!(
        "pools: det-tp {} / flaky-priv {} / det-fn {} / det-fp {} / flaky-neg {} / det-tn {}",
        pools.det_true_positive,
        pools.flaky_privileged,
        pools.det_false_negative,
        pools.det_false_positive,
        pools.flaky_non_privileged,
        pools.det_true_negative
    );
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_supplies_defaults_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(
            &cfg,
            "# defaults\ncorpus = /from/file.jsonl\nseed = 11\ntrials = 2\ntemperatures = 0,0.5\n",
        )
        .unwrap();
        let args = RunArgs {
            corpus: None,
            store: Some(PathBuf::from("/flag/store.jsonl")),
            provider: Some(ProviderKind::Sim),
            sim_profile: Some(PathBuf::from("/flag/profile.jsonl")),
            seed: Some(42), // overrides file's 11
            config: Some(cfg),
            ..Default::default()
        };
        let cfg = resolve_run_config(args).unwrap();
        assert_eq!(cfg.corpus, PathBuf::from("/from/file.jsonl"));
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.temperatures, vec![0.0, 0.5]);
        assert_eq!(cfg.top_ps, vec![0.9]); // built-in default
        assert_eq!(cfg.model, "gpt-4.1");
    }

    #[test]
    fn missing_required_keys_are_config_errors() {
        let args = RunArgs::default();
        let err = resolve_run_config(args).unwrap_err();
        assert!(err.contains("--corpus"));
    }

    #[test]
    fn http_provider_requires_endpoint() {
        let args = RunArgs {
            corpus: Some(PathBuf::from("c.jsonl")),
            store: Some(PathBuf::from("s.jsonl")),
            provider: Some(ProviderKind::Http),
            ..Default::default()
        };
        let err = resolve_run_config(args).unwrap_err();
        assert!(err.contains("--endpoint"));
    }

    #[test]
    fn bad_config_line_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "not a pair\n").unwrap();
        assert!(load_config_file(&cfg).is_err());
    }

    #[test]
    fn f64_list_parsing() {
        assert_eq!(parse_f64_list("0,0.5, 1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_f64_list("0,abc").is_err());
    }
}
