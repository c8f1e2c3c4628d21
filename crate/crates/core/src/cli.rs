//! Command-line surface: wires generation, ingestion, standardization,
//! splitting, tuning, training, evaluation and deployment-time estimation
//! into file-based pipeline steps.
//!
//! Exit codes: 0 ok, 2 validation failure, 3 training failure, 4 I/O.
//! Every output file starts with a `# ltcli v... seed=... config=...` header;
//! the config hash covers the semantic knobs (not paths), so reruns with the
//! same configuration produce byte-identical files wherever they are written.

use crate::domain::{parse_sessions, serialize_sessions, validate, DomainError};
use crate::evaluate::{
    applicability_report, rank_models, sensitivity_rows, ErrorBandTable, PerformanceReport,
    PreferredZone, RankEntry, SelectionTolerance,
};
use crate::fileio::file_header;
use crate::sampling::{
    hierarchical_cluster, knowledge_split, read_split_plan, stratified_split, write_split_plan,
    Linkage, SplitMethod, SplitPlan,
};
use crate::standardize::{
    read_standardized, resample, resample_features, write_standardized, FixedGridSeries,
    DEFAULT_GRID_K,
};
use crate::synth::{generate_cohort, write_truth, SynthOptions};
use crate::train::{
    constructive_feature_selection, grid_search, prepare, preliminary_tuning, train_cell,
    CellOutcome, FeatureSet, SavedModel, TrainOptions,
};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Error carrying the process exit code and a single-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            msg: msg.into(),
        }
    }
    fn training(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_TRAINING,
            msg: msg.into(),
        }
    }
    fn io(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            msg: msg.into(),
        }
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::validation(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ltcli",
    version,
    about = "Individual lactate threshold estimation from incremental treadmill tests"
)]
pub struct Cli {
    /// Flat key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for grid-cell parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort of raw test sessions plus a truth table.
    Gen(GenArgs),
    /// Check raw sessions against the test protocol; write a reject report.
    Validate(ValidateArgs),
    /// Relativize and resample valid sessions onto the fixed grid.
    Standardize(StandardizeArgs),
    /// Build a train/test split plan (stratified clustering or expert file).
    Split(SplitArgs),
    /// Run the staged preliminary-tuning grids on a high-capacity subset.
    Tune(TuneArgs),
    /// Grid-search architectures, rank them and save the selected model.
    Train(TrainArgs),
    /// Evaluate a saved model on a standardized cohort with a split plan.
    Evaluate(EvaluateArgs),
    /// Estimate thresholds for raw sessions from features alone (no lactate).
    Estimate(EstimateArgs),
    /// Aggregate a grid results file into sensitivity and ranking tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output path for the raw session file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output path for the truth table (default: `truth.csv` next to --out).
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Number of athletes.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lactate measurement noise, mmol/L.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Reject-report path; omitted rejects go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct StandardizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed grid size K.
    #[arg(long)]
    pub grid_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Standardized cohort file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `stratified` (clustering-based) or `knowledge` (expert plan file).
    #[arg(long)]
    pub split_method: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Linkage for the stratified method: single, complete or average.
    #[arg(long)]
    pub linkage: Option<String>,
    /// Fixed number of strata; omitted cuts at the largest dendrogram gap.
    #[arg(long)]
    pub strata: Option<usize>,
    /// Expert plan file, required with `--split-method knowledge`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// Standardized cohort file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output path for the staged tuning results file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub features: Option<String>,
    /// Minimum peak treadmill speed to enter the tuning subset, km/h.
    #[arg(long)]
    pub min_pts: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Standardized cohort file.
    #[arg(long)]
    pub input: PathBuf,
    /// Split plan file.
    #[arg(long)]
    pub split: PathBuf,
    /// Output directory (grid.csv, rank.csv, models/, model.txt ...).
    #[arg(long)]
    pub out: PathBuf,
    /// Hidden-unit range, e.g. `1-4` or `2` or `1,3,5`.
    #[arg(long)]
    pub hu: Option<String>,
    /// Delay range, e.g. `5-11`.
    #[arg(long)]
    pub delays: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature set: none, hr, hr+hrr or hr+hrr+rpe.
    #[arg(long)]
    pub features: Option<String>,
    /// After architecture selection, run constructive feature selection at
    /// the selected cell and save the winning feature set's model.
    #[arg(long)]
    pub feature_select: bool,
    /// Preferred hidden-unit zone for ranking, e.g. `1-4`.
    #[arg(long)]
    pub zone_hu: Option<String>,
    /// Preferred delay zone for ranking, e.g. `5-11`.
    #[arg(long)]
    pub zone_delays: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Standardized cohort file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Saved model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Raw session file; the lactate column may be absent and is never read.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Optional output file; otherwise estimates print to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Grid results file produced by `train` or `tune`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature set used during training (sets the parameter count).
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub zone_hu: Option<String>,
    #[arg(long)]
    pub zone_delays: Option<String>,
    /// Set whose indicators drive the ranking: train, test or global.
    #[arg(long)]
    pub rank_set: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Config file and precedence
// ---------------------------------------------------------------------------

/// Flat key=value configuration file; `#` lines are comments. Flags beat
/// file values, file values beat built-in defaults.
#[derive(Debug, Default, Clone)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn parse(content: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let content = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("config {}: {e}", p.display())))?;
                Self::parse(&content).map_err(CliError::validation)
            }
        }
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::validation(format!("config key {key}: bad value {v:?}"))),
        }
    }
}

fn resolve<T: std::str::FromStr + Clone>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    Ok(flag.or(file.get(key)?).unwrap_or(default))
}

/// Inclusive range or list spec: `2`, `1-4` or `1,3,5`.
pub fn parse_range(spec: &str) -> Result<Vec<usize>, String> {
    let spec = spec.trim();
    let parse_one = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad integer {s:?} in range {spec:?}"))
    };
    let values: Vec<usize> = if let Some((a, b)) = spec.split_once('-') {
        let (a, b) = (parse_one(a)?, parse_one(b)?);
        if a > b {
            return Err(format!("descending range {spec:?}"));
        }
        (a..=b).collect()
    } else if spec.contains(',') {
        spec.split(',').map(parse_one).collect::<Result<_, _>>()?
    } else {
        vec![parse_one(spec)?]
    };
    if values.is_empty() || values.contains(&0) {
        return Err(format!("range {spec:?} must be positive and non-empty"));
    }
    Ok(values)
}

fn parse_features(s: &str) -> Result<FeatureSet, CliError> {
    FeatureSet::parse(s).ok_or_else(|| {
        CliError::validation(format!(
            "unknown feature set {s:?} (expected none, hr, hr+hrr or hr+hrr+rpe)"
        ))
    })
}

fn parse_linkage(s: &str) -> Result<Linkage, CliError> {
    match s {
        "single" => Ok(Linkage::Single),
        "complete" => Ok(Linkage::Complete),
        "average" => Ok(Linkage::Average),
        other => Err(CliError::validation(format!("unknown linkage {other:?}"))),
    }
}

fn parse_zone(
    hu: Option<&str>,
    delays: Option<&str>,
) -> Result<Option<PreferredZone>, CliError> {
    match (hu, delays) {
        (None, None) => Ok(None),
        (Some(h), Some(d)) => {
            let h = parse_range(h).map_err(CliError::validation)?;
            let d = parse_range(d).map_err(CliError::validation)?;
            Ok(Some(PreferredZone {
                hu: (*h.first().unwrap(), *h.last().unwrap()),
                delays: (*d.first().unwrap(), *d.last().unwrap()),
            }))
        }
        _ => Err(CliError::validation(
            "--zone-hu and --zone-delays must be given together",
        )),
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn read_cohort(path: &Path) -> Result<Vec<FixedGridSeries>, CliError> {
    read_standardized(&read_file(path)?).map_err(CliError::validation)
}

fn read_plan(
    path: &Path,
    cohort: &[FixedGridSeries],
    test_fraction: f64,
) -> Result<SplitPlan, CliError> {
    let ids: Vec<String> = cohort.iter().map(|s| s.athlete_id.clone()).collect();
    let (plan, warnings) =
        read_split_plan(&read_file(path)?, &ids, SplitMethod::Stratified, test_fraction)
            .map_err(|e| CliError::validation(e.to_string()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(plan)
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses arguments from `argv`, runs the subcommand and returns the process
/// exit code, printing a single-line machine-parsable error on failure.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version via this path with code 0
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error code={} msg={:?}", e.code, e.msg);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let jobs: usize = resolve(cli.jobs, &file, "jobs", 0)?;
    if jobs > 0 {
        // Ignore failure: the global pool can already be set in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &file),
        Command::Validate(a) => cmd_validate(a, &file),
        Command::Standardize(a) => cmd_standardize(a, &file),
        Command::Split(a) => cmd_split(a, &file),
        Command::Tune(a) => cmd_tune(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Estimate(a) => cmd_estimate(a, &file),
        Command::Report(a) => cmd_report(a, &file),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_gen(args: GenArgs, file: &FileConfig) -> Result<(), CliError> {
    let n = resolve(args.n, file, "n", 105)?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let noise_sigma = resolve(args.noise_sigma, file, "noise_sigma", 0.3)?;
    let options = SynthOptions {
        n_athletes: n,
        seed,
        noise_sigma,
    };
    let (sessions, truth) =
        generate_cohort(&options).map_err(|e| CliError::validation(e.to_string()))?;
    let canonical = format!("cmd=gen n={n} noise_sigma={noise_sigma} seed={seed}");
    let header = file_header(seed, &canonical);
    write_file(&args.out, &format!("{header}{}", serialize_sessions(&sessions)))?;
    let truth_path = args
        .truth_out
        .unwrap_or_else(|| args.out.with_file_name("truth.csv"));
    write_file(&truth_path, &format!("{header}{}", write_truth(&truth)))?;
    println!(
        "generated {} athletes -> {} (truth: {})",
        n,
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = resolve(args.seed, file, "seed", 0)?;
    let sessions = parse_sessions(&read_file(&args.input)?)?;
    let mut valid = 0usize;
    let mut rejects: Vec<(String, String)> = Vec::new();
    for s in sessions {
        let id = s.athlete_id.clone();
        match validate(s) {
            Ok(_) => valid += 1,
            Err(e) => rejects.push((id, e.to_string())),
        }
    }
    let mut report = file_header(seed, "cmd=validate");
    report.push_str("athlete_id,reason\n");
    for (id, reason) in &rejects {
        report.push_str(&format!("{id},{:?}\n", reason));
    }
    match &args.out {
        Some(path) => write_file(path, &report)?,
        None => print!("{report}"),
    }
    println!("valid={valid} rejected={}", rejects.len());
    Ok(())
}

fn cmd_standardize(args: StandardizeArgs, file: &FileConfig) -> Result<(), CliError> {
    let grid_k = resolve(args.grid_k, file, "grid_k", DEFAULT_GRID_K)?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let sessions = parse_sessions(&read_file(&args.input)?)?;
    let mut cohort = Vec::new();
    let mut rejected = 0usize;
    for s in sessions {
        let id = s.athlete_id.clone();
        match validate(s).map_err(|e| e.to_string()).and_then(|v| {
            resample(&v, grid_k).map_err(|e| e.to_string())
        }) {
            Ok(series) => cohort.push(series),
            Err(reason) => {
                eprintln!("warning: skipping {id}: {reason}");
                rejected += 1;
            }
        }
    }
    if cohort.is_empty() {
        return Err(CliError::validation("no valid sessions to standardize"));
    }
    let canonical = format!("cmd=standardize grid_k={grid_k} seed={seed}");
    let content = format!("{}{}", file_header(seed, &canonical), write_standardized(&cohort));
    write_file(&args.out, &content)?;
    println!(
        "standardized {} athletes (skipped {rejected}) -> {}",
        cohort.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs, file: &FileConfig) -> Result<(), CliError> {
    let method = resolve(args.split_method, file, "split_method", "stratified".into())?;
    let test_fraction = resolve(args.test_fraction, file, "test_fraction", 0.3)?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let linkage_name = resolve(args.linkage, file, "linkage", "average".into())?;
    let cohort = read_cohort(&args.input)?;
    let ids: Vec<String> = cohort.iter().map(|s| s.athlete_id.clone()).collect();

    let plan = match method.as_str() {
        "stratified" => {
            let linkage = parse_linkage(&linkage_name)?;
            let strata = hierarchical_cluster(&cohort, linkage, args.strata)
                .map_err(|e| CliError::validation(e.to_string()))?;
            println!(
                "clustered into {} strata (cut height {})",
                strata.n_strata, strata.linkage_cut
            );
            stratified_split(&ids, &strata, test_fraction, seed)
        }
        "knowledge" => {
            let plan_path = args.plan.ok_or_else(|| {
                CliError::validation("--plan is required with --split-method knowledge")
            })?;
            let (plan, warnings) = knowledge_split(&read_file(&plan_path)?, &ids)
                .map_err(|e| CliError::validation(e.to_string()))?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            plan
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown split method {other:?} (expected stratified or knowledge)"
            )))
        }
    };
    let canonical = format!(
        "cmd=split linkage={linkage_name} method={method} seed={seed} strata={:?} test_fraction={test_fraction}",
        args.strata
    );
    let content = format!("{}{}", file_header(seed, &canonical), write_split_plan(&plan, &ids));
    write_file(&args.out, &content)?;
    println!(
        "split {} train / {} test -> {}",
        plan.train_ids.len(),
        plan.test_ids.len(),
        args.out.display()
    );
    Ok(())
}

pub const GRID_HEADER: &str = "hu,delays,restart,set,heuristic_pct,pearson_r,objective";

fn grid_rows(cells: &[CellOutcome], out: &mut String) {
    let mut push = |hu: usize, d: usize, r: usize, set: &str, rep: &PerformanceReport, obj: f64| {
        out.push_str(&format!(
            "{hu},{d},{r},{set},{},{},{}\n",
            rep.heuristic_pct, rep.pearson_r, obj
        ));
    };
    for cell in cells {
        let result = match &cell.result {
            Ok(r) => r,
            Err(_) => continue,
        };
        for restart in &result.restarts {
            push(
                cell.hidden_units,
                cell.delays,
                restart.restart,
                "train",
                &restart.train_report,
                restart.objective,
            );
            if let Some(rep) = &restart.test_report {
                push(cell.hidden_units, cell.delays, restart.restart, "test", rep, restart.objective);
            }
            if let Some(rep) = &restart.global_report {
                push(cell.hidden_units, cell.delays, restart.restart, "global", rep, restart.objective);
            }
        }
    }
}

fn train_options(
    seed: u64,
    restarts: usize,
    max_epochs: usize,
) -> TrainOptions {
    TrainOptions {
        restarts,
        seed,
        max_epochs,
        ..TrainOptions::default()
    }
}

fn cmd_tune(args: TuneArgs, file: &FileConfig) -> Result<(), CliError> {
    let restarts = resolve(args.restarts, file, "restarts", 10)?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let features = parse_features(&resolve(args.features, file, "features", "none".into())?)?;
    let min_pts = resolve(args.min_pts, file, "min_pts", 17.5)?;
    let max_epochs = resolve(args.max_epochs, file, "max_epochs", 1000)?;
    let cohort = read_cohort(&args.input)?;
    let subset: Vec<FixedGridSeries> = cohort
        .into_iter()
        .filter(|s| s.pts >= min_pts - 1e-9)
        .collect();
    if subset.is_empty() {
        return Err(CliError::validation(format!(
            "no athletes with peak treadmill speed >= {min_pts} km/h"
        )));
    }
    // The tuning subset trains as a whole; no held-out set at this stage.
    let plan = SplitPlan {
        train_ids: subset.iter().map(|s| s.athlete_id.clone()).collect(),
        test_ids: Vec::new(),
        method: SplitMethod::Knowledge,
        seed,
        stratum_provenance: BTreeMap::new(),
    };
    let prepared =
        prepare(&subset, &plan, features).map_err(|e| CliError::training(e.to_string()))?;
    let options = train_options(seed, restarts, max_epochs);
    let report = preliminary_tuning(&prepared, &options, &ErrorBandTable::default())
        .map_err(|e| CliError::training(e.to_string()))?;

    let canonical = format!(
        "cmd=tune features={features} max_epochs={max_epochs} min_pts={min_pts} restarts={restarts} seed={seed}"
    );
    let mut out = file_header(seed, &canonical);
    out.push_str(&format!("stage,{GRID_HEADER}\n"));
    for stage in &report.stages {
        let mut rows = String::new();
        grid_rows(&stage.cells, &mut rows);
        for line in rows.lines() {
            out.push_str(&format!("{},{line}\n", stage.name));
        }
    }
    out.push_str(&format!(
        "# recommended_hu={}-{}\n# recommended_delays={}-{}\n",
        report.recommended_hu.0,
        report.recommended_hu.1,
        report.recommended_delays.0,
        report.recommended_delays.1
    ));
    write_file(&args.out, &out)?;
    println!(
        "tuned on {} athletes; recommended hu {}-{}, delays {}-{} -> {}",
        subset.len(),
        report.recommended_hu.0,
        report.recommended_hu.1,
        report.recommended_delays.0,
        report.recommended_delays.1,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let hu_spec = resolve(args.hu, file, "hu", "1-4".into())?;
    let delay_spec = resolve(args.delays, file, "delays", "5-11".into())?;
    let restarts = resolve(args.restarts, file, "restarts", 10)?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let feature_name = resolve(args.features, file, "features", "none".into())?;
    let features = parse_features(&feature_name)?;
    let max_epochs = resolve(args.max_epochs, file, "max_epochs", 1000)?;
    let test_fraction = resolve(args.test_fraction, file, "test_fraction", 0.3)?;
    let feature_select = args.feature_select || file.get("feature_select")?.unwrap_or(false);
    let hu_values = parse_range(&hu_spec).map_err(CliError::validation)?;
    let delay_values = parse_range(&delay_spec).map_err(CliError::validation)?;
    let zone = parse_zone(args.zone_hu.as_deref(), args.zone_delays.as_deref())?;

    let cohort = read_cohort(&args.input)?;
    let plan = read_plan(&args.split, &cohort, test_fraction)?;
    let prepared =
        prepare(&cohort, &plan, features).map_err(|e| CliError::training(e.to_string()))?;
    for (id, reason) in &prepared.skipped {
        eprintln!("warning: skipping {id}: {reason}");
    }
    let options = train_options(seed, restarts, max_epochs);
    let table = ErrorBandTable::default();
    let cells = grid_search(&prepared, &hu_values, &delay_values, &options, &table)
        .map_err(|e| CliError::training(e.to_string()))?;

    let canonical = format!(
        "cmd=train delays={delay_spec} feature_select={feature_select} features={feature_name} hu={hu_spec} max_epochs={max_epochs} restarts={restarts} seed={seed} zone={zone:?}"
    );
    let header = file_header(seed, &canonical);

    // grid results
    let mut grid = header.clone();
    grid.push_str(GRID_HEADER);
    grid.push('\n');
    grid_rows(&cells, &mut grid);
    write_file(&args.out.join("grid.csv"), &grid)?;

    // per-cell winner models + ranking entries
    let mut entries: Vec<RankEntry> = Vec::new();
    let mut entry_cells: Vec<&CellOutcome> = Vec::new();
    let mut failures = 0usize;
    for cell in &cells {
        match &cell.result {
            Ok(result) => {
                let winner = &result.restarts[result.winner];
                let report = winner
                    .global_report
                    .as_ref()
                    .unwrap_or(&winner.train_report);
                entries.push(RankEntry {
                    hidden_units: cell.hidden_units,
                    delays: cell.delays,
                    heuristic_pct: report.heuristic_pct,
                    pearson_r: report.pearson_r,
                    param_count: result.config.param_count(),
                });
                entry_cells.push(cell);
                let saved = SavedModel::new(&prepared, &result.winner_model);
                let path = args
                    .out
                    .join("models")
                    .join(format!("hu{}_d{}.model", cell.hidden_units, cell.delays));
                write_file(&path, &format!("{header}{}", saved.to_text()))?;
            }
            Err(e) => {
                eprintln!(
                    "warning: cell hu={} delays={} failed: {e}",
                    cell.hidden_units, cell.delays
                );
                failures += 1;
            }
        }
    }
    let outcome = rank_models(&entries, SelectionTolerance::default(), zone)
        .ok_or_else(|| CliError::training(format!("all {} grid cells failed", failures)))?;

    let mut rank = header.clone();
    rank.push_str("rank,hu,delays,heuristic_pct,pearson_r,param_count,selected\n");
    for (pos, &idx) in outcome.ranked.iter().enumerate() {
        let e = &entries[idx];
        rank.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            pos + 1,
            e.hidden_units,
            e.delays,
            e.heuristic_pct,
            e.pearson_r,
            e.param_count,
            if idx == outcome.selected { 1 } else { 0 }
        ));
    }
    write_file(&args.out.join("rank.csv"), &rank)?;

    let selected = &entries[outcome.selected];
    let (sel_hu, sel_delays) = (selected.hidden_units, selected.delays);
    println!(
        "selected architecture: {} hidden units, {} delays ({} parameters)",
        sel_hu, sel_delays, selected.param_count
    );

    // final model: selected cell winner, optionally after feature selection
    let mut final_features = features;
    let mut final_model = {
        let cell = entry_cells[outcome.selected].result.as_ref().unwrap();
        SavedModel::new(&prepared, &cell.winner_model)
    };
    if feature_select {
        let fs = constructive_feature_selection(&cohort, &plan, sel_hu, sel_delays, &options, &table)
            .map_err(|e| CliError::training(e.to_string()))?;
        let mut table_out = header.clone();
        table_out.push_str("features,set,heuristic_pct,pearson_r,selected\n");
        for row in &fs.rows {
            let mark = |f: FeatureSet| if f == fs.selected { 1 } else { 0 };
            table_out.push_str(&format!(
                "{},train,{},{},{}\n",
                row.features,
                row.train_report.heuristic_pct,
                row.train_report.pearson_r,
                mark(row.features)
            ));
            if let Some(rep) = &row.test_report {
                table_out.push_str(&format!(
                    "{},test,{},{},{}\n",
                    row.features, rep.heuristic_pct, rep.pearson_r, mark(row.features)
                ));
            }
            if let Some(rep) = &row.global_report {
                table_out.push_str(&format!(
                    "{},global,{},{},{}\n",
                    row.features, rep.heuristic_pct, rep.pearson_r, mark(row.features)
                ));
            }
        }
        write_file(&args.out.join("features.csv"), &table_out)?;
        println!("feature selection kept: {}", fs.selected);
        if fs.selected != features {
            final_features = fs.selected;
            let re_prepared = prepare(&cohort, &plan, final_features)
                .map_err(|e| CliError::training(e.to_string()))?;
            let cell = train_cell(&re_prepared, sel_hu, sel_delays, &options, &table)
                .map_err(CliError::training)?;
            final_model = SavedModel::new(&re_prepared, &cell.winner_model);
        }
    }
    write_file(
        &args.out.join("model.txt"),
        &format!("{header}{}", final_model.to_text()),
    )?;
    println!(
        "saved final model ({} features) -> {}",
        final_features,
        args.out.join("model.txt").display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = resolve(args.seed, file, "seed", 0)?;
    let test_fraction = resolve(args.test_fraction, file, "test_fraction", 0.3)?;
    let model = SavedModel::from_text(&read_file(&args.model)?)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let cohort = read_cohort(&args.input)?;
    let plan = read_plan(&args.split, &cohort, test_fraction)?;
    let prepared = prepare(&cohort, &plan, model.features)
        .map_err(|e| CliError::training(e.to_string()))?;
    let table = ErrorBandTable::default();
    let eval = |set: &[crate::train::PreparedAthlete]| {
        crate::train::evaluate_model(&model.config, &model.weights, set, &table)
            .map_err(|e| CliError::training(e.to_string()))
    };
    let train_rep = eval(&prepared.train)?;
    let test_rep = eval(&prepared.test)?;
    let mut all = prepared.train.clone();
    all.extend(prepared.test.iter().cloned());
    let global_rep = eval(&all)?;
    let report = applicability_report(train_rep, test_rep, global_rep);

    let canonical = format!("cmd=evaluate features={} seed={seed}", model.features);
    let mut out = file_header(seed, &canonical);
    out.push_str("set,heuristic_pct,pearson_r,n_athletes,n_out_of_scope\n");
    for (name, rep) in [
        ("global", &report.global),
        ("train", &report.train),
        ("test", &report.test),
    ] {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            rep.heuristic_pct,
            rep.pearson_r,
            rep.n_athletes,
            rep.out_of_scope.len()
        ));
    }
    out.push_str(&format!("# parity={}\n", report.parity));
    out.push_str("athlete_id,set,tested_pace,estimated_pace,error,allowed,within_band\n");
    for (name, rep) in [("train", &report.train), ("test", &report.test)] {
        for o in &rep.outcomes {
            out.push_str(&format!(
                "{},{name},{},{},{},{},{}\n",
                o.athlete_id,
                o.tested_pace,
                o.estimated_pace,
                o.error,
                o.allowed,
                if o.within_band { 1 } else { 0 }
            ));
        }
    }
    write_file(&args.out, &out)?;
    println!(
        "global {:.2}% / r={:.3}; train {:.2}% / r={:.3}; test {:.2}% / r={:.3}; parity {:.2}",
        report.global.heuristic_pct,
        report.global.pearson_r,
        report.train.heuristic_pct,
        report.train.pearson_r,
        report.test.heuristic_pct,
        report.test.pearson_r,
        report.parity
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = resolve(args.seed, file, "seed", 0)?;
    let model = SavedModel::from_text(&read_file(&args.model)?)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let sessions = parse_sessions(&read_file(&args.input)?)?;
    if sessions.is_empty() {
        return Err(CliError::validation("no sessions in input"));
    }
    let canonical = format!("cmd=estimate features={} seed={seed}", model.features);
    let mut out = file_header(seed, &canonical);
    out.push_str("athlete_id,lt_speed_kmh,lt_pace_s_per_km\n");
    for session in &sessions {
        let series = resample_features(session, model.k)
            .map_err(|e| CliError::validation(format!("{}: {e}", session.athlete_id)))?;
        let point = model
            .estimate(&series)
            .map_err(|e| CliError::training(e.to_string()))?;
        out.push_str(&format!(
            "{},{},{}\n",
            session.athlete_id, point.speed_at_lt, point.pace_at_lt
        ));
    }
    match &args.out {
        Some(path) => write_file(path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn set_label(s: &str) -> Result<&'static str, CliError> {
    match s {
        "train" => Ok("train"),
        "test" => Ok("test"),
        "global" => Ok("global"),
        other => Err(CliError::validation(format!("unknown set {other:?}"))),
    }
}

fn cmd_report(args: ReportArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = resolve(args.seed, file, "seed", 0)?;
    let feature_name = resolve(args.features, file, "features", "none".into())?;
    let features = parse_features(&feature_name)?;
    let rank_set = resolve(args.rank_set, file, "rank_set", "global".into())?;
    let rank_set = set_label(&rank_set)?;
    let zone = parse_zone(args.zone_hu.as_deref(), args.zone_delays.as_deref())?;

    // parse the grid results file, tolerating the extra `stage` column of tune
    let content = read_file(&args.input)?;
    let mut samples: Vec<(usize, usize, &'static str, f64, f64)> = Vec::new();
    for line in content.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("hu,") || line.starts_with("stage,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let f: &[&str] = if f.len() == 8 { &f[1..] } else { &f };
        if f.len() != 7 {
            return Err(CliError::validation(format!("bad grid row {line:?}")));
        }
        let parse_u = |s: &str| s.parse::<usize>().map_err(|_| CliError::validation(format!("bad grid row {line:?}")));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| CliError::validation(format!("bad grid row {line:?}")));
        samples.push((
            parse_u(f[0])?,
            parse_u(f[1])?,
            set_label(f[3])?,
            parse_f(f[4])?,
            parse_f(f[5])?,
        ));
    }
    if samples.is_empty() {
        return Err(CliError::validation("grid file holds no data rows"));
    }
    let rows = sensitivity_rows(&samples);
    let entries: Vec<RankEntry> = rows
        .iter()
        .filter(|r| r.set == rank_set)
        .map(|r| RankEntry {
            hidden_units: r.hidden_units,
            delays: r.delays,
            heuristic_pct: r.heuristic_mean,
            pearson_r: r.pearson_mean,
            param_count: crate::lrnn::LrnnConfig::new(
                features.n_inputs(),
                r.hidden_units,
                r.delays,
            )
            .param_count(),
        })
        .collect();
    let outcome = rank_models(&entries, SelectionTolerance::default(), zone)
        .ok_or_else(|| CliError::validation(format!("no rows for set {rank_set:?}")))?;

    let canonical =
        format!("cmd=report features={feature_name} rank_set={rank_set} seed={seed} zone={zone:?}");
    let mut out = file_header(seed, &canonical);
    out.push_str("section,hu,delays,set,heuristic_mean,heuristic_max,pearson_mean,pearson_max\n");
    for r in &rows {
        out.push_str(&format!(
            "sensitivity,{},{},{},{},{},{},{}\n",
            r.hidden_units,
            r.delays,
            r.set,
            r.heuristic_mean,
            r.heuristic_max,
            r.pearson_mean,
            r.pearson_max
        ));
    }
    out.push_str("section,rank,hu,delays,heuristic_pct,pearson_r,param_count,selected\n");
    for (pos, &idx) in outcome.ranked.iter().enumerate() {
        let e = &entries[idx];
        out.push_str(&format!(
            "ranking,{},{},{},{},{},{},{}\n",
            pos + 1,
            e.hidden_units,
            e.delays,
            e.heuristic_pct,
            e.pearson_r,
            e.param_count,
            if idx == outcome.selected { 1 } else { 0 }
        ));
    }
    write_file(&args.out, &out)?;
    let sel = &entries[outcome.selected];
    println!(
        "ranked {} cells on {rank_set}; selected {} hidden units, {} delays -> {}",
        entries.len(),
        sel.hidden_units,
        sel.delays,
        args.out.display()
    );
    Ok(())
}
