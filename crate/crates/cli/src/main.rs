//! `committee`: run deliberation matrices and analyze their artifacts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use committee::analysis::{
    analyze_records, branch_sets, branching_certificate, committee_mean, divergence_rows, divergence_series, group_by_condition, landscape,
    switch_summary_rows, ttm_cdf, write_csv, AnalysisError, AnalysisOptions, FitWindow, RowStatus,
};
use committee::runner::{
    execute_jobs, expand_matrix, persist_branches, run_branching, BackendRegistry, ExecutionContext, MatrixConfig,
    RunnerError,
};
use committee::state_codec::ParserOptions;
use committee::store::{
    default_scenarios, load_runs, load_scenarios, run_accounting, write_accounting_csv, LoadMode, LoadReport,
    ScenarioPacket, StoreError,
};

#[derive(Parser)]
#[command(name = "committee", version, about = "Multi-agent committee deliberation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a condition matrix and append JSONL records per condition.
    Run(RunArgs),
    /// Run K continuations of a persisted run from a branch round.
    Branch(BranchArgs),
    /// Per-condition exponent, CI, permutation p, flip rate and median TTM.
    Analyze(AnalyzeArgs),
    /// Scenario by condition matrix of exponents with realized n.
    Landscape(AnalyzeArgs),
    /// Target versus realized replicate counts.
    Accounting(AccountingArgs),
    /// Plot-ready D(t) series, TTM CDF points, switch summaries and branching certificates.
    Export(ExportArgs),
    /// Check a matrix config and/or run files without running anything.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    strict_parse: bool,
    #[arg(long)]
    backfill: bool,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BranchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run files, directories or globs holding the base run.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    #[arg(long)]
    base: String,
    #[arg(long)]
    round: u32,
    #[arg(long, default_value_t = 30)]
    k: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    strict_parse: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct InputArgs {
    /// Run files, directories or glob patterns.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "3:20")]
    window: FitWindow,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 2000)]
    permutations: usize,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Analysis seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AccountingArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Target for every condition, overriding the recorded one.
    #[arg(long)]
    target: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory for divergence.csv, ttm_cdf.csv, switch_summary.csv and branching.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run files to check strictly.
    inputs: Vec<String>,
}

enum Failure {
    Usage(String),
    Io(String),
    Degenerate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Degenerate(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Degenerate(m) => m,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Pattern(_) | StoreError::Scenario(_) | StoreError::ConditionMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::Config(_) | RunnerError::Protocol(_) => Failure::Usage(e.to_string()),
            RunnerError::Io(_) => Failure::Io(e.to_string()),
            RunnerError::Store(s) => s.into(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::DegenerateEnsemble => Failure::Degenerate(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            Ok(Box::new(File::create(p).map_err(|e| io_err(p, e))?))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn load(input: &InputArgs) -> Result<LoadReport, Failure> {
    let mode = if input.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let report = load_runs(&input.inputs, mode)?;
    for d in &report.diagnostics {
        eprintln!("warning: skipped malformed line {d}");
    }
    Ok(report)
}

fn scenarios_for(cfg: &MatrixConfig) -> Result<Vec<ScenarioPacket>, Failure> {
    let packets = match &cfg.scenario_file {
        Some(path) => load_scenarios(path)?,
        None => default_scenarios(),
    };
    for id in &cfg.scenarios {
        if !packets.iter().any(|p| &p.id == id) {
            return Err(Failure::Usage(format!("scenario {id} is not in the scenario file")));
        }
    }
    Ok(packets)
}

fn parser_options(strict: bool, cfg: &MatrixConfig) -> ParserOptions {
    ParserOptions { strict: strict || cfg.strict_parse, ..ParserOptions::default() }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = MatrixConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(p) = args.parallelism {
        if p == 0 {
            return Err(Failure::Usage("--parallelism must be at least 1".into()));
        }
        cfg.parallelism = p;
    }
    let scenarios = scenarios_for(&cfg)?;
    let jobs = expand_matrix(&cfg)?;
    let registry = BackendRegistry::from_table(&cfg.backends, cfg.parallelism)?;
    let ctx = ExecutionContext {
        registry: &registry,
        scenarios: &scenarios,
        out_dir: &args.out,
        parallelism: cfg.parallelism,
        parser: parser_options(args.strict_parse, &cfg),
        master_seed: cfg.master_seed,
        backfill: args.backfill,
        cancel: None,
    };
    let summary = execute_jobs(&jobs, &ctx)?;

    println!(
        "{} new runs ({} completed, {} excluded), {} already present, {} failed, {:.1}s",
        summary.new_runs(),
        summary.completed,
        summary.excluded_total(),
        summary.skipped_existing,
        summary.failed,
        summary.wall_time_s
    );
    for (reason, n) in &summary.excluded {
        println!("  excluded {reason}: {n}");
    }
    for e in &summary.errors {
        eprintln!("error: {e}");
    }

    let report = load_runs(&[args.out.to_string_lossy()], LoadMode::Lenient)?;
    let keys: Vec<String> = cfg.conditions()?.iter().map(|c| c.key()).collect();
    let rows = run_accounting(&report.records, &HashMap::new());
    for row in rows.iter().filter(|r| keys.contains(&r.condition_key) && r.deficit > 0) {
        eprintln!("warning: {} realized {}/{} (deficit {})", row.condition_key, row.realized, row.target, row.deficit);
    }
    Ok(())
}

fn cmd_branch(args: BranchArgs) -> Result<(), Failure> {
    let cfg = MatrixConfig::load(&args.config)?;
    let report = load_runs(&args.inputs, LoadMode::Strict)?;
    let base = report
        .records
        .iter()
        .find(|r| r.run_id == args.base)
        .ok_or_else(|| Failure::Usage(format!("no run with id {}", args.base)))?;
    let packets = match &cfg.scenario_file {
        Some(path) => load_scenarios(path)?,
        None => default_scenarios(),
    };
    let scenario = packets
        .iter()
        .find(|p| p.id == base.condition.scenario_id)
        .ok_or_else(|| Failure::Usage(format!("scenario {} is not in the scenario file", base.condition.scenario_id)))?;
    let parallelism = args.parallelism.unwrap_or(cfg.parallelism).max(1);
    let registry = BackendRegistry::from_table(&cfg.backends, parallelism)?;
    let records = run_branching(
        base,
        args.round,
        args.k,
        &scenario.prompt_text(),
        &registry,
        parser_options(args.strict_parse, &cfg),
        parallelism,
    )?;
    let excluded = records.iter().filter(|r| r.is_excluded()).count();
    let path = persist_branches(&args.out, &records)?;
    println!("{} continuations of {} from round {} ({} excluded) -> {}", records.len(), args.base, args.round, excluded, path.display());
    let mut all = vec![base.clone()];
    all.extend(records);
    match branch_sets(&all, args.round).and_then(|sets| branching_certificate(&sets, args.round, base.condition.rounds)) {
        Ok(certs) => {
            for c in certs {
                println!("gamma={:.6} H_K={:.6} mu_D={:.6} c_in={:.6} K={}", c.gamma, c.h_k, c.mu_d, c.c_in, c.k);
            }
        }
        Err(e) => eprintln!("warning: no certificate: {e}"),
    }
    Ok(())
}

fn analysis_options(args: &AnalyzeArgs) -> Result<AnalysisOptions, Failure> {
    if args.bootstrap == 0 || args.permutations == 0 {
        return Err(Failure::Usage("--bootstrap and --permutations must be at least 1".into()));
    }
    Ok(AnalysisOptions {
        window: args.window,
        bootstrap: args.bootstrap,
        permutations: args.permutations,
        confidence: args.confidence,
        seed: args.seed,
    })
}

fn degenerate_check(rows: &[committee::analysis::ConditionRow]) -> Result<(), Failure> {
    let degenerate: Vec<&str> =
        rows.iter().filter(|r| r.status == RowStatus::Degenerate).map(|r| r.condition_key.as_str()).collect();
    if degenerate.is_empty() {
        Ok(())
    } else {
        Err(Failure::Degenerate(format!("degenerate ensemble in {}", degenerate.join(", "))))
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let opts = analysis_options(&args)?;
    let report = load(&args.input)?;
    let rows = analyze_records(&report.records, &opts)?;
    let mut out = output(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_csv(&rows, &mut out).map_err(|e| Failure::Io(e.to_string()))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &rows).map_err(|e| Failure::Io(e.to_string()))?;
            writeln!(out).map_err(|e| Failure::Io(e.to_string()))?;
        }
    }
    for row in rows.iter().filter(|r| r.status == RowStatus::Skipped) {
        eprintln!("skipped {}: {}", row.condition_key, row.note);
    }
    degenerate_check(&rows)
}

fn cmd_landscape(args: AnalyzeArgs) -> Result<(), Failure> {
    let opts = analysis_options(&args)?;
    let report = load(&args.input)?;
    let rows = analyze_records(&report.records, &opts)?;
    let matrix = landscape(&rows);
    let mut out = output(args.out.as_deref())?;
    match args.format {
        Format::Csv => matrix.write_csv(&mut out).map_err(|e| Failure::Io(e.to_string()))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &matrix).map_err(|e| Failure::Io(e.to_string()))?;
            writeln!(out).map_err(|e| Failure::Io(e.to_string()))?;
        }
    }
    degenerate_check(&rows)
}

fn cmd_accounting(args: AccountingArgs) -> Result<(), Failure> {
    let report = load(&args.input)?;
    let mut targets = HashMap::new();
    if let Some(t) = args.target {
        for r in &report.records {
            targets.insert(r.condition_key.clone(), t);
        }
    }
    let rows = run_accounting(&report.records, &targets);
    write_accounting_csv(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), Failure> {
    let report = load(&args.input)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let groups = group_by_condition(&report.records);

    let mut divergence = Vec::new();
    let mut cdf = Vec::new();
    for (key, runs) in &groups {
        let trajs = runs
            .iter()
            .filter(|r| !r.is_excluded())
            .map(|r| committee_mean(r))
            .collect::<Result<Vec<_>, _>>()?;
        if trajs.len() >= 2 {
            divergence.extend(divergence_rows(key, &divergence_series(&trajs)?));
        }
        cdf.extend(ttm_cdf(runs)?);
    }
    let switches = switch_summary_rows(&groups)?;

    let mut rounds: Vec<(u32, u32)> =
        report.records.iter().filter_map(|r| r.branch.as_ref().map(|b| (b.branch_round, r.condition.rounds))).collect();
    rounds.sort();
    rounds.dedup();
    let mut certificates = Vec::new();
    for (t, horizon) in rounds {
        certificates.extend(branching_certificate(&branch_sets(&report.records, t)?, t, horizon)?);
    }

    let write = |name: &str, f: &dyn Fn(File) -> Result<(), csv::Error>| -> Result<(), Failure> {
        let path = args.out.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        f(file).map_err(|e| io_err(&path, e))
    };
    write("divergence.csv", &|f| write_csv(&divergence, f))?;
    write("ttm_cdf.csv", &|f| write_csv(&cdf, f))?;
    write("switch_summary.csv", &|f| write_csv(&switches, f))?;
    if certificates.is_empty() {
        println!("wrote divergence.csv, ttm_cdf.csv, switch_summary.csv to {}", args.out.display());
    } else {
        write("branching.csv", &|f| write_csv(&certificates, f))?;
        println!("wrote divergence.csv, ttm_cdf.csv, switch_summary.csv, branching.csv to {}", args.out.display());
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    if args.config.is_none() && args.inputs.is_empty() {
        return Err(Failure::Usage("nothing to validate: pass --config and/or run files".into()));
    }
    if let Some(path) = &args.config {
        let cfg = MatrixConfig::load(path)?;
        scenarios_for(&cfg)?;
        let jobs = expand_matrix(&cfg)?;
        BackendRegistry::from_table(&cfg.backends, cfg.parallelism)?;
        println!("{}: {} conditions, {} jobs", path.display(), cfg.conditions()?.len(), jobs.len());
    }
    if !args.inputs.is_empty() {
        let report = load_runs(&args.inputs, LoadMode::Strict)?;
        for r in &report.records {
            r.condition.validate().map_err(|e| Failure::Usage(format!("{}: {e}", r.run_id)))?;
            if r.condition.key() != r.condition_key {
                return Err(Failure::Usage(format!("{}: condition key does not match its condition", r.run_id)));
            }
        }
        println!("{} records in {} files", report.records.len(), report.files.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Branch(a) => cmd_branch(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Accounting(a) => cmd_accounting(a),
        Command::Export(a) => cmd_export(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
