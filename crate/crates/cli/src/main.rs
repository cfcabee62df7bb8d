//! `foltr`: run, inspect and summarize federated OLTR simulations.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foltr::clicks::{ClickModel, SdbnKind};
use foltr::datasets::{load_intent_collection, parse_letor, FoldRole, Grade};
use foltr::eval::{offline_eval, offline_eval_intents};
use foltr::harness::synthetic::intent_qrels;
use foltr::harness::{
    export_partition, make_synthetic_dataset, make_synthetic_intent_dataset, report,
    rerun_from_manifest, run_experiment, ExperimentConfig, HarnessError, SynthSpec,
};
use foltr::RankerParams;

#[derive(Parser)]
#[command(
    name = "foltr",
    version,
    about = "Federated online learning to rank simulator"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (fold, seed) of a config, or re-run one manifest.
    Run(RunArgs),
    /// Write the client partition of one (fold, seed) as JSON.
    Partition(PartitionArgs),
    /// Offline nDCG of a checkpoint on a LETOR file.
    Eval(EvalArgs),
    /// Aggregate run directories into curves.csv and summary.csv.
    Report(ReportArgs),
    /// Write a synthetic LETOR dataset.
    Synth(SynthArgs),
    /// Print analytic per-rank click probabilities for a grade list.
    ClickProbe(ClickProbeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Re-run the run described by this manifest.json instead.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for a manifest re-run (default: the manifest's directory).
    #[arg(long, requires = "manifest")]
    out: Option<PathBuf>,
    /// Worker threads for client rounds; 0 uses every core. Results do not
    /// depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PartitionArgs {
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Parameter checkpoint (.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// LETOR file; with --qrels, the feature file of an intent collection.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    feature_count: usize,
    /// Four intent qrels files; evaluation then averages over intents.
    #[arg(long, num_args = 4)]
    qrels: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = 10)]
    cutoff: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, or directories searched for runs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Config name the others are tested against (default: first by name).
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 20)]
    docs: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long, default_value_t = 5)]
    grades: u8,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Folds to write, each with train.txt and test.txt.
    #[arg(long, default_value_t = 1)]
    folds: usize,
    /// Write a four-intent collection with this many relevant documents per
    /// query and intent instead of graded folds.
    #[arg(long)]
    intents: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Sdbn,
    Pbm,
}

#[derive(Args)]
struct ClickProbeArgs {
    #[arg(long, value_enum, default_value_t = Family::Sdbn)]
    family: Family,
    /// SDBN user: perfect, navigational or informational.
    #[arg(long, default_value = "perfect")]
    instantiation: String,
    /// PBM examination exponent.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Number of relevance grades.
    #[arg(long, default_value_t = 5)]
    scale: usize,
    /// Grades of the displayed list, top first, e.g. `4,0,2`.
    #[arg(long, value_delimiter = ',', required = true)]
    grades: Vec<Grade>,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_err(path, e))
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    if let Some(manifest) = args.manifest {
        let m = rerun_from_manifest(&manifest, args.out.as_deref(), args.workers)?;
        println!(
            "{} fold {} seed {}: offline {:?} online {:?}",
            m.config.name, m.fold, m.seed, m.final_offline_ndcg, m.final_online
        );
        return Ok(());
    }
    let config = args.config.expect("clap enforces config or manifest");
    for dir in run_experiment(&config, args.workers)? {
        println!("{}", dir.display());
    }
    Ok(())
}

fn partition(args: PartitionArgs) -> Result<(), HarnessError> {
    let config = ExperimentConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(config.seeds[0]);
    export_partition(&config, args.fold, seed, &args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), HarnessError> {
    let params = RankerParams::read_checkpoint(open(&args.checkpoint)?)
        .map_err(|e| data_err(&args.checkpoint, e))?;
    let value = match &args.qrels {
        Some(qrels) => {
            let readers = qrels
                .iter()
                .map(|p| open(p))
                .collect::<Result<Vec<_>, _>>()?;
            let (ds, _) = load_intent_collection(open(&args.data)?, args.feature_count, readers)
                .map_err(|e| data_err(&args.data, e))?;
            offline_eval_intents(&params, &ds, args.cutoff)
        }
        None => {
            let ds = parse_letor(open(&args.data)?, args.feature_count)
                .map_err(|e| data_err(&args.data, e))?;
            offline_eval(&params, &ds, args.cutoff)
        }
    }
    .map_err(|e| data_err(&args.data, e))?;
    println!("ndcg@{} {value}", args.cutoff);
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<(), HarnessError> {
    let out = report(&args.inputs, &args.out, args.baseline.as_deref())?;
    println!("baseline {}", out.baseline);
    for r in &out.rows {
        let p = r.p_offline.map_or("-".to_string(), |p| format!("{p:.3e}"));
        println!(
            "{:<28} n={:<3} offline {:.4} ± {:.4}  online {:.2} ± {:.2}  p={p} {}",
            r.config, r.runs, r.offline_mean, r.offline_sd, r.online_mean, r.online_sd, r.marker
        );
    }
    println!(
        "{}\n{}",
        out.curves_path.display(),
        out.summary_path.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), HarnessError> {
    if args.queries == 0 || args.docs == 0 || args.features == 0 || args.grades == 0 {
        return Err(config_err(
            "queries, docs, features and grades must be at least 1",
        ));
    }
    let spec = SynthSpec {
        num_queries: args.queries,
        docs_per_query: args.docs,
        feature_count: args.features,
        grade_scale: args.grades,
        noise: args.noise,
        seed: args.seed,
    };
    fs::create_dir_all(&args.out)?;
    if let Some(relevant) = args.intents {
        let ds = make_synthetic_intent_dataset(&spec, relevant);
        fs::write(args.out.join("features.txt"), ds.to_letor_string())?;
        for i in 0..4 {
            fs::write(
                args.out.join(format!("intent{}.qrels", i + 1)),
                intent_qrels(&ds, i),
            )?;
        }
    } else {
        for fold in 0..args.folds {
            let dir = args.out.join(format!("Fold{}", fold + 1));
            fs::create_dir_all(&dir)?;
            let f = fold as u64;
            let train = make_synthetic_dataset(&spec, 2 * f, FoldRole::Train);
            let test = make_synthetic_dataset(&spec, 2 * f + 1, FoldRole::Test);
            fs::write(dir.join("train.txt"), train.to_letor_string())?;
            fs::write(dir.join("test.txt"), test.to_letor_string())?;
        }
    }
    println!("{}", args.out.display());
    Ok(())
}

fn click_probe(args: ClickProbeArgs) -> Result<(), HarnessError> {
    let model = match args.family {
        Family::Sdbn => {
            let kind: SdbnKind = args.instantiation.parse().map_err(config_err)?;
            ClickModel::sdbn(kind, args.scale)
        }
        Family::Pbm => ClickModel::pbm(args.eta, args.scale),
    }
    .map_err(config_err)?;
    let probs = model
        .click_probabilities(&args.grades)
        .map_err(config_err)?;
    println!("# {}", model.label());
    println!("rank,grade,click_probability");
    for (i, (g, p)) in args.grades.iter().zip(&probs).enumerate() {
        println!("{},{g},{p}", i + 1);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Partition(a) => partition(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth(a),
        Command::ClickProbe(a) => click_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("foltr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
