use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use rdbc::classifier::{FeatureMap, SamplingPolicy, TrainConfig};
use rdbc::gaussianity::{self, Source};
use rdbc::stats::{self, Mode};
use rdbc::synthdata::{self, BenchmarkConfig, FakeFamily};
use rdbc::{evaluation, io, rng, FeatureMatrix, Label};

/// Real-distribution bias correction: simulate, estimate, train, evaluate.
#[derive(Debug, Parser)]
#[command(name = "rdbc", version)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic domain-shift benchmark as feature CSV files
    Simulate(SimulateArgs),
    /// Estimate the meta-distribution of batch statistics from real features
    Estimate(EstimateArgs),
    /// Train a detector and write its checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on feature files
    Eval(EvalArgs),
    /// Moment report of batch means of a non-Gaussian source
    CltProbe(CltProbeArgs),
    /// Render an evaluation report as a table
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Feature dimension
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Rows per class in every split
    #[arg(long, default_value_t = 4000)]
    n_per_class: usize,
    #[arg(long, default_value_t = 4)]
    num_targets: usize,
    /// laplace_marginals, gaussian_mixture or cubed_gaussian
    #[arg(long, default_value = "laplace_marginals")]
    fake_family: FakeFamily,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature CSV; only rows labelled real are used
    #[arg(long)]
    input: PathBuf,
    /// Output directory (receives meta.json)
    #[arg(long)]
    out: PathBuf,
    /// Batch size N
    #[arg(long = "meta-n", visible_alias = "N", default_value_t = stats::DEFAULT_META_N)]
    meta_n: usize,
    /// Number of batches K
    #[arg(long, default_value_t = stats::DEFAULT_META_K)]
    meta_k: usize,
    /// diagonal or full
    #[arg(long, default_value = "diagonal", value_parser = parse_mode)]
    mode: Mode,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training feature CSV with real and fake rows
    #[arg(long)]
    input: PathBuf,
    /// Output directory (receives checkpoint.json)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    mini_batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long = "meta-n", visible_alias = "N", default_value_t = stats::DEFAULT_META_N)]
    meta_n: usize,
    #[arg(long, default_value_t = stats::DEFAULT_META_K)]
    meta_k: usize,
    /// diagonal or full
    #[arg(long, default_value = "diagonal", value_parser = parse_mode)]
    whitening_mode: Mode,
    /// per-batch, per-sample, fixed or none
    #[arg(long, visible_alias = "policy", default_value = "per-batch")]
    sampling_policy: SamplingPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = rdbc::linalg::DEFAULT_EPS)]
    eps: f64,
    /// Sampled variances are floored at this fraction of their law mean
    #[arg(long, default_value_t = 0.25)]
    floor_ratio: f64,
    /// linear, quadratic or quadratic_abs
    #[arg(long, default_value = "quadratic_abs")]
    feature_map: FeatureMap,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            mini_batch_size: self.mini_batch_size,
            learning_rate: self.learning_rate,
            meta_n: self.meta_n,
            meta_k: self.meta_k,
            whitening_mode: self.whitening_mode,
            sampling_policy: self.sampling_policy,
            seed: self.seed,
            eps: self.eps,
            floor_ratio: self.floor_ratio,
            feature_map: self.feature_map,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Seed for Monte-Carlo inference
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature CSV to evaluate; repeat for several domains
    #[arg(long = "input", required_unless_present = "benchmark")]
    inputs: Vec<PathBuf>,
    /// Directory written by `simulate`; evaluates source_test.csv and every target
    #[arg(long, conflicts_with = "inputs")]
    benchmark: Option<PathBuf>,
    /// Domain tag excluded from the average target AUC
    #[arg(long, default_value = synthdata::SOURCE_DOMAIN)]
    source_domain: String,
    /// Sampled transforms averaged per prediction (0 = deterministic)
    #[arg(long, default_value_t = 0)]
    mc_samples: usize,
    /// Output directory (receives report.json and histograms.csv)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CltProbeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// uniform, exponential or bernoulli
    #[arg(long)]
    source: Source,
    /// Draws per batch mean
    #[arg(long = "N", visible_alias = "batch-size", default_value_t = stats::DEFAULT_META_N)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Accepted for uniformity; rendering is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// report.json written by `eval`
    #[arg(long)]
    input: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "diagonal" => Ok(Mode::Diagonal),
        "full" => Ok(Mode::Full),
        other => Err(format!("unknown mode {other:?} (expected diagonal or full)")),
    }
}

/// Failure of a command, with the exit code it maps to.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: --threads: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::CltProbe(a) => clt_probe(a),
        Command::Report(a) => report(a),
    }
}

fn out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(path: &Path) -> anyhow::Result<FeatureMatrix> {
    io::load_features(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Outcome {
    if a.dim == 0 || a.n_per_class < 2 || a.num_targets == 0 {
        return Err(Failure::Usage("--dim and --num-targets must be positive, --n-per-class at least 2".into()));
    }
    let cfg = BenchmarkConfig {
        dim: a.dim,
        n_per_class: a.n_per_class,
        num_targets: a.num_targets,
        fake_family: a.fake_family,
        ..BenchmarkConfig::default()
    };
    let bench = synthdata::make_benchmark_with(&cfg, a.seed).context("generating benchmark")?;
    out_dir(&a.out)?;
    let mut files = vec![("source_train".to_string(), &bench.source), ("source_test".to_string(), &bench.source_test)];
    files.extend(bench.targets.iter().map(|t| (t.domain().to_string(), t)));
    for (name, x) in files {
        let path = a.out.join(format!("{name}.csv"));
        io::save_features(x, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn estimate(a: EstimateArgs) -> Outcome {
    if a.meta_n < 2 || a.meta_k == 0 {
        return Err(Failure::Usage("--meta-n must be at least 2 and --meta-k positive".into()));
    }
    let real = load(&a.input)?.filter(Label::Real);
    let meta = stats::estimate_meta(&real, a.meta_n, a.meta_k, a.mode, &mut rng::seeded(a.seed))
        .with_context(|| format!("estimating from {}", a.input.display()))?;
    out_dir(&a.out)?;
    let path = a.out.join("meta.json");
    io::save_meta(&meta, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let cfg = a.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load(&a.input)?;
    let ckpt = rdbc::train(&data, &cfg).with_context(|| format!("training on {}", a.input.display()))?;
    out_dir(&a.out)?;
    let path = a.out.join("checkpoint.json");
    io::save_checkpoint(&ckpt, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn benchmark_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut targets: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("target-") && n.ends_with(".csv"))
        })
        .collect();
    targets.sort();
    let mut files = vec![dir.join("source_test.csv")];
    files.extend(targets);
    Ok(files)
}

fn eval(a: EvalArgs) -> Outcome {
    let ckpt = io::load_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let files = match &a.benchmark {
        Some(dir) => benchmark_files(dir)?,
        None => a.inputs.clone(),
    };
    let domains = files.iter().map(|p| load(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let report = evaluation::evaluate(&ckpt, &domains, &a.source_domain, a.mc_samples, a.seed).context("evaluating")?;
    out_dir(&a.out)?;
    let path = a.out.join("report.json");
    io::save_report(&report, &path).with_context(|| format!("writing {}", path.display()))?;
    let path = a.out.join("histograms.csv");
    io::save_histograms(&report.histograms, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn clt_probe(a: CltProbeArgs) -> Outcome {
    if a.n == 0 || a.trials < 100 {
        return Err(Failure::Usage("--N must be positive and --trials at least 100".into()));
    }
    let rep = gaussianity::clt_probe(a.source, a.n, a.trials, &mut rng::seeded(a.seed)).context("running probe")?;
    let text = serde_json::to_string_pretty(&rep).context("serializing report")?;
    println!("{text}");
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    let rep = io::load_report(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    print!("{}", rep.render_table());
    Ok(())
}
