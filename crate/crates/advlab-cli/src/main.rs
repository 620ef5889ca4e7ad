//! Command-line front end: train models, run attacks, probe with noise, and
//! emit the report tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use advlab::adversarial::{generate_adversarial, AttackConfig, AttackResult};
use advlab::dataset::{fit_standardization, sample_attack_cases, AttackCase, LabeledImageSet};
use advlab::model::{load_model, save_model, ConvNetSize, Model, TrainConfig};
use advlab::probing::{run_probe_suite, NoiseSelection, ProbeSpec};
use advlab::report::{
    curves_csv_bytes, distortion_statistics, fnv1a64, meta_bytes, stats_csv_bytes,
    summarize_run, summary_csv_bytes,
};
use advlab::runio::{
    load_attack_run, probe_cases, read_probe_csv, write_attack_run, write_probe_csv, PROBE_CSV,
};
use advlab::{Error, RandomStream};

const RUN_INFO: &str = "run_info.txt";

#[derive(Parser)]
#[command(name = "advlab", version, about = "Adversarial image lab for MNIST classifiers")]
struct Cli {
    /// Worker threads (also via ADVLAB_JOBS); defaults to the CPU count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and report its test error.
    Train(TrainArgs),
    /// Generate minimal-distortion adversarial images.
    Attack(AttackArgs),
    /// Probe attack results with matched pixel noise.
    Probe(ProbeArgs),
    /// Per-case and run-level distortion statistics.
    Stats(StatsArgs),
    /// Stacked probe averages, sorted curves, and run metadata.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Logistic,
    Convnet,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Gaussian,
    Empirical,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    /// Convnet capacity (ignored for logistic).
    #[arg(long, value_enum, default_value = "desk")]
    size: Size,
    #[arg(long)]
    mnist_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mnist_dir: PathBuf,
    #[arg(long, default_value_t = 125)]
    n: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    c_init: f64,
    #[arg(long, default_value_t = 1e6)]
    c_cap: f64,
    #[arg(long, default_value_t = 1e-3)]
    bisect_tol: f64,
    /// Solver iteration cap per attempt.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mnist_dir: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long, default_value_t = advlab::probing::DEFAULT_N_PROBES)]
    probes: usize,
    /// Comma-separated variance scales; defaults to 2^-5 .. 2^5.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long, value_enum, default_value = "both")]
    noise: Noise,
    /// Output table; defaults to probe.csv inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    run: PathBuf,
    /// Defaults to stats.csv inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Defaults to probe.csv inside the run directory.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Defaults to summary.csv inside the run directory; curves.csv and
    /// meta.txt are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Domain failures (an attack or analysis that honestly found nothing) exit
/// with 1; malformed inputs and I/O problems exit with 2.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::AttackFailed { .. }
        | Error::NoSuccessfulCases
        | Error::DegenerateSample
        | Error::EmptySelection
        | Error::EmptyPool => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.or_else(|| {
        std::env::var("ADVLAB_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(jobs) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: could not configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_split(dir: &Path, images: &str, labels: &str) -> Result<LabeledImageSet, Error> {
    LabeledImageSet::load(&dir.join(images), &dir.join(labels))
}

fn load_train(dir: &Path) -> Result<LabeledImageSet, Error> {
    load_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")
}

fn load_test(dir: &Path) -> Result<LabeledImageSet, Error> {
    load_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let train_set = load_train(&args.mnist_dir)?;
    let test_set = load_test(&args.mnist_dir)?;
    let std = fit_standardization(&train_set)?;
    let mut cfg = match args.arch {
        Arch::Logistic => TrainConfig::logistic_default(args.seed),
        Arch::Convnet => TrainConfig::convnet_default(args.seed),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    let mut model = match args.arch {
        Arch::Logistic => Model::logistic(std),
        Arch::Convnet => Model::convnet(
            std,
            match args.size {
                Size::Desk => ConvNetSize::Desk,
                Size::Full => ConvNetSize::Full,
            },
            args.seed,
        ),
    };
    let losses = model.train(&train_set, &cfg);
    for (epoch, loss) in losses.iter().enumerate() {
        eprintln!("epoch {epoch}: mean batch loss {loss:.6}");
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::DegenerateSample);
    }
    save_model(&model, &args.out)?;
    let report = model.evaluate(&test_set);
    println!("test_error={:.6}", report.error_rate);
    Ok(())
}

fn attack_one(
    model: &Model,
    case: &AttackCase,
    original: &[f64],
    cfg: &AttackConfig,
) -> Result<Option<AttackResult>, Error> {
    match generate_adversarial(model, case, original, cfg) {
        Ok(result) => Ok(Some(result)),
        // a capped-out penalty search is an honest per-case failure
        Err(Error::AttackFailed { .. }) => Ok(None),
        Err(other) => Err(other),
    }
}

fn cmd_attack(args: AttackArgs) -> Result<(), Error> {
    let model_bytes = std::fs::read(&args.model).map_err(|e| Error::io(&args.model, e))?;
    let model = advlab::model::load_model(&args.model)?;
    let test_set = load_test(&args.mnist_dir)?;
    let mut stream = RandomStream::new(args.seed, 0).derive(0xa7);
    let cases = sample_attack_cases(&model, &test_set, args.n, &mut stream)?;
    let mut cfg = AttackConfig {
        c_init: args.c_init,
        c_cap: args.c_cap,
        bisect_tol: args.bisect_tol,
        ..AttackConfig::default()
    };
    if let Some(v) = args.max_iters {
        cfg.solver.max_iterations = v;
    }
    let results: Vec<(AttackCase, Option<AttackResult>)> = cases
        .par_iter()
        .map(|case| {
            let r = attack_one(&model, case, test_set.image(case.original_index), &cfg);
            if let Ok(Some(res)) = &r {
                eprintln!(
                    "case {}: success={} C*={:.4} l2={:.2} iters={}",
                    case.original_index, res.success, res.c_star, res.l2_norm,
                    res.solver_iterations
                );
            } else {
                eprintln!("case {}: penalty search capped out", case.original_index);
            }
            r.map(|res| (*case, res))
        })
        .collect::<Result<_, Error>>()?;
    write_attack_run(&args.out, &results)?;
    let info = meta_bytes(&[
        ("model_hash".into(), format!("{:016x}", fnv1a64(&model_bytes))),
        ("arch".into(), model.architecture().into()),
        ("seed".into(), args.seed.to_string()),
        ("n_cases".into(), args.n.to_string()),
    ]);
    std::fs::write(args.out.join(RUN_INFO), info)
        .map_err(|e| Error::io(args.out.join(RUN_INFO), e))?;
    let successes = results
        .iter()
        .filter(|(_, r)| r.as_ref().is_some_and(|r| r.success))
        .count();
    println!("successes={successes}/{}", args.n);
    if successes == 0 {
        return Err(Error::NoSuccessfulCases);
    }
    Ok(())
}

fn parse_lambdas(spec: &str) -> Result<Vec<f64>, Error> {
    spec.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::SchemaMismatch {
                path: PathBuf::from("--lambdas"),
                detail: format!("bad value {s:?}"),
            })
        })
        .collect()
}

fn cmd_probe(args: ProbeArgs) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let test_set = load_test(&args.mnist_dir)?;
    let records = load_attack_run(&args.run)?;
    let cases = probe_cases(&records, |idx| test_set.image(idx));
    let mut spec = ProbeSpec::new(args.seed);
    spec.n_probes = args.probes;
    spec.noise = match args.noise {
        Noise::Gaussian => NoiseSelection::Gaussian,
        Noise::Empirical => NoiseSelection::Empirical,
        Noise::Both => NoiseSelection::Both,
    };
    if let Some(s) = &args.lambdas {
        spec.lambdas = parse_lambdas(s)?;
    }
    let rows = run_probe_suite(&model, &cases, &spec)?;
    let out = args.out.unwrap_or_else(|| args.run.join(PROBE_CSV));
    write_probe_csv(&out, &rows)?;
    println!("probe_rows={}", rows.len());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Error> {
    let records = load_attack_run(&args.run)?;
    let stats = distortion_statistics(&records)?;
    let agg = summarize_run(&stats)?;
    let out = args.out.unwrap_or_else(|| args.run.join("stats.csv"));
    std::fs::write(&out, stats_csv_bytes(&stats, &agg)).map_err(|e| Error::io(&out, e))?;
    println!("stats_cases={}", agg.n_cases);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    let records = load_attack_run(&args.run)?;
    let probe_path = args.probe.unwrap_or_else(|| args.run.join(PROBE_CSV));
    let rows = read_probe_csv(&probe_path)?;
    let out = args.out.unwrap_or_else(|| args.run.join("summary.csv"));
    std::fs::write(&out, summary_csv_bytes(&rows)?).map_err(|e| Error::io(&out, e))?;
    let dir = out.parent().unwrap_or(Path::new("."));
    let curves = dir.join("curves.csv");
    std::fs::write(&curves, curves_csv_bytes(&rows)?).map_err(|e| Error::io(&curves, e))?;

    let mut entries: Vec<(String, String)> = Vec::new();
    if let Ok(info) = std::fs::read_to_string(args.run.join(RUN_INFO)) {
        for line in info.lines() {
            if let Some((k, v)) = line.split_once('=') {
                entries.push((k.to_string(), v.to_string()));
            }
        }
    }
    let n_success = records.iter().filter(|r| r.success).count();
    entries.push(("n_attacked".into(), records.len().to_string()));
    entries.push(("n_success".into(), n_success.to_string()));
    entries.push(("n_probe_rows".into(), rows.len().to_string()));
    let meta = dir.join("meta.txt");
    std::fs::write(&meta, meta_bytes(&entries)).map_err(|e| Error::io(&meta, e))?;
    println!("summary={}", out.display());
    Ok(())
}
