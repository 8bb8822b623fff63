use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qas_core::circuit::{parse_arch, serialize_arch, Architecture};
use qas_core::data::{prepare_splits, DataManifest, DataSplits, MnistFiles};
use qas_core::search::{
    continue_search, qubits_for, write_atomic, JsonLinesSink, SearchRecord, SearchState,
};
use qas_core::trainer::{evaluate_accuracy, init_params, train_circuit};
use qas_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

mod config;

use config::{ConfigFile, Profile, Settings};

const CHECKPOINT: &str = "checkpoint.json";
const MANIFEST: &str = "manifest.json";
const METRICS: &str = "metrics.jsonl";
const SUMMARY: &str = "summary.json";
const BEST: &str = "best.qc";
const LOCK: &str = ".lock";

#[derive(Parser)]
#[command(
    name = "qas",
    version,
    about = "Quantum circuit architecture search for MNIST 0-vs-1"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML file overriding profile values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding the four MNIST IDX files (plain or .gz).
    #[arg(long, env = "QAS_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the architecture search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "runs/search")]
        out_dir: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train a fixed architecture from freshly initialized parameters.
    Train {
        arch: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "runs/train")]
        out_dir: PathBuf,
    },
    /// Score an architecture file that carries parameters.
    Eval {
        arch: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the best circuit of a search run as an architecture file.
    Export {
        #[arg(long, default_value = "runs/search")]
        out_dir: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } | Error::Dimension { .. } => {
                Failure::Usage(e.into())
            }
            Error::Idx(_) | Error::CorpusIntegrity(_) => Failure::Data(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Search {
            run,
            out_dir,
            resume,
        } => cmd_search(&run, &out_dir, resume),
        Command::Train { arch, run, out_dir } => cmd_train(&arch, &run, &out_dir),
        Command::Eval { arch, split, run } => cmd_eval(&arch, split, &run),
        Command::Export { out_dir, output } => cmd_export(&out_dir, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Data(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn settings(run: &RunArgs) -> CmdResult<Settings> {
    let file = run
        .config
        .as_deref()
        .map(ConfigFile::load)
        .transpose()
        .usage()?;
    Settings::resolve(file.as_ref(), run.profile, run.seed).usage()
}

fn load_data(run: &RunArgs, s: &Settings) -> CmdResult<(DataSplits, DataManifest)> {
    let files = MnistFiles::load(&run.data_dir)
        .with_context(|| format!("loading MNIST from {}", run.data_dir.display()))
        .map_err(Failure::Data)?;
    let splits = prepare_splits(&files, s.search.seed, s.subset).map_err(|e| match e {
        Error::Config(_) | Error::Arity { .. } => Failure::Data(e.into()),
        e => e.into(),
    })?;
    let manifest = files.manifest(&splits, s.search.seed);
    Ok((splits, manifest))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    settings: &'a Settings,
    seed: u64,
    data: &'a DataManifest,
    tool_version: &'static str,
    started_at: String,
}

#[derive(Serialize, serde::Deserialize)]
struct Summary {
    profile: Profile,
    seed: u64,
    episodes: usize,
    best_episode: Option<usize>,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    gates: Option<usize>,
    parameters: Option<usize>,
    architecture: Option<String>,
    finished_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Exclusive advisory lock on `dir`, held until the returned file drops.
fn lock_dir(dir: &Path) -> CmdResult<File> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()?;
    let path = dir.join(LOCK);
    let file = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .runtime()?;
    file.try_lock()
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("{} is in use by another run", dir.display()))
        .runtime()?;
    Ok(file)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let json = serde_json::to_vec_pretty(value).runtime()?;
    write_atomic(path, &json).map_err(Failure::from)
}

fn cmd_search(run: &RunArgs, out_dir: &Path, resume: bool) -> CmdResult {
    let s = settings(run)?;
    let (data, data_manifest) = load_data(run, &s)?;
    let num_qubits = qubits_for(&data)?;

    let checkpoint = out_dir.join(CHECKPOINT);
    if checkpoint.exists() && !resume {
        return Err(Failure::Usage(anyhow!(
            "{} already holds a search; pass --resume to continue it or choose another --out-dir",
            out_dir.display()
        )));
    }
    let _lock = lock_dir(out_dir)?;

    let state = if resume && checkpoint.exists() {
        let state = SearchState::load(&checkpoint, &s.search, num_qubits)?;
        tracing::info!(episodes = state.episodes_done(), "resuming search");
        state
    } else {
        SearchState::new(s.search, num_qubits)?
    };
    let manifest_path = out_dir.join(MANIFEST);
    if !manifest_path.exists() {
        write_json(
            &manifest_path,
            &RunManifest {
                command: "search",
                settings: &s,
                seed: s.search.seed,
                data: &data_manifest,
                tool_version: env!("CARGO_PKG_VERSION"),
                started_at: now(),
            },
        )?;
    }

    let metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join(METRICS))
        .context("opening metrics stream")
        .runtime()?;
    let mut sink = JsonLinesSink::new(BufWriter::new(metrics));
    let record = continue_search(state, &data, &mut sink, Some(&checkpoint))?;

    let summary = summarize(&s, &record)?;
    if let Some(text) = &summary.architecture {
        write_atomic(&out_dir.join(BEST), text.as_bytes())?;
    }
    write_json(&out_dir.join(SUMMARY), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn summarize(s: &Settings, record: &SearchRecord) -> CmdResult<Summary> {
    let best = record.best.as_ref();
    let architecture = best
        .map(|b| serialize_arch(&b.architecture, Some(&b.params)))
        .transpose()?;
    Ok(Summary {
        profile: s.profile,
        seed: s.search.seed,
        episodes: record.episodes.len(),
        best_episode: best.map(|b| b.episode),
        validation_accuracy: best.map(|b| b.validation_accuracy),
        test_accuracy: record.test_accuracy,
        gates: best.map(|b| b.gates),
        parameters: best.map(|b| b.parameters),
        architecture,
        finished_at: now(),
    })
}

fn print_summary(summary: &Summary) {
    match (summary.test_accuracy, summary.gates, summary.parameters) {
        (Some(acc), Some(gates), Some(params)) => println!(
            "episodes {}  test accuracy {acc:.4}  gates {gates}  parameters {params}",
            summary.episodes
        ),
        _ => println!("episodes {}  no circuit trained", summary.episodes),
    }
}

fn read_arch(path: &Path) -> CmdResult<(Architecture, Option<Vec<f64>>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    let doc = parse_arch(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .usage()?;
    Ok((doc.arch, doc.params))
}

fn check_width(arch: &Architecture, data: &DataSplits) -> CmdResult {
    let q = qubits_for(data)?;
    if arch.num_qubits() != q {
        return Err(Error::Dimension {
            expected: q,
            actual: arch.num_qubits(),
        }
        .into());
    }
    Ok(())
}

fn cmd_train(arch_path: &Path, run: &RunArgs, out_dir: &Path) -> CmdResult {
    let s = settings(run)?;
    let (arch, _) = read_arch(arch_path)?;
    let (data, data_manifest) = load_data(run, &s)?;
    check_width(&arch, &data)?;
    let _lock = lock_dir(out_dir)?;
    write_json(
        &out_dir.join(MANIFEST),
        &RunManifest {
            command: "train",
            settings: &s,
            seed: s.search.seed,
            data: &data_manifest,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at: now(),
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(s.search.seed);
    let initial = init_params(arch.parameter_count(), &mut rng);
    let outcome = train_circuit(&arch, initial, data.train(), &s.search.train, &mut rng)?;
    let params = outcome.params;
    let train = evaluate_accuracy(&arch, &params, data.train())?;
    let valid = evaluate_accuracy(&arch, &params, data.valid())?;
    let test = evaluate_accuracy(&arch, &params, data.test())?;

    let text = serialize_arch(&arch, Some(&params))?;
    let out = out_dir.join("trained.qc");
    write_atomic(&out, text.as_bytes())?;
    let metrics = out_dir.join(METRICS);
    let lines: String = outcome
        .loss_history
        .iter()
        .enumerate()
        .map(|(epoch, loss)| {
            format!(
                "{}\n",
                serde_json::json!({"kind": "train_loss", "epoch": epoch, "loss": loss})
            )
        })
        .collect();
    write_atomic(&metrics, lines.as_bytes())?;
    println!(
        "train {train:.4}  valid {valid:.4}  test {test:.4}  gates {}  parameters {}",
        arch.gate_count(),
        arch.parameter_count()
    );
    println!("parameters written to {}", out.display());
    Ok(())
}

fn cmd_eval(arch_path: &Path, split: Split, run: &RunArgs) -> CmdResult {
    let s = settings(run)?;
    let (arch, params) = read_arch(arch_path)?;
    let params = params.ok_or_else(|| {
        Failure::Usage(anyhow!(
            "{} has no parameters; train it first",
            arch_path.display()
        ))
    })?;
    let (data, _) = load_data(run, &s)?;
    check_width(&arch, &data)?;
    let samples = match split {
        Split::Train => data.train(),
        Split::Valid => data.valid(),
        Split::Test => data.test(),
    };
    let acc = evaluate_accuracy(&arch, &params, samples)?;
    println!(
        "{split:?} accuracy {acc:.4}  gates {}  parameters {}",
        arch.gate_count(),
        arch.parameter_count()
    );
    Ok(())
}

fn cmd_export(out_dir: &Path, output: Option<&Path>) -> CmdResult {
    let summary_path = out_dir.join(SUMMARY);
    let text = if summary_path.exists() {
        let bytes = fs::read(&summary_path).usage()?;
        let summary: Summary = serde_json::from_slice(&bytes)
            .with_context(|| format!("reading {}", summary_path.display()))
            .usage()?;
        summary.architecture
    } else {
        let path = out_dir.join(CHECKPOINT);
        let bytes = fs::read(&path)
            .with_context(|| format!("no summary or checkpoint in {}", out_dir.display()))
            .usage()?;
        let state: SearchState = serde_json::from_slice(&bytes)
            .with_context(|| format!("reading {}", path.display()))
            .usage()?;
        state
            .record
            .best
            .map(|b| serialize_arch(&b.architecture, Some(&b.params)))
            .transpose()?
    };
    let text = text.ok_or_else(|| Failure::Usage(anyhow!("the run has no trained circuit yet")))?;
    match output {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}
