//! `fedpeft` — reproducible federated PEFT experiments from the command line.
//!
//! Subcommands: `run` (one experiment from a JSON config), `distance`
//! (language distance ranking), `cost` (parameter/communication accounting),
//! `ablate` (accuracy vs training-set size), `gen-data` (synthetic corpus),
//! and `partition` (client shard files). Exit codes: 0 success, 1 runtime
//! failure, 2 invalid input. `FEDPEFT_THREADS` caps client-level parallelism
//! (0 = auto).

mod config;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use fedpeft_core::costmodel::{comm_cost, reduction_pct, trainable_fraction, CostQuery};
use fedpeft_core::data::{
    generate_synthetic, ingest_jsonl, language_counts, partition, write_jsonl, DatasetSpec,
    Example, PartitionMode,
};
use fedpeft_core::federation::{
    run_experiment, split_train_test, write_summary_csv, ExperimentReport, Paradigm, RoundRecord,
};
use fedpeft_core::langdist::{
    load_vectors, rank_languages, write_rank_csv, CorpusWeights, RankEntry,
};
use fedpeft_core::model::{paper_table4_counts, Strategy};

#[derive(Parser)]
#[command(name = "fedpeft", version, about = "Federated PEFT simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Full,
    Prompt,
    Lora,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Full => Strategy::Full,
            StrategyArg::Prompt => Strategy::Prompt,
            StrategyArg::Lora => Strategy::Lora,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Iid,
    Noniid,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's output_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override every seed in the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank languages by distance to the composite pretraining vector
    Distance {
        /// CSV of feature vectors: language,f1,...,fF
        #[arg(long)]
        vectors: PathBuf,
        /// JSON object of per-language token counts
        #[arg(long)]
        counts: PathBuf,
        /// Optional CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and communication cost accounting
    Cost {
        /// Named parameter-count preset ("paper-table4")
        #[arg(long)]
        preset: Option<String>,
        /// Strategy row of the preset
        #[arg(long)]
        strategy: Option<StrategyArg>,
        /// Explicit trainable parameter count (alternative to --preset)
        #[arg(long)]
        trainable: Option<u64>,
        /// Explicit total parameter count (enables the fraction line)
        #[arg(long)]
        total: Option<u64>,
        #[arg(long, default_value_t = 5)]
        clients_per_round: u64,
        #[arg(long, default_value_t = 10)]
        rounds: u64,
        #[arg(long, default_value_t = 4)]
        bytes_per_scalar: u64,
        #[arg(long, default_value_t = 2)]
        directions: u64,
        /// Emit the report as JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Accuracy vs training-set size for one language
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        language: String,
        /// Training-set sizes, e.g. --sizes 1000,100,30
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Output directory for ablation.csv
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset as JSONL
    GenData {
        /// JSON dataset spec
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a JSONL dataset into per-client shard files
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clients: usize,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        num_classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failures split by exit code: invalid input (2) vs runtime failure (1).
enum CliError {
    Invalid(String),
    Runtime(String),
}

fn invalid(e: impl Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::Distance {
            vectors,
            counts,
            out,
        } => cmd_distance(&vectors, &counts, out.as_deref()),
        Command::Cost {
            preset,
            strategy,
            trainable,
            total,
            clients_per_round,
            rounds,
            bytes_per_scalar,
            directions,
            json,
        } => cmd_cost(CostArgs {
            preset,
            strategy,
            trainable,
            total,
            clients_per_round,
            rounds,
            bytes_per_scalar,
            directions,
            json,
        }),
        Command::Ablate {
            config,
            language,
            sizes,
            out,
            seed,
        } => cmd_ablate(&config, &language, &sizes, out, seed),
        Command::GenData { config, out, seed } => cmd_gen_data(&config, &out, seed),
        Command::Partition {
            data,
            clients,
            mode,
            alpha,
            seed,
            vocab_size,
            num_classes,
            out,
        } => cmd_partition(&data, clients, mode, alpha, seed, vocab_size, num_classes, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
    cfg.resolve(seed).map_err(invalid)?;
    Ok(cfg)
}

fn write_history(path: &Path, history: &[RoundRecord]) -> Result<(), CliError> {
    let mut out = fs::File::create(path).map_err(runtime)?;
    for record in history {
        let line = serde_json::to_string(record).map_err(runtime)?;
        out.write_all(line.as_bytes()).map_err(runtime)?;
        out.write_all(b"\n").map_err(runtime)?;
    }
    Ok(())
}

fn print_report(report: &ExperimentReport) {
    println!("paradigm: {} ({})", report.paradigm, report.strategy);
    for (language, accuracy) in &report.per_language {
        println!("  {language}: {accuracy:.4}");
    }
    println!("  avg: {:.4}", report.average);
    if let Some(last) = report.history.last() {
        println!(
            "  rounds: {}, bytes/round: {}",
            report.history.len(),
            last.bytes_transmitted
        );
    }
}

fn cmd_run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> CliResult {
    let mut cfg = load_run_config(config_path, seed)?;
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| invalid("no output directory: pass --out or set output_dir"))?;
    cfg.output_dir = Some(out_dir.clone());
    let dataset = cfg.load_dataset().map_err(invalid)?;

    fs::create_dir_all(&out_dir).map_err(runtime)?;
    let report = run_experiment(
        cfg.paradigm,
        &dataset,
        &cfg.model,
        &cfg.federation,
        &cfg.options,
    )
    .map_err(runtime)?;

    write_history(&out_dir.join("history.jsonl"), &report.history)?;
    let summary = fs::File::create(out_dir.join("summary.csv")).map_err(runtime)?;
    write_summary_csv(summary, std::slice::from_ref(&report)).map_err(runtime)?;
    let echo = serde_json::to_string_pretty(&cfg).map_err(runtime)?;
    fs::write(out_dir.join("config-echo.json"), echo + "\n").map_err(runtime)?;

    print_report(&report);
    Ok(())
}

fn print_rank_table(rows: &[RankEntry]) {
    println!("{:<12} {:>10} {:>10}", "language", "cosine", "phi");
    for row in rows {
        match row.phi {
            Some(phi) => println!("{:<12} {:>10.6} {:>10.6}", row.language, row.cosine, phi),
            None => println!(
                "{:<12} {:>10.6} {:>10}",
                row.language, row.cosine, "undefined"
            ),
        }
    }
}

fn cmd_distance(vectors: &Path, counts: &Path, out: Option<&Path>) -> CliResult {
    let registry = load_vectors(vectors).map_err(invalid)?;
    let text = fs::read_to_string(counts)
        .map_err(|e| invalid(format!("cannot read counts {}: {e}", counts.display())))?;
    let weights: CorpusWeights = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("counts {}: {e}", counts.display())))?;

    let rows = rank_languages(&registry, &weights).map_err(invalid)?;
    print_rank_table(&rows);
    if let Some(path) = out {
        let file = fs::File::create(path).map_err(runtime)?;
        write_rank_csv(file, &rows).map_err(runtime)?;
    }
    Ok(())
}

struct CostArgs {
    preset: Option<String>,
    strategy: Option<StrategyArg>,
    trainable: Option<u64>,
    total: Option<u64>,
    clients_per_round: u64,
    rounds: u64,
    bytes_per_scalar: u64,
    directions: u64,
    json: bool,
}

fn group(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn cmd_cost(args: CostArgs) -> CliResult {
    let (label, trainable, total) = match (&args.preset, args.trainable) {
        (Some(name), None) => {
            if name != "paper-table4" {
                return Err(invalid(format!(
                    "unknown preset {name:?}; available: paper-table4"
                )));
            }
            let strategy: Strategy = args
                .strategy
                .ok_or_else(|| invalid("--preset requires --strategy"))?
                .into();
            let (total, trainable) = paper_table4_counts(strategy);
            (strategy.to_string(), trainable, Some(total))
        }
        (None, Some(trainable)) => ("explicit".to_string(), trainable, args.total),
        _ => return Err(invalid("pass exactly one of --preset or --trainable")),
    };

    let query = CostQuery {
        trainable_params: trainable,
        clients_per_round: args.clients_per_round,
        rounds: args.rounds,
        bytes_per_scalar: args.bytes_per_scalar,
        directions: args.directions,
    };
    let report = comm_cost(&query).map_err(invalid)?;

    // Reductions are reported against full fine-tuning of the preset model.
    let baseline = args.preset.as_ref().map(|_| {
        let (_, full) = paper_table4_counts(Strategy::Full);
        comm_cost(&CostQuery {
            trainable_params: full,
            ..query
        })
        .expect("baseline query is valid")
    });
    let reduction = baseline
        .as_ref()
        .map(|b| reduction_pct(&report, b).expect("baseline bytes nonzero"));
    let fraction = total
        .map(|t| trainable_fraction(trainable, t).map_err(invalid))
        .transpose()?;

    if args.json {
        let mut doc = serde_json::json!({
            "strategy": label,
            "trainable_params": trainable,
            "clients_per_round": args.clients_per_round,
            "rounds": args.rounds,
            "bytes_per_scalar": args.bytes_per_scalar,
            "directions": args.directions,
            "per_round_bytes": report.per_round_bytes,
            "total_bytes": report.total_bytes,
            "megabytes": report.megabytes,
        });
        if let Some(t) = total {
            doc["total_params"] = t.into();
        }
        if let Some(f) = fraction {
            doc["trainable_fraction_pct"] = (100.0 * f).into();
        }
        if let Some(r) = reduction {
            doc["reduction_vs_full_pct"] = r.into();
        }
        println!("{}", serde_json::to_string_pretty(&doc).map_err(runtime)?);
    } else {
        println!("{:<22} {}", "strategy", label);
        println!("{:<22} {}", "trainable params", group(trainable));
        if let Some(t) = total {
            println!("{:<22} {}", "total params", group(t));
        }
        if let Some(f) = fraction {
            println!("{:<22} {:.4}%", "trainable fraction", 100.0 * f);
        }
        println!("{:<22} {}", "per-round bytes", group(report.per_round_bytes));
        println!("{:<22} {}", "total bytes", group(report.total_bytes));
        println!("{:<22} {:.4} MB", "total transfer", report.megabytes);
        if let Some(r) = reduction {
            println!("{:<22} {:.2}%", "reduction vs full", r);
        }
    }
    Ok(())
}

fn cmd_ablate(
    config_path: &Path,
    language: &str,
    sizes: &[usize],
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult {
    let cfg = load_run_config(config_path, seed)?;
    if !matches!(cfg.paradigm, Paradigm::FedIid | Paradigm::FedNoniid) {
        return Err(invalid(
            "ablate compares against federated training: set paradigm to fed_iid or fed_noniid",
        ));
    }
    let dataset = cfg.load_dataset().map_err(invalid)?;
    let counts = language_counts(&dataset);
    if !counts.contains_key(language) {
        return Err(invalid(format!(
            "language {language:?} not present in the dataset"
        )));
    }
    let (train, _) = split_train_test(&dataset, cfg.options.eval_fraction, cfg.federation.seed);
    let available = language_counts(&train)
        .get(language)
        .copied()
        .unwrap_or(0);
    for &size in sizes {
        if size == 0 || size > available {
            return Err(invalid(format!(
                "size {size} out of range: language {language:?} has {available} training examples"
            )));
        }
    }

    let monolingual_data: Vec<Example> = dataset
        .iter()
        .filter(|ex| ex.language == language)
        .cloned()
        .collect();

    let mut rows = Vec::new();
    for &size in sizes {
        let mut mono_options = cfg.options.clone();
        mono_options.subsample = BTreeMap::from([(language.to_string(), size)]);
        let mono = run_experiment(
            Paradigm::Monolingual,
            &monolingual_data,
            &cfg.model,
            &cfg.federation,
            &mono_options,
        )
        .map_err(runtime)?;

        let mut fed_options = cfg.options.clone();
        fed_options.subsample.insert(language.to_string(), size);
        let fed = run_experiment(
            cfg.paradigm,
            &dataset,
            &cfg.model,
            &cfg.federation,
            &fed_options,
        )
        .map_err(runtime)?;

        rows.push((size, mono.per_language[language], fed.per_language[language]));
    }

    println!("{:<8} {:>12} {:>12}", "size", "monolingual", "federated");
    for (size, mono, fed) in &rows {
        println!("{size:<8} {mono:>12.4} {fed:>12.4}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir).map_err(runtime)?;
        let mut file = fs::File::create(dir.join("ablation.csv")).map_err(runtime)?;
        writeln!(file, "size,monolingual,federated").map_err(runtime)?;
        for (size, mono, fed) in &rows {
            writeln!(file, "{size},{mono:.4},{fed:.4}").map_err(runtime)?;
        }
    }
    Ok(())
}

fn cmd_gen_data(config_path: &Path, out: &Path, seed: Option<u64>) -> CliResult {
    let text = fs::read_to_string(config_path)
        .map_err(|e| invalid(format!("cannot read spec {}: {e}", config_path.display())))?;
    let mut spec: DatasetSpec = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("spec {}: {e}", config_path.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let dataset = generate_synthetic(&spec).map_err(invalid)?;
    write_jsonl(out, &dataset).map_err(runtime)?;
    for (language, count) in language_counts(&dataset) {
        println!("{language}: {count} examples");
    }
    println!("wrote {} examples to {}", dataset.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_partition(
    data: &Path,
    clients: usize,
    mode: ModeArg,
    alpha: f64,
    seed: u64,
    vocab_size: usize,
    num_classes: usize,
    out: &Path,
) -> CliResult {
    let dataset = ingest_jsonl(data, vocab_size, num_classes).map_err(invalid)?;
    let mode = match mode {
        ModeArg::Iid => PartitionMode::Iid,
        ModeArg::Noniid => PartitionMode::NonIid,
    };
    let split = partition(&dataset, clients, mode, alpha, seed).map_err(invalid)?;

    fs::create_dir_all(out).map_err(runtime)?;
    let mut summary = fs::File::create(out.join("partition-summary.csv")).map_err(runtime)?;
    writeln!(summary, "client,language,count").map_err(runtime)?;
    for shard in &split.shards {
        let path = out.join(format!("client_{:02}.jsonl", shard.client_id));
        write_jsonl(&path, &shard.examples).map_err(runtime)?;
        for (language, count) in language_counts(&shard.examples) {
            writeln!(summary, "{},{language},{count}", shard.client_id).map_err(runtime)?;
        }
        println!("client {:02}: {} examples", shard.client_id, shard.size());
    }
    Ok(())
}
