mod manifest;
mod plots;

use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use facenas_core::arch::ArchEncoding;
use facenas_core::data::{synth_identity_raw, write_shard, SplitDataset};
use facenas_core::engine::{
    metrics_csv, model_size_csv, model_sizes, parse_metrics_csv, parse_traces_jsonl, retrain_fixed, search_with,
    traces_jsonl, Checkpoint, RunConfig, SearchState, SharedWeightAccuracy,
};
use facenas_core::gradsuite::run_gradient_suite;
use facenas_core::{Error, Result};

use manifest::{write_atomic, DataSummary, Manifest, RetrainRecord, RunFiles};

/// Environment variable naming the directory every command writes under.
pub const OUTPUT_ENV: &str = "FACENAS_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "runs";

#[derive(Parser)]
#[command(name = "facenas", version, about = "Latency-aware architecture search for face recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for architectures and rank them.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key.path=value`, applied in order after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory name under the output root.
        #[arg(long)]
        name: Option<String>,
        /// Continue from the run's checkpoint if one exists.
        #[arg(long)]
        resume: bool,
    },
    /// Retrain a ranked architecture from scratch.
    Retrain {
        #[arg(long)]
        manifest: PathBuf,
        /// 1-based rank.
        #[arg(long, default_value_t = 1)]
        rank: usize,
    },
    /// Write plot-ready CSVs for a run.
    ExportPlots {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Write a synthetic identity dataset shard.
    SynthData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search {
            config,
            seed,
            overrides,
            name,
            resume,
        } => cmd_search(&config, seed, &overrides, name, resume),
        Command::Retrain { manifest, rank } => cmd_retrain(&manifest, rank),
        Command::ExportPlots { manifest } => cmd_export_plots(&manifest),
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
        Command::SynthData {
            classes,
            per_class,
            size,
            seed,
            name,
        } => cmd_synth_data(classes, per_class, size, seed, name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Checkpoint(_) => 3,
        _ => 4,
    }
}

fn output_root() -> Result<PathBuf> {
    let root = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUTPUT.into());
    std::fs::create_dir_all(&root)?;
    Ok(root.canonicalize()?)
}

/// A run or dataset name must be one plain path component.
fn checked_name(name: &str, flag: &str) -> Result<()> {
    let mut parts = Path::new(name).components();
    match (parts.next(), parts.next()) {
        (Some(Component::Normal(_)), None) => Ok(()),
        _ => Err(Error::config(flag, format!("`{name}` must be a single directory name"))),
    }
}

/// Resolves `--manifest` (a file or its run directory) and checks it lies
/// under the output root.
fn locate_manifest(arg: &Path) -> Result<(PathBuf, PathBuf)> {
    let root = output_root()?;
    let arg = if arg.is_dir() { arg.join(manifest::FILE_NAME) } else { arg.to_path_buf() };
    let path = arg
        .canonicalize()
        .map_err(|e| Error::Data(format!("manifest {}: {e}", arg.display())))?;
    if !path.starts_with(&root) {
        return Err(Error::config(
            "--manifest",
            format!("{} is outside the output root {}", path.display(), root.display()),
        ));
    }
    let dir = path.parent().expect("file has a parent").to_path_buf();
    Ok((path, dir))
}

fn run_file(dir: &Path, name: &str) -> Result<PathBuf> {
    checked_name(name, "manifest.files")
        .map_err(|_| Error::Data(format!("manifest file entry `{name}` is not a plain file name")))?;
    Ok(dir.join(name))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    RunConfig::from_toml(&text, &all)
}

fn load_data(cfg: &RunConfig) -> Result<SplitDataset> {
    SplitDataset::load(&cfg.data.source, cfg.data.ratios, cfg.seed)
}

fn cmd_search(
    config: &Path,
    seed: Option<u64>,
    overrides: &[String],
    name: Option<String>,
    resume: bool,
) -> Result<()> {
    let cfg = load_config(config, seed, overrides)?;
    let name = name.unwrap_or_else(|| format!("search-seed{}", cfg.seed));
    checked_name(&name, "--name")?;
    let root = output_root()?;
    let data = load_data(&cfg)?;
    let dir = root.join(&name);
    std::fs::create_dir_all(&dir)?;
    let files = RunFiles::default();
    let config_text = cfg.to_toml();
    let ckpt_path = dir.join(&files.checkpoint);

    let state = if resume && ckpt_path.exists() {
        let saved = read_text(&dir.join(&files.config))?;
        if saved != config_text {
            return Err(Error::config("--resume", "config differs from the one the checkpoint was written with"));
        }
        let state = SearchState::from_checkpoint(&Checkpoint::load(&ckpt_path)?, &cfg, &data)?;
        eprintln!("resuming {} at epoch {}", dir.display(), state.epoch);
        state
    } else {
        write_atomic(&dir.join(&files.config), config_text.as_bytes())?;
        SearchState::new(&cfg, &data)?
    };

    let persist = |s: &SearchState| -> Result<()> {
        let mut bytes = Vec::new();
        s.to_checkpoint().write_to(&mut bytes)?;
        write_atomic(&ckpt_path, &bytes)?;
        write_atomic(&dir.join(&files.metrics), metrics_csv(&s.rows).as_bytes())?;
        write_atomic(&dir.join(&files.traces), traces_jsonl(&s.history).as_bytes())
    };
    let mut after_epoch = |s: &SearchState| -> Result<()> {
        persist(s)?;
        if let Some(r) = s.rows.last() {
            eprintln!(
                "epoch {:>3}/{}  reward {:.4}  val_acc {:.4}",
                s.epoch,
                cfg.search.epochs,
                r.reward.unwrap_or(f64::NAN),
                r.val_acc.unwrap_or(f64::NAN)
            );
        }
        Ok(())
    };
    let outcome = search_with(&cfg, &data, state, &mut SharedWeightAccuracy, &mut after_epoch)?;
    // Resuming a finished run never reaches the callback.
    persist(&outcome.state)?;

    let table = cfg.reward.latency_model()?.table;
    let sizes = model_sizes(&outcome.ranked, &outcome.state.store, &table)?;
    write_atomic(&dir.join(&files.model_sizes), model_size_csv(&sizes).as_bytes())?;

    let manifest = Manifest {
        format: manifest::FORMAT,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.clone(),
        data: DataSummary::of(&data),
        files,
        ranked: outcome.ranked.clone(),
        retrains: Vec::new(),
    };
    let manifest_path = dir.join(manifest::FILE_NAME);
    manifest.save(&manifest_path)?;

    println!("{:<5} {:<28} {:>8} {:>9} {:>8} {:>7}", "rank", "arch", "val_acc", "latency", "params", "samples");
    for r in outcome.top(cfg.search.top_k) {
        println!(
            "{:<5} {:<28} {:>8.4} {:>9.4} {:>8} {:>7}",
            r.rank,
            r.arch,
            r.val_accuracy,
            r.latency,
            r.param_count.unwrap_or(0),
            r.samples
        );
    }
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn cmd_retrain(manifest_arg: &Path, rank: usize) -> Result<()> {
    let (path, dir) = locate_manifest(manifest_arg)?;
    let mut m = Manifest::load(&path)?;
    let limit = m.config.search.top_k.min(m.ranked.len());
    if rank == 0 || rank > limit {
        return Err(Error::config("--rank", format!("must be between 1 and {limit}, got {rank}")));
    }
    let entry = &m.ranked[rank - 1];
    let arch = ArchEncoding::decode(&entry.arch)?;
    let data = load_data(&m.config)?;
    let result = retrain_fixed(&arch, &m.config, &data, rank as u64)?;

    let metrics = format!("retrain_rank{rank}.csv");
    write_atomic(&dir.join(&metrics), metrics_csv(&result.rows).as_bytes())?;
    println!("rank {rank}  arch {}", result.arch);
    println!("epoch,test_accuracy");
    for (e, a) in result.curve.iter().enumerate() {
        println!("{e},{a}");
    }
    println!(
        "final test accuracy {:.4}  params {}  latency {:.4}",
        result.test_accuracy, result.param_count, result.latency
    );
    m.record_retrain(RetrainRecord { rank, metrics, result });
    m.save(&path)
}

fn cmd_export_plots(manifest_arg: &Path) -> Result<()> {
    let (path, dir) = locate_manifest(manifest_arg)?;
    let m = Manifest::load(&path)?;
    let rows = parse_metrics_csv(&read_text(&run_file(&dir, &m.files.metrics)?)?)?;
    let traces = parse_traces_jsonl(&read_text(&run_file(&dir, &m.files.traces)?)?)?;
    let out = dir.join("plots");
    std::fs::create_dir_all(&out)?;
    for (name, body) in [
        ("lr_vs_epoch.csv", plots::lr_vs_epoch(&rows)),
        ("reward_vs_step.csv", plots::reward_vs_step(&traces)),
        ("accuracy_vs_epoch.csv", plots::accuracy_vs_epoch(&rows, &m.retrains)),
        ("latency_histogram.csv", plots::latency_histogram(&traces)),
    ] {
        write_atomic(&out.join(name), body.as_bytes())?;
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn cmd_gradcheck(seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::config("--seeds", "must be positive"));
    }
    let reports = run_gradient_suite(seeds)?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        failed += !r.passed() as usize;
        println!("{status:<4} {:<28} max_err {:.3e}  tol {:.0e}  seeds {}", r.name, r.max_error, r.tolerance, r.seeds);
    }
    println!("{} cases, {failed} failed", reports.len());
    if failed > 0 {
        return Err(Error::Evaluation(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn cmd_synth_data(classes: usize, per_class: usize, size: usize, seed: u64, name: Option<String>) -> Result<()> {
    let name = name.unwrap_or_else(|| format!("synth-seed{seed}"));
    checked_name(&name, "--name")?;
    if classes == 0 || per_class == 0 || size == 0 {
        return Err(Error::config("synth-data", "classes, per-class and size must be positive"));
    }
    let raw = synth_identity_raw(classes, per_class, size, seed)?;
    let dir = output_root()?.join(&name);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data.shard");
    write_shard(&path, &raw)?;
    println!("{} images of {classes} identities: {}", raw.len(), path.display());
    Ok(())
}
