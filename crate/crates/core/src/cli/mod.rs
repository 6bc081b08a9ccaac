//! Command-line front end: `train`, `eval`, `inspect`, `compare`, `augment-preview`.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

pub use config::{apply_override, load_config, model_mismatch, DataConfig, ExperimentConfig};

use crate::augmentation::{augment_image, fit_pca_basis, SampleKey};
use crate::data_io::{load_checkpoint, read_ppm, save_checkpoint, write_ppm, Checkpoint, Split};
use crate::evaluation::{evaluate_detailed, EvalOutput};
use crate::model::{block_topology, count_parameters};
use crate::training::{RunOptions, TrainSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    /// Sequential kernels.
    Ref,
    /// Kernels spread over the worker pool. Results are identical to `ref`.
    Fast,
}

#[derive(Debug, Parser)]
#[command(
    name = "branchnet",
    version,
    about = "Branched residual networks: train, evaluate, inspect"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.total_epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for augmentation and kernels.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "ref", global = true)]
    precision: Precision,
    /// Output directory (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config; writes checkpoint, history and report to a new run directory.
    Train {
        /// Continue from a checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write per-sample probabilities to probs.csv.
        #[arg(long)]
        dump_probs: bool,
    },
    /// Print block topology and parameter accounting.
    Inspect {
        #[arg(long)]
        json: bool,
    },
    /// Parameter accounting over a sweep of branch points, as CSV.
    Compare {
        /// Comma-separated branch points; default every point from 0 to the block count.
        #[arg(long, value_delimiter = ',')]
        branch_points: Vec<usize>,
    },
    /// Write augmented variants of a PPM image.
    AugmentPreview {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => bail!("{e}"),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be ≥ 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let config_path = || cli.config.as_deref().context("--config is required for this command");
    let config = || load_config(config_path()?, &cli.set);
    let opts = RunOptions {
        parallel_kernels: cli.precision == Precision::Fast,
    };
    match &cli.command {
        Command::Train { resume } => cmd_train(&config()?, resume.as_deref(), cli.out.as_deref(), opts),
        Command::Eval { checkpoint, dump_probs } => {
            cmd_eval(&config()?, checkpoint, cli.out.as_deref(), *dump_probs, opts)
        }
        Command::Inspect { json } => cmd_inspect(&config()?, *json),
        Command::Compare { branch_points } => cmd_compare(&config()?, branch_points, cli.out.as_deref()),
        Command::AugmentPreview { input, count, epoch } => {
            let out = cli.out.as_deref().unwrap_or(Path::new("preview"));
            cmd_augment_preview(&config()?, input, *count, *epoch, out)
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `<root>/<config digest>-<unix seconds>`, with a numeric suffix if taken.
fn create_run_dir(root: &Path, config: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let digest = Sha256::digest(serde_json::to_vec(config)?);
    let hash: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    for n in 0.. {
        let name = if n == 0 {
            format!("{hash}-{secs}")
        } else {
            format!("{hash}-{secs}-{n}")
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn write_report(dir: &Path, prefix: &str, out: &EvalOutput, dump_probs: bool) -> anyhow::Result<()> {
    write(&dir.join(format!("{prefix}.txt")), out.report.to_table())?;
    write(&dir.join(format!("{prefix}.csv")), out.report.to_csv())?;
    if dump_probs {
        write(&dir.join("probs.csv"), out.probs_csv())?;
    }
    Ok(())
}

fn cmd_train(
    config: &ExperimentConfig,
    resume: Option<&Path>,
    out: Option<&Path>,
    opts: RunOptions,
) -> anyhow::Result<()> {
    let data = config.data()?;
    let train_set = data.load(Split::Train).context("loading training data")?;
    let test_set = data.load(Split::Test).context("loading test data")?;
    let mut session = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if let Some(field) = model_mismatch(&ckpt.meta.model, &config.model) {
                bail!("architecture mismatch: {field}");
            }
            let mut s = ckpt.to_session()?;
            s.config.total_epochs = config.train.total_epochs;
            s
        }
        None => TrainSession::new(&config.model, config.train.clone(), config.augment.clone(), &train_set)?,
    };

    let dir = create_run_dir(out.unwrap_or(&config.output), config)?;
    write(&dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    println!("run directory: {}", dir.display());

    let total = session.config.total_epochs;
    let mut history = session.run(&train_set, opts, |r| {
        let losses: Vec<String> = r.branch_losses.iter().map(|l| format!("{l:.4}")).collect();
        println!(
            "epoch {}/{total}  lr {}  loss {}  ({:.1}s)",
            r.epoch + 1,
            r.lr,
            losses.join(" "),
            r.wall_seconds
        );
    })?;
    save_checkpoint(dir.join("checkpoint.bin"), &Checkpoint::from_session(&session))?;

    let eval = evaluate_detailed(
        &session.net,
        &test_set,
        &session.augment,
        session.config.batch_size,
        opts.parallel_kernels,
    )?;
    history.evaluations.push((session.epochs_done, eval.report.clone()));
    write(&dir.join("history.csv"), history.to_csv())?;
    write(&dir.join("timing.csv"), history.timing_csv())?;
    write_report(&dir, "report", &eval, false)?;
    print!("{}", eval.report.to_table());
    Ok(())
}

fn cmd_eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out: Option<&Path>,
    dump_probs: bool,
    opts: RunOptions,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    if let Some(field) = model_mismatch(&ckpt.meta.model, &config.model) {
        bail!("architecture mismatch: {field}");
    }
    let test_set = config.data()?.load(Split::Test).context("loading test data")?;
    let net = ckpt.network()?;
    let eval = evaluate_detailed(
        &net,
        &test_set,
        &ckpt.meta.augment,
        ckpt.meta.train.batch_size,
        opts.parallel_kernels,
    )?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_report(&dir, "eval_report", &eval, dump_probs)?;
    print!("{}", eval.report.to_table());
    Ok(())
}

fn cmd_inspect(config: &ExperimentConfig, json: bool) -> anyhow::Result<()> {
    let topo = block_topology(&config.model)?;
    let params = count_parameters(&config.model)?;
    if json {
        let v = serde_json::json!({ "topology": topo, "parameters": params });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    let mut s = String::new();
    let mut row = |k: &str, v: String| {
        let _ = writeln!(s, "{k:<34}{v:>14}");
    };
    row("shared blocks", topo.shared_blocks.to_string());
    row("blocks per branch", topo.per_branch_blocks.to_string());
    row(
        "materialized residual blocks",
        topo.total_blocks_materialized.to_string(),
    );
    row("conv layers", topo.conv_layers.to_string());
    row("weighted layers", topo.weighted_layers.to_string());
    row("stem params", params.stem_params.to_string());
    row("shared params", params.shared_params.to_string());
    for (i, (b, h)) in params.per_branch_params.iter().zip(&params.head_params).enumerate() {
        row(&format!("branch {} params (head)", i + 1), format!("{b} ({h})"));
    }
    row("total params", params.total_params.to_string());
    row(
        "independent ensemble params",
        params.equivalent_independent_ensemble_params.to_string(),
    );
    row("sharing ratio", format!("{:.6}", params.sharing_ratio));
    print!("{s}");
    Ok(())
}

fn cmd_compare(config: &ExperimentConfig, points: &[usize], out: Option<&Path>) -> anyhow::Result<()> {
    let total = config.model.total_blocks();
    let points: Vec<usize> = if points.is_empty() {
        (0..=total).collect()
    } else {
        points.to_vec()
    };
    let mut csv = String::from("branch_after_block,total_params,sharing_ratio,materialized_blocks\n");
    for &b in &points {
        let mut m = config.model.clone();
        m.branch_after_block = b;
        let p = count_parameters(&m)?;
        let t = block_topology(&m)?;
        let _ = writeln!(
            csv,
            "{b},{},{},{}",
            p.total_params, p.sharing_ratio, t.total_blocks_materialized
        );
    }
    print!("{csv}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("compare.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_augment_preview(
    config: &ExperimentConfig,
    input: &Path,
    count: usize,
    epoch: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let image = read_ppm(input)?;
    let aug = &config.augment;
    aug.validate_for_source(image.height(), image.width())?;
    if count == 0 {
        return Ok(());
    }
    let pca = if aug.enable_pca {
        Some(fit_pca_basis(std::slice::from_ref(&image))?)
    } else {
        None
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..count {
        let key = SampleKey::new(config.train.seed, epoch, i as u64);
        let img = augment_image(&image, aug, pca.as_ref(), key)?;
        write_ppm(out.join(format!("preview_{i:04}.ppm")), &img)?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}
