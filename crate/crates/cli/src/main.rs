//! `dipce`: simulate conjoint data, estimate effects, score them and run
//! the full sparsity grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use dipce_core::effects::{attach_truth, read_estimates_csv, write_estimates_csv};
use dipce_core::harness::{emit_figures, run_grid, run_methods, write_dataset, ExperimentConfig, Method, RunRecord};
use dipce_core::metrics::score_classifications;
use dipce_core::sim::{generate_dataset, read_tasks_csv, CoefficientSet, DesignSpec};
use dipce_core::Error;

#[derive(Parser)]
#[command(name = "dipce", version, about = "Conjoint simulation and effect-recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, env = "DIPCE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset (tasks.csv, truth.json, design.json).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Main-effect sparsity; defaults to the first grid value.
        #[arg(long)]
        sp_j: Option<f64>,
        /// Interaction sparsity; defaults to the first grid value.
        #[arg(long)]
        sp_z: Option<f64>,
    },
    /// Run estimators on a simulated dataset directory.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Directory holding tasks.csv and design.json.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated subset of methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Score every estimates_*.csv in a directory against its truth.json.
    Score {
        /// Directory holding truth.json and estimates_<method>.csv files.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full configuration x replication grid.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip cells already completed under the same configuration.
        #[arg(long)]
        resume: bool,
    },
    /// Write figure data from a finished grid run.
    Figures {
        /// Grid output directory.
        #[arg(long, env = "DIPCE_OUT")]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::InvalidConfig(_) | Error::InvalidSpec(_))
            )
        });
        if config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if cfg.output_dir.as_os_str().is_empty() {
        return Err(Failure::Config(anyhow::anyhow!(
            "no output directory: pass --out, set DIPCE_OUT or output_dir"
        )));
    }
    Ok(cfg)
}

fn with_methods(mut cfg: ExperimentConfig, methods: Option<Vec<Method>>) -> Result<ExperimentConfig, Failure> {
    if let Some(m) = methods {
        cfg.methods = m;
    }
    cfg.validate().context("invalid method selection")?;
    Ok(cfg)
}

fn simulate(common: &Common, sp_j: Option<f64>, sp_z: Option<f64>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let (gj, gz) = cfg.grid()[0];
    let spec = cfg.design.with_cell(sp_j.unwrap_or(gj), sp_z.unwrap_or(gz), cfg.seed);
    spec.validate().context("invalid design")?;
    let data = generate_dataset(&spec).context("simulating")?;
    write_dataset(&cfg.output_dir, &spec, &data).context("writing dataset")?;
    println!(
        "wrote {} tasks to {}",
        data.tasks.len(),
        cfg.output_dir.join("tasks.csv").display()
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn estimate(common: &Common, input: &Path, methods: Option<Vec<Method>>) -> Result<(), Failure> {
    // Without --out, results land next to the input.
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.output_dir = common.out.clone().unwrap_or_else(|| input.to_path_buf());
    let cfg = with_methods(cfg, methods)?;
    let spec: DesignSpec = read_json(&input.join("design.json"))?;
    let tasks_path = input.join("tasks.csv");
    let tasks = read_tasks_csv(fs::File::open(&tasks_path).with_context(|| format!("opening {}", tasks_path.display()))?)
        .context("reading tasks")?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let truth: Option<CoefficientSet> = read_json(&input.join("truth.json")).ok();
    let results = run_methods(&cfg, &spec, &tasks, cfg.seed, Some(out)).context("estimating")?;
    for mut r in results {
        if let Some(t) = &truth {
            attach_truth(&mut r.estimates, t);
        }
        let path = out.join(format!("estimates_{}.csv", r.method));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_estimates_csv(&r.estimates, file).context("writing estimates")?;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!(
            "{:<28} effects {:>4}  train acc {}  test acc {}",
            r.method.name(),
            r.estimates.len(),
            fmt(r.train_accuracy),
            fmt(r.test_accuracy)
        );
    }
    Ok(())
}

fn score(input: &Path) -> Result<(), Failure> {
    let truth: CoefficientSet = read_json(&input.join("truth.json"))?;
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("estimates_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!("no estimates_*.csv in {}", input.display())));
    }
    let mut report = serde_json::Map::new();
    println!("{:<28} {:<12} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7}", "method", "kind", "tp", "fp", "fn", "tn", "fpr", "fnr");
    for path in files {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let method = name.trim_start_matches("estimates_").to_string();
        let est = read_estimates_csv(fs::File::open(&path).context("opening estimates")?).context("reading estimates")?;
        let summaries = score_classifications(&est, &truth).with_context(|| format!("scoring {method}"))?;
        for s in &summaries {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.3}"));
            println!(
                "{:<28} {:<12} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7}",
                method,
                s.effect_kind.name(),
                s.tp,
                s.fp,
                s.fn_,
                s.tn,
                fmt(s.fpr),
                fmt(s.fnr)
            );
        }
        report.insert(method, serde_json::to_value(&summaries).context("serialising scores")?);
    }
    let path = input.join("scores.json");
    fs::write(&path, serde_json::to_string_pretty(&report).context("serialising scores")?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn grid(common: &Common, methods: Option<Vec<Method>>, jobs: Option<usize>, resume: bool) -> Result<ExitCode, Failure> {
    let mut cfg = with_methods(load_config(common)?, methods)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    let record = run_grid(&cfg, resume).context("running grid")?;
    let failed = record.failed_cells();
    println!(
        "{} cells ({} failed), {} profile observations per cell, {} total; metrics in {}",
        record.cells.len(),
        failed,
        record.profile_observations_per_cell,
        record.profile_observations_total,
        record.metrics_path.display()
    );
    for c in record.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell {} failed: {}", c.id, c.error.as_deref().unwrap_or_default());
    }
    Ok(if failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn figures(out: &Path) -> Result<(), Failure> {
    let record = RunRecord::load(out).context("loading run record")?;
    for p in emit_figures(&record).context("writing figures")? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Simulate { common, sp_j, sp_z } => simulate(&common, sp_j, sp_z)?,
        Command::Estimate { common, input, methods } => estimate(&common, &input, methods)?,
        Command::Score { input } => score(&input)?,
        Command::Grid {
            common,
            methods,
            jobs,
            resume,
        } => return grid(&common, methods, jobs, resume),
        Command::Figures { out } => figures(&out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
