use std::path::PathBuf;
use std::process::ExitCode;

use arob_cli::config::ExperimentConfig;
use arob_cli::pipeline;
use arob_cli::{CliError, CliResult};
use arob_core::attribution::{Group, Method};
use clap::{Parser, Subcommand, ValueEnum};

const AFTER_HELP: &str = "\
Outputs (under output_dir):
  data/                 volumes/<subject>_t<tp>.arob, atlas.arob, regions.csv, cohort.json, split.json
  runs/run_NN/          model.ckpt, run.json, metrics.csv, predictions.csv
  runs/metrics.csv      run,seed,best_epoch,epochs,balanced_accuracy,status
  heatmaps/run_NN/<method>/<group>/<subject>_t<tp>.arob
  eval/tables/*.csv     region_id,region_name,voxels,sum,density,gain,gain_defined
  eval/matrices/*.csv   run x run matrices of L2 distances and top-k intersections (%)
  report/report.csv     method,l2_tp,l2_tn,coherence_sum_pct,coherence_density_pct,coherence_gain_pct

Exit codes: 0 success, 1 usage or configuration error, 2 data or format error, 3 run failure.
Set AROB_THREADS to bound the worker pool and RUST_LOG for progress messages.";

#[derive(Parser, Debug)]
#[command(name = "arob", version, about = "Attribution robustness benchmark for volumetric CNN classifiers", after_help = AFTER_HELP)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gxi,
    Gbp,
    Lrp,
    Occ,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Gxi => vec![Method::GradientInput],
            MethodArg::Gbp => vec![Method::GuidedBackprop],
            MethodArg::Lrp => vec![Method::Lrp],
            MethodArg::Occ => vec![Method::Occlusion],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupArg {
    Tp,
    Tn,
    Both,
}

impl GroupArg {
    fn groups(self) -> Vec<Group> {
        match self {
            GroupArg::Tp => vec![Group::Tp],
            GroupArg::Tn => vec![Group::Tn],
            GroupArg::Both => Group::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom cohort, atlas and subject-wise split.
    GenData,
    /// Train the repeated runs.
    Train {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Compute heatmaps for correctly classified test samples.
    Attribute {
        /// Only use runs with index below this value.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "both")]
        group: GroupArg,
    },
    /// Average heatmaps and compute region tables and pairwise matrices.
    Evaluate {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write the per-method robustness table.
    Report {
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run every stage in order.
    RunAll {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write mid-plane PGM slices of a volume or heatmap.
    Slice {
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Force diverging shading around zero.
        #[arg(long, conflicts_with = "intensity")]
        signed: bool,
        /// Force plain min-max intensity shading.
        #[arg(long)]
        intensity: bool,
    },
    /// Convert between the native container and NIfTI-1 (`.nii`).
    Convert { input: PathBuf, output: PathBuf },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn top_k(cfg: &ExperimentConfig, arg: Option<usize>) -> CliResult<usize> {
    match arg.unwrap_or(cfg.evaluation.top_k) {
        0 => Err(CliError::Usage("--top-k must be at least 1".into())),
        k => Ok(k),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Slice {
            input,
            out_dir,
            signed,
            intensity,
        } => {
            let mode = match (signed, intensity) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            for path in pipeline::slice(input, out_dir.as_deref(), mode)? {
                println!("{}", path.display());
            }
            return Ok(());
        }
        Command::Convert { input, output } => return pipeline::convert(input, output),
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            return Ok(());
        }
        _ => {}
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => {
            let s = pipeline::gen_data(&cfg)?;
            println!(
                "subjects={} samples={} train={} validation={} test={}",
                s.subjects, s.samples, s.train_samples, s.validation_samples, s.test_samples
            );
        }
        Command::Train { runs } => {
            let s = pipeline::train(&cfg, runs)?;
            if let Some(acc) = &s.accuracy {
                println!(
                    "balanced_accuracy mean={:.4} min={:.4} max={:.4}",
                    acc.mean, acc.min, acc.max
                );
            }
            if !s.failed.is_empty() {
                return Err(CliError::RunFailure(format!("runs {:?} failed", s.failed)));
            }
        }
        Command::Attribute {
            runs,
            method,
            group,
        } => {
            let s = pipeline::attribute(&cfg, runs, &method.methods(), &group.groups())?;
            println!("heatmaps={}", s.files);
        }
        Command::Evaluate {
            runs,
            method,
            top_k: k,
        } => {
            let k = top_k(&cfg, k)?;
            let r = pipeline::evaluate(&cfg, runs, &method.methods(), k)?;
            print!("{}", r.to_csv());
        }
        Command::Report { method, top_k: k } => {
            let k = top_k(&cfg, k)?;
            let r = pipeline::report(&cfg, &method.methods(), k)?;
            print!("{}", r.to_csv());
        }
        Command::RunAll { runs } => {
            let r = pipeline::run_all(&cfg, runs)?;
            print!("{}", r.to_csv());
        }
        Command::Slice { .. } | Command::Convert { .. } | Command::DefaultConfig => unreachable!(),
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("AROB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "AROB_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).diagnostic());
            return ExitCode::from(1);
        }
    };
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
