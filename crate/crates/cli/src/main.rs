use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gai_forge::experiment::{self, ExperimentConfig, Sweep};
use gai_forge::trainkit::Method;

/// Few-shot forgery detection experiments on synthetic benchmarks.
#[derive(Parser, Debug)]
#[command(name = "gai-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; defaults apply to anything it leaves out.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set gai.reject_threshold=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render every forgery family and the real images to the data directory.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-family coverage matrix and taxonomy.
    Coverage {
        #[command(flatten)]
        common: Common,
    },
    /// Assemble the benchmark and check the minority against the coverage matrix.
    Assemble {
        #[command(flatten)]
        common: Common,
    },
    /// Train (or load cached) base models for every seed.
    TrainBase {
        #[command(flatten)]
        common: Common,
    },
    /// Finetune and evaluate one method over all seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// unseen|ib|cb|mixup|no_teacher|gai_minus|gai (overrides `method`).
        #[arg(short, long)]
        method: Option<String>,
    },
    /// Sweep one hyper-parameter and write a table of reports.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// tau|lambda|alpha0|shots
        sweep: String,
    },
    /// Dump generator inputs and outputs for inspection.
    ExportSamples {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'n', long, default_value_t = 16)]
        count: usize,
    },
}

fn load(common: &Common, extra: &[String]) -> gai_forge::Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GAI_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GAI_FORGE_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn execute(cmd: Command) -> gai_forge::Result<()> {
    match cmd {
        Command::GenData { common } => {
            let cfg = load(&common, &[])?;
            let m = experiment::cmd_gen_data(&cfg)?;
            for e in &m.entries {
                println!("{:<12} train {:>6} test {:>6}", e.name, e.train, e.test);
            }
            println!("wrote {}", cfg.data.dir.join("manifest.json").display());
        }
        Command::Coverage { common } => {
            let cfg = load(&common, &[])?;
            let (m, t) = experiment::cmd_coverage(&cfg)?;
            print!("{}", m.to_csv());
            print!("{}", t.components_csv());
        }
        Command::Assemble { common } => {
            let cfg = load(&common, &[])?;
            let s = experiment::cmd_assemble(&cfg)?;
            println!("train per class {:?}", s.train_counts);
            println!("test per class  {:?}", s.test_counts);
        }
        Command::TrainBase { common } => {
            let cfg = load(&common, &[])?;
            for p in experiment::cmd_train_base(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Run { common, method } => {
            let extra: Vec<String> = method
                .map(|m| m.parse::<Method>().map(|m| format!("method=\"{m}\"")))
                .transpose()?
                .into_iter()
                .collect();
            let cfg = load(&common, &extra)?;
            let r = experiment::cmd_run(&cfg)?;
            println!("method,{}", gai_forge::benchkit::CSV_HEADER);
            println!("{},{}", cfg.method, r.csv_row());
        }
        Command::Ablate { common, sweep } => {
            let sweep: Sweep = sweep.parse()?;
            let cfg = load(&common, &[])?;
            let rows = experiment::cmd_ablate(&cfg, sweep)?;
            println!("{sweep},{}", gai_forge::benchkit::CSV_HEADER);
            for r in rows {
                println!("{},{}", r.value, r.report.csv_row());
            }
        }
        Command::ExportSamples { common, count } => {
            let cfg = load(&common, &[])?;
            println!("{}", experiment::cmd_export_samples(&cfg, count)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
