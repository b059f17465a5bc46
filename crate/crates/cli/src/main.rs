use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kfed_cli::commands::{self, EvalArgs, JoinArgs, Overrides, ProfileArgs};
use kfed_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "kfed", version, about = "One-shot federated k-means experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write data, labels, partition and spec files for one seed.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured experiment over its seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write every device upload as JSON lines.
        #[arg(long)]
        record: bool,
    },
    /// Separation quantities and lemma audit for a labelled instance.
    Profile {
        /// Directory with data.csv, labels.csv, partition.json, spec.json.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = kfed::separation::DEFAULT_C)]
        c: f64,
        #[arg(long)]
        m0: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Label a new device against a saved run state.
    Join {
        #[arg(long)]
        state: PathBuf,
        /// The new device's data CSV.
        #[arg(long)]
        data: PathBuf,
        /// Number of local clusters on the new device.
        #[arg(long)]
        k_z: usize,
        #[arg(long)]
        device_id: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score predicted labels against true labels.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Half-open seed range `N..M`.
    #[arg(long, value_parser = parse_range)]
    seeds: Option<SeedRange>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated device ids that drop out before uploading.
    #[arg(long, value_delimiter = ',')]
    exclude_devices: Option<Vec<usize>>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    m0: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_range(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s.split_once("..").ok_or("expected N..M")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if b <= a {
        return Err(format!("empty range {s}"));
    }
    Ok(SeedRange((a..b).collect()))
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let cfg = RunConfig::load(&self.config)?;
        let ov = Overrides {
            seeds: self.seeds.clone().map(|r| r.0).or(self.seed.map(|s| vec![s])),
            c: self.c,
            m0: self.m0,
            tol: self.tol,
            exclude_devices: self.exclude_devices.clone(),
            out: self.out.clone(),
        };
        Ok(ov.apply(cfg))
    }
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("KFED_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("KFED_THREADS={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Generate { common } => {
            let cfg = common.load()?;
            let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let spec = commands::cmd_generate(&cfg, common.seed, &out)?;
            println!("wrote instance for seed {} to {}", spec.seed, out.display());
        }
        Command::Run { common, record } => {
            let cfg = common.load()?;
            let report = commands::cmd_run(&cfg, record)?;
            for s in &report.summaries {
                println!("c={}: {}", s.c, s.summary.formatted);
            }
            if let Some(n) = report.ratio_below_one {
                println!("cost ratio < 1 in {n} of {} seeds", report.cost_ratio.len());
            }
            report.status()?;
        }
        Command::Profile { instance, data, labels, partition, k, c, m0, out } => {
            let p = commands::cmd_profile(&ProfileArgs { instance, data, labels, partition, k, c, m0, out })?;
            println!(
                "{} of {} pairs above c, {} audit violations",
                p.separation.pairs.iter().filter(|q| q.ratio >= c).count(),
                p.separation.pairs.len(),
                p.audit.violations.len()
            );
        }
        Command::Join { state, data, k_z, device_id, out } => {
            let j = commands::cmd_join(&JoinArgs { state, data, k_z, device_id, out })?;
            println!("device {}: {} rows labelled, {} distance computations", j.device_id, j.labels.len(), j.distance_count);
        }
        Command::Eval { data, pred, truth, out } => {
            let r = commands::cmd_eval(&EvalArgs { data, pred, truth, out })?;
            println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
