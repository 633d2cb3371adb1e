use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use ris_sched::channel::{generate_channels, RisConfig};
use ris_sched::estimation::{high_dim_stats, write_stats};
use ris_sched::gnn::{GnnModel, Widths};
use ris_sched::math::{stream_rng, StreamDomain};
use ris_sched::pilots::{decorrelate_collect, make_pilots, uplink_receive_subframe};
use ris_sched::sim::{
    compute_metrics, read_trace, run_baseline_episode, run_three_stage_episode, write_cdf, write_summary, write_trace,
    BaselineScheduler, CsiMode, EpisodeOptions, EpisodeResult, GnnModels, Metrics, PilotMode,
};
use ris_sched::SystemConfig;

#[derive(Parser)]
#[command(
    name = "ris-sched",
    version,
    about = "RIS-assisted multiuser downlink scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write uplink pilot blocks, LMMSE statistics and initial model files.
    Gen(GenArgs),
    /// Simulate an episode and write trace.csv, summary.csv and cdf.csv.
    Run(RunArgs),
    /// Recompute summary.csv and cdf.csv from a trace.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file; defaults to the reference deployment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(SystemConfig, u64)> {
        let config = match &self.config {
            Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SystemConfig::default(),
        };
        config.validate()?;
        let seed = self.seed.unwrap_or(config.seed);
        Ok((config, seed))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
    /// Coherence periods whose `D_theta` pilot blocks are written under `pilots/`.
    #[arg(long, default_value_t = 0)]
    realizations: usize,
    /// Write randomly initialized `model_sched.bin` and `model_ris.bin`.
    #[arg(long)]
    init_models: bool,
    /// Fit the LMMSE statistics and write `stats.bin`.
    #[arg(long)]
    stats: bool,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    embed_hidden: usize,
    #[arg(long, default_value_t = 2)]
    rounds: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// gnn3stage, greedy_bcd, exhaustive, random or round_robin.
    #[arg(long)]
    scheduler: String,
    /// CSI for the model-based schedulers: perfect or estimated.
    #[arg(long, default_value = "perfect")]
    csi: String,
    /// Third-stage pilots for gnn3stage: extra_pilots or reuse_pilots.
    #[arg(long, default_value = "extra_pilots")]
    mode: String,
    #[arg(long)]
    model_sched: Option<PathBuf>,
    #[arg(long)]
    model_ris: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    periods: usize,
    /// LMMSE statistics cache, read when the key matches and written otherwise.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_metrics(out: &Path, metrics: &Metrics) -> Result<()> {
    write_summary(create(&out.join("summary.csv"))?, metrics)?;
    write_cdf(create(&out.join("cdf.csv"))?, metrics)?;
    Ok(())
}

fn generate(args: GenArgs) -> Result<()> {
    let (config, seed) = args.scenario.load()?;
    if args.realizations == 0 && !args.init_models && !args.stats {
        bail!("nothing to generate: pass --realizations, --init-models or --stats");
    }
    fs::create_dir_all(&args.out)?;
    if args.realizations > 0 {
        let dir = args.out.join("pilots");
        fs::create_dir_all(&dir)?;
        let x = make_pilots(config.users, config.uplink_power)?;
        let blocks = (0..args.realizations as u64)
            .into_par_iter()
            .map(|p| {
                let ch = generate_channels(&config, &mut stream_rng(seed, StreamDomain::Channels, p))?;
                let mut rng = stream_rng(seed, StreamDomain::Pilots, p);
                let raw = (0..config.d_theta)
                    .map(|_| {
                        let theta = RisConfig::random(config.elements, &mut rng);
                        uplink_receive_subframe(ch.links(), &theta, &x, config.noise_up, &mut rng)
                    })
                    .collect::<ris_sched::Result<Vec<_>>>()?;
                decorrelate_collect(&raw, &x, config.users)
            })
            .collect::<ris_sched::Result<Vec<_>>>()?;
        for (p, block) in blocks.iter().enumerate() {
            block.write_csv(create(&dir.join(format!("{p}.csv")))?)?;
            block.write_phases_csv(create(&dir.join(format!("{p}_phases.csv")))?)?;
        }
    }
    if args.stats {
        let (key, stats) = high_dim_stats(&config, seed, None)?;
        write_stats(create(&args.out.join("stats.bin"))?, &key, &stats)?;
    }
    if args.init_models {
        let widths = Widths {
            hidden: args.hidden,
            embed_hidden: args.embed_hidden,
        };
        let models = GnnModels::initialize(&config, widths, args.rounds, seed, 16)?;
        models.scheduling.save(args.out.join("model_sched.bin"))?;
        models.ris.save(args.out.join("model_ris.bin"))?;
    }
    Ok(())
}

fn load_model(path: &Option<PathBuf>, flag: &str) -> Result<GnnModel> {
    let path = path.as_ref().with_context(|| format!("gnn3stage needs {flag}"))?;
    GnnModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let (config, seed) = args.scenario.load()?;
    let opts = EpisodeOptions {
        periods: args.periods,
        seed,
        stats: None,
        stats_cache: args.stats.clone(),
    };
    let result: EpisodeResult = if args.scheduler == "gnn3stage" {
        let mode: PilotMode = args.mode.parse()?;
        let models = GnnModels {
            scheduling: load_model(&args.model_sched, "--model-sched")?,
            ris: load_model(&args.model_ris, "--model-ris")?,
        };
        run_three_stage_episode(&config, &models, mode, &opts)?
    } else {
        let scheduler: BaselineScheduler = args.scheduler.parse()?;
        let csi: CsiMode = args.csi.parse()?;
        run_baseline_episode(&config, scheduler, csi, &opts)?
    };
    fs::create_dir_all(&args.out)?;
    write_trace(create(&args.out.join("trace.csv"))?, &result.trace)?;
    write_metrics(&args.out, &result.metrics)
}

fn eval(args: EvalArgs) -> Result<()> {
    let file = File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = read_trace(file)?;
    let metrics = compute_metrics(&trace)?;
    fs::create_dir_all(&args.out)?;
    write_metrics(&args.out, &metrics)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
