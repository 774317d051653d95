use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use olive::env::{make_env, Screen};
use olive::features::threshold_logits;
use olive::harness::{eval_checkpoint, report_from_dir, run_experiment, summarize, write_outputs, ExperimentConfig, ALPHA};
use olive::planner::PlannerConfig;
use olive::rng::SeedStream;
use olive::vae::Vae;
use olive::Error;

#[derive(Parser)]
#[command(name = "olive", version, about = "Online width-based planning with learned binary features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (mode, env, seed) of an experiment config and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seeds` from the config.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = "olive-out")]
        out: PathBuf,
    },
    /// Evaluate a saved VAE checkpoint with fresh planning episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "themed_rooms:G=8,N=4")]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Planner settings are taken from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes the first screen and its reconstruction as PGM files here.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Rebuild the summary and win/loss tables from a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 3,
        Error::Usage(_) | Error::Numeric(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seeds, out } => cmd_run(&config, seeds, &out),
        Command::Eval { checkpoint, env, episodes, seed, config, pgm } => {
            cmd_eval(&checkpoint, &env, episodes, seed, config.as_deref(), pgm.as_deref())
        }
        Command::Report { input } => report_from_dir(&input, ALPHA).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("olive: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_run(config: &Path, seeds: Option<usize>, out: &Path) -> olive::Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let result = run_experiment(&cfg)?;
    fs::create_dir_all(out)?;
    write_outputs(out, &cfg, &result)?;
    print!("{}", fs::read_to_string(out.join("report.txt"))?);
    eprintln!("wrote {} runs to {}", result.outcomes.len(), out.display());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    env: &str,
    episodes: usize,
    seed: u64,
    config: Option<&Path>,
    pgm: Option<&Path>,
) -> olive::Result<()> {
    let planner = match config {
        Some(p) => ExperimentConfig::load(p)?.planner,
        None => PlannerConfig::default(),
    };
    if episodes == 0 {
        return Err(Error::Config("--episodes must be positive".to_string()));
    }
    make_env(env).map_err(|e| Error::Config(e.to_string()))?;
    let vae: Vae<f32> = Vae::read_checkpoint(&mut BufReader::new(fs::File::open(checkpoint)?))?;
    if let Some(dir) = pgm {
        write_reconstruction(&vae, env, dir)?;
    }
    let mut rng = SeedStream::new(seed).child(env).rng("eval");
    let logs = eval_checkpoint(vae, env, &planner, episodes, &mut rng)?;
    for (i, log) in logs.iter().enumerate() {
        println!("episode {i}: score {} after {} actions, {} simulator calls", log.score, log.decisions.len(), log.sim_calls);
    }
    let scores: Vec<f64> = logs.iter().map(|l| l.score).collect();
    if let Some(s) = summarize(&scores) {
        println!("mean {:.3} ± {:.3}, max {}", s.mean, s.stderr, s.max);
    }
    Ok(())
}

fn write_reconstruction(vae: &Vae<f32>, env: &str, dir: &Path) -> olive::Result<()> {
    let mut e = make_env(env)?;
    let screen = e.reset().screen;
    let code = threshold_logits(&vae.encode_logits(&screen)?)?;
    let z: Vec<f32> = (0..code.len()).map(|i| if code.get(i) { 1.0 } else { 0.0 }).collect();
    let pixels: Vec<u8> = vae
        .decode_logits(&z)?
        .iter()
        .map(|l| (255.0 / (1.0 + (-l).exp())).round() as u8)
        .collect();
    let recon = Screen::new(screen.width(), screen.height(), pixels)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("screen.pgm"), screen.to_pgm())?;
    fs::write(dir.join("reconstruction.pgm"), recon.to_pgm())?;
    Ok(())
}
