use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use plate_lab::commands::{self, CliError, Context, Outcome};
use plate_lab::config::{load_preset, parse_config, parse_config_str, ConfigError, LoadedConfig};
use plate_lab::io::{OutputDir, RunManifest};

#[derive(Parser)]
#[command(name = "plate-lab", version, about = "Damped extensible plate simulator and attractor experiments")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: general, conservative, buckled, point-attractor, periodic, chaotic.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (default: runs/<subcommand>-<config hash prefix>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plots: bool,
    /// Reuse a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate one trajectory and write the energy ledger.
    Simulate,
    /// Dissipativity sweep over initial radii.
    Sweep,
    /// Barrier constants, sigma root, V* bound and decay audit.
    Barrier {
        /// Use the documented toy constants instead of fitting.
        #[arg(long)]
        toy: bool,
    },
    /// Quasi-stability fit on nearby trajectory pairs.
    Pairs,
    /// Correlation dimension of the trajectory tail.
    Dimension,
    /// Convergence to equilibria in the gradient case.
    Stationary,
    /// Analytic-oracle checks.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Barrier { .. } => "barrier",
            Command::Pairs => "pairs",
            Command::Dimension => "dimension",
            Command::Stationary => "stationary",
            Command::Selftest => "selftest",
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn load(cli: &Cli) -> Result<LoadedConfig, CliError> {
    let mut loaded = match (&cli.config, &cli.preset) {
        (Some(p), _) => parse_config(p)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) if matches!(cli.command, Command::Selftest) => {
            parse_config_str(plate_lab::config::preset_text("general").expect("built in"), "preset:general")?
        }
        (None, None) if matches!(cli.command, Command::Barrier { toy: true }) => {
            parse_config_str(plate_lab::config::preset_text("general").expect("built in"), "preset:general")?
        }
        (None, None) => {
            return Err(ConfigError::Parse("one of --config PATH or --preset NAME is required".into()).into())
        }
    };
    if let Some(seed) = cli.seed {
        loaded.config.plan.seed = seed;
    }
    Ok(loaded)
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let started = now_ms();
    let loaded = load(cli)?;
    let name = cli.command.name();
    let out_path = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{name}-{}", &loaded.hash[..12])));
    let out = OutputDir::create(&out_path, &loaded.hash, cli.overwrite)?;
    let mut ctx = Context { loaded, out, plots: cli.plots };
    log::info!("{name}: config {} ({})", ctx.loaded.origin, ctx.loaded.hash);
    let result = match cli.command {
        Command::Simulate => commands::simulate(&mut ctx),
        Command::Sweep => commands::sweep(&mut ctx),
        Command::Barrier { toy } => commands::barrier(&mut ctx, toy),
        Command::Pairs => commands::pairs(&mut ctx),
        Command::Dimension => commands::dimension(&mut ctx),
        Command::Stationary => commands::stationary(&mut ctx),
        Command::Selftest => commands::selftest(&mut ctx),
    };
    let verdict = match &result {
        Ok(o) => o.verdict.map(|v| format!("{v:?}").to_uppercase()),
        Err(e) => Some(format!("ERROR: {e}")),
    };
    let manifest = RunManifest {
        tool: "plate-lab",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name.to_string(),
        config_origin: ctx.loaded.origin.clone(),
        config_hash: ctx.loaded.hash.clone(),
        output_dir: out_path.display().to_string(),
        seed: ctx.loaded.config.plan.seed,
        threads: rayon::current_num_threads(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        certificates: ctx.loaded.certificates.clone(),
        verdict,
        files: Vec::new(),
    };
    ctx.out.finish(manifest)?;
    let mut outcome = result?;
    outcome.lines.push(format!("output: {}", out_path.display()));
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            match outcome.verdict {
                Some(v) if !v.passed() => {
                    println!("verdict: FAIL");
                    ExitCode::from(4)
                }
                Some(_) => {
                    println!("verdict: PASS");
                    ExitCode::SUCCESS
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
