use std::path::PathBuf;
use std::process::ExitCode;

use bicoord::CoordinationSite;
use bicoord_cli::{
    eval, fit, generate, out_dir, parse_point, synth, CliError, CliResult, GenerateArgs, Mode, RunConfig,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bicoord", version, about = "Learn and generate coordinated bimanual motions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic meeting demonstrations.
    Synth {
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = 3)]
        n_demos: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output file (default: <out-dir>/demos.txt).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit one TP-GMM per arm.
    Fit {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: <out-dir>/models.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate trajectories for a new situation.
    Generate {
        #[arg(long)]
        models: PathBuf,
        /// Run configuration; defaults to the one stored with the models.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "synergistic")]
        mode: Mode,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        site: Option<CoordinationSite>,
        /// Generate both arms independently (the uncoordinated baseline).
        #[arg(long)]
        no_coordination: bool,
        /// New meeting point, e.g. `5,5`.
        #[arg(long)]
        meeting: Option<Point>,
        /// Task file (JSON) describing the new situation.
        #[arg(long)]
        task: Option<PathBuf>,
        /// Leader trajectory (CSV) for leader-follower mode.
        #[arg(long)]
        leader: Option<PathBuf>,
        #[arg(long)]
        follower: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a trajectory pair.
    Eval {
        #[arg(num_args = 2, required = true)]
        trajectories: Vec<PathBuf>,
        /// Reference pair for RMSE and relative error.
        #[arg(long, num_args = 2)]
        reference: Option<Vec<PathBuf>>,
    },
}

/// A comma-separated point such as `5,8,5`.
#[derive(Clone, Debug)]
struct Point(Vec<f64>);

impl std::str::FromStr for Point {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_point(s).map(Point)
    }
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Synth { dims, n_demos, seed, out, out_dir: dir } => {
            let out = out.unwrap_or_else(|| out_dir(dir.as_deref(), None).join("demos.txt"));
            synth(dims, n_demos, seed, &out)
        }
        Command::Fit { demos, config, out, out_dir: dir } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| out_dir(dir.as_deref(), Some(&cfg)).join("models.json"));
            fit(&demos, &cfg, &out)
        }
        Command::Generate {
            models,
            config,
            mode,
            sigma,
            site,
            no_coordination,
            meeting,
            task,
            leader,
            follower,
            out_dir: dir,
        } => {
            let config = config.map(|p| RunConfig::load(&p)).transpose()?;
            let task = task
                .map(|p| -> CliResult<_> {
                    let text = std::fs::read_to_string(&p).map_err(|source| bicoord::io::IoError::Fs { path: p, source })?;
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("task file: {e}")))
                })
                .transpose()?;
            let out_dir = out_dir(dir.as_deref(), config.as_ref());
            generate(&GenerateArgs {
                models,
                config,
                mode,
                sigma,
                site,
                no_coordination,
                meeting: meeting.map(|p| p.0),
                task,
                leader,
                follower,
                out_dir,
            })
        }
        Command::Eval { trajectories, reference } => {
            let refs = reference.as_ref().map(|r| [r[0].as_path(), r[1].as_path()]);
            eval([&trajectories[0], &trajectories[1]], refs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
