use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safesite::format::{write_atomic, GridFile};
use safesite_cli::pipeline::core_at;
use safesite_cli::render::render;
use safesite_cli::{exit, CliError, CliResult, Run, RunConfig};

/// Hazard detection and landing-site selection on synthetic DEMs.
///
/// Any config key can also be overridden on the command line as
/// `--<key> <value>`, e.g. `--train.epochs 50`.
#[derive(Debug, Parser)]
#[command(name = "safesite", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// Allow `generate` to replace an existing dataset.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-DEM stages; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clean and noisy DEMs and the dataset manifest.
    Generate,
    /// Label clean DEMs with the hazard oracle and run the noisy baseline.
    Label,
    /// Train the segmenter on the training split.
    Train,
    /// MC-dropout predictions for the validation and test splits.
    Predict,
    /// Calibrate the entropy threshold on the validation split.
    Calibrate,
    /// Apply the threshold and propose one landing site per test map.
    Select,
    /// Score baseline, base network, and uncertainty-aware maps.
    Evaluate,
    /// Run every stage in order.
    Run,
    /// Print the effective configuration in canonical form.
    ShowConfig,
    /// Render a grid file as a binary PGM/PPM image.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Grid file (.dem, .sfm, .prob, .unc).
    input: PathBuf,
    /// Output image path.
    #[arg(long, short)]
    output: PathBuf,
    /// Site marker as `row,col`.
    #[arg(long, value_parser = parse_site)]
    site: Option<(usize, usize)>,
}

fn parse_site(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok((
        r.trim().parse().map_err(|_| "bad row")?,
        c.trim().parse().map_err(|_| "bad column")?,
    ))
}

/// Pulls `--<config key> <value>` pairs out of the argument list.
fn split_overrides(args: Vec<String>) -> CliResult<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if key == "seed" || !(key.contains('.') || RunConfig::is_key(&key)) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn load_config(common: &Common, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn render_file(args: &RenderArgs) -> CliResult<()> {
    if !args.input.is_file() {
        return Err(CliError::io(&args.input, std::io::ErrorKind::NotFound.into()));
    }
    let grid = GridFile::read(&args.input).map_err(|e| core_at(&args.input, e))?;
    if let Some((r, c)) = args.site {
        if r >= grid.header.height || c >= grid.header.width {
            return Err(CliError::Validation(format!("site ({r}, {c}) lies outside the map")));
        }
    }
    let bytes = render(&grid, args.site).encode();
    write_atomic(&args.output, &bytes).map_err(|e| core_at(&args.output, e))
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> CliResult<()> {
    if let Command::Render(args) = &cli.command {
        return render_file(args);
    }
    let cfg = load_config(&cli.common, overrides)?;
    let run = Run {
        root: cli.common.out_dir.clone(),
        cfg,
        workers: cli.common.workers.max(1),
        force: cli.common.force,
        verbose: !cli.common.quiet,
    };
    match cli.command {
        Command::Generate => run.generate().map(drop),
        Command::Label => run.label(),
        Command::Train => run.train().map(drop),
        Command::Predict => run.predict(),
        Command::Calibrate => run.calibrate().map(drop),
        Command::Select => run.select(),
        Command::Evaluate => run.evaluate().map(drop),
        Command::Run => run.run_all().map(drop),
        Command::ShowConfig => {
            run.cfg.validate()?;
            print!("{}", run.cfg.to_text());
            Ok(())
        }
        Command::Render(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let code = match split_overrides(std::env::args().collect()) {
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Ok((args, overrides)) => match Cli::try_parse_from(args) {
            Err(e) => {
                let _ = e.print();
                if e.use_stderr() {
                    exit::USAGE
                } else {
                    exit::SUCCESS
                }
            }
            Ok(cli) => match execute(cli, &overrides) {
                Ok(()) => exit::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            },
        },
    };
    ExitCode::from(code as u8)
}

