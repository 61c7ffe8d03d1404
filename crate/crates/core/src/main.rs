use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use psr::data::Standardizer;
use psr::harness::{self, ExperimentConfig, RESOLVED_CONFIG, STANDARDIZER_FILE};
use psr::{Error, Result, Variant};

/// Probabilistic safety regions from scalable classifiers.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Calibrate even when a plan fails the binomial check. Outputs are
    /// marked uncertified and the exit code is still 2.
    #[arg(long, global = true)]
    force_uncertified: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibration set size and discarded samples for (eps, delta, beta).
    Plan {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
    },
    /// Write train/calib/test CSV files for the configured data source.
    Generate,
    /// Train, calibrate, select and evaluate; writes reports to the output directory.
    Run,
    /// Decision values of one calibrated model over a 2-d grid.
    BoundaryGrid {
        /// Run directory (defaults to --out, then the configured output directory).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        /// Member index; defaults to the selected member.
        #[arg(long)]
        member: Option<usize>,
        #[arg(long)]
        eps: f64,
        /// x1_min,x1_max,x2_min,x2_max in original feature units.
        #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
        bbox: Option<[f64; 4]>,
        /// Points per axis.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-evaluate a finished run on another labelled CSV file.
    Evaluate {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown variant '{s}' (expected svm, svdd or lr)"))
}

fn parse_bbox(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated numbers, got {}", v.len()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.force_uncertified |= cli.force_uncertified;
    Ok(cfg)
}

fn run_dir(cli: &Cli, explicit: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(d) = explicit.as_ref().or(cli.out.as_ref()) {
        return Ok(d.clone());
    }
    Ok(load_config(cli)?.out_dir)
}

/// Bounding box of +-3 standard deviations around the training mean.
fn default_bbox(st: &Standardizer) -> [f64; 4] {
    let span = |j: usize| {
        let s = if st.constant[j] { 1.0 } else { st.std[j] };
        (st.mean[j] - 3.0 * s, st.mean[j] + 3.0 * s)
    };
    let ((a, b), (c, d)) = (span(0), span(1));
    [a, b, c, d]
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Exit code 2 marks an uncertified plan.
fn execute(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Plan { eps, delta, beta } => {
            print!("{}", harness::cmd_plan(*eps, *delta, *beta)?);
            Ok(0)
        }
        Command::Generate => {
            for p in harness::cmd_generate(&load_config(cli)?)? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Run => {
            let out = harness::cmd_run(&load_config(cli)?)?;
            for f in &out.families {
                let sel = f.selected.map_or("none".to_string(), |k| k.to_string());
                println!(
                    "{} eps={} n_c={} r={} confidence={:.6} certified={} selected={}",
                    f.variant, f.plan.eps, f.plan.n_c, f.plan.r, f.confidence, f.certified, sel
                );
            }
            println!("wrote {}", out.out_dir.join(harness::REPORT_FILE).display());
            if out.all_certified {
                Ok(0)
            } else {
                eprintln!("warning: at least one plan is not certified");
                Ok(2)
            }
        }
        Command::BoundaryGrid {
            run,
            variant,
            member,
            eps,
            bbox,
            resolution,
            output,
        } => {
            let dir = run_dir(cli, run)?;
            let resolved = ExperimentConfig::load(&dir.join(RESOLVED_CONFIG)).ok();
            let bbox = match (bbox, resolved.as_ref().and_then(|c| c.grid.bbox)) {
                (Some(b), _) => *b,
                (None, Some(b)) => b,
                (None, None) => {
                    let st: Standardizer = read_json(&dir.join(STANDARDIZER_FILE))?;
                    if st.mean.len() != 2 {
                        return Err(Error::InvalidArgument(format!(
                            "boundary grids need 2-d data, the run has dimension {}",
                            st.mean.len()
                        )));
                    }
                    default_bbox(&st)
                }
            };
            let resolution = resolution.or(resolved.map(|c| c.grid.resolution)).unwrap_or(101);
            let points = harness::cmd_boundary_grid(&dir, *variant, *member, *eps, bbox, resolution, output)?;
            println!("wrote {} grid points to {}", points.len(), output.display());
            Ok(0)
        }
        Command::Evaluate { run, data, output } => {
            let dir = run_dir(cli, run)?;
            let rows = harness::cmd_evaluate(&dir, data, output)?;
            println!("wrote {} rows to {}", rows.len(), output.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Uncertified { .. }) { 2 } else { 1 })
        }
    }
}
