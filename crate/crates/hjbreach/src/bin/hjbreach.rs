use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hjbreach::config::FixedDim;
use hjbreach::error::{ConfigError, RunError};
use hjbreach::export;
use hjbreach::format::{self, FieldFile};
use hjbreach::pipeline::{self, Pipeline};
use hjbreach::RunConfig;
use hjbreach_core::analysis::{extract_contours, slice};
use hjbreach_core::simulate_closed_loop;
use log::{error, info, warn};

/// Reachable sets from a single stored value field.
#[derive(Parser)]
#[command(name = "hjbreach", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every configured stage: solve, extract, verify, oracle compare.
    Run {
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve only and write the field file.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contours and masks from a saved field.
    Extract {
        field: PathBuf,
        /// Threshold J; repeat for several.
        #[arg(short = 'j', long = "level", required = true)]
        levels: Vec<f64>,
        /// Fix a dimension, `DIM=VALUE`; repeat for several.
        #[arg(long = "fix", value_parser = parse_fixed)]
        fixed: Vec<FixedDim>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Closed-loop run from one start state.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Comma-separated start state.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        start: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
        /// Trajectory CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop verification of a saved field.
    Verify {
        config: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force reference values, compared against a field when given.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary of a field or mask file.
    Info { path: PathBuf },
}

fn parse_fixed(s: &str) -> Result<FixedDim, String> {
    let (d, v) = s.split_once('=').ok_or("expected DIM=VALUE")?;
    Ok(FixedDim {
        dim: d.trim().parse().map_err(|e| format!("dimension: {e}"))?,
        value: v.trim().parse().map_err(|e| format!("value: {e}"))?,
    })
}

fn resolve(path: &Path) -> Result<hjbreach::Resolved, RunError> {
    Ok(RunConfig::load(path)?.resolve()?)
}

fn finish(p: Pipeline, outcome: Result<(), RunError>) -> Result<(), RunError> {
    let manifest = p.finish();
    match (&outcome, &manifest) {
        (_, Ok(path)) => println!("{}", path.display()),
        (_, Err(e)) => error!("manifest not written: {e}"),
    }
    outcome.and(manifest.map(|_| ()))
}

fn run_command(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Run { config, out } => {
            let (outcome, manifest) = pipeline::run(resolve(&config)?, out.as_deref());
            if let Some(m) = manifest {
                println!("{}", m.display());
            }
            outcome
        }
        Command::Solve { config, out } => {
            let mut p = Pipeline::new(resolve(&config)?, out.as_deref())?;
            let outcome = p.solve().map(|_| ());
            finish(p, outcome)
        }
        Command::Extract {
            field,
            levels,
            fixed,
            out,
        } => {
            let f = format::load_field(&field)?;
            std::fs::create_dir_all(&out)?;
            let pairs: Vec<(usize, f64)> = fixed.iter().map(|f| (f.dim, f.value)).collect();
            let plane = slice(&f, &pairs)?;
            for (i, &j) in levels.iter().enumerate() {
                let mut c = extract_contours(&plane, j)?;
                c.fixed = pairs.clone();
                let stem = out.join(format!("contour_{}", i + 1));
                let json = serde_json::to_string_pretty(&export::contour_json(&c))
                    .expect("json serializes");
                std::fs::write(stem.with_extension("json"), json)?;
                std::fs::write(stem.with_extension("csv"), export::contour_csv(&c)?)?;
                let m = hjbreach_core::mask(&f, j);
                format::save_mask(&m, f.meta(), &out.join(format!("mask_{}.rchf", i + 1)))?;
                println!(
                    "J = {j}: {} polylines, {} points, {} nodes inside",
                    c.polylines.len(),
                    c.point_count(),
                    m.count()
                );
            }
            Ok(())
        }
        Command::Simulate {
            config,
            field,
            start,
            max_steps,
            out,
        } => {
            let r = resolve(&config)?;
            let f = format::load_field(&field)?;
            let t = simulate_closed_loop(&f, &r.problem, &start, max_steps, r.solver.policy)?;
            let csv = export::trajectory_csv(&t)?;
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            eprintln!("{}", export::trajectory_summary(&t));
            Ok(())
        }
        Command::Verify { config, field, out } => {
            let mut p = Pipeline::new(resolve(&config)?, out.as_deref())?;
            let outcome = (|| {
                let f = p.load_field(&field)?;
                if p.verify(&f)?.is_none() {
                    return Err(ConfigError::invalid("verify", "no [verify] section").into());
                }
                Ok(())
            })();
            finish(p, outcome)
        }
        Command::Oracle { config, field, out } => {
            let mut p = Pipeline::new(resolve(&config)?, out.as_deref())?;
            let outcome = (|| {
                let Some(results) = p.oracle()? else {
                    return Err(ConfigError::invalid("oracle", "no [oracle] section").into());
                };
                if let Some(path) = &field {
                    let f = p.load_field(path)?;
                    p.compare(&f, &results)?;
                }
                Ok(())
            })();
            finish(p, outcome)
        }
        Command::Info { path } => {
            match format::load(&path)? {
                FieldFile::Field(f) => {
                    let shape: Vec<String> = f.grid().shape().iter().map(usize::to_string).collect();
                    println!("kind:      field");
                    println!("grid:      {}", shape.join("x"));
                    print_axes(f.grid());
                    println!("step:      {}", f.meta().step_index);
                    println!("dt:        {}", f.meta().dt);
                    println!("horizon:   {}", f.meta().horizon);
                    println!("range:     [{}, {}]", f.min(), f.max());
                    println!("problem:   {}", f.meta().problem_digest);
                    println!("digest:    {}", f.digest());
                }
                FieldFile::Mask { mask, meta } => {
                    let shape: Vec<String> = mask.grid.shape().iter().map(usize::to_string).collect();
                    println!("kind:      mask (MASK flag set)");
                    println!("grid:      {}", shape.join("x"));
                    print_axes(&mask.grid);
                    println!("threshold: {}", mask.threshold);
                    println!("inside:    {} of {}", mask.count(), mask.cells.len());
                    println!("dt:        {}", meta.dt);
                    println!("horizon:   {}", meta.horizon);
                    println!("problem:   {}", meta.problem_digest);
                }
            }
            Ok(())
        }
    }
}

fn print_axes(grid: &hjbreach_core::GridSpec) {
    for (d, a) in grid.axes().iter().enumerate() {
        println!(
            "  axis {d}: [{}, {}] x {}{}",
            a.lower,
            a.upper,
            a.points,
            if a.periodic { " periodic" } else { "" }
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("HJBREACH_THREADS") {
        match n.parse::<usize>() {
            Ok(n) => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("HJBREACH_THREADS ignored: {e}");
                }
            }
            Err(_) => warn!("HJBREACH_THREADS={n} is not a count; ignored"),
        }
    }
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
