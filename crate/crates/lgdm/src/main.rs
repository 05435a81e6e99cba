//! Command-line interface for the fracture-simulation engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lgdm::bench::run_benchmark;
use lgdm::config::{parse_config, OutputOptions, ResolvedConfig, SCHEMA_VERSION};
use lgdm::output::{write_all_snapshots, write_load_displacement_csv};
use lgdm::problems::{ProblemId, ProblemSpec};
use lgdm::solver::{run_simulation, DriverConfig, NewtonConfig};
use lgdm::{Assembler, Backend, Execution};

#[derive(Parser)]
#[command(
    name = "lgdm",
    about = "Quasi-static fracture simulation with a localizing gradient damage model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write CSV + field snapshots to the output directory
    Run(RunArgs),
    /// Time the assembly backends on a problem and write a timing report
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in problem to run: bar1d, sen2d, or sen3d
    #[arg(long)]
    problem: Option<ProblemIdArg>,

    /// Mesh divisions per axis, comma separated (e.g. 100 or 50,50 or 20,20,3)
    #[arg(long, value_delimiter = ',')]
    divisions: Option<Vec<usize>>,

    /// Number of load steps (total applied displacement is unchanged)
    #[arg(long)]
    steps: Option<usize>,

    /// Total applied displacement on the driven boundary (mm)
    #[arg(long)]
    total_displacement: Option<f64>,

    /// TOML configuration file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Run assembly and state update sequentially even if threads are available
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Assembly backend: loop or batched
    #[arg(long, default_value = "batched")]
    backend: BackendArg,

    /// Write a field snapshot every N steps (0 disables periodic snapshots)
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Number of repeated simulations per backend
    #[arg(long, default_value_t = 3)]
    repeats: usize,

    /// Backends to time, comma separated
    #[arg(long, value_delimiter = ',', default_values = ["loop", "batched"])]
    backends: Vec<BackendArg>,
}

#[derive(Clone, Copy)]
struct ProblemIdArg(ProblemId);

impl std::str::FromStr for ProblemIdArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(ProblemIdArg).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy)]
struct BackendArg(Backend);

impl std::str::FromStr for BackendArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(BackendArg).map_err(|e| e.to_string())
    }
}

fn resolve(common: &CommonArgs) -> Result<ResolvedConfig, String> {
    let mut cfg = match (&common.config, common.problem) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        (None, Some(ProblemIdArg(id))) => {
            let spec = ProblemSpec::new(id);
            ResolvedConfig {
                schema_version: SCHEMA_VERSION,
                problem: id,
                extents: spec.extents,
                divisions: spec.divisions,
                total_displacement: spec.total_displacement,
                steps: spec.steps,
                defect_fraction: spec.defect_fraction,
                defect_ratio: spec.defect_ratio,
                notch_fraction: spec.notch_fraction,
                material: spec.params,
                newton: NewtonConfig::default(),
                output: OutputOptions::default(),
            }
        }
        (None, None) => return Err("either --problem or --config is required".into()),
    };
    if let Some(ProblemIdArg(id)) = common.problem {
        if common.config.is_some() && id != cfg.problem {
            return Err(format!(
                "--problem {id} conflicts with the config file's problem {}",
                cfg.problem
            ));
        }
    }
    if let Some(div) = &common.divisions {
        let spec_dim = ProblemSpec::new(cfg.problem).dim();
        if div.len() != spec_dim {
            return Err(format!(
                "--divisions needs {spec_dim} value(s) for {}",
                cfg.problem
            ));
        }
        let mut d = [0usize; 3];
        d[..div.len()].copy_from_slice(div);
        cfg.divisions = d;
    }
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    if let Some(total) = common.total_displacement {
        cfg.total_displacement = total;
    }
    cfg.spec().validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn execution(common: &CommonArgs) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let mut cfg = resolve(&args.common)?;
    if let Some(every) = args.snapshot_every {
        cfg.output.snapshot_every = every;
    }
    let spec = cfg.spec();
    let out_dir = &args.common.out;
    std::fs::create_dir_all(out_dir).map_err(|e| format!("cannot create output dir: {e}"))?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())
        .map_err(|e| format!("cannot write config echo: {e}"))?;

    let built = spec.build().map_err(|e| e.to_string())?;
    let asm = Assembler::new(&built.mesh, &built.dofmap, spec.params).map_err(|e| e.to_string())?;
    let kappa0 = spec.kappa0_field(&asm);
    let driver = DriverConfig {
        newton: cfg.newton,
        steps: spec.steps,
        increment: spec.increment(),
        backend: args.backend.0,
        exec: execution(&args.common),
        snapshot_every: cfg.output.snapshot_every,
    };
    let result = run_simulation(&asm, &built.constraints, kappa0, &driver, None)
        .map_err(|e| e.to_string())?;

    write_load_displacement_csv(&result, &out_dir.join("load_displacement.csv"))
        .map_err(|e| e.to_string())?;
    write_all_snapshots(&built.mesh, &built.dofmap, &result, out_dir).map_err(|e| e.to_string())?;

    let peak = result
        .steps
        .iter()
        .map(|r| r.reaction)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "completed {} steps; peak reaction {peak:.6}; results in {}",
        result.steps.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), String> {
    let cfg = resolve(&args.common)?;
    let spec = cfg.spec();
    let backends: Vec<Backend> = args.backends.iter().map(|b| b.0).collect();
    let report = run_benchmark(
        &spec,
        &backends,
        args.repeats,
        execution(&args.common),
        cfg.newton,
    )
    .map_err(|e| e.to_string())?;
    let text = report.render();
    print!("{text}");
    let out_dir = &args.common.out;
    std::fs::create_dir_all(out_dir).map_err(|e| format!("cannot create output dir: {e}"))?;
    std::fs::write(out_dir.join("timing_report.txt"), &text)
        .map_err(|e| format!("cannot write timing report: {e}"))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
