use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lie_observer::cli::{
    exit_code, run_check_gains, run_simulate, Preset, RunConfig, RunManifest, Scenario, EXIT_OK,
};

#[derive(Parser)]
#[command(version, about = "Pose and velocity-bias observers on the SE(3) benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON config and write timeseries.csv and summary.json.
    Simulate(SimulateArgs),
    /// Report the gain floor and the admissible Lyapunov weight for a config.
    CheckGains(CheckGainsArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "scenario")]
struct ScenarioArgs {
    /// se3-observer2, se3-observer4, stationary or gain-sweep.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "lie-observer-out")]
    out: PathBuf,
    /// Abort with status 3 when k_P is below the gain floor.
    #[arg(long)]
    strict_gains: bool,
}

#[derive(Args)]
struct CheckGainsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    strict_gains: bool,
}

fn simulate(args: SimulateArgs) -> lie_observer::Result<()> {
    let scenario = match (args.scenario.preset, args.scenario.config) {
        (Some(name), _) => Scenario::Preset(Preset::from_name(&name)?),
        (None, Some(path)) => Scenario::Config(path),
        (None, None) => unreachable!("clap requires one scenario source"),
    };
    let manifest = RunManifest {
        scenario,
        output_dir: args.out,
        strict_gains: args.strict_gains,
    };
    for s in run_simulate(&manifest)? {
        let fit = match (&s.fit, &s.fit_error) {
            (Some(fit), _) => format!("rate {:.4} /s", fit.a),
            (None, Some(e)) => format!("no fit ({e})"),
            (None, None) => String::new(),
        };
        println!(
            "{} k_P={} k_I={}: final |E_A|={:.3e} |e_b|={:.3e}, {fit}",
            s.kind, s.gains.k_p, s.gains.k_i, s.final_errors.err_ea, s.final_errors.err_eb
        );
    }
    println!("wrote {}", manifest.output_dir.display());
    Ok(())
}

fn check_gains(args: CheckGainsArgs) -> lie_observer::Result<()> {
    let config = RunConfig::from_path(&args.config)?;
    println!("{}", run_check_gains(&config, args.strict_gains)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::CheckGains(args) => check_gains(args),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
