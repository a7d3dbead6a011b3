use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use qoslab::config::{load_scenarios, preset, resolve_out_dir, Overrides, ScenarioConfig, OUT_ENV, PRESETS};
use qoslab::netem::ShapingKind;
use qoslab::rtcp::EstimatorStrategy;
use qoslab::runner::run_matrix;
use qoslab::{ShapedPath, TopologyKind};

#[derive(Parser)]
#[command(name = "qoslab", version, about = "Report-driven video quality adaptation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a scenario file.
    Run(RunArgs),
    /// List the built-in presets.
    Presets,
    /// Print the default scenario as TOML.
    Defaults,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Preset name or path to a TOML scenario file.
    #[arg(long, default_value = "default")]
    scenario: String,
    #[arg(long, value_parser = TopologyKind::from_str)]
    topology: Option<TopologyKind>,
    #[arg(long, value_parser = ShapingKind::from_str)]
    shaping: Option<ShapingKind>,
    #[arg(long, value_parser = ShapedPath::from_str)]
    shaped_path: Option<ShapedPath>,
    #[arg(long, value_parser = EstimatorStrategy::from_str)]
    estimator: Option<EstimatorStrategy>,
    #[arg(long)]
    report_period_ms: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the QOSLAB_OUT environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the set one scenario at a time.
    #[arg(long)]
    sequential: bool,
}

fn run(args: RunArgs) -> ExitCode {
    let mut configs = match load_scenarios(Some(&args.scenario)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        topology: args.topology,
        shaping: args.shaping,
        shaped_path: args.shaped_path,
        estimator: args.estimator,
        report_period_ms: args.report_period_ms,
        duration_s: args.duration_s,
        seed: args.seed,
        out: None,
    };
    let env = std::env::var(OUT_ENV).ok();
    let out_root = resolve_out_dir(
        args.out.as_deref(),
        env.as_deref(),
        configs.first().and_then(|c| c.output.dir.as_deref()),
    );
    for c in &mut configs {
        overrides.apply(c);
        c.output.dir = Some(out_root.clone());
        if let Err(e) = c.validate() {
            eprintln!("error: {}: {e}", c.run_name());
            return ExitCode::from(2);
        }
    }

    let report = run_matrix(&configs, &out_root, !args.sequential);
    for (cfg, r) in &report.runs {
        match r {
            Ok(o) => println!(
                "{}: {} reaction records -> {}",
                cfg.run_name(),
                o.records.len(),
                o.dir.display()
            ),
            Err(e) => eprintln!("{}: run failed: {e}", cfg.run_name()),
        }
    }
    println!();
    print!("{}", report.comparison_table());
    ExitCode::from(report.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Presets => {
            for name in PRESETS {
                let n = preset(name).map(|v| v.len()).unwrap_or(0);
                println!("{name}\t{n} run(s)");
            }
            ExitCode::SUCCESS
        }
        Command::Defaults => {
            print!("{}", ScenarioConfig::default().to_toml());
            ExitCode::SUCCESS
        }
    }
}
