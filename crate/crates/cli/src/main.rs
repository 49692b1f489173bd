use clap::{Parser, Subcommand, ValueEnum};

use pathlab_core::harness::{cmd_check, cmd_fuzz, cmd_regress, cmd_run, RunCommand};
use pathlab_core::sim::RunMode;

#[derive(Parser)]
#[command(
    name = "pathlab",
    about = "Forwarding laboratory for path-aware inter-domain routing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Verified,
    Legacy,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Symbolic,
    Concrete,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and report violations
    Run {
        /// Scenario file path or built-in name (fig3, splice, loop,
        /// source_route, verify_only, loop_compromised, split_as)
        scenario: String,
        /// Write the trace to this file
        #[arg(long)]
        trace: Option<String>,
        /// Override the scenario seed (also: PATHLAB_SEED)
        #[arg(long)]
        seed: Option<u64>,
        /// Router check configuration: all checks on, or as the scenario
        /// wrote them
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Crypto backend used by the routers
        #[arg(long, value_enum, default_value = "symbolic")]
        backend: BackendArg,
        /// Write the authorized segment set to this file, for `check`
        #[arg(long)]
        dump_auth: Option<String>,
    },
    /// Re-run the property checkers over an existing trace
    Check {
        /// Trace file written by `run --trace`
        trace: String,
        /// Auth set written by `run --dump-auth`
        #[arg(long)]
        auth: String,
    },
    /// Run the attack regression suite (legacy and verified, each attack)
    Regress,
    /// Run generated scenarios in verified mode and hunt for violations
    Fuzz {
        /// Number of generated scenarios
        #[arg(long, default_value_t = 50)]
        steps: u64,
        /// Base seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            trace,
            seed,
            mode,
            backend,
            dump_auth,
        } => cmd_run(&RunCommand {
            scenario,
            mode: mode.map(|m| match m {
                ModeArg::Verified => RunMode::Verified,
                ModeArg::Legacy => RunMode::Legacy,
            }),
            seed,
            concrete: matches!(backend, BackendArg::Concrete),
            trace_out: trace,
            dump_auth,
        }),
        Command::Check { trace, auth } => cmd_check(&trace, &auth),
        Command::Regress => cmd_regress(),
        Command::Fuzz { steps, seed } => cmd_fuzz(steps, seed),
    };
    std::process::exit(code);
}
