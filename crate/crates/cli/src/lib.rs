//! Command implementations behind the `dept` binary. Each command writes
//! its human-readable output to a caller-supplied sink and reports failures
//! as a [`CliError`] carrying the process exit code.

pub mod args;
mod class_weights;
mod gen_targets;
mod toy;

use std::io::Write;
use std::path::Path;

use dept_core::gradcheck::{run_gradcheck, GradcheckConfig};

pub use args::{Cli, Command, Format};
pub use class_weights::run_class_weights;
pub use gen_targets::{resolve_config, run_gen_targets, FrameSummary, GenReport};
pub use toy::{run_toy_train, run_toy_transfer};

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing input; exit code 1.
    #[error("{0}")]
    Input(String),
    /// A check failed or training diverged; exit code 2.
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }
}

impl From<dept_core::Error> for CliError {
    fn from(e: dept_core::Error) -> Self {
        match e {
            dept_core::Error::DivergenceDetected { .. } | dept_core::Error::ZeroCount { .. } => {
                CliError::Verification(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Input(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub(crate) fn emit(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("writing output: {e}")))
}

pub fn run_gradcheck_cmd(args: &args::GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let cfg = GradcheckConfig {
        seed: args.seed,
        perturb: args.perturb_gradient.unwrap_or(0.0),
        ..Default::default()
    };
    let report = run_gradcheck(&cfg)?;
    let text = match args.format {
        Format::Text => report.to_text(),
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    };
    emit(out, &text)?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .blocks
            .iter()
            .filter(|b| !b.passed)
            .map(|b| b.name.as_str())
            .collect();
        Err(CliError::Verification(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::GenTargets(a) => run_gen_targets(a, out).map(|_| ()),
        Command::Gradcheck(a) => run_gradcheck_cmd(a, out),
        Command::Toy(args::ToyCommand::Train(a)) => run_toy_train(a, out),
        Command::Toy(args::ToyCommand::Transfer(a)) => run_toy_transfer(a, out).map(|_| ()),
        Command::ClassWeights(a) => run_class_weights(a, out),
    }
}
