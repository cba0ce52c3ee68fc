use clap::FromArgMatches;
use dept_cli::{args, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEPT_LOG", "warn")).init();
    let matches = args::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if let Err(e) = run(&cli, &mut out) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
