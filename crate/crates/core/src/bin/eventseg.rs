use clap::Parser;
use eventseg::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVENTSEG_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_validation() { 2 } else { 1 });
    }
}
