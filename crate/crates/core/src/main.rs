use clap::Parser;

use gridcourse::cli::{run, Cli};

fn main() {
    if let Some(n) = std::env::var("GRIDCOURSE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        gridcourse::par::init_threads(n);
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
