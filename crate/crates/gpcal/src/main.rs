use clap::Parser;
use gpcal::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
