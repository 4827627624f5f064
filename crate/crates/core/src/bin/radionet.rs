use clap::Parser;
use radionet::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            radionet::Error::Config(_) => 2,
            _ => 1,
        });
    }
}
