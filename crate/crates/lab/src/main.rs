use clap::Parser;

use chmech_lab::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("chmech: {e}");
        std::process::exit(e.exit_code());
    }
}
