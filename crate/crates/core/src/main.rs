use clap::Parser;

use fedsurv::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        std::process::exit(exit_code(&e));
    }
}
