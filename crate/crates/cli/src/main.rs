use clap::Parser;
use ekde_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = ekde_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(ekde_cli::exit_code(&err));
    }
}
