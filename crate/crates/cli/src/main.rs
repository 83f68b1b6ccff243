use clap::Parser;

fn main() {
    if let Err(e) = simra_cli::execute(simra_cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
