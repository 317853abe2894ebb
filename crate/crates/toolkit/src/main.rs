use clap::Parser;

fn main() {
    let cli = adaptasr::cli::Cli::parse();
    if let Err(e) = adaptasr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
