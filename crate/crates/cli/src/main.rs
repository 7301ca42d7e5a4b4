use clap::Parser;

fn main() {
    let cli = malgo_cli::Cli::parse();
    if let Err(e) = malgo_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
