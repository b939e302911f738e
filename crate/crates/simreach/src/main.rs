use clap::Parser;

fn main() {
    let cli = simreach::cli::Cli::parse();
    if let Err(e) = simreach::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
