use clap::Parser;

fn main() {
    let cli = fxoverlay::cli::Cli::parse();
    std::process::exit(fxoverlay::cli::run(cli));
}
