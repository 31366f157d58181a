use clap::Parser;

fn main() {
    let cli = drcsim::cli::Cli::parse();
    std::process::exit(drcsim::cli::run(cli));
}
