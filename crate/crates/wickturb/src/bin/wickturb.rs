use clap::Parser;

fn main() {
    std::process::exit(wickturb::cli::run(wickturb::cli::Cli::parse()));
}
