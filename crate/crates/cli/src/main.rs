use clap::Parser;

fn main() {
    std::process::exit(rawblue_cli::run(rawblue_cli::Cli::parse()));
}
