use clap::Parser;

fn main() {
    let cli = gisnet::cli::Cli::parse();
    std::process::exit(gisnet::cli::run(cli));
}
