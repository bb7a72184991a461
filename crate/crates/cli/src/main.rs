use clap::Parser;

fn main() {
    let cli = cme_cli::Cli::parse();
    std::process::exit(cme_cli::run(cli));
}
