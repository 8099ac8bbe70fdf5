use clap::Parser;

fn main() {
    let cli = mcar_avg::cli::Cli::parse();
    std::process::exit(mcar_avg::cli::run(cli));
}
