use clap::Parser;

fn main() {
    let cli = voxinv::cli::Cli::parse();
    if let Err(e) = voxinv::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
