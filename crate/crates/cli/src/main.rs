use clap::Parser;

fn main() {
    let cli = netsmooth_cli::Cli::parse();
    if let Err(e) = netsmooth_cli::run(cli) {
        eprintln!("netsmooth: {e}");
        std::process::exit(e.exit_code());
    }
}
