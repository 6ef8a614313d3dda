use clap::Parser;

fn main() {
    let cli = hypergeo::Cli::parse();
    if let Err(e) = hypergeo::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
