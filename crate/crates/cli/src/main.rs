use clap::Parser;

fn main() {
    let cli = mediate_lab::Cli::parse();
    if let Err(e) = mediate_lab::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
