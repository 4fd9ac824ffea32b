use clap::Parser;
use idinv_cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 and usage on bad flags
    let cli = Cli::parse();
    if let Err(e) = idinv_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
