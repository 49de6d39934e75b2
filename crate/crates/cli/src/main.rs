use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = dadl_cli::Cli::parse();
    if let Err(e) = dadl_cli::execute(&cli) {
        eprintln!("dadl: {e}");
        std::process::exit(e.exit_code());
    }
}
