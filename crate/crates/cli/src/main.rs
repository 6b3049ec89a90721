use clap::Parser;
use sfd_cli::{error::EXIT_VALIDATION, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            std::process::exit(EXIT_VALIDATION);
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(result) => {
            println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
