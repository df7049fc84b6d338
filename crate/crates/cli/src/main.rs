use clap::Parser;
use todsim_cli::error::EXIT_OK;
use todsim_cli::{run, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            std::process::exit(EXIT_OK);
        }
        Err(e) => fail(&CliError::Usage(e.to_string().trim().to_string())),
    };
    let json = cli.json;
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.render(json));
            std::process::exit(EXIT_OK);
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ! {
    eprintln!("{}", serde_json::to_string(&e.report()).expect("error report serializes"));
    std::process::exit(e.exit_code());
}
