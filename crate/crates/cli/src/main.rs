use clap::error::ErrorKind;
use clap::Parser;

use capascan_cli::{configure_threads, run, Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            fail(CliError::usage(first.trim_start_matches("error: ").trim()));
        }
    };
    if let Err(e) = configure_threads() {
        fail(e);
    }
    match run(cli) {
        Ok((summary, code)) => {
            println!("{summary}");
            std::process::exit(code);
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json_line());
    std::process::exit(e.code)
}
