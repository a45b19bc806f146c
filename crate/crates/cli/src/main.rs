mod cli;
mod commands;
mod error;
mod settings;

use clap::error::ErrorKind;

use crate::error::CliError;
use crate::settings::Settings;

fn run() -> Result<(), CliError> {
    let cmd = cli::build();
    let matches = match cmd.clone().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let settings = Settings::resolve(sub_cmd, sub)?;
    commands::dispatch(name, &settings)
}

fn main() {
    if let Err(e) = run() {
        let msg = e.to_string();
        let msg = msg.trim_end();
        if msg.starts_with("error:") {
            eprintln!("{msg}");
        } else {
            eprintln!("error: {msg}");
        }
        std::process::exit(e.exit_code());
    }
}
