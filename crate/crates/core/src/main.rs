use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;

use rnaselect::cli::{self, Cli, Command};
use rnaselect::ErrorKind;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapErrorKind::DisplayHelp
                | ClapErrorKind::DisplayVersion
                | ClapErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(ErrorKind::Parameter.exit_code() as u8),
            };
        }
    };

    let outcome = match &cli.command {
        Command::Run(args) => args.resolve().and_then(|config| {
            let summary = cli::run_pipeline(&config)?;
            for cell in &summary.cells {
                match cell.u {
                    Some(u) => println!("{}: U = {u:.6}", cell.key),
                    None => println!("{}: clustered", cell.key),
                }
                for line in cell.groups.iter().flatten() {
                    println!("  {line}");
                }
            }
            println!("wrote {}", config.out_dir.join("summary.json").display());
            Ok(())
        }),
        Command::Synth(args) => cli::run_synth(args).map(|()| println!("wrote {}", args.out_dir.display())),
        Command::Oracle(args) => cli::run_oracle(args).map(|json| {
            if args.out.is_none() {
                print!("{json}");
            }
        }),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
