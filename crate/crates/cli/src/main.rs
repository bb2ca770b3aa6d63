use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use mec_aoi_cli::{error_line, run, Args};

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(1);
        }
    };
    match run(&args) {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for path in &report.written {
                println!("wrote {}", path.display());
            }
            if report.unconverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", error_line("non_convergence", &report.unconverged.join("; ")));
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
