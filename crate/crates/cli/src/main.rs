use std::process::ExitCode;

fn main() -> ExitCode {
    rfn_cli::run(std::env::args_os())
}
