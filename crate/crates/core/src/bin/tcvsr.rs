use std::process::ExitCode;

fn main() -> ExitCode {
    tcvsr::cli::run(std::env::args_os())
}
