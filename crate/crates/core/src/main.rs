use std::process::ExitCode;

fn main() -> ExitCode {
    loadsync::cli::run_from(std::env::args_os())
}
