use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(liborforge::cli::run(std::env::args_os()))
}
