use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(scenenet::cli::run_from_args(std::env::args_os()) as u8)
}
