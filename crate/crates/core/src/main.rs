use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pdnet_core::cli::run(std::env::args_os()))
}
