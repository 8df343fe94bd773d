use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(finsler::cli::run(std::env::args()) as u8)
}
