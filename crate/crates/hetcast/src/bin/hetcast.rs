use std::process::ExitCode;

fn main() -> ExitCode {
    hetcast::cli::run(std::env::args_os())
}
