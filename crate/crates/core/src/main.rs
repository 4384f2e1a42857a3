use std::process::ExitCode;

fn main() -> ExitCode {
    stardomain::cli::run(std::env::args_os())
}
