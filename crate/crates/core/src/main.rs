use std::process::ExitCode;

fn main() -> ExitCode {
    stereoboot::cli::run(std::env::args_os())
}
