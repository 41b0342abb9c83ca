use std::process::ExitCode;

fn main() -> ExitCode {
    gsc::cli::main_with_args(std::env::args_os())
}
