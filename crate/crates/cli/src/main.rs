use std::process::ExitCode;

fn main() -> ExitCode {
    datadyn_cli::main_with(std::env::args_os())
}
