use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(behavior_lm_cli::main_with_args(std::env::args().collect()))
}
