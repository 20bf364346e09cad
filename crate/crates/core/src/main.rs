use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vifuse::cli::run(std::env::args_os()))
}
