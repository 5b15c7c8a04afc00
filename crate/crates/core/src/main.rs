use std::process::ExitCode;

fn main() -> ExitCode {
    csi_bench::cli::run(std::env::args_os())
}
