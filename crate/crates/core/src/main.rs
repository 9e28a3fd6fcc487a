fn main() -> std::process::ExitCode {
    dcomp::cli::main_with_args(std::env::args_os())
}
