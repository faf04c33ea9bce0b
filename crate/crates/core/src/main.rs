fn main() -> std::process::ExitCode {
    arls::cli::main_with_args(std::env::args_os())
}
