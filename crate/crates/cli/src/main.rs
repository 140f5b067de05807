fn main() -> std::process::ExitCode {
    tdm_cli::main_with_args(std::env::args_os())
}
