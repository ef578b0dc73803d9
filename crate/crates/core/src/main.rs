fn main() -> std::process::ExitCode {
    testinv::cli::run(std::env::args_os())
}
