fn main() -> std::process::ExitCode {
    robust_palmrt::cli::main()
}
