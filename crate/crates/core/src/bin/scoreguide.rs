fn main() -> std::process::ExitCode {
    scoreguide::cli::main()
}
