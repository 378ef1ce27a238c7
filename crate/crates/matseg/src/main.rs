fn main() -> std::process::ExitCode {
    matseg::cli::main()
}
