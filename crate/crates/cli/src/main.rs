fn main() -> std::process::ExitCode {
    sdf_forge_cli::cli::main()
}
