fn main() -> std::process::ExitCode {
    mlmc_pimd::cli::main_entry()
}
