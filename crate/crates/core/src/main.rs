fn main() {
    std::process::exit(ramsey_probe::cli::run_from_env());
}
